#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "choreo/contrastive.hpp"
#include "choreo/model.hpp"
#include "choreo/schedule.hpp"
#include "choreo/synth.hpp"

namespace choreo {

struct LossWeights {
  double lambda_pos = 1.0;
  double lambda_vel = 1.0;
  double lambda_foot = 0.005;
  double lambda_nce = 0.001;

  void validate() const;  // BadConfig on negative weights

  bool operator==(const LossWeights&) const = default;
};

struct TrainConfig {
  ModelConfig model;  // toy scale by default
  LossWeights weights;
  double learning_rate = 1e-3;
  int batch_size = 4;
  int iterations = 2000;
  int train_frames = 60;  // temporal crop length per batch item
  int n_negatives = 4;
  double replace_prob = 0.5;
  uint64_t seed = 0;
  int checkpoint_every = 500;
  double clip_norm = 1.0;  // clip-by-global-norm before Adam moments
  // ablation hooks (factor structure of the usual ablation table)
  bool disable_geo = false;
  bool disable_nce = false;
  bool ablate_group_block = false;

  void validate() const;  // BadConfig

  std::string to_json_string() const;
  static TrainConfig from_json_string(const std::string& s);

  bool operator==(const TrainConfig&) const = default;
};

struct LossRecord {
  int iteration = 0;
  double l_simple = 0.0;
  double l_pos = 0.0;
  double l_vel = 0.0;
  double l_foot = 0.0;
  double l_nce = 0.0;
  double total = 0.0;
};

// ---- loss builders -------------------------------------------------------

// mean squared error against the ground-truth frames
ad::Value simple_loss(ad::Tape& t, ad::Value x0_hat, const Mat& x0);
double simple_loss(const Mat& x0, const Mat& x0_hat);  // ShapeMismatch

struct GeoLossValues {
  ad::Value pos;
  ad::Value vel;
  ad::Value foot;
};

// FK position MSE, frame-difference velocity MSE, and the contact-masked
// predicted foot velocity mean. Contacts come from the ground truth; an empty
// contact set gives L_foot = 0. Velocities are raw frame differences.
GeoLossValues geometric_losses(ad::Tape& t, ad::Value x0_hat,
                               const PackedGroup& x0, const Skeleton& skel);
// (L_pos, L_vel, L_foot) for plain matrices; SequenceTooShort for T < 2
std::array<double, 3> geometric_losses(const PackedGroup& x0,
                                       const PackedGroup& x0_hat,
                                       const Skeleton& skel);

double total_loss(double l_simple, double l_pos, double l_vel, double l_foot,
                  double l_nce, const LossWeights& w);

// ---- optimizer -----------------------------------------------------------

// Adam with bias correction and global-norm clipping applied to the raw
// gradients before the moment updates. Parameters and both moment buffers
// are rounded through float32 after every step so checkpoints (stored as
// float32) restore the optimizer state bitwise.
class Adam {
 public:
  Adam(ParamStore& params, double lr, double clip_norm, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);

  void step();

  int64_t step_count() const { return step_; }
  const std::map<std::string, std::pair<Mat, Mat>>& moments() const {
    return mom_;
  }
  // checkpoint restore; BadConfig if a name is unknown or a shape differs
  void restore(const std::map<std::string, std::pair<Mat, Mat>>& moments,
               int64_t step_count);

 private:
  ParamStore* params_;
  double lr_, clip_, beta1_, beta2_, eps_;
  int64_t step_ = 0;
  std::map<std::string, std::pair<Mat, Mat>> mom_;  // first m, second v
};

// ---- training loop -------------------------------------------------------

struct TrainResult {
  std::string checkpoint_path;   // final checkpoint
  std::string loss_history_path; // CSV written under out_dir
  std::vector<LossRecord> history;
};

// Runs the full loop over a synthetic dataset manifest. Deterministic given
// cfg.seed: every iteration draws from a fresh stream Rng(mix(seed, iter)).
// resume_path restarts from a saved checkpoint (config must match).
// Throws BadConfig, IoFailure, NonFiniteLoss.
TrainResult train(const std::string& manifest_path, const TrainConfig& cfg,
                  const std::string& out_dir,
                  const std::string& resume_path = "");

}  // namespace choreo
