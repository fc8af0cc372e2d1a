#pragma once

#include <vector>

#include "choreo/model.hpp"
#include "choreo/schedule.hpp"

namespace choreo {

// The contrastive encoder f(x, w) = exp(g(x, w)); this class computes the raw
// score g. Same block structure as the denoiser minus cross-attention, with
// the timestep embedding appended as an extra token before mean pooling.
// Parameters live under the "contrastive/" prefix.
class ContrastiveEncoder {
 public:
  ContrastiveEncoder(ParamStore& params, const ModelConfig& cfg);

  // x packed ((n_dancers*T) x 147), w 1 x d; returns a 1 x 1 score node
  ad::Value score(ad::Tape& t, ad::Value x, ad::Value w, int m,
                  int n_dancers) const;
  double score(const Mat& x, const Eigen::RowVectorXd& w, int m,
               int n_dancers) const;
  // analytic d(score)/dx with parameters held constant
  Mat score_gradient(const Mat& x, const Eigen::RowVectorXd& w, int m,
                     int n_dancers) const;

  ParamStore& params() const { return *params_; }
  const ModelConfig& config() const { return cfg_; }

 private:
  ParamStore* params_;
  ModelConfig cfg_;
};

// negatives by dancer replacement: each slot is independently swapped with
// probability replace_prob for a uniformly chosen dancer of another batch
// group (pooled over all non-anchor dancers), resampling any all-kept draw.
// Donors are cropped to the anchor's T from frame 0, padded by repeating the
// final frame. Throws InsufficientDonors when the batch is only the anchor.
std::vector<PackedGroup> construct_negatives(
    const std::vector<PackedGroup>& batch, int anchor_index,
    double replace_prob, int k, Rng& rng);

// InfoNCE in log space: -log(e^{pos} / (e^{pos} + sum e^{neg}))
double nce_loss(double pos_score, const std::vector<double>& neg_scores);

struct TrainingScores {
  ad::Value pos;
  std::vector<ad::Value> negatives;
};

// noise each group to step m, denoise, form the deterministic posterior
// mean at m-1, and score it with the encoder at step m-1
TrainingScores contrastive_training_scores(
    ad::Tape& t, const GroupDenoiser& denoiser, const ContrastiveEncoder& enc,
    const NoiseSchedule& sched, const PackedGroup& anchor,
    const std::vector<PackedGroup>& mixed, ad::Value music_tokens, ad::Value w,
    int m, Rng& rng);

// adapter exposing the encoder score gradient to the reverse process
class ContrastiveGuidance : public GuidanceEncoder {
 public:
  ContrastiveGuidance(const ContrastiveEncoder& enc, Eigen::RowVectorXd w,
                      int n_dancers)
      : enc_(&enc), w_(std::move(w)), n_dancers_(n_dancers) {}

  Mat score_gradient(const Mat& x_m, int m) const override {
    return enc_->score_gradient(x_m, w_, m, n_dancers_);
  }

 private:
  const ContrastiveEncoder* enc_;
  Eigen::RowVectorXd w_;
  int n_dancers_;
};

}  // namespace choreo
