#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "choreo/autodiff.hpp"
#include "choreo/rng.hpp"
#include "choreo/synth.hpp"

namespace choreo {

using Mat = Eigen::MatrixXd;

struct ModelConfig {
  int d = 64;                   // attention width
  int n_heads = 4;
  int n_blocks = 2;             // stacked transformer + group-attention blocks
  int ff_size = 128;
  int music_encoder_layers = 1;
  int n_max = 5;                // largest supported group
  int d_audio = 32;
  int pose_dim = kPoseDim;
  int diffusion_steps = 100;

  void validate() const;  // BadConfig

  static ModelConfig toy() { return ModelConfig{}; }
  // full-scale settings; shipped for completeness, not exercised by tests
  static ModelConfig paper() {
    ModelConfig c;
    c.d = 512;
    c.n_heads = 8;
    c.n_blocks = 5;
    c.ff_size = 1024;
    c.music_encoder_layers = 2;
    c.diffusion_steps = 1000;
    return c;
  }

  std::string to_json_string() const;
  static ModelConfig from_json_string(const std::string& s);

  bool operator==(const ModelConfig&) const = default;
};

// named dense parameters with paired gradient buffers. Entry addresses are
// stable (node-based map), so tapes can hold raw pointers across steps.
class ParamStore {
 public:
  Mat& add(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  bool has(const std::string& name) const { return map_.count(name) != 0; }
  Mat& value(const std::string& name);
  const Mat& value(const std::string& name) const;
  Mat& grad(const std::string& name);
  const std::vector<std::string>& names() const { return names_; }

  void zero_grads();
  double grad_norm() const;       // global L2 over every gradient entry
  void scale_grads(double s);
  size_t n_scalars() const;
  // rounds every parameter through float32; keeps values exactly
  // representable so checkpoints round-trip bitwise
  void quantize_f32();

 private:
  struct Entry {
    Mat value;
    Mat grad;
  };
  std::vector<std::string> names_;
  std::map<std::string, Entry> map_;
};

// sinusoidal table, row i = transformer position encoding of index i
Mat sinusoid_embedding(int n_positions, int d);

// frame-index encoding replicated per dancer block
Mat packed_positional_encoding(int n_dancers, int n_frames, int d);

// 3-hidden-layer MLP over the sinusoidal step embedding; parameters live
// under `prefix` (W0..W3, b0..b3). Throws BadStep outside [0, max_step].
ad::Value timestep_mlp(ad::Tape& t, ParamStore& p, const std::string& prefix,
                       int m, int d, int max_step);

void init_model_params(ParamStore& p, const ModelConfig& cfg, Rng& rng);
void init_contrastive_params(ParamStore& p, const ModelConfig& cfg, Rng& rng);

struct DenoiseOptions {
  bool ablate_group_block = false;  // test hook: drop the cross-dancer block
};

// The group denoising network. All builders append to the caller's tape, so
// losses composed from several forwards backprop through shared parameters.
class GroupDenoiser {
 public:
  GroupDenoiser(ParamStore& params, const ModelConfig& cfg);

  ad::Value encode_music(ad::Tape& t, const AudioFeatureSequence& audio) const;
  ad::Value embed_timestep(ad::Tape& t, int m) const;  // 1 x d, BadStep
  // w = MLP(z + mean(music)) + E[n-1]; TooManyDancers/TooFewDancers
  ad::Value group_embedding(ad::Tape& t, ad::Value music_tokens, int n_dancers,
                            const Eigen::RowVectorXd& z) const;
  // full graph over packed x_m ((n_dancers*T) x 147)
  ad::Value denoise(ad::Tape& t, ad::Value x_m, int m,
                    const AudioFeatureSequence& audio, int n_dancers,
                    const Eigen::RowVectorXd& z,
                    const DenoiseOptions& opt = {}) const;
  // same graph with music/w prebuilt (training reuses them across steps)
  ad::Value denoise_with(ad::Tape& t, ad::Value x_m, ad::Value music_tokens,
                         ad::Value w, int m, int n_dancers,
                         const DenoiseOptions& opt = {}) const;

  // inference conveniences on a private no-grad tape
  Mat denoise(const Mat& x_m, int m, const AudioFeatureSequence& audio,
              int n_dancers, const Eigen::RowVectorXd& z) const;
  Eigen::RowVectorXd group_embedding(const AudioFeatureSequence& audio,
                                     int n_dancers,
                                     const Eigen::RowVectorXd& z) const;

  ParamStore& params() const { return *params_; }
  const ModelConfig& config() const { return cfg_; }

 private:
  ParamStore* params_;
  ModelConfig cfg_;
};

}  // namespace choreo
