#include "choreo/sampler.hpp"

#include "choreo/errors.hpp"

namespace choreo {

GroupSequence sample_group_dance(const GroupDenoiser& denoiser,
                                 const AudioFeatureSequence& audio,
                                 int n_dancers, int n_frames,
                                 const SamplerConfig& sampler,
                                 const GuidanceConfig& guidance,
                                 uint64_t seed) {
  const ModelConfig& cfg = denoiser.config();
  if (n_dancers < 1) throw TooFewDancers("need at least one dancer");
  if (n_dancers > cfg.n_max)
    throw TooManyDancers("group exceeds the configured maximum");
  if (n_frames < 1) throw BadShape("need at least one frame");
  if (audio.d_a() != cfg.d_audio)
    throw ShapeMismatch("audio feature width does not match the model");
  if (audio.n_frames() < n_frames)
    throw AudioTooShort("conditioning audio shorter than the requested clip");
  if (guidance.gamma != 0.0 && guidance.encoder == nullptr)
    throw MissingEncoder("guidance gamma set without an encoder");

  // motion and music tokens stay frame-aligned, as in training
  AudioFeatureSequence window;
  window.fps = audio.fps;
  window.features = audio.features.topRows(n_frames);
  for (int b : audio.beat_frames)
    if (b < n_frames) window.beat_frames.push_back(b);

  const int M = cfg.diffusion_steps;
  const NoiseSchedule sched = build_cosine_schedule(M);

  Rng rng(seed);
  Eigen::RowVectorXd z(cfg.d);
  for (int c = 0; c < cfg.d; ++c) z[c] = rng.normal();
  Mat x = normal_matrix(rng, static_cast<Eigen::Index>(n_dancers) * n_frames,
                        kPoseDim);

  if (sampler.kind == SamplerKind::kDdpm) {
    for (int m = M; m >= 1; --m) {
      const Mat x0_hat = denoiser.denoise(x, m, window, n_dancers, z);
      x = reverse_step_ddpm(x, x0_hat, m, sched, guidance, rng);
    }
  } else {
    const std::vector<int> grid = ddim_step_grid(M, sampler.n_ddim_steps);
    for (int i = static_cast<int>(grid.size()) - 1; i >= 0; --i) {
      const int m = grid[i];
      const int m_prev = i > 0 ? grid[i - 1] : 0;
      Mat x0_hat = denoiser.denoise(x, m, window, n_dancers, z);
      if (guidance.gamma != 0.0) {
        // the DDPM mean shift gamma*beta_tilde*grad, expressed on x0_hat
        // through mu = c0*x0 + cm*x_m
        const PosteriorCoeffs pc = posterior_coeffs(m, sched);
        x0_hat += (guidance.gamma * pc.beta_tilde / pc.c0) *
                  guidance.encoder->score_gradient(x, m);
      }
      x = reverse_step_ddim(x, x0_hat, m, m_prev, sched);
    }
  }

  PackedGroup out;
  out.data = std::move(x);
  out.n_dancers = n_dancers;
  out.n_frames = n_frames;
  out.fps = audio.fps;
  orthogonalize_rotations(out);
  return unpack_group(out);
}

}  // namespace choreo
