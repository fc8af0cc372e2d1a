#include "choreo/longform.hpp"

#include <Eigen/Geometry>
#include <cmath>

#include "choreo/errors.hpp"

namespace choreo {

namespace {

constexpr double kDecodeGuard = 1e-9;

// crossfade weight on a's side: 1 at the first overlap frame, 0 at the last
double fade_weight(int t, int length) {
  if (length < 2) return 0.5;
  return static_cast<double>(length - 1 - t) / static_cast<double>(length - 1);
}

Eigen::Quaterniond quat_of_6d(const Eigen::Ref<const Eigen::RowVectorXd>& r6) {
  Mat3 R;
  Vec6 b = r6.transpose();
  detail::gram_schmidt_6d(b.data(), kDecodeGuard, R);
  return Eigen::Quaterniond(R);
}

// mean per-frame euclidean distance between two dancers over the overlap
double overlap_cost(const Mat& tail, const Mat& head) {
  double acc = 0.0;
  for (Eigen::Index t = 0; t < tail.rows(); ++t)
    acc += (tail.row(t) - head.row(t)).norm();
  return acc / static_cast<double>(tail.rows());
}

}  // namespace

ChunkPlan chunk_schedule(int total_frames, int window_frames) {
  if (window_frames < 2 || window_frames % 2 != 0)
    throw BadConfig("window must be a positive even frame count");
  if (total_frames < window_frames)
    throw AudioTooShort("audio shorter than one window");
  ChunkPlan plan;
  plan.overlap_frames = window_frames / 2;
  for (int start = 0;; start += plan.overlap_frames) {
    plan.windows.emplace_back(start, start + window_frames);
    if (start + window_frames >= total_frames) break;
  }
  return plan;
}

Mat blend_overlap(const Mat& seq_a_tail, const Mat& seq_b_head) {
  if (seq_a_tail.rows() != seq_b_head.rows() ||
      seq_a_tail.cols() != seq_b_head.cols())
    throw ShapeMismatch("overlap blocks must have equal shapes");
  if (seq_a_tail.cols() != kPoseDim)
    throw ShapeMismatch("overlap blocks must be frames x 147");

  const int L = static_cast<int>(seq_a_tail.rows());
  Mat out(L, kPoseDim);
  for (int t = 0; t < L; ++t) {
    const auto a = seq_a_tail.row(t);
    const auto b = seq_b_head.row(t);
    const double w = fade_weight(t, L);
    if (w == 1.0 || (a.array() == b.array()).all()) {
      out.row(t) = a;
      continue;
    }
    if (w == 0.0) {
      out.row(t) = b;
      continue;
    }
    out.row(t).segment<3>(0) = w * a.segment<3>(0) + (1.0 - w) * b.segment<3>(0);
    for (int j = 0; j < kNumJoints; ++j) {
      const int off = 3 + 6 * j;
      if ((a.segment<6>(off).array() == b.segment<6>(off).array()).all()) {
        out.row(t).segment<6>(off) = a.segment<6>(off);
        continue;
      }
      const Eigen::Quaterniond qa = quat_of_6d(a.segment<6>(off));
      const Eigen::Quaterniond qb = quat_of_6d(b.segment<6>(off));
      const Mat3 R = qa.slerp(1.0 - w, qb).toRotationMatrix();
      out.row(t).segment<3>(off) = R.col(0).transpose();
      out.row(t).segment<3>(off + 3) = R.col(1).transpose();
    }
  }
  return out;
}

GroupSequence generate_long(const GroupDenoiser& denoiser,
                            const AudioFeatureSequence& audio, int n_dancers,
                            const SamplerConfig& sampler,
                            const GuidanceConfig& guidance, uint64_t seed) {
  const ModelConfig& cfg = denoiser.config();
  if (n_dancers < 1) throw TooFewDancers("need at least one dancer");
  if (n_dancers > cfg.n_max)
    throw TooManyDancers("group exceeds the configured maximum");
  if (audio.d_a() != cfg.d_audio)
    throw ShapeMismatch("audio feature width does not match the model");
  if (guidance.gamma != 0.0 && guidance.encoder == nullptr)
    throw MissingEncoder("guidance gamma set without an encoder");

  const int total = audio.n_frames();
  int window = static_cast<int>(std::lround(5.0 * audio.fps));
  window -= window % 2;
  if (window < 2) throw BadConfig("fps too low for a five second window");
  // anything that fits in one window is plain sampling, no chunk plan needed
  if (total <= window)
    return sample_group_dance(denoiser, audio, n_dancers, total, sampler,
                              guidance, seed);
  const ChunkPlan plan = chunk_schedule(total, window);
  const int n_chunks = static_cast<int>(plan.windows.size());

  const int hop = plan.overlap_frames;
  const int M = cfg.diffusion_steps;
  const NoiseSchedule sched = build_cosine_schedule(M);

  // conditioning windows; frames past the end repeat the final audio frame
  std::vector<AudioFeatureSequence> chunk_audio(n_chunks);
  for (int c = 0; c < n_chunks; ++c) {
    const int start = plan.windows[c].first;
    AudioFeatureSequence& ca = chunk_audio[c];
    ca.fps = audio.fps;
    ca.features.resize(window, audio.d_a());
    for (int t = 0; t < window; ++t)
      ca.features.row(t) = audio.features.row(std::min(start + t, total - 1));
    for (int bf : audio.beat_frames)
      if (bf >= start && bf < start + window) ca.beat_frames.push_back(bf - start);
  }

  Rng rng(seed);
  Eigen::RowVectorXd z(cfg.d);
  for (int c = 0; c < cfg.d; ++c) z[c] = rng.normal();
  std::vector<Mat> x(n_chunks), x0_hat(n_chunks);
  for (int c = 0; c < n_chunks; ++c)
    x[c] = normal_matrix(rng, static_cast<Eigen::Index>(n_dancers) * window,
                         kPoseDim);

  const auto dancer_rows = [&](Mat& m, int dancer) {
    return m.middleRows(static_cast<Eigen::Index>(dancer) * window, window);
  };

  bool matched = false;
  const auto align_dancers = [&] {
    // one-shot correspondence on the current clean estimates; each pair is
    // matched after the previous chunk has already been reordered
    for (int c = 0; c + 1 < n_chunks; ++c) {
      Mat cost(n_dancers, n_dancers);
      for (int i = 0; i < n_dancers; ++i)
        for (int j = 0; j < n_dancers; ++j)
          cost(i, j) = overlap_cost(
              x0_hat[c].middleRows(i * window + hop, hop),
              x0_hat[c + 1].middleRows(j * window, hop));
      const DancerAssignment match = match_dancers_hungarian(cost);
      Mat xr = x[c + 1], hr = x0_hat[c + 1];
      for (int j = 0; j < n_dancers; ++j) {
        const int dst = match.permutation[j];
        dancer_rows(xr, dst) = dancer_rows(x[c + 1], j);
        dancer_rows(hr, dst) = dancer_rows(x0_hat[c + 1], j);
      }
      x[c + 1] = std::move(xr);
      x0_hat[c + 1] = std::move(hr);
    }
    matched = true;
  };

  const auto crossfade = [&] {
    // shared diffused state across every seam; both chunks carry it forward
    for (int c = 0; c + 1 < n_chunks; ++c)
      for (int i = 0; i < n_dancers; ++i)
        for (int t = 0; t < hop; ++t) {
          const double w = fade_weight(t, hop);
          const Eigen::RowVectorXd mixed =
              w * x[c].row(i * window + hop + t) +
              (1.0 - w) * x[c + 1].row(i * window + t);
          x[c].row(i * window + hop + t) = mixed;
          x[c + 1].row(i * window + t) = mixed;
        }
  };

  const auto denoise_all = [&](int m) {
    for (int c = 0; c < n_chunks; ++c) {
      Mat h = denoiser.denoise(x[c], m, chunk_audio[c], n_dancers, z);
      if (sampler.kind == SamplerKind::kDdim && guidance.gamma != 0.0) {
        const PosteriorCoeffs pc = posterior_coeffs(m, sched);
        h += (guidance.gamma * pc.beta_tilde / pc.c0) *
             guidance.encoder->score_gradient(x[c], m);
      }
      x0_hat[c] = std::move(h);
    }
  };

  // lockstep reverse chain; crossfades keep seams coherent while the state
  // is still noised, the final (clean) merge happens in assembly via slerp
  if (sampler.kind == SamplerKind::kDdpm) {
    for (int m = M; m >= 1; --m) {
      denoise_all(m);
      for (int c = 0; c < n_chunks; ++c)
        x[c] = reverse_step_ddpm(x[c], x0_hat[c], m, sched, guidance, rng);
      if (!matched) align_dancers();
      if (m > 1) crossfade();
    }
  } else {
    const std::vector<int> grid = ddim_step_grid(M, sampler.n_ddim_steps);
    for (int i = static_cast<int>(grid.size()) - 1; i >= 0; --i) {
      const int m_prev = i > 0 ? grid[i - 1] : 0;
      denoise_all(grid[i]);
      for (int c = 0; c < n_chunks; ++c)
        x[c] = reverse_step_ddim(x[c], x0_hat[c], grid[i], m_prev, sched);
      if (!matched) align_dancers();
      if (m_prev > 0) crossfade();
    }
  }

  PackedGroup out;
  out.n_dancers = n_dancers;
  out.n_frames = total;
  out.fps = audio.fps;
  out.data.resize(static_cast<Eigen::Index>(n_dancers) * total, kPoseDim);
  for (int i = 0; i < n_dancers; ++i) {
    const Eigen::Index base = static_cast<Eigen::Index>(i) * total;
    out.data.middleRows(base, hop) = x[0].middleRows(i * window, hop);
    for (int c = 0; c + 1 < n_chunks; ++c) {
      const int start = plan.windows[c + 1].first;
      out.data.middleRows(base + start, hop) =
          blend_overlap(x[c].middleRows(i * window + hop, hop),
                        x[c + 1].middleRows(i * window, hop));
    }
    const int last_start = plan.windows[n_chunks - 1].first;
    const int tail = total - (last_start + hop);  // truncated final half
    out.data.middleRows(base + last_start + hop, tail) =
        x[n_chunks - 1].middleRows(i * window + hop, tail);
  }
  orthogonalize_rotations(out);
  return unpack_group(out);
}

}  // namespace choreo
