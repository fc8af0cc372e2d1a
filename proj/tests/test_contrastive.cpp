#include <cmath>
#include <vector>

#include "choreo/contrastive.hpp"
#include "choreo/errors.hpp"
#include "choreo/rng.hpp"
#include "choreo/schedule.hpp"
#include "doctest.h"

using namespace choreo;

namespace {

Mat randn(uint64_t seed, int r, int c) {
  Rng rng(seed);
  return normal_matrix(rng, r, c);
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d = 16;
  cfg.n_heads = 2;
  cfg.n_blocks = 1;
  cfg.ff_size = 24;
  cfg.music_encoder_layers = 1;
  cfg.n_max = 5;
  cfg.d_audio = 5;
  cfg.diffusion_steps = 10;
  return cfg;
}

PackedGroup make_group(uint64_t seed, int n, int T) {
  PackedGroup g;
  g.n_dancers = n;
  g.n_frames = T;
  g.fps = 30.0;
  g.data = randn(seed, n * T, kPoseDim);
  return g;
}

}  // namespace

TEST_CASE("nce_loss: ties, limits, monotonicity") {
  // equal scores give log(K+1)
  CHECK(nce_loss(0.7, std::vector<double>(10, 0.7)) ==
        doctest::Approx(std::log(11.0)).epsilon(1e-12));
  CHECK(nce_loss(-2.0, {-2.0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // dominant positive drives the loss to zero; dominant negative to +inf side
  CHECK(nce_loss(50.0, {0.0, 1.0}) < 1e-15);
  CHECK(nce_loss(0.0, {60.0}) > 50.0);

  // nonnegative and strictly decreasing in the positive score
  const std::vector<double> negs{0.3, -1.2, 2.0};
  double prev = nce_loss(-3.0, negs);
  CHECK(prev >= 0.0);
  for (double pos : {-1.0, 0.0, 1.5, 4.0}) {
    const double cur = nce_loss(pos, negs);
    CHECK(cur < prev);
    CHECK(cur >= 0.0);
    prev = cur;
  }

  // large-score stability (log-sum-exp must not overflow)
  CHECK(std::isfinite(nce_loss(1000.0, {999.0, 998.0})));
  CHECK(nce_loss(1000.0, {1000.0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("construct_negatives: counts, replacement law, padding") {
  std::vector<PackedGroup> batch;
  batch.push_back(make_group(1, 3, 8));   // anchor
  batch.push_back(make_group(2, 2, 8));
  batch.push_back(make_group(3, 4, 12));  // longer donor, must crop
  batch.push_back(make_group(4, 2, 5));   // shorter donor, must pad

  Rng rng(7);
  const auto negs = construct_negatives(batch, 0, 0.5, 6, rng);
  REQUIRE(negs.size() == 6);
  for (const auto& g : negs) {
    CHECK(g.n_dancers == 3);
    CHECK(g.n_frames == 8);
    CHECK(g.data.rows() == 24);
    // at least one slot replaced: some dancer differs from the anchor
    CHECK((g.data - batch[0].data).cwiseAbs().maxCoeff() > 0.0);
  }

  // p = 1 replaces every slot with donor material
  Rng rng1(8);
  const auto all = construct_negatives(batch, 0, 1.0, 3, rng1);
  for (const auto& g : all)
    for (int i = 0; i < 3; ++i)
      CHECK((g.data.middleRows(i * 8, 8) -
             batch[0].data.middleRows(i * 8, 8)).cwiseAbs().maxCoeff() > 0.0);

  // every replaced dancer is a crop/pad of some donor dancer
  Rng rng2(9);
  const auto one = construct_negatives(batch, 0, 1.0, 1, rng2);
  for (int slot = 0; slot < 3; ++slot) {
    const Mat got = one[0].data.middleRows(slot * 8, 8);
    bool matched = false;
    for (size_t b = 1; b < batch.size() && !matched; ++b) {
      const auto& src = batch[b];
      for (int i = 0; i < src.n_dancers && !matched; ++i) {
        Mat expect(8, kPoseDim);
        for (int f = 0; f < 8; ++f) {
          const int sf = std::min(f, src.n_frames - 1);
          expect.row(f) = src.data.row(i * src.n_frames + sf);
        }
        matched = (got - expect).cwiseAbs().maxCoeff() == 0.0;
      }
    }
    CHECK(matched);
  }

  // error paths
  Rng r3(10);
  std::vector<PackedGroup> lone{make_group(11, 2, 6)};
  CHECK_THROWS_AS(construct_negatives(lone, 0, 0.5, 2, r3), InsufficientDonors);
  CHECK_THROWS_AS(construct_negatives(batch, -1, 0.5, 2, r3), BadShape);
  CHECK_THROWS_AS(construct_negatives(batch, 4, 0.5, 2, r3), BadShape);
  CHECK_THROWS_AS(construct_negatives(batch, 0, 0.0, 2, r3), BadConfig);
  CHECK_THROWS_AS(construct_negatives(batch, 0, 1.5, 2, r3), BadConfig);
  CHECK_THROWS_AS(construct_negatives(batch, 0, 0.5, 0, r3), BadConfig);
}

TEST_CASE("construct_negatives: replacement fraction statistics") {
  // with N slots at probability p, conditioned on >= 1 replacement, the
  // expected replaced fraction is p / (1 - (1-p)^N); at N=5, p=0.5 that is
  // 0.5 / (1 - 0.5^5) = 0.516129...
  const int N = 5, T = 4, trials = 10000;
  std::vector<PackedGroup> batch;
  batch.push_back(make_group(21, N, T));
  batch.push_back(make_group(22, N, T));
  batch.push_back(make_group(23, N, T));

  Rng rng(24);
  double replaced = 0.0;
  int min_count = N + 1;
  for (int t = 0; t < trials; ++t) {
    const auto negs = construct_negatives(batch, 0, 0.5, 1, rng);
    int count = 0;
    for (int i = 0; i < N; ++i)
      if ((negs[0].data.middleRows(i * T, T) -
           batch[0].data.middleRows(i * T, T)).cwiseAbs().maxCoeff() > 0.0)
        ++count;
    CHECK(count >= 1);
    min_count = std::min(min_count, count);
    replaced += static_cast<double>(count) / N;
  }
  replaced /= trials;
  const double expect = 0.5 / (1.0 - std::pow(0.5, 5));
  CHECK(std::abs(replaced - expect) < 0.02);
  CHECK(min_count == 1);  // the all-kept case is resampled away, 1 remains
}

TEST_CASE("contrastive score: determinism, conditioning, errors") {
  const ModelConfig cfg = tiny_config();
  ParamStore p;
  Rng rng(31);
  init_model_params(p, cfg, rng);
  init_contrastive_params(p, cfg, rng);
  ContrastiveEncoder enc(p, cfg);

  const int N = 2, T = 6;
  const Mat x = randn(32, N * T, kPoseDim);
  const Eigen::RowVectorXd w = randn(33, 1, cfg.d).row(0);

  const double s = enc.score(x, w, 3, N);
  CHECK(std::isfinite(s));
  CHECK(enc.score(x, w, 3, N) == s);

  // step and motion reach the score
  CHECK(enc.score(x, w, 4, N) != s);
  Mat x2 = x;
  x2(3, 40) += 0.25;
  CHECK(enc.score(x2, w, 3, N) != s);

  // tape and plain evaluations agree bitwise
  {
    ad::Tape t;
    auto v = enc.score(t, t.constant(x), t.constant(Mat(w)), 3, N);
    CHECK(t.val(v)(0, 0) == s);
  }

  // the modulation head is identity at init (Ws = 0); w only reaches the
  // score once those weights move
  const Eigen::RowVectorXd w2 = randn(34, 1, cfg.d).row(0);
  CHECK(enc.score(x, w2, 3, N) == s);
  p.value("contrastive/blk0/gm/Ws") = 0.05 * randn(36, cfg.d, cfg.d);
  CHECK(enc.score(x, w2, 3, N) != enc.score(x, w, 3, N));

  CHECK_THROWS_AS(enc.score(randn(35, 11, kPoseDim), w, 3, 2), ShapeMismatch);
  CHECK_THROWS_AS(enc.score(x, w, 11, N), BadStep);
}

TEST_CASE("score_gradient matches finite differences and spares the params") {
  const ModelConfig cfg = tiny_config();
  ParamStore p;
  Rng rng(41);
  init_model_params(p, cfg, rng);
  init_contrastive_params(p, cfg, rng);
  ContrastiveEncoder enc(p, cfg);

  const int N = 2, T = 5, m = 4;
  Mat x = randn(42, N * T, kPoseDim);
  const Eigen::RowVectorXd w = randn(43, 1, cfg.d).row(0);

  p.zero_grads();
  const Mat g = enc.score_gradient(x, w, m, N);
  REQUIRE(g.rows() == x.rows());
  REQUIRE(g.cols() == x.cols());
  // guidance must not leak gradients into the parameter buffers
  CHECK(p.grad_norm() == 0.0);

  const double h = 1e-5;
  Rng pick(44);
  for (int c = 0; c < 20; ++c) {
    const int i = pick.uniform_int(0, static_cast<int>(x.rows()) - 1);
    const int j = pick.uniform_int(0, kPoseDim - 1);
    const double save = x(i, j);
    x(i, j) = save + h;
    const double sp = enc.score(x, w, m, N);
    x(i, j) = save - h;
    const double sm = enc.score(x, w, m, N);
    x(i, j) = save;
    const double fd = (sp - sm) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(g(i, j)), 1e-5});
    INFO("coord (", i, ",", j, ") analytic ", g(i, j), " fd ", fd);
    CHECK(std::abs(fd - g(i, j)) / denom < 1e-3);
  }
}

TEST_CASE("guidance adapter routes through the encoder") {
  const ModelConfig cfg = tiny_config();
  ParamStore p;
  Rng rng(51);
  init_model_params(p, cfg, rng);
  init_contrastive_params(p, cfg, rng);
  ContrastiveEncoder enc(p, cfg);

  const int N = 3, T = 4;
  const Mat x = randn(52, N * T, kPoseDim);
  const Eigen::RowVectorXd w = randn(53, 1, cfg.d).row(0);

  ContrastiveGuidance guide(enc, w, N);
  const GuidanceEncoder& iface = guide;
  const Mat g = iface.score_gradient(x, 2);
  CHECK((g - enc.score_gradient(x, w, 2, N)).cwiseAbs().maxCoeff() == 0.0);

  // usable inside a reverse step
  const NoiseSchedule sched = build_cosine_schedule(cfg.diffusion_steps);
  GuidanceConfig gc{0.5, &guide};
  Rng step_rng(54);
  const Mat x0_hat = randn(55, N * T, kPoseDim);
  const Mat stepped = reverse_step_ddpm(x, x0_hat, 2, sched, gc, step_rng);
  CHECK(stepped.allFinite());
}

TEST_CASE("contrastive_training_scores: counts and denoiser reach") {
  const ModelConfig cfg = tiny_config();
  ParamStore p;
  Rng rng(61);
  init_model_params(p, cfg, rng);
  init_contrastive_params(p, cfg, rng);
  GroupDenoiser den(p, cfg);
  ContrastiveEncoder enc(p, cfg);
  const NoiseSchedule sched = build_cosine_schedule(cfg.diffusion_steps);

  const int N = 3, T = 6, m = 5, K = 4;
  AudioFeatureSequence audio;
  audio.features = randn(62, T, cfg.d_audio);

  const PackedGroup anchor = make_group(63, N, T);
  std::vector<PackedGroup> batch{anchor, make_group(64, N, T),
                                 make_group(65, N, T)};
  Rng neg_rng(66);
  const auto mixed = construct_negatives(batch, 0, 0.5, K, neg_rng);

  ad::Tape t;
  auto music = den.encode_music(t, audio);
  auto w = den.group_embedding(t, music, N, randn(67, 1, cfg.d).row(0));
  Rng score_rng(68);
  const auto scores = contrastive_training_scores(t, den, enc, sched, anchor,
                                                  mixed, music, w, m, score_rng);
  REQUIRE(scores.negatives.size() == static_cast<size_t>(K));
  CHECK(scores.pos.rows() == 1);
  CHECK(scores.pos.cols() == 1);
  CHECK(std::isfinite(t.val(scores.pos)(0, 0)));
  for (const auto& s : scores.negatives) CHECK(std::isfinite(t.val(s)(0, 0)));

  // the InfoNCE loss over these scores backprops into denoiser parameters
  std::vector<ad::Value> all{scores.pos};
  for (const auto& s : scores.negatives) all.push_back(s);
  auto loss = t.nce(all);
  p.zero_grads();
  t.backward(loss);
  CHECK(p.grad("denoiser/input/W").cwiseAbs().maxCoeff() > 0.0);
  CHECK(p.grad("denoiser/blk0/local/Wq").cwiseAbs().maxCoeff() > 0.0);
  CHECK(p.grad("contrastive/input/W").cwiseAbs().maxCoeff() > 0.0);
  CHECK(p.grad("contrastive/head/W").cwiseAbs().maxCoeff() > 0.0);

  // mismatched negative shape is rejected
  std::vector<PackedGroup> bad{make_group(69, N, T + 1)};
  Rng r2(70);
  CHECK_THROWS_AS(contrastive_training_scores(t, den, enc, sched, anchor, bad,
                                              music, w, m, r2),
                  ShapeMismatch);
}

TEST_CASE("training scores separate a matched group from scrambled ones") {
  // with an untrained encoder the scores are arbitrary but must be distinct
  // across different mixed groups (the graph actually depends on its input)
  const ModelConfig cfg = tiny_config();
  ParamStore p;
  Rng rng(71);
  init_model_params(p, cfg, rng);
  init_contrastive_params(p, cfg, rng);
  GroupDenoiser den(p, cfg);
  ContrastiveEncoder enc(p, cfg);
  const NoiseSchedule sched = build_cosine_schedule(cfg.diffusion_steps);

  const int N = 2, T = 5, m = 3;
  AudioFeatureSequence audio;
  audio.features = randn(72, T, cfg.d_audio);
  const PackedGroup anchor = make_group(73, N, T);
  std::vector<PackedGroup> mixed{make_group(74, N, T), make_group(75, N, T)};

  ad::Tape t;
  auto music = den.encode_music(t, audio);
  auto w = den.group_embedding(t, music, N, randn(76, 1, cfg.d).row(0));
  Rng srng(77);
  const auto scores =
      contrastive_training_scores(t, den, enc, sched, anchor, mixed, music, w,
                                  m, srng);
  const double s0 = t.val(scores.negatives[0])(0, 0);
  const double s1 = t.val(scores.negatives[1])(0, 0);
  CHECK(s0 != s1);
  CHECK(t.val(scores.pos)(0, 0) != s0);
}
