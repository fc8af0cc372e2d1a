#include <cmath>
#include <string>
#include <vector>

#include "choreo/errors.hpp"
#include "choreo/model.hpp"
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
  cfg.n_max = 3;
  cfg.d_audio = 5;
  cfg.diffusion_steps = 10;
  return cfg;
}

AudioFeatureSequence tiny_audio(uint64_t seed, int T, int d_a) {
  AudioFeatureSequence a;
  a.features = randn(seed, T, d_a);
  a.fps = 30.0;
  return a;
}

}  // namespace

TEST_CASE("model config validation and json round trip") {
  CHECK_NOTHROW(ModelConfig::toy().validate());
  CHECK_NOTHROW(ModelConfig::paper().validate());
  CHECK(ModelConfig::toy().d == 64);
  CHECK(ModelConfig::paper().d == 512);
  CHECK(ModelConfig::paper().diffusion_steps == 1000);

  ModelConfig bad;
  bad.d = 30;
  bad.n_heads = 4;
  CHECK_THROWS_AS(bad.validate(), BadConfig);
  bad = ModelConfig{};
  bad.ff_size = 0;
  CHECK_THROWS_AS(bad.validate(), BadConfig);
  bad = ModelConfig{};
  bad.pose_dim = 100;
  CHECK_THROWS_AS(bad.validate(), BadConfig);

  ModelConfig c = tiny_config();
  const ModelConfig back = ModelConfig::from_json_string(c.to_json_string());
  CHECK(back == c);
  CHECK_THROWS_AS(ModelConfig::from_json_string("not json"), BadConfig);
  CHECK_THROWS_AS(ModelConfig::from_json_string("{\"d\": \"x\"}"), BadConfig);
}

TEST_CASE("param store bookkeeping") {
  ParamStore p;
  Mat& w = p.add("a/W", 2, 3);
  p.add("a/b", 1, 3);
  CHECK(p.names() == std::vector<std::string>{"a/W", "a/b"});
  CHECK(p.n_scalars() == 9);
  CHECK(p.has("a/W"));
  CHECK(!p.has("a"));
  CHECK_THROWS_AS(p.add("a/W", 2, 3), BadConfig);
  CHECK_THROWS_AS(p.value("missing"), BadConfig);

  w.setConstant(0.1);
  CHECK(&p.value("a/W") == &w);  // stable addresses

  p.grad("a/W").setConstant(2.0);
  p.grad("a/b").setConstant(1.0);
  CHECK(p.grad_norm() == doctest::Approx(std::sqrt(4.0 * 6 + 1.0 * 3)).epsilon(1e-12));
  p.scale_grads(0.5);
  CHECK(p.grad("a/W")(0, 0) == 1.0);
  p.zero_grads();
  CHECK(p.grad_norm() == 0.0);

  // quantization rounds through float32 and is idempotent
  p.value("a/W").setConstant(0.1);  // not representable in f32
  p.quantize_f32();
  CHECK(p.value("a/W")(0, 0) == static_cast<double>(0.1f));
  const Mat once = p.value("a/W");
  p.quantize_f32();
  CHECK((p.value("a/W") - once).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sinusoid embedding: structure, injectivity, span") {
  const int d = 16, M = 100;
  const Mat table = sinusoid_embedding(M + 1, d);
  CHECK(table.rows() == M + 1);
  CHECK(table.cols() == d);
  for (int j = 0; j < d; j += 2) CHECK(table(0, j) == 0.0);
  for (int j = 1; j < d; j += 2) CHECK(table(0, j) == 1.0);
  CHECK(table(1, 0) == doctest::Approx(std::sin(1.0)).epsilon(1e-12));
  CHECK(table(1, 1) == doctest::Approx(std::cos(1.0)).epsilon(1e-12));

  // all steps in [0, M] are pairwise distinct
  double min_gap = 1e300;
  for (int i = 0; i <= M; ++i)
    for (int j = i + 1; j <= M; ++j)
      min_gap = std::min(min_gap, (table.row(i) - table.row(j)).norm());
  CHECK(min_gap > 1e-4);

  // the ends of the range disagree in at least half the coordinates
  int moved = 0;
  for (int j = 0; j < d; ++j)
    if (std::abs(table(0, j) - table(M, j)) > 1e-3) ++moved;
  CHECK(moved >= d / 2);

  const Mat packed = packed_positional_encoding(3, 7, d);
  CHECK(packed.rows() == 21);
  const Mat frame = sinusoid_embedding(7, d);
  for (int i = 0; i < 3; ++i)
    CHECK((packed.middleRows(7 * i, 7) - frame).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("timestep embedding: range checks and step sensitivity") {
  const ModelConfig cfg = tiny_config();
  ParamStore p;
  Rng rng(3);
  init_model_params(p, cfg, rng);
  GroupDenoiser den(p, cfg);

  ad::Tape t;
  const Mat e3 = t.val(den.embed_timestep(t, 3));
  CHECK(e3.rows() == 1);
  CHECK(e3.cols() == cfg.d);
  const Mat e4 = t.val(den.embed_timestep(t, 4));
  CHECK((e3 - e4).cwiseAbs().maxCoeff() > 0.0);
  const Mat e3b = t.val(den.embed_timestep(t, 3));
  CHECK((e3 - e3b).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(den.embed_timestep(t, -1), BadStep);
  CHECK_THROWS_AS(den.embed_timestep(t, cfg.diffusion_steps + 1), BadStep);
  CHECK_NOTHROW(den.embed_timestep(t, 0));
  CHECK_NOTHROW(den.embed_timestep(t, cfg.diffusion_steps));
}

TEST_CASE("group embedding: distinctness, errors, table stub") {
  const ModelConfig cfg = tiny_config();
  ParamStore p;
  Rng rng(5);
  init_model_params(p, cfg, rng);
  GroupDenoiser den(p, cfg);
  const AudioFeatureSequence audio = tiny_audio(6, 6, cfg.d_audio);

  Eigen::RowVectorXd z1 = randn(7, 1, cfg.d).row(0);
  Eigen::RowVectorXd z2 = randn(8, 1, cfg.d).row(0);

  const Eigen::RowVectorXd w_2 = den.group_embedding(audio, 2, z1);
  CHECK(w_2.size() == cfg.d);
  CHECK(w_2.allFinite());
  // deterministic, sensitive to group size and to the seed vector
  CHECK((den.group_embedding(audio, 2, z1) - w_2).cwiseAbs().maxCoeff() == 0.0);
  CHECK((den.group_embedding(audio, 3, z1) - w_2).cwiseAbs().maxCoeff() > 0.0);
  CHECK((den.group_embedding(audio, 2, z2) - w_2).cwiseAbs().maxCoeff() > 0.0);

  CHECK_THROWS_AS(den.group_embedding(audio, 0, z1), TooFewDancers);
  CHECK_THROWS_AS(den.group_embedding(audio, cfg.n_max + 1, z1), TooManyDancers);
  Eigen::RowVectorXd zbad = Eigen::RowVectorXd::Zero(cfg.d + 1);
  CHECK_THROWS_AS(den.group_embedding(audio, 2, zbad), ShapeMismatch);

  // zeroing the final MLP layer reduces w to the group-size table row
  p.value("w/mlp7/W").setZero();
  p.value("w/mlp7/b").setZero();
  for (int n = 1; n <= cfg.n_max; ++n) {
    const Eigen::RowVectorXd w_n = den.group_embedding(audio, n, z1);
    CHECK((w_n - p.value("w/E").row(n - 1)).cwiseAbs().maxCoeff() == 0.0);
  }
  // and the seed vector no longer matters
  CHECK((den.group_embedding(audio, 2, z2) -
         den.group_embedding(audio, 2, z1)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("denoiser: output contract, determinism, conditioning") {
  const ModelConfig cfg = tiny_config();
  ParamStore p;
  Rng rng(11);
  init_model_params(p, cfg, rng);
  GroupDenoiser den(p, cfg);

  const int N = 3, T = 12;
  const AudioFeatureSequence audio = tiny_audio(12, T, cfg.d_audio);
  const Mat x = randn(13, N * T, kPoseDim);
  const Eigen::RowVectorXd z = randn(14, 1, cfg.d).row(0);

  const Mat out = den.denoise(x, 4, audio, N, z);
  CHECK(out.rows() == N * T);
  CHECK(out.cols() == kPoseDim);
  CHECK(out.allFinite());

  // plain calls, repeated calls, and tape-built graphs all agree bitwise
  CHECK((den.denoise(x, 4, audio, N, z) - out).cwiseAbs().maxCoeff() == 0.0);
  {
    ad::Tape t;
    auto v = den.denoise(t, t.constant(x), 4, audio, N, z);
    CHECK((t.val(v) - out).cwiseAbs().maxCoeff() == 0.0);
  }
  {
    GroupDenoiser den2(p, cfg);  // same parameter store
    CHECK((den2.denoise(x, 4, audio, N, z) - out).cwiseAbs().maxCoeff() == 0.0);
  }

  // every conditioning channel reaches the output
  CHECK((den.denoise(x, 5, audio, N, z) - out).cwiseAbs().maxCoeff() > 0.0);
  AudioFeatureSequence audio2 = audio;
  audio2.features(0, 0) += 0.5;
  CHECK((den.denoise(x, 4, audio2, N, z) - out).cwiseAbs().maxCoeff() > 0.0);

  // the modulation head is identity at init (Ws = 0), which makes the output
  // independent of the group seed until those weights move; nudge them
  const Eigen::RowVectorXd z2 = randn(15, 1, cfg.d).row(0);
  CHECK((den.denoise(x, 4, audio, N, z2) - out).cwiseAbs().maxCoeff() == 0.0);
  p.value("denoiser/blk0/gm/Ws") = 0.05 * randn(18, cfg.d, cfg.d);
  const Mat out2 = den.denoise(x, 4, audio, N, z);
  CHECK((den.denoise(x, 4, audio, N, z2) - out2).cwiseAbs().maxCoeff() > 0.0);

  // ablation hook removes the cross-dancer block
  {
    ad::Tape t;
    DenoiseOptions opt;
    opt.ablate_group_block = true;
    auto v = den.denoise(t, t.constant(x), 4, audio, N, z, opt);
    CHECK((t.val(v) - out).cwiseAbs().maxCoeff() > 0.0);
  }

  CHECK_THROWS_AS(den.denoise(randn(16, N * T - 1, kPoseDim), 4, audio, N, z),
                  ShapeMismatch);
  CHECK_THROWS_AS(den.denoise(randn(17, N * (T + 1), kPoseDim), 4, audio, N, z),
                  ShapeMismatch);
}

TEST_CASE("ablated denoiser is dancer-local; full model couples dancers") {
  const ModelConfig cfg = tiny_config();
  ParamStore p;
  Rng rng(21);
  init_model_params(p, cfg, rng);
  GroupDenoiser den(p, cfg);

  const int N = 2, T = 8;
  const AudioFeatureSequence audio = tiny_audio(22, T, cfg.d_audio);
  const Eigen::RowVectorXd z = randn(23, 1, cfg.d).row(0);
  const Mat x = randn(24, N * T, kPoseDim);
  Mat x2 = x;
  x2.middleRows(T, T) += randn(25, T, kPoseDim);

  DenoiseOptions ablate;
  ablate.ablate_group_block = true;
  ad::Tape t;
  const Mat a = t.val(den.denoise(t, t.constant(x), 3, audio, N, z, ablate));
  const Mat b = t.val(den.denoise(t, t.constant(x2), 3, audio, N, z, ablate));
  // dancer 0 cannot see dancer 1 without the group block
  CHECK((a.topRows(T) - b.topRows(T)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.bottomRows(T) - b.bottomRows(T)).cwiseAbs().maxCoeff() > 0.0);

  const Mat fa = den.denoise(x, 3, audio, N, z);
  const Mat fb = den.denoise(x2, 3, audio, N, z);
  CHECK((fa.topRows(T) - fb.topRows(T)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("denoiser is bitwise equivariant to dancer permutation") {
  const ModelConfig cfg = tiny_config();
  ParamStore p;
  Rng rng(31);
  init_model_params(p, cfg, rng);
  GroupDenoiser den(p, cfg);

  const int N = 3, T = 7;
  const AudioFeatureSequence audio = tiny_audio(32, T, cfg.d_audio);
  const Eigen::RowVectorXd z = randn(33, 1, cfg.d).row(0);
  const Mat x = randn(34, N * T, kPoseDim);

  const std::vector<int> perm{2, 0, 1};
  auto permute = [&](const Mat& m) {
    Mat out(m.rows(), m.cols());
    for (int i = 0; i < N; ++i)
      out.middleRows(i * T, T) = m.middleRows(perm[i] * T, T);
    return out;
  };

  for (int m : {1, 6}) {
    const Mat out = den.denoise(x, m, audio, N, z);
    const Mat out_p = den.denoise(permute(x), m, audio, N, z);
    CHECK((permute(out) - out_p).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("denoiser gradients agree with finite differences") {
  const ModelConfig cfg = tiny_config();
  ParamStore p;
  Rng rng(41);
  init_model_params(p, cfg, rng);
  GroupDenoiser den(p, cfg);

  const int N = 2, T = 6, m = 4;
  const AudioFeatureSequence audio = tiny_audio(42, T, cfg.d_audio);
  const Eigen::RowVectorXd z = randn(43, 1, cfg.d).row(0);
  Mat x = randn(44, N * T, kPoseDim);
  const Mat target = randn(45, N * T, kPoseDim);

  auto loss_value = [&]() {
    ad::Tape t(false);
    auto out = den.denoise(t, t.constant(x), m, audio, N, z);
    return t.val(t.mse(out, t.constant(target)))(0, 0);
  };

  ad::Tape t;
  auto vx = t.input(x);
  auto loss = t.mse(den.denoise(t, vx, m, audio, N, z), t.constant(target));
  p.zero_grads();
  t.backward(loss);
  const Mat gx = t.grad(vx);

  const double h = 1e-5;
  auto check_close = [](double an, double fd) {
    const double denom = std::max({std::abs(an), std::abs(fd), 1e-5});
    INFO("analytic ", an, " fd ", fd);
    CHECK(std::abs(an - fd) / denom < 1e-3);
  };

  Rng pick(46);
  for (int c = 0; c < 12; ++c) {
    const int i = pick.uniform_int(0, static_cast<int>(x.rows()) - 1);
    const int j = pick.uniform_int(0, kPoseDim - 1);
    const double save = x(i, j);
    x(i, j) = save + h;
    const double lp = loss_value();
    x(i, j) = save - h;
    const double lm = loss_value();
    x(i, j) = save;
    check_close(gx(i, j), (lp - lm) / (2.0 * h));
  }

  // spot-check parameter gradients across every module of the network
  const std::vector<std::string> names{
      "denoiser/input/W",      "denoiser/blk0/local/Wq", "denoiser/blk0/cross/Wv",
      "denoiser/blk0/film/W",  "denoiser/blk0/gm/Ws",    "denoiser/blk0/gff/W1",
      "denoiser/out/W",        "music/input/W",          "music/enc0/attn/Wk",
      "time/W1",               "w/mlp0/W",               "w/E",
      "denoiser/blk0/ln2/gain"};
  for (const auto& name : names) {
    Mat& val = p.value(name);
    const Mat& grd = p.grad(name);
    for (int c = 0; c < 2; ++c) {
      const int i = pick.uniform_int(0, static_cast<int>(val.rows()) - 1);
      const int j = pick.uniform_int(0, static_cast<int>(val.cols()) - 1);
      const double save = val(i, j);
      val(i, j) = save + h;
      const double lp = loss_value();
      val(i, j) = save - h;
      const double lm = loss_value();
      val(i, j) = save;
      INFO("param ", name);
      check_close(grd(i, j), (lp - lm) / (2.0 * h));
    }
  }
}
