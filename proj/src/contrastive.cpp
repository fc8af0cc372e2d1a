#include "choreo/contrastive.hpp"

#include <algorithm>
#include <cmath>

#include "choreo/errors.hpp"

namespace choreo {

namespace {

ad::Value pv(ad::Tape& t, ParamStore& p, const std::string& name) {
  return t.param(&p.value(name), &p.grad(name));
}

ad::Value attn(ad::Tape& t, ParamStore& p, const std::string& pfx, ad::Value q,
               ad::Value kv, int heads, const ad::MaskSpec& mask) {
  auto Q = t.linear(q, pv(t, p, pfx + "/Wq"), pv(t, p, pfx + "/bq"));
  auto K = t.linear(kv, pv(t, p, pfx + "/Wk"), pv(t, p, pfx + "/bk"));
  auto V = t.linear(kv, pv(t, p, pfx + "/Wv"), pv(t, p, pfx + "/bv"));
  auto A = t.attention(Q, K, V, heads, mask);
  return t.linear(A, pv(t, p, pfx + "/Wo"), pv(t, p, pfx + "/bo"));
}

ad::Value res_ln(ad::Tape& t, ParamStore& p, const std::string& pfx, ad::Value x,
                 ad::Value sub) {
  return t.layer_norm(t.add(x, sub), pv(t, p, pfx + "/gain"),
                      pv(t, p, pfx + "/bias"));
}

ad::Value ffwd(ad::Tape& t, ParamStore& p, const std::string& pfx, ad::Value x) {
  auto h = t.gelu(t.linear(x, pv(t, p, pfx + "/W1"), pv(t, p, pfx + "/b1")));
  return t.linear(h, pv(t, p, pfx + "/W2"), pv(t, p, pfx + "/b2"));
}

}  // namespace

ContrastiveEncoder::ContrastiveEncoder(ParamStore& params,
                                       const ModelConfig& cfg)
    : params_(&params), cfg_(cfg) {
  cfg_.validate();
}

ad::Value ContrastiveEncoder::score(ad::Tape& t, ad::Value x, ad::Value w,
                                    int m, int n_dancers) const {
  ParamStore& p = *params_;
  if (x.cols() != cfg_.pose_dim)
    throw ShapeMismatch("motion rows must be 147-dim");
  if (n_dancers < 1 || x.rows() % n_dancers != 0)
    throw ShapeMismatch("rows must split evenly across dancers");
  if (w.rows() != 1 || w.cols() != cfg_.d)
    throw ShapeMismatch("w must be 1 x d");
  const int T = static_cast<int>(x.rows()) / n_dancers;

  auto h = t.linear(x, pv(t, p, "contrastive/input/W"),
                    pv(t, p, "contrastive/input/b"));
  h = t.add(h, t.constant(packed_positional_encoding(n_dancers, T, cfg_.d)));
  // timestep token rides along as its own block: isolated under the local
  // mask, visible to everything under the global mask, pooled at the end
  auto tau = timestep_mlp(t, p, "contrastive/time", m, cfg_.d,
                          cfg_.diffusion_steps);
  h = t.concat_rows(h, tau);
  std::vector<int> groups(n_dancers, T);
  groups.push_back(1);
  const auto local = ad::MaskSpec::local(groups);
  const auto global = ad::MaskSpec::global(groups);

  for (int l = 0; l < cfg_.n_blocks; ++l) {
    const std::string blk = "contrastive/blk" + std::to_string(l);
    auto a = attn(t, p, blk + "/local", h, h, cfg_.n_heads, local);
    h = res_ln(t, p, blk + "/ln1", h, a);
    auto f = ffwd(t, p, blk + "/ff", h);
    h = res_ln(t, p, blk + "/ln2", h, f);
    auto ga = attn(t, p, blk + "/global", h, h, cfg_.n_heads, global);
    h = res_ln(t, p, blk + "/ln3", h, ga);
    auto s = t.linear(w, pv(t, p, blk + "/gm/Ws"), pv(t, p, blk + "/gm/bs"));
    auto b = t.linear(w, pv(t, p, blk + "/gm/Wb"), pv(t, p, blk + "/gm/bb"));
    h = t.group_modulate(h, s, b, groups);
    h = t.add(h, ffwd(t, p, blk + "/gff", h));
  }
  auto pooled = t.mean_rows(h);
  return t.linear(pooled, pv(t, p, "contrastive/head/W"),
                  pv(t, p, "contrastive/head/b"));
}

double ContrastiveEncoder::score(const Mat& x, const Eigen::RowVectorXd& w,
                                 int m, int n_dancers) const {
  ad::Tape t(false);
  return score(t, t.constant(x), t.constant(w), m, n_dancers).mat()(0, 0);
}

Mat ContrastiveEncoder::score_gradient(const Mat& x,
                                       const Eigen::RowVectorXd& w, int m,
                                       int n_dancers) const {
  ad::Tape t(true);
  t.freeze_params(true);
  auto xv = t.input(x);
  auto s = score(t, xv, t.constant(w), m, n_dancers);
  t.backward(s);
  return t.grad(xv);
}

std::vector<PackedGroup> construct_negatives(
    const std::vector<PackedGroup>& batch, int anchor_index,
    double replace_prob, int k, Rng& rng) {
  if (anchor_index < 0 || anchor_index >= static_cast<int>(batch.size()))
    throw BadShape("anchor index out of range");
  if (replace_prob <= 0.0 || replace_prob > 1.0)
    throw BadConfig("replace_prob must be in (0, 1]");
  if (k < 1) throw BadConfig("need at least one negative");
  // pooled donor slots: every dancer of every non-anchor group
  std::vector<std::pair<int, int>> donors;
  for (int g = 0; g < static_cast<int>(batch.size()); ++g) {
    if (g == anchor_index) continue;
    for (int i = 0; i < batch[g].n_dancers; ++i) donors.emplace_back(g, i);
  }
  if (donors.empty())
    throw InsufficientDonors("negative construction needs a second group");

  const PackedGroup& anchor = batch[anchor_index];
  const int N = anchor.n_dancers;
  const int T = anchor.n_frames;
  std::vector<PackedGroup> out;
  out.reserve(k);
  for (int j = 0; j < k; ++j) {
    PackedGroup neg;
    int replaced = 0;
    do {
      neg = anchor;
      replaced = 0;
      for (int slot = 0; slot < N; ++slot) {
        if (rng.uniform() >= replace_prob) continue;
        const auto& [g, di] =
            donors[rng.uniform_int(0, static_cast<int>(donors.size()) - 1)];
        const PackedGroup& src = batch[g];
        const int Ts = src.n_frames;
        for (int f = 0; f < T; ++f) {
          const int sf = std::min(f, Ts - 1);  // pad by holding the last frame
          neg.data.row(neg.row(slot, f)) = src.data.row(src.row(di, sf));
        }
        ++replaced;
      }
    } while (replaced == 0);
    out.push_back(std::move(neg));
  }
  return out;
}

double nce_loss(double pos_score, const std::vector<double>& neg_scores) {
  double m = pos_score;
  for (double s : neg_scores) m = std::max(m, s);
  double acc = std::exp(pos_score - m);
  for (double s : neg_scores) acc += std::exp(s - m);
  return m + std::log(acc) - pos_score;
}

TrainingScores contrastive_training_scores(
    ad::Tape& t, const GroupDenoiser& denoiser, const ContrastiveEncoder& enc,
    const NoiseSchedule& sched, const PackedGroup& anchor,
    const std::vector<PackedGroup>& mixed, ad::Value music_tokens, ad::Value w,
    int m, Rng& rng) {
  const auto pc = posterior_coeffs(m, sched);  // BadStep outside [1, M]
  auto score_one = [&](const PackedGroup& g) {
    const Mat eps = normal_matrix(rng, g.data.rows(), g.data.cols());
    const Mat x_m = q_sample(g.data, m, eps, sched);
    auto x0_hat = denoiser.denoise_with(t, t.constant(x_m), music_tokens, w, m,
                                        g.n_dancers);
    auto mu = t.add(t.scale(x0_hat, pc.c0), t.constant(pc.cm * x_m));
    return enc.score(t, mu, w, m - 1, g.n_dancers);
  };
  TrainingScores s;
  s.pos = score_one(anchor);
  s.negatives.reserve(mixed.size());
  for (const auto& g : mixed) {
    if (g.n_dancers != anchor.n_dancers || g.n_frames != anchor.n_frames)
      throw ShapeMismatch("mixed group shape must match the anchor");
    s.negatives.push_back(score_one(g));
  }
  return s;
}

}  // namespace choreo
