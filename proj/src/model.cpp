#include "choreo/model.hpp"

#include <cmath>

#include "choreo/errors.hpp"
#include "json.hpp"

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

Eigen::RowVectorXd sinusoid_row(int pos, int d) {
  Eigen::RowVectorXd row(d);
  const int half = d / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
    row[2 * i] = std::sin(pos * freq);
    row[2 * i + 1] = std::cos(pos * freq);
  }
  if (d % 2 == 1) row[d - 1] = std::sin(pos * std::pow(10000.0, -1.0));
  return row;
}

void xavier(Mat& m, Rng& rng) {
  const double lim = std::sqrt(6.0 / (m.rows() + m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      m(r, c) = (2.0 * rng.uniform() - 1.0) * lim;
}

void add_attn(ParamStore& p, const std::string& pfx, int d, Rng& rng) {
  for (const char* w : {"/Wq", "/Wk", "/Wv", "/Wo"}) xavier(p.add(pfx + w, d, d), rng);
  for (const char* b : {"/bq", "/bk", "/bv", "/bo"}) p.add(pfx + b, 1, d);
}

void add_ln(ParamStore& p, const std::string& pfx, int d) {
  p.add(pfx + "/gain", 1, d).setOnes();
  p.add(pfx + "/bias", 1, d);
}

void add_ff(ParamStore& p, const std::string& pfx, int d, int ff, Rng& rng) {
  xavier(p.add(pfx + "/W1", d, ff), rng);
  p.add(pfx + "/b1", 1, ff);
  xavier(p.add(pfx + "/W2", ff, d), rng);
  p.add(pfx + "/b2", 1, d);
}

void add_time_mlp(ParamStore& p, const std::string& pfx, int d, Rng& rng) {
  for (int i = 0; i < 4; ++i) {
    xavier(p.add(pfx + "/W" + std::to_string(i), d, d), rng);
    p.add(pfx + "/b" + std::to_string(i), 1, d);
  }
}

// identity-at-init modulation head: S(w) = 1, b(w) = 0 until trained
void add_gm(ParamStore& p, const std::string& pfx, int d) {
  p.add(pfx + "/Ws", d, d);
  p.add(pfx + "/bs", 1, d).setOnes();
  p.add(pfx + "/Wb", d, d);
  p.add(pfx + "/bb", 1, d);
}

}  // namespace

Mat packed_positional_encoding(int n_dancers, int n_frames, int d) {
  const Mat table = sinusoid_embedding(n_frames, d);
  Mat out(static_cast<Eigen::Index>(n_dancers) * n_frames, d);
  for (int i = 0; i < n_dancers; ++i)
    out.middleRows(static_cast<Eigen::Index>(i) * n_frames, n_frames) = table;
  return out;
}

ad::Value timestep_mlp(ad::Tape& t, ParamStore& p, const std::string& prefix,
                       int m, int d, int max_step) {
  if (m < 0 || m > max_step)
    throw BadStep("timestep " + std::to_string(m) + " outside [0, " +
                  std::to_string(max_step) + "]");
  auto h = t.constant(sinusoid_row(m, d));
  for (int i = 0; i < 4; ++i) {
    h = t.linear(h, pv(t, p, prefix + "/W" + std::to_string(i)),
                 pv(t, p, prefix + "/b" + std::to_string(i)));
    if (i < 3) h = t.gelu(h);
  }
  return h;
}

void ModelConfig::validate() const {
  if (d < 1 || n_heads < 1 || n_blocks < 1 || ff_size < 1 ||
      music_encoder_layers < 1 || n_max < 1 || d_audio < 1 ||
      diffusion_steps < 1)
    throw BadConfig("model dimensions must be positive");
  if (d % n_heads != 0) throw BadConfig("d must be divisible by n_heads");
  if (pose_dim != kPoseDim) throw BadConfig("pose_dim must be 147");
}

std::string ModelConfig::to_json_string() const {
  nlohmann::json j;
  j["d"] = d;
  j["n_heads"] = n_heads;
  j["n_blocks"] = n_blocks;
  j["ff_size"] = ff_size;
  j["music_encoder_layers"] = music_encoder_layers;
  j["n_max"] = n_max;
  j["d_audio"] = d_audio;
  j["pose_dim"] = pose_dim;
  j["diffusion_steps"] = diffusion_steps;
  return j.dump();
}

ModelConfig ModelConfig::from_json_string(const std::string& s) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(s);
  } catch (const nlohmann::json::exception& e) {
    throw BadConfig(std::string("model config parse: ") + e.what());
  }
  ModelConfig c;
  try {
    c.d = j.at("d").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_blocks = j.at("n_blocks").get<int>();
    c.ff_size = j.at("ff_size").get<int>();
    c.music_encoder_layers = j.at("music_encoder_layers").get<int>();
    c.n_max = j.at("n_max").get<int>();
    c.d_audio = j.at("d_audio").get<int>();
    c.pose_dim = j.at("pose_dim").get<int>();
    c.diffusion_steps = j.at("diffusion_steps").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw BadConfig(std::string("model config fields: ") + e.what());
  }
  c.validate();
  return c;
}

Mat& ParamStore::add(const std::string& name, Eigen::Index rows,
                     Eigen::Index cols) {
  if (map_.count(name)) throw BadConfig("duplicate parameter: " + name);
  Entry e;
  e.value = Mat::Zero(rows, cols);
  e.grad = Mat::Zero(rows, cols);
  auto [it, ok] = map_.emplace(name, std::move(e));
  (void)ok;
  names_.push_back(name);
  return it->second.value;
}

Mat& ParamStore::value(const std::string& name) {
  auto it = map_.find(name);
  if (it == map_.end()) throw BadConfig("unknown parameter: " + name);
  return it->second.value;
}

const Mat& ParamStore::value(const std::string& name) const {
  auto it = map_.find(name);
  if (it == map_.end()) throw BadConfig("unknown parameter: " + name);
  return it->second.value;
}

Mat& ParamStore::grad(const std::string& name) {
  auto it = map_.find(name);
  if (it == map_.end()) throw BadConfig("unknown parameter: " + name);
  return it->second.grad;
}

void ParamStore::zero_grads() {
  for (auto& [name, e] : map_) e.grad.setZero();
}

double ParamStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& [name, e] : map_) sq += e.grad.squaredNorm();
  return std::sqrt(sq);
}

void ParamStore::scale_grads(double s) {
  for (auto& [name, e] : map_) e.grad *= s;
}

size_t ParamStore::n_scalars() const {
  size_t n = 0;
  for (const auto& [name, e] : map_) n += static_cast<size_t>(e.value.size());
  return n;
}

void ParamStore::quantize_f32() {
  for (auto& [name, e] : map_) {
    for (Eigen::Index i = 0; i < e.value.size(); ++i)
      e.value.data()[i] =
          static_cast<double>(static_cast<float>(e.value.data()[i]));
  }
}

Mat sinusoid_embedding(int n_positions, int d) {
  Mat out(n_positions, d);
  for (int i = 0; i < n_positions; ++i) out.row(i) = sinusoid_row(i, d);
  return out;
}

void init_model_params(ParamStore& p, const ModelConfig& cfg, Rng& rng) {
  const int d = cfg.d;
  xavier(p.add("music/input/W", cfg.d_audio, d), rng);
  p.add("music/input/b", 1, d);
  for (int i = 0; i < cfg.music_encoder_layers; ++i) {
    const std::string pfx = "music/enc" + std::to_string(i);
    add_attn(p, pfx + "/attn", d, rng);
    add_ln(p, pfx + "/ln1", d);
    add_ff(p, pfx + "/ff", d, cfg.ff_size, rng);
    add_ln(p, pfx + "/ln2", d);
  }
  add_time_mlp(p, "time", d, rng);
  for (int i = 0; i < 8; ++i) {
    const std::string pfx = "w/mlp" + std::to_string(i);
    xavier(p.add(pfx + "/W", d, d), rng);
    p.add(pfx + "/b", 1, d);
  }
  Mat& E = p.add("w/E", cfg.n_max, d);
  for (Eigen::Index r = 0; r < E.rows(); ++r)
    for (Eigen::Index c = 0; c < E.cols(); ++c) E(r, c) = 0.02 * rng.normal();
  xavier(p.add("denoiser/input/W", cfg.pose_dim, d), rng);
  p.add("denoiser/input/b", 1, d);
  for (int l = 0; l < cfg.n_blocks; ++l) {
    const std::string blk = "denoiser/blk" + std::to_string(l);
    add_attn(p, blk + "/local", d, rng);
    add_ln(p, blk + "/ln1", d);
    add_attn(p, blk + "/cross", d, rng);
    // identity-at-init FiLM: scale/shift start at zero
    p.add(blk + "/film/W", d, 2 * d);
    p.add(blk + "/film/b", 1, 2 * d);
    add_ln(p, blk + "/ln2", d);
    add_ff(p, blk + "/ff", d, cfg.ff_size, rng);
    add_ln(p, blk + "/ln3", d);
    add_attn(p, blk + "/global", d, rng);
    add_ln(p, blk + "/ln4", d);
    add_gm(p, blk + "/gm", d);
    add_ff(p, blk + "/gff", d, cfg.ff_size, rng);
  }
  xavier(p.add("denoiser/out/W", d, cfg.pose_dim), rng);
  p.add("denoiser/out/b", 1, cfg.pose_dim);
}

void init_contrastive_params(ParamStore& p, const ModelConfig& cfg, Rng& rng) {
  const int d = cfg.d;
  xavier(p.add("contrastive/input/W", cfg.pose_dim, d), rng);
  p.add("contrastive/input/b", 1, d);
  add_time_mlp(p, "contrastive/time", d, rng);
  for (int l = 0; l < cfg.n_blocks; ++l) {
    const std::string blk = "contrastive/blk" + std::to_string(l);
    add_attn(p, blk + "/local", d, rng);
    add_ln(p, blk + "/ln1", d);
    add_ff(p, blk + "/ff", d, cfg.ff_size, rng);
    add_ln(p, blk + "/ln2", d);
    add_attn(p, blk + "/global", d, rng);
    add_ln(p, blk + "/ln3", d);
    add_gm(p, blk + "/gm", d);
    add_ff(p, blk + "/gff", d, cfg.ff_size, rng);
  }
  xavier(p.add("contrastive/head/W", d, 1), rng);
  p.add("contrastive/head/b", 1, 1);
}

GroupDenoiser::GroupDenoiser(ParamStore& params, const ModelConfig& cfg)
    : params_(&params), cfg_(cfg) {
  cfg_.validate();
}

ad::Value GroupDenoiser::encode_music(ad::Tape& t,
                                      const AudioFeatureSequence& audio) const {
  ParamStore& p = *params_;
  if (audio.features.cols() != cfg_.d_audio)
    throw ShapeMismatch("audio feature width " +
                        std::to_string(audio.features.cols()) +
                        " != configured " + std::to_string(cfg_.d_audio));
  if (audio.features.rows() < 1) throw ShapeMismatch("empty audio features");
  const int T = static_cast<int>(audio.features.rows());
  auto tok = t.linear(t.constant(audio.features), pv(t, p, "music/input/W"),
                      pv(t, p, "music/input/b"));
  tok = t.add(tok, t.constant(sinusoid_embedding(T, cfg_.d)));
  for (int i = 0; i < cfg_.music_encoder_layers; ++i) {
    const std::string pfx = "music/enc" + std::to_string(i);
    auto a = attn(t, p, pfx + "/attn", tok, tok, cfg_.n_heads, ad::MaskSpec::none());
    tok = res_ln(t, p, pfx + "/ln1", tok, a);
    auto f = ffwd(t, p, pfx + "/ff", tok);
    tok = res_ln(t, p, pfx + "/ln2", tok, f);
  }
  return tok;
}

ad::Value GroupDenoiser::embed_timestep(ad::Tape& t, int m) const {
  return timestep_mlp(t, *params_, "time", m, cfg_.d, cfg_.diffusion_steps);
}

ad::Value GroupDenoiser::group_embedding(ad::Tape& t, ad::Value music_tokens,
                                         int n_dancers,
                                         const Eigen::RowVectorXd& z) const {
  ParamStore& p = *params_;
  if (n_dancers < 1) throw TooFewDancers("need at least one dancer");
  if (n_dancers > cfg_.n_max)
    throw TooManyDancers("group size " + std::to_string(n_dancers) +
                         " exceeds N_max " + std::to_string(cfg_.n_max));
  if (z.size() != cfg_.d) throw ShapeMismatch("z must be a d-vector");
  auto h = t.add(t.constant(z), t.mean_rows(music_tokens));
  for (int i = 0; i < 8; ++i) {
    const std::string pfx = "w/mlp" + std::to_string(i);
    h = t.linear(h, pv(t, p, pfx + "/W"), pv(t, p, pfx + "/b"));
    if (i < 7) h = t.gelu(h);
  }
  auto e = t.slice_rows(pv(t, p, "w/E"), n_dancers - 1, 1);
  return t.add(h, e);
}

ad::Value GroupDenoiser::denoise_with(ad::Tape& t, ad::Value x_m,
                                      ad::Value music_tokens, ad::Value w, int m,
                                      int n_dancers,
                                      const DenoiseOptions& opt) const {
  ParamStore& p = *params_;
  if (x_m.cols() != cfg_.pose_dim)
    throw ShapeMismatch("motion rows must be 147-dim");
  if (n_dancers < 1 || x_m.rows() % n_dancers != 0)
    throw ShapeMismatch("rows must split evenly across dancers");
  const int T = static_cast<int>(x_m.rows()) / n_dancers;
  const std::vector<int> groups(n_dancers, T);
  const auto local = ad::MaskSpec::local(groups);
  const auto global = ad::MaskSpec::global(groups);

  auto ctx = t.concat_rows(music_tokens, embed_timestep(t, m));
  auto ones_row = t.constant(Mat::Ones(1, cfg_.d));

  auto h = t.linear(x_m, pv(t, p, "denoiser/input/W"),
                    pv(t, p, "denoiser/input/b"));
  h = t.add(h, t.constant(packed_positional_encoding(n_dancers, T, cfg_.d)));
  for (int l = 0; l < cfg_.n_blocks; ++l) {
    const std::string blk = "denoiser/blk" + std::to_string(l);
    auto a = attn(t, p, blk + "/local", h, h, cfg_.n_heads, local);
    h = res_ln(t, p, blk + "/ln1", h, a);
    auto ca = attn(t, p, blk + "/cross", h, ctx, cfg_.n_heads,
                   ad::MaskSpec::none());
    // FiLM from the pooled conditioning context
    auto film = t.linear(t.mean_rows(ctx), pv(t, p, blk + "/film/W"),
                         pv(t, p, blk + "/film/b"));
    auto fs = t.slice_cols(film, 0, cfg_.d);
    auto fb = t.slice_cols(film, cfg_.d, cfg_.d);
    ca = t.add_row(t.mul_row(ca, t.add(ones_row, fs)), fb);
    h = res_ln(t, p, blk + "/ln2", h, ca);
    auto f = ffwd(t, p, blk + "/ff", h);
    h = res_ln(t, p, blk + "/ln3", h, f);
    if (opt.ablate_group_block) continue;
    auto ga = attn(t, p, blk + "/global", h, h, cfg_.n_heads, global);
    h = res_ln(t, p, blk + "/ln4", h, ga);
    auto s = t.linear(w, pv(t, p, blk + "/gm/Ws"), pv(t, p, blk + "/gm/bs"));
    auto b = t.linear(w, pv(t, p, blk + "/gm/Wb"), pv(t, p, blk + "/gm/bb"));
    h = t.group_modulate(h, s, b, groups);
    h = t.add(h, ffwd(t, p, blk + "/gff", h));
  }
  return t.linear(h, pv(t, p, "denoiser/out/W"), pv(t, p, "denoiser/out/b"));
}

ad::Value GroupDenoiser::denoise(ad::Tape& t, ad::Value x_m, int m,
                                 const AudioFeatureSequence& audio,
                                 int n_dancers, const Eigen::RowVectorXd& z,
                                 const DenoiseOptions& opt) const {
  if (n_dancers < 1 || x_m.rows() % n_dancers != 0 ||
      x_m.rows() / n_dancers != audio.features.rows())
    throw ShapeMismatch("motion frames must match audio frames per dancer");
  auto music = encode_music(t, audio);
  auto w = group_embedding(t, music, n_dancers, z);
  return denoise_with(t, x_m, music, w, m, n_dancers, opt);
}

Mat GroupDenoiser::denoise(const Mat& x_m, int m,
                           const AudioFeatureSequence& audio, int n_dancers,
                           const Eigen::RowVectorXd& z) const {
  ad::Tape t(false);
  auto out = denoise(t, t.constant(x_m), m, audio, n_dancers, z);
  return out.mat();
}

Eigen::RowVectorXd GroupDenoiser::group_embedding(
    const AudioFeatureSequence& audio, int n_dancers,
    const Eigen::RowVectorXd& z) const {
  ad::Tape t(false);
  auto music = encode_music(t, audio);
  auto w = group_embedding(t, music, n_dancers, z);
  return w.mat().row(0);
}

}  // namespace choreo
