#include "choreo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "choreo/checkpoint.hpp"
#include "choreo/errors.hpp"
#include "json.hpp"

namespace choreo {

namespace {

constexpr double kFkGuard = 1e-9;  // keep in sync with the tape fk op

// packed rows -> packed joint positions, guarded like the differentiable FK
// so ground truth and predictions go through the same kinematics
Mat fk_packed(const Mat& x, const Skeleton& skel) {
  if (x.cols() != kPoseDim) throw BadShape("packed poses must have 147 columns");
  Mat out(x.rows(), 3 * kNumJoints);
  Eigen::Matrix<double, 1, 3 * kNumJoints> row;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Eigen::Matrix<double, 1, kPoseDim> flat = x.row(r);
    detail::fk_flat(flat.data(), skel, kFkGuard, row.data());
    out.row(r) = row;
  }
  return out;
}

// per-dancer temporal differences of a packed matrix; rows = N * (T - 1)
Mat packed_frame_diff(const Mat& x, int n_frames) {
  const int blocks = static_cast<int>(x.rows()) / n_frames;
  Mat out((n_frames - 1) * blocks, x.cols());
  for (int b = 0; b < blocks; ++b)
    for (int t = 0; t + 1 < n_frames; ++t)
      out.row(b * (n_frames - 1) + t) =
          x.row(b * n_frames + t + 1) - x.row(b * n_frames + t);
  return out;
}

// ground-truth contact mask in velocity-row coordinates: dancer i, interval t
// lands on row i*(T-1)+t. Contact at frame t pins the foot over t -> t+1.
std::vector<std::pair<int, int>> contact_mask(const Mat& gt_positions,
                                              const PackedGroup& x0,
                                              const Skeleton& skel) {
  std::vector<std::pair<int, int>> mask;
  const int T = x0.n_frames;
  for (int i = 0; i < x0.n_dancers; ++i) {
    const Mat pos = gt_positions.middleRows(i * T, T);
    const auto contacts = detect_foot_contacts(pos, skel, 0.08, 0.15, x0.fps);
    for (int t = 0; t + 1 < T; ++t)
      for (int side = 0; side < 2; ++side)
        if (contacts[t][side]) mask.emplace_back(i * (T - 1) + t, side);
  }
  return mask;
}

PackedGroup crop_group(const PackedGroup& g, int offset, int len) {
  PackedGroup out;
  out.n_dancers = g.n_dancers;
  out.n_frames = len;
  out.fps = g.fps;
  out.data.resize(g.n_dancers * len, g.data.cols());
  for (int i = 0; i < g.n_dancers; ++i)
    out.data.middleRows(i * len, len) =
        g.data.middleRows(i * g.n_frames + offset, len);
  return out;
}

AudioFeatureSequence crop_audio(const AudioFeatureSequence& a, int offset,
                                int len) {
  AudioFeatureSequence out;
  out.fps = a.fps;
  out.features = a.features.middleRows(offset, len);
  for (int b : a.beat_frames)
    if (b >= offset && b < offset + len) out.beat_frames.push_back(b - offset);
  return out;
}

void append_csv_row(std::ofstream& f, const LossRecord& r) {
  f << r.iteration;
  const double vals[6] = {r.l_simple, r.l_pos, r.l_vel,
                          r.l_foot,   r.l_nce, r.total};
  char buf[64];
  for (double v : vals) {
    std::snprintf(buf, sizeof buf, ",%.17g", v);
    f << buf;
  }
  f << "\n" << std::flush;
}

}  // namespace

// ---- configs ---------------------------------------------------------------

void LossWeights::validate() const {
  if (lambda_pos < 0 || lambda_vel < 0 || lambda_foot < 0 || lambda_nce < 0)
    throw BadConfig("loss weights must be nonnegative");
}

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  if (learning_rate < 0) throw BadConfig("learning_rate must be nonnegative");
  if (batch_size < 1) throw BadConfig("batch_size must be positive");
  // 0 is allowed: the run just writes a checkpoint of the freshly
  // initialized weights
  if (iterations < 0) throw BadConfig("iterations must be nonnegative");
  if (train_frames < 2) throw BadConfig("train_frames must be at least 2");
  if (n_negatives < 1) throw BadConfig("n_negatives must be positive");
  if (replace_prob <= 0.0 || replace_prob > 1.0)
    throw BadConfig("replace_prob must be in (0, 1]");
  if (checkpoint_every < 1) throw BadConfig("checkpoint_every must be positive");
  if (clip_norm < 0) throw BadConfig("clip_norm must be nonnegative");
}

std::string TrainConfig::to_json_string() const {
  nlohmann::json j;
  j["model"] = nlohmann::json::parse(model.to_json_string());
  j["lambda_pos"] = weights.lambda_pos;
  j["lambda_vel"] = weights.lambda_vel;
  j["lambda_foot"] = weights.lambda_foot;
  j["lambda_nce"] = weights.lambda_nce;
  j["learning_rate"] = learning_rate;
  j["batch_size"] = batch_size;
  j["iterations"] = iterations;
  j["train_frames"] = train_frames;
  j["n_negatives"] = n_negatives;
  j["replace_prob"] = replace_prob;
  j["seed"] = seed;
  j["checkpoint_every"] = checkpoint_every;
  j["clip_norm"] = clip_norm;
  j["disable_geo"] = disable_geo;
  j["disable_nce"] = disable_nce;
  j["ablate_group_block"] = ablate_group_block;
  return j.dump();
}

TrainConfig TrainConfig::from_json_string(const std::string& s) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(s);
  } catch (const nlohmann::json::exception& e) {
    throw BadConfig(std::string("train config parse: ") + e.what());
  }
  TrainConfig c;
  try {
    c.model = ModelConfig::from_json_string(j.at("model").dump());
    c.weights.lambda_pos = j.at("lambda_pos").get<double>();
    c.weights.lambda_vel = j.at("lambda_vel").get<double>();
    c.weights.lambda_foot = j.at("lambda_foot").get<double>();
    c.weights.lambda_nce = j.at("lambda_nce").get<double>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.iterations = j.at("iterations").get<int>();
    c.train_frames = j.at("train_frames").get<int>();
    c.n_negatives = j.at("n_negatives").get<int>();
    c.replace_prob = j.at("replace_prob").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    c.checkpoint_every = j.at("checkpoint_every").get<int>();
    c.clip_norm = j.at("clip_norm").get<double>();
    c.disable_geo = j.at("disable_geo").get<bool>();
    c.disable_nce = j.at("disable_nce").get<bool>();
    c.ablate_group_block = j.at("ablate_group_block").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw BadConfig(std::string("train config fields: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- losses ----------------------------------------------------------------

ad::Value simple_loss(ad::Tape& t, ad::Value x0_hat, const Mat& x0) {
  return t.mse(x0_hat, t.constant(x0));
}

double simple_loss(const Mat& x0, const Mat& x0_hat) {
  if (x0.rows() != x0_hat.rows() || x0.cols() != x0_hat.cols())
    throw ShapeMismatch("simple loss needs matching shapes");
  return (x0_hat - x0).squaredNorm() /
         static_cast<double>(x0.rows() * x0.cols());
}

GeoLossValues geometric_losses(ad::Tape& t, ad::Value x0_hat,
                               const PackedGroup& x0, const Skeleton& skel) {
  const Mat& hat = t.val(x0_hat);
  if (hat.rows() != x0.data.rows() || hat.cols() != x0.data.cols())
    throw ShapeMismatch("prediction shape does not match ground truth");
  const int T = x0.n_frames;
  if (T < 2) throw SequenceTooShort("geometric losses need T >= 2");

  const Mat gt_pos = fk_packed(x0.data, skel);
  ad::Value pos = t.fk(x0_hat, skel);
  ad::Value l_pos = t.mse(pos, t.constant(gt_pos));

  ad::Value vel = t.frame_diff(x0_hat, T);
  ad::Value l_vel = t.mse(vel, t.constant(packed_frame_diff(x0.data, T)));

  const auto mask = contact_mask(gt_pos, x0, skel);
  ad::Value l_foot = t.foot_vel_mean(t.frame_diff(pos, T), skel, mask);
  return {l_pos, l_vel, l_foot};
}

std::array<double, 3> geometric_losses(const PackedGroup& x0,
                                       const PackedGroup& x0_hat,
                                       const Skeleton& skel) {
  if (x0_hat.n_dancers != x0.n_dancers || x0_hat.n_frames != x0.n_frames)
    throw ShapeMismatch("groups must agree in dancers and frames");
  ad::Tape t(false);
  const GeoLossValues v =
      geometric_losses(t, t.constant(x0_hat.data), x0, skel);
  return {t.val(v.pos)(0, 0), t.val(v.vel)(0, 0), t.val(v.foot)(0, 0)};
}

double total_loss(double l_simple, double l_pos, double l_vel, double l_foot,
                  double l_nce, const LossWeights& w) {
  w.validate();
  return l_simple + w.lambda_pos * l_pos + w.lambda_vel * l_vel +
         w.lambda_foot * l_foot + w.lambda_nce * l_nce;
}

// ---- optimizer -------------------------------------------------------------

Adam::Adam(ParamStore& params, double lr, double clip_norm, double beta1,
           double beta2, double eps)
    : params_(&params),
      lr_(lr),
      clip_(clip_norm),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  if (lr < 0 || clip_norm < 0) throw BadConfig("lr and clip must be nonnegative");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1 || eps <= 0)
    throw BadConfig("bad Adam constants");
  for (const auto& name : params.names()) {
    const Mat& v = params.value(name);
    mom_[name] = {Mat::Zero(v.rows(), v.cols()), Mat::Zero(v.rows(), v.cols())};
  }
}

void Adam::step() {
  ++step_;
  const double norm = params_->grad_norm();
  const double sc = (clip_ > 0.0 && norm > clip_) ? clip_ / norm : 1.0;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (const auto& name : params_->names()) {
    const Mat g = params_->grad(name) * sc;
    auto& mv = mom_.at(name);
    mv.first = beta1_ * mv.first + (1.0 - beta1_) * g;
    mv.second = beta2_ * mv.second + (1.0 - beta2_) * g.cwiseProduct(g);
    const Mat mhat = mv.first / bc1;
    const Mat vhat = mv.second / bc2;
    params_->value(name).array() -=
        lr_ * (mhat.array() / (vhat.array().sqrt() + eps_));
    // rounding state through f32 keeps a save/restore cycle bitwise exact
    for (auto* m : {&mv.first, &mv.second})
      *m = m->unaryExpr(
          [](double x) { return static_cast<double>(static_cast<float>(x)); });
  }
  params_->quantize_f32();
}

void Adam::restore(const std::map<std::string, std::pair<Mat, Mat>>& moments,
                   int64_t step_count) {
  if (step_count < 0) throw BadConfig("negative Adam step count");
  for (const auto& [name, mv] : moments) {
    auto it = mom_.find(name);
    if (it == mom_.end()) throw BadConfig("unknown moment array: " + name);
    if (mv.first.rows() != it->second.first.rows() ||
        mv.first.cols() != it->second.first.cols() ||
        mv.second.rows() != it->second.second.rows() ||
        mv.second.cols() != it->second.second.cols())
      throw BadConfig("moment shape mismatch: " + name);
    it->second = mv;
  }
  step_ = step_count;
}

// ---- training loop ---------------------------------------------------------

TrainResult train(const std::string& manifest_path, const TrainConfig& cfg,
                  const std::string& out_dir, const std::string& resume_path) {
  cfg.validate();
  const auto entries = read_manifest(manifest_path);
  const int n_entries = static_cast<int>(entries.size());
  if (n_entries < cfg.batch_size)
    throw BadConfig("dataset smaller than batch size");
  if (!cfg.disable_nce && cfg.batch_size < 2)
    throw BadConfig("contrastive negatives need batch_size >= 2");

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoFailure("cannot create " + out_dir);

  const NoiseSchedule sched = build_cosine_schedule(cfg.model.diffusion_steps);
  const Skeleton skel = Skeleton::default_smpl24();

  // same init path regardless of resume so the store layout always matches
  ParamStore params;
  {
    Rng init_rng(Rng::mix(cfg.seed, 0));
    init_model_params(params, cfg.model, init_rng);
    init_contrastive_params(params, cfg.model, init_rng);
    params.quantize_f32();
  }
  Adam opt(params, cfg.learning_rate, cfg.clip_norm);
  int start = 1;
  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path);
    if (!(ck.train == cfg))
      throw BadConfig("checkpoint was written with a different config");
    for (const auto& name : params.names()) {
      if (!ck.params.has(name))
        throw CorruptCheckpoint("checkpoint missing parameter " + name);
      if (ck.params.value(name).rows() != params.value(name).rows() ||
          ck.params.value(name).cols() != params.value(name).cols())
        throw CorruptCheckpoint("checkpoint shape mismatch for " + name);
      params.value(name) = ck.params.value(name);
    }
    opt.restore(ck.adam_moments, ck.adam_step);
    start = static_cast<int>(ck.next_iteration);
    if (start < 1 || start > cfg.iterations + 1)
      throw BadConfig("checkpoint iteration outside configured range");
  }

  const GroupDenoiser den(params, cfg.model);
  const ContrastiveEncoder enc(params, cfg.model);
  const DenoiseOptions dopt{cfg.ablate_group_block};

  TrainResult result;
  result.loss_history_path =
      (std::filesystem::path(out_dir) / "loss_history.csv").string();
  std::ofstream csv(result.loss_history_path,
                    start == 1 ? std::ios::trunc : std::ios::app);
  if (!csv) throw IoFailure("cannot write " + result.loss_history_path);
  if (start == 1)
    csv << "iteration,l_simple,l_pos,l_vel,l_foot,l_nce,total\n";

  const auto stamp_path = [&](int iter) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "checkpoint_%06d.gckp", iter);
    return (std::filesystem::path(out_dir) / buf).string();
  };
  result.checkpoint_path =
      (std::filesystem::path(out_dir) / "checkpoint.gckp").string();

  for (int iter = start; iter <= cfg.iterations; ++iter) {
    // one stream per iteration; the draw order below is part of the format
    Rng rng(Rng::mix(cfg.seed, static_cast<uint64_t>(iter)));
    const int m = rng.uniform_int(1, cfg.model.diffusion_steps);

    // distinct batch entries, rejection-sampled in slot order
    std::vector<int> idx;
    std::set<int> seen;
    while (static_cast<int>(idx.size()) < cfg.batch_size) {
      const int i = rng.uniform_int(0, n_entries - 1);
      if (seen.insert(i).second) idx.push_back(i);
    }

    std::vector<PackedGroup> batch;
    std::vector<AudioFeatureSequence> audio;
    batch.reserve(idx.size());
    audio.reserve(idx.size());
    for (int i : idx) {
      auto [a, g] = load_dataset_entry(manifest_path, entries[i]);
      PackedGroup packed = pack_group(g);
      const int t_full = packed.n_frames;
      const int len = std::min(cfg.train_frames, t_full);
      const int offset = rng.uniform_int(0, t_full - len);
      batch.push_back(crop_group(packed, offset, len));
      audio.push_back(crop_audio(a, offset, len));
    }

    ad::Tape t;
    std::vector<ad::Value> music(batch.size()), w(batch.size());
    ad::Value sum_simple, sum_pos, sum_vel, sum_foot;
    bool first = true;
    for (size_t b = 0; b < batch.size(); ++b) {
      const PackedGroup& x0 = batch[b];
      music[b] = den.encode_music(t, audio[b]);
      Eigen::RowVectorXd z(cfg.model.d);
      for (int c = 0; c < cfg.model.d; ++c) z[c] = rng.normal();
      w[b] = den.group_embedding(t, music[b], x0.n_dancers, z);
      const Mat eps = normal_matrix(rng, x0.data.rows(), x0.data.cols());
      const Mat x_m = q_sample(x0.data, m, eps, sched);
      ad::Value x0_hat = den.denoise_with(t, t.constant(x_m), music[b], w[b],
                                          m, x0.n_dancers, dopt);
      ad::Value ls = simple_loss(t, x0_hat, x0.data);
      ad::Value lp, lv, lf;
      if (!cfg.disable_geo) {
        const GeoLossValues geo = geometric_losses(t, x0_hat, x0, skel);
        lp = geo.pos;
        lv = geo.vel;
        lf = geo.foot;
      } else {
        lp = t.constant(Mat::Zero(1, 1));
        lv = lp;
        lf = lp;
      }
      if (first) {
        sum_simple = ls;
        sum_pos = lp;
        sum_vel = lv;
        sum_foot = lf;
        first = false;
      } else {
        sum_simple = t.add(sum_simple, ls);
        sum_pos = t.add(sum_pos, lp);
        sum_vel = t.add(sum_vel, lv);
        sum_foot = t.add(sum_foot, lf);
      }
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    ad::Value mean_simple = t.scale(sum_simple, inv_b);
    ad::Value mean_pos = t.scale(sum_pos, inv_b);
    ad::Value mean_vel = t.scale(sum_vel, inv_b);
    ad::Value mean_foot = t.scale(sum_foot, inv_b);

    ad::Value l_nce = t.constant(Mat::Zero(1, 1));
    if (!cfg.disable_nce) {
      const int anchor = (iter - 1) % cfg.batch_size;
      const auto negatives = construct_negatives(
          batch, anchor, cfg.replace_prob, cfg.n_negatives, rng);
      const TrainingScores scores =
          contrastive_training_scores(t, den, enc, sched, batch[anchor],
                                      negatives, music[anchor], w[anchor], m,
                                      rng);
      std::vector<ad::Value> all{scores.pos};
      all.insert(all.end(), scores.negatives.begin(), scores.negatives.end());
      l_nce = t.nce(all);
    }

    ad::Value total = mean_simple;
    total = t.add(total, t.scale(mean_pos, cfg.weights.lambda_pos));
    total = t.add(total, t.scale(mean_vel, cfg.weights.lambda_vel));
    total = t.add(total, t.scale(mean_foot, cfg.weights.lambda_foot));
    total = t.add(total, t.scale(l_nce, cfg.weights.lambda_nce));

    LossRecord rec;
    rec.iteration = iter;
    rec.l_simple = t.val(mean_simple)(0, 0);
    rec.l_pos = t.val(mean_pos)(0, 0);
    rec.l_vel = t.val(mean_vel)(0, 0);
    rec.l_foot = t.val(mean_foot)(0, 0);
    rec.l_nce = t.val(l_nce)(0, 0);
    rec.total = t.val(total)(0, 0);
    if (!std::isfinite(rec.total))
      throw NonFiniteLoss("iteration " + std::to_string(iter) +
                          ": total loss is not finite");

    params.zero_grads();
    t.backward(total);
    opt.step();

    result.history.push_back(rec);
    append_csv_row(csv, rec);

    if (iter % cfg.checkpoint_every == 0 && iter != cfg.iterations)
      save_checkpoint(params, opt, cfg, iter + 1, stamp_path(iter));
    if (iter == cfg.iterations)
      save_checkpoint(params, opt, cfg, iter + 1, result.checkpoint_path);
  }
  // a resumed run that is already complete still reports the final paths
  if (start > cfg.iterations)
    save_checkpoint(params, opt, cfg, cfg.iterations + 1,
                    result.checkpoint_path);
  return result;
}

}  // namespace choreo
