#include "choreo/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "choreo/container.hpp"
#include "choreo/errors.hpp"
#include "choreo/rng.hpp"
#include "json.hpp"

namespace choreo {

namespace fs = std::filesystem;
using std::numbers::pi;

AudioFeatureSequence generate_music_track(double bpm, double duration_s,
                                          double fps, uint64_t seed, int d_a) {
  if (bpm <= 0) throw BadDuration("bpm must be positive");
  const double frames = duration_s * fps;
  if (std::abs(frames - std::round(frames)) > 1e-9)
    throw BadDuration("duration_s * fps must be integral");
  const int T = static_cast<int>(std::round(frames));
  if (T <= 0) throw BadDuration("duration too short for any frame");
  if (d_a < 1) throw BadDuration("d_a must be >= 1");

  AudioFeatureSequence a;
  a.fps = fps;
  a.features = Eigen::MatrixXd::Zero(T, d_a);

  const double period = fps * 60.0 / bpm;
  for (int k = 0;; ++k) {
    const int frame = static_cast<int>(std::round(k * period));
    if (frame >= T) break;
    if (a.beat_frames.empty() || a.beat_frames.back() != frame)
      a.beat_frames.push_back(frame);
  }

  // pulse channel: unit bumps at the planted beats
  const double sigma = 1.5;
  for (int b : a.beat_frames)
    for (int t = 0; t < T; ++t)
      a.features(t, 0) += std::exp(-(t - b) * (t - b) / (2.0 * sigma * sigma));

  Rng rng(seed);
  const int n_bands = std::min(8, d_a - 1);
  for (int c = 0; c < n_bands; ++c) {
    const double freq = 0.5 + 2.5 * rng.uniform();   // cycles over the track
    const double phase = 2.0 * pi * rng.uniform();
    const double amp = 0.3 + 0.4 * rng.uniform();
    for (int t = 0; t < T; ++t)
      a.features(t, 1 + c) =
          0.5 + amp * std::sin(2.0 * pi * freq * t / T + phase);
  }
  for (int c = 1 + n_bands; c < d_a; ++c)
    for (int t = 0; t < T; ++t) a.features(t, c) = 0.1 * rng.normal();
  return a;
}

std::vector<int> extract_music_beats(const AudioFeatureSequence& audio) {
  const int T = audio.n_frames();
  std::vector<int> beats;
  if (T < 2 || audio.d_a() < 1) return beats;
  const Eigen::VectorXd env = audio.features.col(0);
  const double peak = env.maxCoeff();
  if (peak <= 0.0) return beats;
  const double threshold = 0.5 * peak;

  std::vector<int> candidates;
  for (int t = 0; t < T; ++t) {
    if (env[t] <= threshold) continue;
    const double left = t > 0 ? env[t - 1] : -1.0;
    const double right = t + 1 < T ? env[t + 1] : -1.0;
    if (env[t] >= left && env[t] > right) candidates.push_back(t);
  }
  // merge candidates closer than the 3-frame picking window, keep the higher
  for (int t : candidates) {
    if (!beats.empty() && t - beats.back() < 3) {
      if (env[t] > env[beats.back()]) beats.back() = t;
    } else {
      beats.push_back(t);
    }
  }
  return beats;
}

namespace {

// base oscillation amplitude per joint, radians
constexpr double kJointAmp[kNumJoints] = {
    0.04,                // pelvis
    0.06, 0.06,          // hips
    0.10,                // spine1
    0.05, 0.05,          // knees
    0.08,                // spine2
    0.04, 0.04,          // ankles
    0.06,                // spine3
    0.02, 0.02,          // feet
    0.06,                // neck
    0.05, 0.05,          // collars
    0.05,                // head
    0.45, 0.45,          // shoulders
    0.55, 0.55,          // elbows
    0.25, 0.25,          // wrists
    0.10, 0.10};         // hands

Vec3 joint_axis(int j) {
  switch (j % 3) {
    case 0: return Vec3::UnitX();
    case 1: return Vec3::UnitZ();
    default: return Vec3(0.6, 0.0, 0.8);
  }
}

}  // namespace

GroupSequence generate_group_dance(const AudioFeatureSequence& audio,
                                   int n_dancers, double consistency,
                                   uint64_t seed) {
  if (n_dancers < 1) throw BadShape("need at least one dancer");
  const int T = audio.n_frames();
  if (T < 1) throw BadDuration("audio track has no frames");
  consistency = std::clamp(consistency, 0.0, 1.0);

  // beat grid; fall back to a one-second pulse if the track has no beats
  double period = audio.fps;
  double b0 = 0.0;
  if (audio.beat_frames.size() >= 2) {
    period = static_cast<double>(audio.beat_frames.back() - audio.beat_frames.front()) /
             (static_cast<double>(audio.beat_frames.size()) - 1.0);
    b0 = audio.beat_frames.front();
  } else if (audio.beat_frames.size() == 1) {
    b0 = audio.beat_frames.front();
  }

  Rng rng(seed);
  const double dev = 1.0 - consistency;

  // per-sequence joint amplitudes (shared across dancers)
  double amp[kNumJoints];
  for (int j = 0; j < kNumJoints; ++j)
    amp[j] = kJointAmp[j] * (0.8 + 0.4 * rng.uniform());

  // formation: line for 1-2 dancers, circle otherwise; static, 1.5 m scale
  std::vector<Vec3> base(n_dancers);
  if (n_dancers == 1) {
    base[0] = Vec3::Zero();
  } else if (n_dancers == 2) {
    base[0] = Vec3(-0.75, 0, 0);
    base[1] = Vec3(0.75, 0, 0);
  } else {
    for (int i = 0; i < n_dancers; ++i) {
      const double ang = 2.0 * pi * i / n_dancers;
      base[i] = Vec3(1.5 * std::cos(ang), 0.0, 1.5 * std::sin(ang));
    }
  }

  // per-dancer deviations, scaled by (1 - consistency): a phase offset plus
  // per-joint amplitude jitter (phase alone would leave kinetic features
  // identical across dancers)
  std::vector<double> phase(n_dancers);
  std::vector<std::array<double, kNumJoints>> scale(n_dancers);
  for (int i = 0; i < n_dancers; ++i) {
    phase[i] = dev * (pi * (rng.uniform() - 0.5));
    for (int j = 0; j < kNumJoints; ++j)
      scale[i][j] = 1.0 + dev * 0.8 * (rng.uniform() - 0.5);
  }

  // the half-frame shift puts the zeros of the discrete frame difference
  // exactly on beat frames (the difference of cos(pi(t-b0-1/2)/p) between
  // consecutive frames is proportional to sin(pi(t-b0)/p))
  auto osc = [&](int t, double dancer_phase) {
    return std::cos(pi * (t - b0 - 0.5) / period + dancer_phase);
  };

  const double root_height = 0.91;
  const Vec3 sway(0.12, 0.02, 0.08);  // shared sway/bob amplitudes, meters

  GroupSequence g;
  g.dancers.resize(n_dancers);
  for (int i = 0; i < n_dancers; ++i) {
    auto& seq = g.dancers[i];
    seq.fps = audio.fps;
    seq.frames.resize(T);
    for (int t = 0; t < T; ++t) {
      const double c = osc(t, phase[i]);
      Pose& pose = seq.frames[t];
      pose.root_translation =
          base[i] + Vec3(sway[0] * c, root_height + sway[1] * c, sway[2] * c);
      for (int j = 0; j < kNumJoints; ++j) {
        const double angle = amp[j] * scale[i][j] * c;
        const Mat3 R = Eigen::AngleAxisd(angle, joint_axis(j)).toRotationMatrix();
        pose.joint_rotations.row(j).head<3>() = R.col(0).transpose();
        pose.joint_rotations.row(j).tail<3>() = R.col(1).transpose();
      }
    }
  }
  return g;
}

void write_audio_json(const std::string& path, const AudioFeatureSequence& a) {
  nlohmann::json j;
  j["fps"] = static_cast<int>(a.fps);
  j["d_a"] = a.d_a();
  j["beat_frames"] = a.beat_frames;
  auto& feats = j["features"] = nlohmann::json::array();
  for (int t = 0; t < a.n_frames(); ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < a.d_a(); ++c) row.push_back(a.features(t, c));
    feats.push_back(std::move(row));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write audio file: " + path);
  out << j.dump() << "\n";
  if (!out) throw IoFailure("write failed: " + path);
}

AudioFeatureSequence read_audio_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open audio file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoFailure("audio json parse (" + path + "): " + e.what());
  }
  AudioFeatureSequence a;
  try {
    a.fps = j.at("fps").get<double>();
    const int d_a = j.at("d_a").get<int>();
    a.beat_frames = j.at("beat_frames").get<std::vector<int>>();
    const auto& feats = j.at("features");
    a.features.resize(static_cast<Eigen::Index>(feats.size()), d_a);
    for (Eigen::Index t = 0; t < a.features.rows(); ++t) {
      const auto& row = feats.at(t);
      if (static_cast<int>(row.size()) != d_a)
        throw BadShape("feature row width must equal d_a");
      for (int c = 0; c < d_a; ++c) a.features(t, c) = row.at(c).get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoFailure("audio json fields (" + path + "): " + e.what());
  }
  return a;
}

void write_manifest(const std::string& path, const std::vector<DatasetEntry>& entries) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : entries) {
    j.push_back({{"audio", e.audio},
                 {"motion", e.motion},
                 {"bpm", e.bpm},
                 {"n_dancers", e.n_dancers},
                 {"consistency", e.consistency}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write manifest: " + path);
  out << j.dump(1) << "\n";
  if (!out) throw IoFailure("write failed: " + path);
}

std::vector<DatasetEntry> read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open manifest: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoFailure("manifest parse (" + path + "): " + e.what());
  }
  std::vector<DatasetEntry> entries;
  try {
    for (const auto& item : j) {
      DatasetEntry e;
      e.audio = item.at("audio").get<std::string>();
      e.motion = item.at("motion").get<std::string>();
      e.bpm = item.at("bpm").get<double>();
      e.n_dancers = item.at("n_dancers").get<int>();
      e.consistency = item.at("consistency").get<double>();
      entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoFailure("manifest fields (" + path + "): " + e.what());
  }
  return entries;
}

std::pair<AudioFeatureSequence, GroupSequence> load_dataset_entry(
    const std::string& manifest_path, const DatasetEntry& entry) {
  const fs::path root = fs::path(manifest_path).parent_path();
  AudioFeatureSequence audio = read_audio_json((root / entry.audio).string());
  PackedGroup packed = read_motion((root / entry.motion).string());
  packed.fps = audio.fps;
  return {std::move(audio), unpack_group(packed)};
}

std::string build_dataset(const SynthDatasetSpec& spec, const std::string& out_dir) {
  if (spec.n_sequences < 0) throw BadDuration("n_sequences must be >= 0");
  if (spec.n_dancers_min < 1 || spec.n_dancers_max < spec.n_dancers_min)
    throw BadDuration("bad n_dancers range");
  if (spec.bpm_max < spec.bpm_min || spec.bpm_min <= 0)
    throw BadDuration("bad bpm range");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoFailure("cannot create dataset dir: " + out_dir);

  Rng rng(spec.seed);
  std::vector<DatasetEntry> entries;
  entries.reserve(spec.n_sequences);
  for (int k = 0; k < spec.n_sequences; ++k) {
    DatasetEntry e;
    e.bpm = spec.bpm_min + (spec.bpm_max - spec.bpm_min) * rng.uniform();
    e.n_dancers = rng.uniform_int(spec.n_dancers_min, spec.n_dancers_max);
    e.consistency = spec.consistency_min +
                    (spec.consistency_max - spec.consistency_min) * rng.uniform();

    char name[32];
    std::snprintf(name, sizeof(name), "audio_%04d.json", k);
    e.audio = name;
    std::snprintf(name, sizeof(name), "motion_%04d.gcdm", k);
    e.motion = name;

    const AudioFeatureSequence audio =
        generate_music_track(e.bpm, spec.duration_s, spec.fps,
                             Rng::mix(spec.seed, 2 * k), spec.d_a);
    const GroupSequence dance = generate_group_dance(
        audio, e.n_dancers, e.consistency, Rng::mix(spec.seed, 2 * k + 1));

    write_audio_json((fs::path(out_dir) / e.audio).string(), audio);
    write_motion_binary((fs::path(out_dir) / e.motion).string(), pack_group(dance));
    entries.push_back(std::move(e));
  }
  const std::string manifest = (fs::path(out_dir) / "manifest.json").string();
  write_manifest(manifest, entries);
  return manifest;
}

}  // namespace choreo
