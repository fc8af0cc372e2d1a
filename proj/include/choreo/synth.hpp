#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "choreo/motion.hpp"

namespace choreo {

struct AudioFeatureSequence {
  Eigen::MatrixXd features;  // T x d_a
  double fps = 30.0;
  std::vector<int> beat_frames;  // sorted, within [0, T)

  int n_frames() const { return static_cast<int>(features.rows()); }
  int d_a() const { return static_cast<int>(features.cols()); }
};

struct SynthDatasetSpec {
  int n_sequences = 500;
  int n_dancers_min = 2;
  int n_dancers_max = 3;
  double bpm_min = 90.0;
  double bpm_max = 150.0;
  double duration_s = 3.0;
  double consistency_min = 0.2;
  double consistency_max = 1.0;
  uint64_t seed = 0;
  double fps = 30.0;
  int d_a = 32;
};

struct DatasetEntry {
  std::string audio;   // path, relative to the manifest directory
  std::string motion;  // path, relative to the manifest directory
  double bpm = 0.0;
  int n_dancers = 0;
  double consistency = 0.0;
};

// channel 0 carries the beat pulse (unit Gaussian bumps, sigma 1.5 frames, at
// the planted beat frames); channels 1..8 are smooth band envelopes; the rest
// is seeded low-amplitude noise
AudioFeatureSequence generate_music_track(double bpm, double duration_s,
                                          double fps, uint64_t seed,
                                          int d_a = 32);  // BadDuration

// onset peak picking on the pulse channel: window 3, threshold 0.5 * max;
// recovers the planted grid exactly on synthetic tracks
std::vector<int> extract_music_beats(const AudioFeatureSequence& audio);

// beat-locked oscillating dancers in a static formation; consistency in [0,1]
// scales per-dancer phase and amplitude deviations (1 = identical dancers)
GroupSequence generate_group_dance(const AudioFeatureSequence& audio,
                                   int n_dancers, double consistency,
                                   uint64_t seed);

// writes n_sequences paired (audio json, binary motion container) files plus
// manifest.json; returns the manifest path
std::string build_dataset(const SynthDatasetSpec& spec, const std::string& out_dir);

void write_audio_json(const std::string& path, const AudioFeatureSequence& a);
AudioFeatureSequence read_audio_json(const std::string& path);

void write_manifest(const std::string& path, const std::vector<DatasetEntry>& entries);
std::vector<DatasetEntry> read_manifest(const std::string& path);

// entry paths resolved against the manifest's directory
std::pair<AudioFeatureSequence, GroupSequence> load_dataset_entry(
    const std::string& manifest_path, const DatasetEntry& entry);

}  // namespace choreo
