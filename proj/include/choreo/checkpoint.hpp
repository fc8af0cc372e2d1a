#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>

#include "choreo/model.hpp"
#include "choreo/trainer.hpp"

namespace choreo {

// Binary checkpoint archive ("GCKP" magic, version 1): training config JSON,
// iteration counters, and every named array (parameters plus Adam moments
// under adam_m/ and adam_v/ prefixes) as float32, closed by a CRC32. All
// stored values are float32-representable, so load(save(x)) is bitwise.
struct Checkpoint {
  TrainConfig train;
  ParamStore params;
  std::map<std::string, std::pair<Mat, Mat>> adam_moments;
  int64_t adam_step = 0;
  int64_t next_iteration = 1;
};

void save_checkpoint(const ParamStore& params, const Adam& opt,
                     const TrainConfig& cfg, int64_t next_iteration,
                     const std::string& path);  // IoFailure

// VersionMismatch on a foreign version; CorruptCheckpoint on bad magic,
// short file, checksum failure, or malformed payload; IoFailure on open
Checkpoint load_checkpoint(const std::string& path);

}  // namespace choreo
