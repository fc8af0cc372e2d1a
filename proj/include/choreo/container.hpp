#pragma once

#include <string>

#include "choreo/motion.hpp"

namespace choreo {

// canonical JSON motion container:
// {"fps", "n_dancers", "n_frames", "layout": "root3+rot6d24", "data": N x T x 147}
void write_motion_json(const std::string& path, const PackedGroup& g);
PackedGroup read_motion_json(const std::string& path);

// binary form: magic "GCDM", u32 version=1, u32 N, u32 T, u32 D=147,
// then N*T*D little-endian float32
void write_motion_binary(const std::string& path, const PackedGroup& g);
PackedGroup read_motion_binary(const std::string& path);

// extension dispatch: .json -> JSON, anything else -> binary
void write_motion(const std::string& path, const PackedGroup& g);
// content sniffing: '{' -> JSON, "GCDM" -> binary
PackedGroup read_motion(const std::string& path);

}  // namespace choreo
