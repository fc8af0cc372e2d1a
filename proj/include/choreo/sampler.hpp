#pragma once

#include <cstdint>

#include "choreo/model.hpp"
#include "choreo/schedule.hpp"
#include "choreo/synth.hpp"

namespace choreo {

enum class SamplerKind { kDdpm, kDdim };

struct SamplerConfig {
  SamplerKind kind = SamplerKind::kDdim;
  int n_ddim_steps = 50;  // ignored by DDPM
};

// Reverse chain from seeded standard-normal noise, conditioned on the first
// n_frames of audio. The group-embedding draw z is taken once per call, so a
// seed pins the whole performance. Output rotations are re-orthogonalized.
// Errors: TooFewDancers/TooManyDancers, AudioTooShort, ShapeMismatch on the
// audio feature width, MissingEncoder when gamma != 0 without an encoder.
GroupSequence sample_group_dance(const GroupDenoiser& denoiser,
                                 const AudioFeatureSequence& audio,
                                 int n_dancers, int n_frames,
                                 const SamplerConfig& sampler,
                                 const GuidanceConfig& guidance,
                                 uint64_t seed);

}  // namespace choreo
