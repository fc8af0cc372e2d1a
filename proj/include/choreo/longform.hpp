#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "choreo/sampler.hpp"

namespace choreo {

// overlapping windows covering [0, total); the last window may run past the
// end and is truncated when the output is assembled
struct ChunkPlan {
  std::vector<std::pair<int, int>> windows;  // [start, end)
  int overlap_frames = 0;                    // always window / 2
};

// hop = window/2; windows start at multiples of hop until the audio is
// covered. AudioTooShort if total < window; BadConfig on an odd window.
ChunkPlan chunk_schedule(int total_frames, int window_frames);

struct DancerAssignment {
  std::vector<int> permutation;  // permutation[next_dancer] = current_dancer
  double total_cost = 0.0;
};

// minimum-cost perfect matching, O(n^3); cost(i, j) prices pairing current
// dancer i with next dancer j. BadMatrix on empty, non-square, negative or
// non-finite input.
DancerAssignment match_dancers_hungarian(const Mat& cost);

// per-dancer overlap merge: roots lerp, joints quaternion-slerp, with weight
// decaying linearly 1 -> 0 from a's side to b's. Frames where both sources
// agree bitwise are copied through untouched.
Mat blend_overlap(const Mat& seq_a_tail, const Mat& seq_b_head);

// chunked long-form generation: every chunk is denoised in lockstep, the
// diffused overlaps are crossfaded after each reverse step, and dancer
// correspondence is frozen at the first blend via the Hungarian matching on
// the x0 estimates. A single-chunk plan reduces to sample_group_dance.
GroupSequence generate_long(const GroupDenoiser& denoiser,
                            const AudioFeatureSequence& audio, int n_dancers,
                            const SamplerConfig& sampler,
                            const GuidanceConfig& guidance, uint64_t seed);

}  // namespace choreo
