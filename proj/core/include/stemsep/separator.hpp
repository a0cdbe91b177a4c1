#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "stemsep/model.hpp"
#include "stemsep/weights.hpp"

namespace stemsep {

// Chunk layout for long-clip inference: chunks at `starts`, 25% overlap by
// default, triangular crossfade ramps at interior edges. Gains are normalized
// so the per-frame sum over chunks is exactly 1.
struct ChunkPlan {
    int total_frames = 0;
    int chunk_frames = 0;
    double overlap = 0.25;
    std::vector<int> starts;
    std::vector<std::vector<float>> gains;  // per chunk, one gain per covered frame
};

ChunkPlan plan_chunks(int total_frames, int chunk_frames, double overlap);

// Anything that maps a mixture clip to [sources, channels, len].
using SeparatorFn = std::function<Tensor(const AudioClip&)>;

// Runs `fn` per chunk and accumulates with the plan's crossfade gains.
// Output clips have exactly the input length.
std::vector<AudioClip> separate_chunks(const SeparatorFn& fn, int n_sources,
                                       const AudioClip& clip, const ChunkPlan& plan);

// Model-backed separation, keyed by source name.
std::map<std::string, AudioClip> separate(const Model& m, const AudioClip& clip,
                                          const ChunkPlan& plan);

}  // namespace stemsep
