#include "stemsep/separator.hpp"

#include <algorithm>
#include <cmath>

namespace stemsep {

ChunkPlan plan_chunks(int total_frames, int chunk_frames, double overlap) {
    if (chunk_frames < 2) throw ContractError("plan_chunks: chunk_frames must be >= 2");
    if (overlap < 0.0 || overlap >= 1.0) throw ContractError("plan_chunks: overlap must be in [0, 1)");
    if (total_frames < 1) throw ContractError("plan_chunks: empty clip");

    ChunkPlan plan;
    plan.total_frames = total_frames;
    plan.overlap = overlap;

    if (total_frames <= chunk_frames) {
        plan.chunk_frames = total_frames;
        plan.starts = {0};
        plan.gains = {std::vector<float>(static_cast<std::size_t>(total_frames), 1.0f)};
        return plan;
    }

    plan.chunk_frames = chunk_frames;
    int ramp = static_cast<int>(std::lround(overlap * chunk_frames));
    ramp = std::clamp(ramp, 0, chunk_frames - 1);
    const int hop = chunk_frames - ramp;

    int s = 0;
    while (true) {
        plan.starts.push_back(s);
        if (s + chunk_frames >= total_frames) break;
        s = std::min(s + hop, total_frames - chunk_frames);
    }

    const std::size_t n_chunks = plan.starts.size();
    plan.gains.assign(n_chunks, std::vector<float>(static_cast<std::size_t>(chunk_frames), 1.0f));
    for (std::size_t c = 0; c < n_chunks; ++c) {
        auto& g = plan.gains[c];
        if (ramp > 0) {
            // Triangular transition; the outermost edges keep gain 1.
            if (c != 0)
                for (int i = 0; i < ramp; ++i)
                    g[static_cast<std::size_t>(i)] = static_cast<float>(i + 1) / (ramp + 1);
            if (c + 1 != n_chunks)
                for (int i = chunk_frames - ramp; i < chunk_frames; ++i)
                    g[static_cast<std::size_t>(i)] = static_cast<float>(chunk_frames - i) / (ramp + 1);
        }
    }

    // Normalize so every covered frame sums to exactly 1.
    std::vector<float> frame_sum(static_cast<std::size_t>(total_frames), 0.0f);
    for (std::size_t c = 0; c < n_chunks; ++c)
        for (int i = 0; i < chunk_frames; ++i)
            frame_sum[static_cast<std::size_t>(plan.starts[c] + i)] += plan.gains[c][static_cast<std::size_t>(i)];
    for (std::size_t c = 0; c < n_chunks; ++c)
        for (int i = 0; i < chunk_frames; ++i)
            plan.gains[c][static_cast<std::size_t>(i)] /=
                frame_sum[static_cast<std::size_t>(plan.starts[c] + i)];
    return plan;
}

std::vector<AudioClip> separate_chunks(const SeparatorFn& fn, int n_sources,
                                       const AudioClip& clip, const ChunkPlan& plan) {
    if (plan.total_frames != clip.frames())
        throw DimensionError("separate: plan does not match clip length");
    const int C = clip.channels();
    const int T = clip.frames();
    std::vector<Tensor> out(static_cast<std::size_t>(n_sources));
    for (auto& t : out) t = Tensor::zeros({C, T});

    for (std::size_t c = 0; c < plan.starts.size(); ++c) {
        const int start = plan.starts[c];
        const int len = static_cast<int>(plan.gains[c].size());
        Tensor chunk = Tensor::zeros({C, len});
        for (int ch = 0; ch < C; ++ch)
            std::copy_n(clip.samples.data() + static_cast<std::size_t>(ch) * T + start, len,
                        chunk.data() + static_cast<std::size_t>(ch) * len);
        Tensor pred = fn(AudioClip(std::move(chunk), clip.sample_rate));
        if (pred.ndim() != 3 || pred.dim(0) != n_sources || pred.dim(1) != C || pred.dim(2) != len)
            throw DimensionError("separate: separator output has wrong shape");
        const float* pp = pred.data();
        const float* g = plan.gains[c].data();
        for (int s = 0; s < n_sources; ++s) {
            float* dst = out[static_cast<std::size_t>(s)].data();
            for (int ch = 0; ch < C; ++ch)
                for (int i = 0; i < len; ++i)
                    dst[static_cast<std::size_t>(ch) * T + start + i] +=
                        g[i] * pp[(static_cast<std::size_t>(s) * C + ch) * len + i];
        }
    }

    std::vector<AudioClip> clips;
    clips.reserve(out.size());
    for (auto& t : out) clips.emplace_back(std::move(t), clip.sample_rate);
    return clips;
}

std::map<std::string, AudioClip> separate(const Model& m, const AudioClip& clip,
                                          const ChunkPlan& plan) {
    if (clip.sample_rate != m.cfg.sample_rate)
        throw FormatError("separate: clip rate does not match the model");
    SeparatorFn fn = [&m](const AudioClip& chunk) {
        NoGradGuard ng;
        return model_forward(m, chunk);
    };
    std::vector<AudioClip> stems = separate_chunks(fn, m.cfg.n_sources(), clip, plan);
    std::map<std::string, AudioClip> by_name;
    for (int s = 0; s < m.cfg.n_sources(); ++s)
        by_name.emplace(m.cfg.sources[static_cast<std::size_t>(s)], std::move(stems[static_cast<std::size_t>(s)]));
    return by_name;
}

}  // namespace stemsep
