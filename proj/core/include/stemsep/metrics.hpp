#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "stemsep/audio.hpp"

namespace stemsep {

// Per non-overlapping 1 s chunk: 10*log10((sum ref^2 + eps)/(sum err^2 + eps))
// over samples and channels, eps = 1e-10, clamped to [-100, 100] dB.
// skip_silent drops chunks whose reference power is at the silence floor.
Tensor sdr_chunks(const AudioClip& ref, const AudioClip& est, bool skip_silent = false);

// Even-length medians average the two middle values.
double median(std::vector<double> values);

struct SdrResult {
    // song -> source -> median over chunks
    std::map<std::string, std::map<std::string, double>> per_song;
    std::map<std::string, double> per_source;  // median over songs
    double all = 0.0;                          // mean of the per-source medians
};

// chunk SDRs keyed by song then source.
SdrResult aggregate(
    const std::map<std::string, std::map<std::string, std::vector<double>>>& chunk_sdrs);

std::string render_report(const SdrResult& result);        // human-readable table
std::string report_to_json(const SdrResult& result);       // machine-readable

// Wall-clock seconds to process `input_seconds` of seeded gaussian noise,
// divided by the input duration; median of `runs` runs, pinned to one thread.
double rtf_bench(const std::function<void(const AudioClip&)>& pipeline,
                 double input_seconds = 40.0, int runs = 3, std::uint64_t seed = 0);

}  // namespace stemsep
