#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stemsep/audio.hpp"

namespace stemsep {

// Deterministic synthetic stems living in separated frequency bands:
// drums = noise-burst train, bass = low sine, vocals = vibrato mid sine,
// other = narrowband noise pad. Every source stays active well above the
// 30% / -40 dB curation gate, and the mixture is the exact per-sample sum.
struct SynthSpec {
    std::uint64_t seed = 0;
    double duration_s = 4.0;
    int sample_rate = 44100;

    void validate() const;
};

struct SongStems {
    std::string song_id;
    std::vector<std::string> sources;  // [drums, bass, other, vocals]
    std::vector<AudioClip> stems;      // aligned with sources
    AudioClip mixture;
};

SongStems generate_song(const SynthSpec& spec);

// Writes <dir>/<source>.wav for every stem plus <dir>/mixture.wav.
void write_song(const SongStems& song, const std::string& dir);

// Reads a stem directory written by write_song (or any <source>.wav tree).
SongStems read_song(const std::string& dir, const std::vector<std::string>& sources);

}  // namespace stemsep
