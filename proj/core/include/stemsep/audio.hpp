#pragma once

#include <string>

#include "stemsep/tensor.hpp"

namespace stemsep {

// Stereo or mono waveform. samples is [channels, frames].
struct AudioClip {
    Tensor samples;
    int sample_rate = 44100;

    AudioClip() = default;
    AudioClip(Tensor s, int rate);

    int channels() const { return samples.dim(0); }
    int frames() const { return samples.dim(1); }
    double duration_s() const { return static_cast<double>(frames()) / sample_rate; }
};

enum class SampleFormat { kFloat32, kPcm16 };

// RIFF/WAVE reader for PCM-16, PCM-24 and float-32, 1-2 channels. PCM is
// scaled into [-1, 1) with 1/32768 resp. 1/8388608.
AudioClip load_audio(const std::string& path);

// float-32 round-trips bit-exactly; PCM-16 clamps and rounds.
void save_audio(const AudioClip& clip, const std::string& path,
                SampleFormat format = SampleFormat::kFloat32);

}  // namespace stemsep
