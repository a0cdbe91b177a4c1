#pragma once

#include "stemsep/audio.hpp"
#include "stemsep/tensor.hpp"

namespace stemsep {

constexpr int kDefaultNfft = 4096;
constexpr int kDefaultHop = 1024;

// Complex time-frequency representation tied to its STFT geometry.
struct Spectrogram {
    Tensor real;  // [channels, bins, frames]
    Tensor imag;  // same shape
    int n_fft = kDefaultNfft;
    int hop = kDefaultHop;
    int sample_rate = 44100;

    int channels() const { return real.dim(0); }
    int bins() const { return real.dim(1); }
    int frames() const { return real.dim(2); }
};

// Hann-windowed, reflect-padded so frames == ceil(clip.frames / hop).
// Requires n_fft a power of two, hop == n_fft/4 and clip length >= n_fft.
Spectrogram stft(const AudioClip& clip, int n_fft = kDefaultNfft, int hop = kDefaultHop);

// Overlap-add inverse with window-square normalization; left inverse of stft
// on interior samples. out_len must match the forward-pass origin.
AudioClip istft(const Spectrogram& spec, int out_len);

// Volume in dB per non-overlapping 1 s segment: 10*log10 of the squared
// signal average-pooled over one second, power averaged across channels,
// floored at 1e-12. The trailing partial segment is dropped.
Tensor volume_db(const AudioClip& clip);

// Same values before the float32 narrowing; the curation thresholds compare
// against these.
std::vector<double> volume_db_segments(const AudioClip& clip);

// Tape-recording counterparts used inside the model. Channel layout stacks
// each channel's real and imaginary planes: [re_c0, im_c0, re_c1, im_c1].
Tensor stft_op(const Tensor& wave, int n_fft, int hop);                  // [C,T] -> [2C,bins,F]
Tensor istft_op(const Tensor& spec, int n_fft, int hop, int out_len);    // [2C,bins,F] -> [C,T]

}  // namespace stemsep
