#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stemsep/audio.hpp"
#include "stemsep/dsp.hpp"
#include "stemsep/transformer.hpp"

namespace stemsep {

struct ModelConfig {
    std::vector<std::string> sources = {"drums", "bass", "other", "vocals"};
    int channels0 = 48;
    int growth = 2;
    int n_layers_outer = 4;
    int kernel = 8;
    int stride = 4;
    TransformerConfig transformer;
    std::optional<LshConfig> sparse;
    int n_fft = kDefaultNfft;
    int hop = kDefaultHop;
    int sample_rate = 44100;

    int n_sources() const { return static_cast<int>(sources.size()); }
    int bottleneck_width() const;  // channels0 * growth^(n_layers_outer - 1)
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct ConvLayer {
    Tensor w, b;  // b undefined for the bias-free final decoder layers
};

// Dual-branch encoder/decoder around the cross-domain encoder. The temporal
// branch convolves over time, the spectral branch over frequency (per frame);
// each encoder layer is a strided conv gated by GLU, decoders mirror with
// transposed convs and sum skip connections.
struct Model {
    ModelConfig cfg;
    std::vector<ConvLayer> t_enc, s_enc;
    std::vector<ConvLayer> t_dec, s_dec;  // innermost first
    bool has_proj = false;
    Tensor t_in_w, t_in_b, t_out_w, t_out_b;
    Tensor s_in_w, s_in_b, s_out_w, s_out_b;
    CrossDomainParams transformer;
};

Model build_model(const ModelConfig& cfg, std::uint64_t seed);

// One waveform per source, same length as the input: [sources, 2, frames].
// The mixture must be stereo at the configured rate and >= n_fft samples.
Tensor model_forward(const Model& m, const AudioClip& mixture, std::uint64_t lsh_seed = 0);

std::size_t count_params(const Model& m);

// Canonical parameter order shared by the optimizer, EMA and weight files.
ParamRegistry collect_params(const Model& m);

}  // namespace stemsep
