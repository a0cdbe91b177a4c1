#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stemsep/sparse_attention.hpp"
#include "stemsep/tensor.hpp"

namespace stemsep {

struct TransformerConfig {
    int dim = 384;
    int heads = 8;
    int ffn_mult = 4;
    int depth = 5;  // layers per domain; even index self-attention, odd cross
    float layer_scale_init = 1e-4f;
    float input_scale = 1.0f;  // applied before positional encodings
    bool use_positional = true;
    bool cross_updates_parallel = true;  // both domains read pre-layer states
    bool sparse_self_attention_only = true;

    void validate() const;
    bool operator==(const TransformerConfig&) const = default;
};

// Named parameter list in a stable order; doubles as the weight-file layout.
struct ParamRegistry {
    std::vector<std::pair<std::string, Tensor>> items;

    void add(const std::string& name, const Tensor& t) { items.emplace_back(name, t); }
    std::size_t total_count() const;
};

// pe[p, 2i] = sin(p / 10000^(2i/dim)), pe[p, 2i+1] = cos(...). dim must be even.
Tensor sinusoidal_pe_1d(int len, int dim);

// Half the channels encode the first index, half the second, each through the
// 1D formula with dim/2 channels; rows flattened f-major (token = f*T + t).
// dim must be divisible by 4.
Tensor sinusoidal_pe_2d(int F, int T, int dim);

// Pre-norm residual encoder layer with Layer Scale. Cross layers carry an
// extra normalization for the context domain.
struct EncoderLayerParams {
    bool is_cross = false;
    Tensor ln1_g, ln1_b;
    Tensor ctx_ln_g, ctx_ln_b;  // cross only
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor gamma1;
    Tensor ln2_g, ln2_b;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Tensor gamma2;
    Tensor out_ln_g, out_ln_b;  // time layer norm (all tokens jointly)
};

EncoderLayerParams make_encoder_layer(const TransformerConfig& cfg, bool cross, Rng& rng);
void register_encoder_layer(const EncoderLayerParams& p, const std::string& prefix,
                            ParamRegistry& reg);

// x [len, dim]; ctx given iff the layer is cross-attention. When `lsh` is set
// the attention pattern is rebuilt from the current q/k, shared across heads.
// apply_out_norm=false stops before the final time layer norm.
Tensor encoder_layer_forward(const EncoderLayerParams& p, const TransformerConfig& cfg,
                             const Tensor& x, const Tensor* ctx, const LshConfig* lsh,
                             std::uint64_t lsh_seed, bool apply_out_norm = true);

struct CrossDomainParams {
    std::vector<EncoderLayerParams> temporal;  // size depth
    std::vector<EncoderLayerParams> spectral;
};

CrossDomainParams make_cross_domain(const TransformerConfig& cfg, Rng& rng);
void register_cross_domain(const CrossDomainParams& p, const std::string& prefix,
                           ParamRegistry& reg);

// Interleaves self-attention (even layers) and cross-attention (odd layers)
// over the temporal [Lt, dim] and spectral [F*T, dim] sequences. Sequence
// lengths and dims are preserved.
std::pair<Tensor, Tensor> cross_domain_forward(const CrossDomainParams& p,
                                               const TransformerConfig& cfg, const Tensor& temporal,
                                               const Tensor& spectral, int spec_bins,
                                               int spec_frames,
                                               const std::optional<LshConfig>& sparse,
                                               std::uint64_t lsh_seed);

}  // namespace stemsep
