#include "stemsep/transformer.hpp"

#include <cmath>

namespace stemsep {

void TransformerConfig::validate() const {
    if (dim < 1 || dim % heads != 0) throw ConfigError("transformer: dim must divide by heads");
    if (dim % 4 != 0) throw ConfigError("transformer: dim must be divisible by 4");
    if (depth < 1) throw ConfigError("transformer: depth must be >= 1");
    if (layer_scale_init <= 0.0f) throw ConfigError("transformer: layer_scale_init must be > 0");
    if (ffn_mult < 1) throw ConfigError("transformer: ffn_mult must be >= 1");
}

std::size_t ParamRegistry::total_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items) n += t.numel();
    return n;
}

Tensor sinusoidal_pe_1d(int len, int dim) {
    if (dim % 2 != 0) throw DimensionError("sinusoidal_pe_1d: dim must be even");
    if (len < 1) throw DimensionError("sinusoidal_pe_1d: len must be >= 1");
    Tensor pe = Tensor::zeros({len, dim});
    float* p = pe.data();
    for (int pos = 0; pos < len; ++pos)
        for (int i = 0; i < dim / 2; ++i) {
            const double freq = std::pow(10000.0, 2.0 * i / dim);
            const double arg = pos / freq;
            p[static_cast<std::size_t>(pos) * dim + 2 * i] = static_cast<float>(std::sin(arg));
            p[static_cast<std::size_t>(pos) * dim + 2 * i + 1] = static_cast<float>(std::cos(arg));
        }
    return pe;
}

Tensor sinusoidal_pe_2d(int F, int T, int dim) {
    if (dim % 4 != 0) throw DimensionError("sinusoidal_pe_2d: dim must be divisible by 4");
    const Tensor pe_f = sinusoidal_pe_1d(F, dim / 2);
    const Tensor pe_t = sinusoidal_pe_1d(T, dim / 2);
    Tensor pe = Tensor::zeros({F * T, dim});
    float* p = pe.data();
    const float* pf = pe_f.data();
    const float* pt = pe_t.data();
    const int half = dim / 2;
    for (int f = 0; f < F; ++f)
        for (int t = 0; t < T; ++t) {
            float* row = p + (static_cast<std::size_t>(f) * T + t) * dim;
            for (int i = 0; i < half; ++i) {
                row[i] = pf[static_cast<std::size_t>(f) * half + i];
                row[half + i] = pt[static_cast<std::size_t>(t) * half + i];
            }
        }
    return pe;
}

namespace {

float fan_in_bound(int fan_in) {
    return 1.0f / std::sqrt(static_cast<float>(fan_in));
}

Tensor init_linear_w(int out, int in, Rng& rng) {
    const float b = fan_in_bound(in);
    return Tensor::rand_uniform({out, in}, -b, b, rng, true);
}

Tensor init_linear_b(int out, int in, Rng& rng) {
    const float b = fan_in_bound(in);
    return Tensor::rand_uniform({out}, -b, b, rng, true);
}

}  // namespace

EncoderLayerParams make_encoder_layer(const TransformerConfig& cfg, bool cross, Rng& rng) {
    EncoderLayerParams p;
    p.is_cross = cross;
    const int d = cfg.dim;
    const int hidden = cfg.ffn_mult * d;
    auto ln_pair = [&](Tensor& g, Tensor& b) {
        g = Tensor::full({d}, 1.0f, true);
        b = Tensor::zeros({d}, true);
    };
    ln_pair(p.ln1_g, p.ln1_b);
    if (cross) ln_pair(p.ctx_ln_g, p.ctx_ln_b);
    p.wq = init_linear_w(d, d, rng);
    p.bq = init_linear_b(d, d, rng);
    p.wk = init_linear_w(d, d, rng);
    p.bk = init_linear_b(d, d, rng);
    p.wv = init_linear_w(d, d, rng);
    p.bv = init_linear_b(d, d, rng);
    p.wo = init_linear_w(d, d, rng);
    p.bo = init_linear_b(d, d, rng);
    p.gamma1 = Tensor::full({d}, cfg.layer_scale_init, true);
    ln_pair(p.ln2_g, p.ln2_b);
    p.ffn_w1 = init_linear_w(hidden, d, rng);
    p.ffn_b1 = init_linear_b(hidden, d, rng);
    p.ffn_w2 = init_linear_w(d, hidden, rng);
    p.ffn_b2 = init_linear_b(d, hidden, rng);
    p.gamma2 = Tensor::full({d}, cfg.layer_scale_init, true);
    ln_pair(p.out_ln_g, p.out_ln_b);
    return p;
}

void register_encoder_layer(const EncoderLayerParams& p, const std::string& prefix,
                            ParamRegistry& reg) {
    reg.add(prefix + ".ln1.gamma", p.ln1_g);
    reg.add(prefix + ".ln1.beta", p.ln1_b);
    if (p.is_cross) {
        reg.add(prefix + ".ctx_ln.gamma", p.ctx_ln_g);
        reg.add(prefix + ".ctx_ln.beta", p.ctx_ln_b);
    }
    reg.add(prefix + ".attn.q.weight", p.wq);
    reg.add(prefix + ".attn.q.bias", p.bq);
    reg.add(prefix + ".attn.k.weight", p.wk);
    reg.add(prefix + ".attn.k.bias", p.bk);
    reg.add(prefix + ".attn.v.weight", p.wv);
    reg.add(prefix + ".attn.v.bias", p.bv);
    reg.add(prefix + ".attn.out.weight", p.wo);
    reg.add(prefix + ".attn.out.bias", p.bo);
    reg.add(prefix + ".layer_scale1", p.gamma1);
    reg.add(prefix + ".ln2.gamma", p.ln2_g);
    reg.add(prefix + ".ln2.beta", p.ln2_b);
    reg.add(prefix + ".ffn.w1.weight", p.ffn_w1);
    reg.add(prefix + ".ffn.w1.bias", p.ffn_b1);
    reg.add(prefix + ".ffn.w2.weight", p.ffn_w2);
    reg.add(prefix + ".ffn.w2.bias", p.ffn_b2);
    reg.add(prefix + ".layer_scale2", p.gamma2);
    reg.add(prefix + ".out_ln.gamma", p.out_ln_g);
    reg.add(prefix + ".out_ln.beta", p.out_ln_b);
}

Tensor encoder_layer_forward(const EncoderLayerParams& p, const TransformerConfig& cfg,
                             const Tensor& x, const Tensor* ctx, const LshConfig* lsh,
                             std::uint64_t lsh_seed, bool apply_out_norm) {
    if (x.ndim() != 2 || x.dim(1) != cfg.dim)
        throw DimensionError("encoder_layer: token dim does not match config");
    if (p.is_cross != (ctx != nullptr))
        throw DimensionError("encoder_layer: ctx must be given exactly for cross layers");
    if (ctx && ctx->dim(1) != cfg.dim)
        throw DimensionError("encoder_layer: ctx dim does not match config");

    const int len = x.dim(0);
    const int heads = cfg.heads;
    const int hd = cfg.dim / heads;
    const float att_scale = 1.0f / std::sqrt(static_cast<float>(hd));

    Tensor h = layer_norm(x, {1}, p.ln1_g, p.ln1_b);
    Tensor kv_src = ctx ? layer_norm(*ctx, {1}, p.ctx_ln_g, p.ctx_ln_b) : h;
    const int kv_len = kv_src.dim(0);

    Tensor q = linear(h, p.wq, p.bq);
    Tensor k = linear(kv_src, p.wk, p.bk);
    Tensor v = linear(kv_src, p.wv, p.bv);

    SparsityPattern pattern;
    bool use_pattern = false;
    if (lsh) {
        const Tensor counts = lsh_match_counts(q.detach(), k.detach(), *lsh, lsh_seed);
        pattern = select_threshold(counts, lsh->target_sparsity).pattern;
        use_pattern = true;
    }

    Tensor q3 = permute(reshape(q, {len, heads, hd}), {1, 0, 2});
    Tensor k3 = permute(reshape(k, {kv_len, heads, hd}), {1, 0, 2});
    Tensor v3 = permute(reshape(v, {kv_len, heads, hd}), {1, 0, 2});
    Tensor att = use_pattern ? sparse_attention(q3, k3, v3, pattern, att_scale)
                             : dense_attention(q3, k3, v3, att_scale);
    Tensor merged = reshape(permute(att, {1, 0, 2}), {len, cfg.dim});
    Tensor att_out = linear(merged, p.wo, p.bo);

    Tensor y = add(x, mul_lastdim(att_out, p.gamma1));

    Tensor h2 = layer_norm(y, {1}, p.ln2_g, p.ln2_b);
    Tensor f = linear(gelu(linear(h2, p.ffn_w1, p.ffn_b1)), p.ffn_w2, p.ffn_b2);
    y = add(y, mul_lastdim(f, p.gamma2));

    if (apply_out_norm) y = layer_norm(y, {0, 1}, p.out_ln_g, p.out_ln_b);
    return y;
}

CrossDomainParams make_cross_domain(const TransformerConfig& cfg, Rng& rng) {
    cfg.validate();
    CrossDomainParams p;
    for (int l = 0; l < cfg.depth; ++l) p.temporal.push_back(make_encoder_layer(cfg, l % 2 == 1, rng));
    for (int l = 0; l < cfg.depth; ++l) p.spectral.push_back(make_encoder_layer(cfg, l % 2 == 1, rng));
    return p;
}

void register_cross_domain(const CrossDomainParams& p, const std::string& prefix,
                           ParamRegistry& reg) {
    for (std::size_t l = 0; l < p.temporal.size(); ++l)
        register_encoder_layer(p.temporal[l], prefix + ".temporal." + std::to_string(l), reg);
    for (std::size_t l = 0; l < p.spectral.size(); ++l)
        register_encoder_layer(p.spectral[l], prefix + ".spectral." + std::to_string(l), reg);
}

std::pair<Tensor, Tensor> cross_domain_forward(const CrossDomainParams& p,
                                               const TransformerConfig& cfg, const Tensor& temporal,
                                               const Tensor& spectral, int spec_bins,
                                               int spec_frames,
                                               const std::optional<LshConfig>& sparse,
                                               std::uint64_t lsh_seed) {
    if (spectral.dim(0) != spec_bins * spec_frames)
        throw DimensionError("cross_domain: spectral length must equal bins * frames");
    Tensor t = scale(temporal, cfg.input_scale);
    Tensor s = scale(spectral, cfg.input_scale);
    if (cfg.use_positional) {
        t = add(t, sinusoidal_pe_1d(t.dim(0), cfg.dim));
        s = add(s, sinusoidal_pe_2d(spec_bins, spec_frames, cfg.dim));
    }
    const LshConfig* self_lsh = sparse ? &*sparse : nullptr;
    const LshConfig* cross_lsh = (sparse && !cfg.sparse_self_attention_only) ? &*sparse : nullptr;
    for (int l = 0; l < cfg.depth; ++l) {
        const bool cross = l % 2 == 1;
        const std::uint64_t seed_t = derive_seed(lsh_seed, "pattern_t", static_cast<std::uint64_t>(l));
        const std::uint64_t seed_s = derive_seed(lsh_seed, "pattern_s", static_cast<std::uint64_t>(l));
        if (!cross) {
            t = encoder_layer_forward(p.temporal[static_cast<std::size_t>(l)], cfg, t, nullptr,
                                      self_lsh, seed_t);
            s = encoder_layer_forward(p.spectral[static_cast<std::size_t>(l)], cfg, s, nullptr,
                                      self_lsh, seed_s);
        } else if (cfg.cross_updates_parallel) {
            Tensor t_pre = t;
            Tensor s_pre = s;
            t = encoder_layer_forward(p.temporal[static_cast<std::size_t>(l)], cfg, t_pre, &s_pre,
                                      cross_lsh, seed_t);
            s = encoder_layer_forward(p.spectral[static_cast<std::size_t>(l)], cfg, s_pre, &t_pre,
                                      cross_lsh, seed_s);
        } else {
            t = encoder_layer_forward(p.temporal[static_cast<std::size_t>(l)], cfg, t, &s, cross_lsh,
                                      seed_t);
            s = encoder_layer_forward(p.spectral[static_cast<std::size_t>(l)], cfg, s, &t, cross_lsh,
                                      seed_s);
        }
    }
    return {t, s};
}

}  // namespace stemsep
