#include "stemsep/model.hpp"

#include <cmath>
#include <numeric>

#include "stemsep/fft.hpp"

namespace stemsep {

int ModelConfig::bottleneck_width() const {
    int w = channels0;
    for (int i = 1; i < n_layers_outer; ++i) w *= growth;
    return w;
}

void ModelConfig::validate() const {
    if (sources.empty()) throw ConfigError("model: sources must be nonempty");
    if (channels0 < 1 || growth < 1) throw ConfigError("model: bad channel geometry");
    if (n_layers_outer < 1) throw ConfigError("model: need at least one outer layer");
    if (kernel < 1 || stride < 1) throw ConfigError("model: bad kernel/stride");
    if (kernel != 2 * stride)
        throw ConfigError("model: kernel must be twice the stride for mirrored shapes");
    if (!is_power_of_two(n_fft) || hop * 4 != n_fft) throw ConfigError("model: bad stft geometry");
    if (sample_rate <= 0) throw ConfigError("model: bad sample rate");
    transformer.validate();
    // Frequency axis must land exactly on the bottleneck bin count.
    int f = n_fft / 2;
    for (int l = 0; l < n_layers_outer; ++l) {
        if (f % stride != 0) throw ConfigError("model: frequency axis does not divide by stride");
        f /= stride;
    }
    if (f < 1) throw ConfigError("model: no frequency bins left at the bottleneck");
    if (sparse) sparse->validate();
}

namespace {

Tensor init_conv_w(std::vector<int> shape, int fan_in, Rng& rng) {
    const float b = 1.0f / std::sqrt(static_cast<float>(fan_in));
    return Tensor::rand_uniform(std::move(shape), -b, b, rng, true);
}

// Conv over the frequency axis of [C, F, T], applied independently per frame.
Tensor conv_freq(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
    Tensor batched = permute(x, {2, 0, 1});  // [T, C, F]
    Tensor y = conv1d(batched, w, b, stride, padding);
    return permute(y, {1, 2, 0});  // [C', F', T]
}

Tensor conv_freq_transpose(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                           int padding) {
    Tensor batched = permute(x, {2, 0, 1});
    Tensor y = conv1d_transpose(batched, w, b, stride, padding);
    return permute(y, {1, 2, 0});
}

}  // namespace

Model build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng rng(derive_seed(seed, "model_init"));

    const int n_out_t = cfg.n_sources() * 2;      // source waveform channels
    const int n_out_s = cfg.n_sources() * 2 * 2;  // complex planes per source channel

    std::vector<int> widths(static_cast<std::size_t>(cfg.n_layers_outer) + 1);
    widths[0] = cfg.channels0;
    for (int l = 1; l <= cfg.n_layers_outer; ++l)
        widths[static_cast<std::size_t>(l)] = widths[static_cast<std::size_t>(l) - 1] * cfg.growth;

    auto enc_layer = [&](int cin, int cout) {
        ConvLayer l;
        l.w = init_conv_w({2 * cout, cin, cfg.kernel}, cin * cfg.kernel, rng);
        l.b = Tensor::rand_uniform({2 * cout}, -1.0f / std::sqrt(static_cast<float>(cin * cfg.kernel)),
                                   1.0f / std::sqrt(static_cast<float>(cin * cfg.kernel)), rng, true);
        return l;
    };
    auto dec_layer = [&](int cin, int cout, bool final_layer) {
        ConvLayer l;
        const int out_ch = final_layer ? cout : 2 * cout;
        l.w = init_conv_w({cin, out_ch, cfg.kernel}, cin * cfg.kernel, rng);
        if (!final_layer)
            l.b = Tensor::rand_uniform({out_ch}, -1.0f / std::sqrt(static_cast<float>(cin * cfg.kernel)),
                                       1.0f / std::sqrt(static_cast<float>(cin * cfg.kernel)), rng, true);
        return l;
    };

    for (int l = 0; l < cfg.n_layers_outer; ++l) {
        const int cin = l == 0 ? 2 : widths[static_cast<std::size_t>(l) - 1];
        m.t_enc.push_back(enc_layer(cin, widths[static_cast<std::size_t>(l)]));
    }
    for (int l = 0; l < cfg.n_layers_outer; ++l) {
        const int cin = l == 0 ? 4 : widths[static_cast<std::size_t>(l) - 1];
        m.s_enc.push_back(enc_layer(cin, widths[static_cast<std::size_t>(l)]));
    }
    for (int l = cfg.n_layers_outer - 1; l >= 0; --l) {
        const bool final_layer = l == 0;
        const int cin = widths[static_cast<std::size_t>(l)];
        const int cout = final_layer ? n_out_t : widths[static_cast<std::size_t>(l) - 1];
        m.t_dec.push_back(dec_layer(cin, cout, final_layer));
    }
    for (int l = cfg.n_layers_outer - 1; l >= 0; --l) {
        const bool final_layer = l == 0;
        const int cin = widths[static_cast<std::size_t>(l)];
        const int cout = final_layer ? n_out_s : widths[static_cast<std::size_t>(l) - 1];
        m.s_dec.push_back(dec_layer(cin, cout, final_layer));
    }

    const int width = cfg.bottleneck_width();
    const int dim = cfg.transformer.dim;
    m.has_proj = width != dim;
    if (m.has_proj) {
        const float bi = 1.0f / std::sqrt(static_cast<float>(width));
        const float bo = 1.0f / std::sqrt(static_cast<float>(dim));
        m.t_in_w = Tensor::rand_uniform({dim, width}, -bi, bi, rng, true);
        m.t_in_b = Tensor::rand_uniform({dim}, -bi, bi, rng, true);
        m.s_in_w = Tensor::rand_uniform({dim, width}, -bi, bi, rng, true);
        m.s_in_b = Tensor::rand_uniform({dim}, -bi, bi, rng, true);
        m.t_out_w = Tensor::rand_uniform({width, dim}, -bo, bo, rng, true);
        m.t_out_b = Tensor::rand_uniform({width}, -bo, bo, rng, true);
        m.s_out_w = Tensor::rand_uniform({width, dim}, -bo, bo, rng, true);
        m.s_out_b = Tensor::rand_uniform({width}, -bo, bo, rng, true);
    }
    m.transformer = make_cross_domain(cfg.transformer, rng);
    return m;
}

ParamRegistry collect_params(const Model& m) {
    ParamRegistry reg;
    auto add_conv = [&reg](const std::vector<ConvLayer>& layers, const std::string& prefix) {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            reg.add(prefix + "." + std::to_string(l) + ".weight", layers[l].w);
            if (layers[l].b.defined()) reg.add(prefix + "." + std::to_string(l) + ".bias", layers[l].b);
        }
    };
    add_conv(m.t_enc, "temporal.encoder");
    add_conv(m.s_enc, "spectral.encoder");
    if (m.has_proj) {
        reg.add("temporal.proj_in.weight", m.t_in_w);
        reg.add("temporal.proj_in.bias", m.t_in_b);
        reg.add("spectral.proj_in.weight", m.s_in_w);
        reg.add("spectral.proj_in.bias", m.s_in_b);
        reg.add("temporal.proj_out.weight", m.t_out_w);
        reg.add("temporal.proj_out.bias", m.t_out_b);
        reg.add("spectral.proj_out.weight", m.s_out_w);
        reg.add("spectral.proj_out.bias", m.s_out_b);
    }
    register_cross_domain(m.transformer, "transformer", reg);
    add_conv(m.t_dec, "temporal.decoder");
    add_conv(m.s_dec, "spectral.decoder");
    return reg;
}

std::size_t count_params(const Model& m) {
    return collect_params(m).total_count();
}

Tensor model_forward(const Model& m, const AudioClip& mixture, std::uint64_t lsh_seed) {
    const ModelConfig& cfg = m.cfg;
    if (mixture.sample_rate != cfg.sample_rate)
        throw FormatError("model_forward: sample rate does not match the model");
    if (mixture.channels() != 2) throw FormatError("model_forward: mixture must be stereo");
    const int T = mixture.frames();
    if (T < cfg.n_fft) throw LengthError("model_forward: input shorter than one stft window");

    // Pad to a common multiple of the temporal stride chain and the hop.
    int total_stride = 1;
    for (int l = 0; l < cfg.n_layers_outer; ++l) total_stride *= cfg.stride;
    const int align = std::lcm(total_stride, cfg.hop);
    const int T_pad = (T + align - 1) / align * align;

    // Input normalization uses mixture statistics; both are constants of the
    // forward pass.
    const float mu = tensor_mean(mixture.samples);
    const float sigma = tensor_std(mixture.samples) + 1e-5f;
    Tensor x = Tensor::zeros({2, T_pad});
    {
        const float* src = mixture.samples.data();
        float* dst = x.data();
        for (int c = 0; c < 2; ++c)
            for (int t = 0; t < T_pad; ++t) {
                // reflect into range when padding exceeds the clip
                int u = t;
                while (u >= T) u = 2 * T - 2 - u;
                dst[static_cast<std::size_t>(c) * T_pad + t] =
                    (src[static_cast<std::size_t>(c) * T + u] - mu) / sigma;
            }
    }

    const int pad = cfg.kernel / 2 - cfg.stride / 2;  // keeps L' = L / stride exactly

    // Temporal encoder
    std::vector<Tensor> t_skips;
    Tensor xt = x;
    for (const auto& layer : m.t_enc) {
        xt = glu(conv1d(xt, layer.w, layer.b, cfg.stride, pad), 0);
        t_skips.push_back(xt);
    }

    // Spectral encoder on stacked re/im planes, Nyquist row dropped.
    Tensor spec = stft_op(x, cfg.n_fft, cfg.hop);          // [4, bins, F]
    Tensor xs = slice(spec, 1, 0, cfg.n_fft / 2);          // [4, n_fft/2, F]
    const int Ts = xs.dim(2);
    std::vector<Tensor> s_skips;
    for (const auto& layer : m.s_enc) {
        xs = glu(conv_freq(xs, layer.w, layer.b, cfg.stride, pad), 0);
        s_skips.push_back(xs);
    }
    const int Fb = xs.dim(1);  // bottleneck frequency bins

    // Tokens
    const int width = cfg.bottleneck_width();
    Tensor tok_t = permute(xt, {1, 0});                     // [Tt, width]
    Tensor tok_s = reshape(permute(xs, {1, 2, 0}), {Fb * Ts, width});
    if (m.has_proj) {
        tok_t = linear(tok_t, m.t_in_w, m.t_in_b);
        tok_s = linear(tok_s, m.s_in_w, m.s_in_b);
    }

    auto [out_t, out_s] = cross_domain_forward(m.transformer, cfg.transformer, tok_t, tok_s, Fb, Ts,
                                               cfg.sparse, lsh_seed);

    if (m.has_proj) {
        out_t = linear(out_t, m.t_out_w, m.t_out_b);
        out_s = linear(out_s, m.s_out_w, m.s_out_b);
    }
    Tensor bt = permute(out_t, {1, 0});                           // [width, Tt]
    Tensor bs = permute(reshape(out_s, {Fb, Ts, width}), {2, 0, 1});  // [width, Fb, Ts]

    // Decoders with sum skip connections, innermost first.
    Tensor dt = add(bt, t_skips.back());
    for (std::size_t i = 0; i < m.t_dec.size(); ++i) {
        const bool final_layer = i + 1 == m.t_dec.size();
        const auto& layer = m.t_dec[i];
        if (final_layer) {
            dt = conv1d_transpose(dt, layer.w, cfg.stride, pad);
        } else {
            dt = glu(conv1d_transpose(dt, layer.w, layer.b, cfg.stride, pad), 0);
            dt = add(dt, t_skips[t_skips.size() - 2 - i]);
        }
    }

    Tensor ds = add(bs, s_skips.back());
    for (std::size_t i = 0; i < m.s_dec.size(); ++i) {
        const bool final_layer = i + 1 == m.s_dec.size();
        const auto& layer = m.s_dec[i];
        if (final_layer) {
            ds = conv_freq_transpose(ds, layer.w, Tensor(), cfg.stride, pad);
        } else {
            ds = glu(conv_freq_transpose(ds, layer.w, layer.b, cfg.stride, pad), 0);
            ds = add(ds, s_skips[s_skips.size() - 2 - i]);
        }
    }

    // Restore the Nyquist row as zeros, run the inverse transform per source
    // channel and sum the two branches.
    Tensor nyquist = Tensor::zeros({ds.dim(0), 1, ds.dim(2)});
    Tensor full_spec = concat(ds, nyquist, 1);  // [S*4, bins, Ts]
    Tensor wave_s = istft_op(full_spec, cfg.n_fft, cfg.hop, T_pad);  // [S*2, T_pad]

    const int S = cfg.n_sources();
    Tensor out = add(dt, wave_s);
    out = affine_const(out, sigma, mu);
    out = reshape(out, {S, 2, T_pad});
    if (T_pad != T) out = slice(out, 2, 0, T);
    return out;
}

}  // namespace stemsep
