#include "stemsep/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "stemsep/fft.hpp"
#include "stemsep/threading.hpp"

namespace stemsep {

namespace {

void check_stft_params(int n_fft, int hop) {
    if (!is_power_of_two(n_fft)) throw DimensionError("stft: n_fft must be a power of two");
    if (hop < 1 || hop * 4 != n_fft) throw DimensionError("stft: hop must equal n_fft/4");
}

std::vector<float> hann_window(int n) {
    std::vector<float> w(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        w[static_cast<std::size_t>(i)] =
            static_cast<float>(0.5 - 0.5 * std::cos(2.0 * M_PI * i / n));
    return w;
}

struct StftGeometry {
    int frames, left, right, padded;
};

StftGeometry stft_geometry(int T, int n_fft, int hop) {
    StftGeometry g;
    g.frames = (T + hop - 1) / hop;
    g.left = n_fft / 2;
    g.padded = (g.frames - 1) * hop + n_fft;
    g.right = g.padded - T - g.left;
    return g;
}

// Reflect (no edge repeat): padded index -> source index.
int reflect_source(int u, int left, int T) {
    if (u < left) return left - u;
    if (u >= left + T) return T - 2 - (u - (left + T));
    return u - left;
}

std::vector<float> window_square_sum(const std::vector<float>& w, int frames, int hop, int padded) {
    std::vector<float> wsum(static_cast<std::size_t>(padded), 0.0f);
    for (int m = 0; m < frames; ++m)
        for (std::size_t n = 0; n < w.size(); ++n)
            wsum[static_cast<std::size_t>(m * hop) + n] += w[n] * w[n];
    return wsum;
}

}  // namespace

Tensor stft_op(const Tensor& wave, int n_fft, int hop) {
    check_stft_params(n_fft, hop);
    if (wave.ndim() != 2) throw DimensionError("stft: wave must be [channels, frames]");
    const int C = wave.dim(0);
    const int T = wave.dim(1);
    if (T < n_fft) throw LengthError("stft: clip shorter than n_fft");
    const StftGeometry geo = stft_geometry(T, n_fft, hop);
    const int bins = n_fft / 2 + 1;
    const int F = geo.frames;
    const std::vector<float> w = hann_window(n_fft);

    Tensor out = Tensor::zeros({2 * C, bins, F});
    float* po = out.data();
    const float* px = wave.data();
    parallel_for(C, [&](std::int64_t c0, std::int64_t c1) {
        std::vector<float> padded(static_cast<std::size_t>(geo.padded));
        std::vector<float> seg(static_cast<std::size_t>(n_fft));
        std::vector<float> re(static_cast<std::size_t>(bins)), im(static_cast<std::size_t>(bins));
        for (std::int64_t c = c0; c < c1; ++c) {
            const float* xrow = px + c * T;
            for (int u = 0; u < geo.padded; ++u)
                padded[static_cast<std::size_t>(u)] = xrow[reflect_source(u, geo.left, T)];
            for (int m = 0; m < F; ++m) {
                for (int n = 0; n < n_fft; ++n)
                    seg[static_cast<std::size_t>(n)] =
                        padded[static_cast<std::size_t>(m * hop + n)] * w[static_cast<std::size_t>(n)];
                rfft(seg.data(), n_fft, re.data(), im.data());
                float* out_re = po + ((2 * c) * bins) * F;
                float* out_im = po + ((2 * c + 1) * bins) * F;
                for (int k = 0; k < bins; ++k) {
                    out_re[static_cast<std::size_t>(k) * F + m] = re[static_cast<std::size_t>(k)];
                    out_im[static_cast<std::size_t>(k) * F + m] = im[static_cast<std::size_t>(k)];
                }
            }
        }
    }, 1);

    return autograd_wrap(std::move(out), {wave}, [wave, n_fft, hop, C, T, geo, bins, F, w](const Tensor& o) {
        if (!wave.requires_grad()) return;
        const float* g = o.grad_vec().data();
        float* gx = const_cast<Tensor&>(wave).grad_vec().data();
        parallel_for(C, [&](std::int64_t c0, std::int64_t c1) {
            std::vector<float> dpad(static_cast<std::size_t>(geo.padded));
            std::vector<float> fr(static_cast<std::size_t>(n_fft)), fi(static_cast<std::size_t>(n_fft));
            for (std::int64_t c = c0; c < c1; ++c) {
                std::fill(dpad.begin(), dpad.end(), 0.0f);
                const float* g_re = g + ((2 * c) * bins) * F;
                const float* g_im = g + ((2 * c + 1) * bins) * F;
                for (int m = 0; m < F; ++m) {
                    std::fill(fr.begin(), fr.end(), 0.0f);
                    std::fill(fi.begin(), fi.end(), 0.0f);
                    for (int k = 0; k < bins; ++k) {
                        fr[static_cast<std::size_t>(k)] = g_re[static_cast<std::size_t>(k) * F + m];
                        fi[static_cast<std::size_t>(k)] = g_im[static_cast<std::size_t>(k) * F + m];
                    }
                    // z[n] = sum_{k<=N/2} (g_re + i g_im) e^{+2pi i k n / N}
                    fft_inplace(fr.data(), fi.data(), n_fft, true);
                    for (int n = 0; n < n_fft; ++n)
                        dpad[static_cast<std::size_t>(m * hop + n)] +=
                            w[static_cast<std::size_t>(n)] * fr[static_cast<std::size_t>(n)];
                }
                float* gxrow = gx + c * T;
                for (int u = 0; u < geo.padded; ++u)
                    gxrow[reflect_source(u, geo.left, T)] += dpad[static_cast<std::size_t>(u)];
            }
        }, 1);
    });
}

Tensor istft_op(const Tensor& spec, int n_fft, int hop, int out_len) {
    check_stft_params(n_fft, hop);
    if (spec.ndim() != 3) throw DimensionError("istft: spec must be [2C, bins, frames]");
    if (spec.dim(0) % 2 != 0) throw DimensionError("istft: plane count must be even");
    const int C = spec.dim(0) / 2;
    const int bins = spec.dim(1);
    const int F = spec.dim(2);
    if (bins != n_fft / 2 + 1) throw DimensionError("istft: bin count does not match n_fft");
    if (out_len < 1 || (out_len + hop - 1) / hop != F)
        throw DimensionError("istft: out_len does not match frame count");
    const StftGeometry geo = stft_geometry(out_len, n_fft, hop);
    const std::vector<float> w = hann_window(n_fft);
    const std::vector<float> wsum = window_square_sum(w, F, hop, geo.padded);

    Tensor out = Tensor::zeros({C, out_len});
    float* po = out.data();
    const float* ps = spec.data();
    parallel_for(C, [&](std::int64_t c0, std::int64_t c1) {
        std::vector<float> acc(static_cast<std::size_t>(geo.padded));
        std::vector<float> re(static_cast<std::size_t>(bins)), im(static_cast<std::size_t>(bins));
        std::vector<float> s(static_cast<std::size_t>(n_fft));
        for (std::int64_t c = c0; c < c1; ++c) {
            std::fill(acc.begin(), acc.end(), 0.0f);
            const float* s_re = ps + ((2 * c) * bins) * F;
            const float* s_im = ps + ((2 * c + 1) * bins) * F;
            for (int m = 0; m < F; ++m) {
                for (int k = 0; k < bins; ++k) {
                    re[static_cast<std::size_t>(k)] = s_re[static_cast<std::size_t>(k) * F + m];
                    im[static_cast<std::size_t>(k)] = s_im[static_cast<std::size_t>(k) * F + m];
                }
                irfft(re.data(), im.data(), n_fft, s.data());
                for (int n = 0; n < n_fft; ++n)
                    acc[static_cast<std::size_t>(m * hop + n)] +=
                        w[static_cast<std::size_t>(n)] * s[static_cast<std::size_t>(n)];
            }
            float* orow = po + c * out_len;
            for (int t = 0; t < out_len; ++t) {
                const float denom = std::max(wsum[static_cast<std::size_t>(geo.left + t)], 1e-8f);
                orow[t] = acc[static_cast<std::size_t>(geo.left + t)] / denom;
            }
        }
    }, 1);

    return autograd_wrap(std::move(out), {spec},
                         [spec, n_fft, hop, out_len, C, bins, F, geo, w, wsum](const Tensor& o) {
        if (!spec.requires_grad()) return;
        const float* g = o.grad_vec().data();
        float* gs = const_cast<Tensor&>(spec).grad_vec().data();
        const float inv_n = 1.0f / static_cast<float>(n_fft);
        parallel_for(C, [&](std::int64_t c0, std::int64_t c1) {
            std::vector<float> dacc(static_cast<std::size_t>(geo.padded));
            std::vector<float> gh(static_cast<std::size_t>(n_fft));
            std::vector<float> re(static_cast<std::size_t>(bins)), im(static_cast<std::size_t>(bins));
            for (std::int64_t c = c0; c < c1; ++c) {
                std::fill(dacc.begin(), dacc.end(), 0.0f);
                const float* grow = g + c * out_len;
                for (int t = 0; t < out_len; ++t) {
                    const float denom = std::max(wsum[static_cast<std::size_t>(geo.left + t)], 1e-8f);
                    dacc[static_cast<std::size_t>(geo.left + t)] = grow[t] / denom;
                }
                float* g_re = gs + ((2 * c) * bins) * F;
                float* g_im = gs + ((2 * c + 1) * bins) * F;
                for (int m = 0; m < F; ++m) {
                    for (int n = 0; n < n_fft; ++n)
                        gh[static_cast<std::size_t>(n)] =
                            w[static_cast<std::size_t>(n)] * dacc[static_cast<std::size_t>(m * hop + n)];
                    rfft(gh.data(), n_fft, re.data(), im.data());
                    for (int k = 0; k < bins; ++k) {
                        const bool endpoint = k == 0 || k == n_fft / 2;
                        const float ck = endpoint ? 1.0f : 2.0f;
                        g_re[static_cast<std::size_t>(k) * F + m] +=
                            ck * inv_n * re[static_cast<std::size_t>(k)];
                        if (!endpoint)
                            g_im[static_cast<std::size_t>(k) * F + m] +=
                                2.0f * inv_n * im[static_cast<std::size_t>(k)];
                    }
                }
            }
        }, 1);
    });
}

Spectrogram stft(const AudioClip& clip, int n_fft, int hop) {
    NoGradGuard ng;
    Tensor stacked = stft_op(clip.samples, n_fft, hop);
    const int C = clip.channels();
    const int bins = stacked.dim(1);
    const int F = stacked.dim(2);
    Spectrogram spec;
    spec.n_fft = n_fft;
    spec.hop = hop;
    spec.sample_rate = clip.sample_rate;
    spec.real = Tensor::zeros({C, bins, F});
    spec.imag = Tensor::zeros({C, bins, F});
    const std::size_t plane = static_cast<std::size_t>(bins) * F;
    for (int c = 0; c < C; ++c) {
        std::copy_n(stacked.data() + (2 * c) * plane, plane, spec.real.data() + c * plane);
        std::copy_n(stacked.data() + (2 * c + 1) * plane, plane, spec.imag.data() + c * plane);
    }
    return spec;
}

AudioClip istft(const Spectrogram& spec, int out_len) {
    if (spec.real.shape() != spec.imag.shape())
        throw DimensionError("istft: real/imag shape mismatch");
    NoGradGuard ng;
    const int C = spec.channels();
    const int bins = spec.bins();
    const int F = spec.frames();
    Tensor stacked = Tensor::zeros({2 * C, bins, F});
    const std::size_t plane = static_cast<std::size_t>(bins) * F;
    for (int c = 0; c < C; ++c) {
        std::copy_n(spec.real.data() + c * plane, plane, stacked.data() + (2 * c) * plane);
        std::copy_n(spec.imag.data() + c * plane, plane, stacked.data() + (2 * c + 1) * plane);
    }
    Tensor wave = istft_op(stacked, spec.n_fft, spec.hop, out_len);
    return AudioClip(std::move(wave), spec.sample_rate);
}

std::vector<double> volume_db_segments(const AudioClip& clip) {
    const int seg = clip.sample_rate;
    const int n_seg = clip.frames() / seg;
    if (n_seg < 1) throw LengthError("volume_db: clip shorter than one second");
    const int C = clip.channels();
    const int T = clip.frames();
    std::vector<double> out(static_cast<std::size_t>(n_seg));
    const float* x = clip.samples.data();
    std::vector<float> scratch(static_cast<std::size_t>(seg) * C);
    for (int s = 0; s < n_seg; ++s) {
        for (int c = 0; c < C; ++c) {
            const float* row = x + static_cast<std::size_t>(c) * T + static_cast<std::size_t>(s) * seg;
            float* dst = scratch.data() + static_cast<std::size_t>(c) * seg;
            for (int i = 0; i < seg; ++i) dst[i] = row[i] * row[i];
        }
        const double power =
            static_cast<double>(reduce_sum(scratch.data(), scratch.size())) / static_cast<double>(scratch.size());
        out[static_cast<std::size_t>(s)] = 10.0 * std::log10(std::max(power, 1e-12));
    }
    return out;
}

Tensor volume_db(const AudioClip& clip) {
    const std::vector<double> segs = volume_db_segments(clip);
    Tensor out = Tensor::zeros({static_cast<int>(segs.size())});
    for (std::size_t i = 0; i < segs.size(); ++i) out.data()[i] = static_cast<float>(segs[i]);
    return out;
}

}  // namespace stemsep
