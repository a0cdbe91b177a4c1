#include "stemsep/fft.hpp"

#include <cmath>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <utility>

#include "stemsep/errors.hpp"

namespace stemsep {

bool is_power_of_two(int n) {
    return n > 0 && (n & (n - 1)) == 0;
}

namespace {

// Twiddle table for size n: (cos, sin) of -2*pi*j/n for j in [0, n/2).
struct Twiddles {
    std::vector<float> cos_v, sin_v;
};

const Twiddles& twiddles_for(int n) {
    static std::mutex mu;
    static std::unordered_map<int, std::unique_ptr<Twiddles>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return *it->second;
    auto tw = std::make_unique<Twiddles>();
    tw->cos_v.resize(static_cast<std::size_t>(n / 2));
    tw->sin_v.resize(static_cast<std::size_t>(n / 2));
    for (int j = 0; j < n / 2; ++j) {
        const double ang = -2.0 * M_PI * j / n;
        tw->cos_v[static_cast<std::size_t>(j)] = static_cast<float>(std::cos(ang));
        tw->sin_v[static_cast<std::size_t>(j)] = static_cast<float>(std::sin(ang));
    }
    auto& ref = *tw;
    cache.emplace(n, std::move(tw));
    return ref;
}

}  // namespace

void fft_inplace(float* re, float* im, int n, bool inverse) {
    if (!is_power_of_two(n)) throw DimensionError("fft: size must be a power of two");
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    const Twiddles& tw = twiddles_for(n);
    for (int len = 2; len <= n; len <<= 1) {
        const int step = n / len;
        for (int i = 0; i < n; i += len) {
            for (int j = 0; j < len / 2; ++j) {
                const float wr = tw.cos_v[static_cast<std::size_t>(j * step)];
                const float wi_fwd = tw.sin_v[static_cast<std::size_t>(j * step)];
                const float wi = inverse ? -wi_fwd : wi_fwd;
                const int a = i + j;
                const int b = a + len / 2;
                const float ur = re[a], ui = im[a];
                const float vr = re[b] * wr - im[b] * wi;
                const float vi = re[b] * wi + im[b] * wr;
                re[a] = ur + vr;
                im[a] = ui + vi;
                re[b] = ur - vr;
                im[b] = ui - vi;
            }
        }
    }
}

void rfft(const float* x, int n, float* out_re, float* out_im) {
    std::vector<float> re(x, x + n), im(static_cast<std::size_t>(n), 0.0f);
    fft_inplace(re.data(), im.data(), n, false);
    for (int k = 0; k <= n / 2; ++k) {
        out_re[k] = re[static_cast<std::size_t>(k)];
        out_im[k] = im[static_cast<std::size_t>(k)];
    }
}

void irfft(const float* re, const float* im, int n, float* out_x) {
    std::vector<float> fr(static_cast<std::size_t>(n)), fi(static_cast<std::size_t>(n));
    fr[0] = re[0];
    fi[0] = 0.0f;
    fr[static_cast<std::size_t>(n / 2)] = re[n / 2];
    fi[static_cast<std::size_t>(n / 2)] = 0.0f;
    for (int k = 1; k < n / 2; ++k) {
        fr[static_cast<std::size_t>(k)] = re[k];
        fi[static_cast<std::size_t>(k)] = im[k];
        fr[static_cast<std::size_t>(n - k)] = re[k];
        fi[static_cast<std::size_t>(n - k)] = -im[k];
    }
    fft_inplace(fr.data(), fi.data(), n, true);
    const float inv = 1.0f / static_cast<float>(n);
    for (int i = 0; i < n; ++i) out_x[i] = fr[static_cast<std::size_t>(i)] * inv;
}

}  // namespace stemsep
