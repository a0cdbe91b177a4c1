#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace stemsep {

// All randomness flows through this wrapper. std::mt19937 is fully specified
// by the standard and the float/int mappings below are our own, so seeded
// runs are bit-reproducible across platforms and compilers.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(static_cast<std::uint32_t>(seed ^ (seed >> 32))) {}

    std::uint32_t next() { return gen_(); }

    // [0, 1) with 24 bits of mantissa.
    float uniform() { return static_cast<float>(gen_() >> 8) * 0x1p-24f; }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller with a cached spare.
    float normal();

    // [0, n), n >= 1. Fixed-point multiply, no modulo bias worth caring about
    // at these sizes and fully deterministic.
    int below(int n) {
        return static_cast<int>((static_cast<std::uint64_t>(gen_()) * static_cast<std::uint64_t>(n)) >> 32);
    }

    // In-place Fisher-Yates. Mirrored by the seeded-shuffle oracle in tests.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            const int j = below(i + 1);
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
        }
    }

  private:
    std::mt19937 gen_;
    bool has_spare_ = false;
    float spare_ = 0.0f;
};

// Stable per-purpose seed derivation (FNV-1a over tag and index).
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index = 0);

}  // namespace stemsep
