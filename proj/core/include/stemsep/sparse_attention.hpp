#pragma once

#include <cstdint>
#include <vector>

#include "stemsep/tensor.hpp"

namespace stemsep {

// Keep-mask over (query, key) pairs, CSR layout with per-row sorted key
// indices. Every query row keeps at least one key.
struct SparsityPattern {
    int n_queries = 0;
    int n_keys = 0;
    std::vector<int> row_offsets;  // size n_queries + 1
    std::vector<int> cols;

    static SparsityPattern full(int n_queries, int n_keys);

    std::size_t kept_count() const { return cols.size(); }
    double sparsity() const {
        return 1.0 - static_cast<double>(cols.size()) /
                         (static_cast<double>(n_queries) * static_cast<double>(n_keys));
    }
    bool contains(int q, int k) const;
};

struct LshConfig {
    int rounds = 32;
    int buckets_per_round = 4;  // power of two; realized by log2 hyperplanes
    double target_sparsity = 0.90;

    void validate() const;
    bool operator==(const LshConfig&) const = default;
};

// count[q,k] = number of rounds in which query q and key k hash to the same
// bucket. Each round draws fresh random unit directions; with 4 buckets the
// bucket id is 2*sign+(r1.v) + sign+(r2.v). Deterministic under `seed`.
// Counts are small integers stored exactly in float32.
Tensor lsh_match_counts(const Tensor& queries, const Tensor& keys, const LshConfig& cfg,
                        std::uint64_t seed);

// Smallest threshold whose keep-set {count >= k_min} is at least
// `target_sparsity` sparse, then an exact-quota pattern: the diagonal (when
// square) is kept first, the rest fills by (count desc, lexicographic) order
// up to floor((1-target) * Nq * Nk) entries. Empty rows fall back to their
// top-count key.
struct ThresholdResult {
    int k_min = 0;
    SparsityPattern pattern;
};
ThresholdResult select_threshold(const Tensor& counts, double target_sparsity);

// softmax over kept logits only, then the weighted sum of values.
// q [Nq,d] or [H,Nq,d]; k/v [Nk,d]/[Nk,dv] or [H,...]; the pattern is shared
// across heads. Differentiable.
Tensor sparse_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const SparsityPattern& pattern, float scale);
Tensor dense_attention(const Tensor& q, const Tensor& k, const Tensor& v, float scale);

}  // namespace stemsep
