#include "stemsep/sparse_attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "stemsep/rng.hpp"
#include "stemsep/threading.hpp"

namespace stemsep {

SparsityPattern SparsityPattern::full(int n_queries, int n_keys) {
    SparsityPattern p;
    p.n_queries = n_queries;
    p.n_keys = n_keys;
    p.row_offsets.resize(static_cast<std::size_t>(n_queries) + 1);
    p.cols.resize(static_cast<std::size_t>(n_queries) * static_cast<std::size_t>(n_keys));
    for (int q = 0; q <= n_queries; ++q)
        p.row_offsets[static_cast<std::size_t>(q)] = q * n_keys;
    for (int q = 0; q < n_queries; ++q)
        for (int k = 0; k < n_keys; ++k)
            p.cols[static_cast<std::size_t>(q) * n_keys + k] = k;
    return p;
}

bool SparsityPattern::contains(int q, int k) const {
    const auto b = cols.begin() + row_offsets[static_cast<std::size_t>(q)];
    const auto e = cols.begin() + row_offsets[static_cast<std::size_t>(q) + 1];
    return std::binary_search(b, e, k);
}

void LshConfig::validate() const {
    if (rounds < 1) throw ConfigError("lsh: rounds must be >= 1");
    if (buckets_per_round < 2 || (buckets_per_round & (buckets_per_round - 1)) != 0)
        throw ConfigError("lsh: buckets_per_round must be a power of two >= 2");
    if (target_sparsity < 0.0 || target_sparsity >= 1.0)
        throw ConfigError("lsh: target_sparsity must be in [0, 1)");
}

Tensor lsh_match_counts(const Tensor& queries, const Tensor& keys, const LshConfig& cfg,
                        std::uint64_t seed) {
    cfg.validate();
    if (queries.ndim() != 2 || keys.ndim() != 2)
        throw DimensionError("lsh_match_counts: expects rank-2 inputs");
    const int nq = queries.dim(0), nk = keys.dim(0), d = queries.dim(1);
    if (keys.dim(1) != d) throw DimensionError("lsh_match_counts: feature dims disagree");

    int planes = 0;
    for (int b = cfg.buckets_per_round; b > 1; b >>= 1) ++planes;

    Tensor counts = Tensor::zeros({nq, nk});
    float* pc = counts.data();
    const float* pq = queries.data();
    const float* pk = keys.data();
    std::vector<std::uint8_t> qb(static_cast<std::size_t>(nq)), kb(static_cast<std::size_t>(nk));
    std::vector<float> dirs(static_cast<std::size_t>(planes) * static_cast<std::size_t>(d));

    for (int r = 0; r < cfg.rounds; ++r) {
        Rng rng(derive_seed(seed, "lsh_round", static_cast<std::uint64_t>(r)));
        for (int p = 0; p < planes; ++p) {
            float norm2 = 0.0f;
            float* dir = dirs.data() + static_cast<std::size_t>(p) * d;
            for (int j = 0; j < d; ++j) {
                dir[j] = rng.normal();
                norm2 += dir[j] * dir[j];
            }
            const float inv = 1.0f / std::sqrt(std::max(norm2, 1e-20f));
            for (int j = 0; j < d; ++j) dir[j] *= inv;
        }
        auto bucket_of = [&](const float* v) {
            std::uint8_t b = 0;
            for (int p = 0; p < planes; ++p) {
                const float* dir = dirs.data() + static_cast<std::size_t>(p) * d;
                float dot = 0.0f;
                for (int j = 0; j < d; ++j) dot += dir[j] * v[j];
                b = static_cast<std::uint8_t>((b << 1) | (dot > 0.0f ? 1 : 0));
            }
            return b;
        };
        for (int i = 0; i < nq; ++i) qb[static_cast<std::size_t>(i)] = bucket_of(pq + static_cast<std::size_t>(i) * d);
        for (int i = 0; i < nk; ++i) kb[static_cast<std::size_t>(i)] = bucket_of(pk + static_cast<std::size_t>(i) * d);
        parallel_for(nq, [&](std::int64_t q0, std::int64_t q1) {
            for (std::int64_t q = q0; q < q1; ++q) {
                const std::uint8_t bq = qb[static_cast<std::size_t>(q)];
                float* row = pc + q * nk;
                for (int k = 0; k < nk; ++k) row[k] += (kb[static_cast<std::size_t>(k)] == bq) ? 1.0f : 0.0f;
            }
        }, std::max<std::int64_t>(1, 65536 / (nk + 1)));
    }
    return counts;
}

ThresholdResult select_threshold(const Tensor& counts, double target_sparsity) {
    if (counts.ndim() != 2) throw DimensionError("select_threshold: counts must be rank 2");
    if (target_sparsity < 0.0 || target_sparsity >= 1.0)
        throw ConfigError("select_threshold: target must be in [0, 1)");
    const int nq = counts.dim(0), nk = counts.dim(1);
    const std::size_t total = static_cast<std::size_t>(nq) * static_cast<std::size_t>(nk);
    const float* pc = counts.data();

    int max_count = 0;
    for (std::size_t i = 0; i < total; ++i) {
        const int c = static_cast<int>(pc[i]);
        if (c < 0) throw ContractError("select_threshold: negative count");
        max_count = std::max(max_count, c);
    }

    // Keep quota: the largest kept count whose sparsity still reaches target.
    std::size_t quota = static_cast<std::size_t>(
        std::floor((1.0 - target_sparsity) * static_cast<double>(total) + 1e-9));
    quota = std::max<std::size_t>(1, std::min(quota, total));

    // k_min from the cumulative histogram, independent of forced entries.
    std::vector<std::size_t> hist(static_cast<std::size_t>(max_count) + 2, 0);
    for (std::size_t i = 0; i < total; ++i) ++hist[static_cast<std::size_t>(pc[i])];
    int k_min = max_count + 1;
    std::size_t cum = 0;
    for (int c = max_count; c >= 0; --c) {
        if (cum + hist[static_cast<std::size_t>(c)] > quota) break;
        cum += hist[static_cast<std::size_t>(c)];
        k_min = c;
    }

    std::vector<std::uint8_t> kept(total, 0);
    std::size_t kept_n = 0;
    const bool square = nq == nk;
    if (square) {
        // Diagonal is force-kept and occupies quota slots first.
        for (int i = 0; i < nq && kept_n < quota; ++i) {
            kept[static_cast<std::size_t>(i) * nk + i] = 1;
            ++kept_n;
        }
        if (kept_n < static_cast<std::size_t>(nq)) {
            for (int i = static_cast<int>(kept_n); i < nq; ++i) {
                kept[static_cast<std::size_t>(i) * nk + i] = 1;
                ++kept_n;
            }
        }
    }

    // Bucket pairs by count; buckets preserve (q, k) lexicographic order.
    std::vector<std::vector<std::size_t>> by_count(static_cast<std::size_t>(max_count) + 1);
    for (std::size_t i = 0; i < total; ++i)
        by_count[static_cast<std::size_t>(pc[i])].push_back(i);
    for (int c = max_count; c >= 0 && kept_n < quota; --c) {
        for (std::size_t idx : by_count[static_cast<std::size_t>(c)]) {
            if (kept_n >= quota) break;
            if (!kept[idx]) {
                kept[idx] = 1;
                ++kept_n;
            }
        }
    }

    // Empty-row fallback (non-square patterns only: the diagonal already
    // covers every row of a square one). Compensate from the sparsest end so
    // the quota stays exact whenever possible.
    if (!square) {
        for (int q = 0; q < nq; ++q) {
            const std::size_t base = static_cast<std::size_t>(q) * nk;
            bool any = false;
            for (int k = 0; k < nk; ++k) {
                if (kept[base + k]) {
                    any = true;
                    break;
                }
            }
            if (any) continue;
            int best = 0;
            for (int k = 1; k < nk; ++k)
                if (pc[base + k] > pc[base + best]) best = k;
            kept[base + static_cast<std::size_t>(best)] = 1;
            ++kept_n;
            // Drop the lowest-count kept entry of a row that keeps >= 2.
            bool dropped = false;
            for (int c = 0; c <= max_count && !dropped; ++c) {
                const auto& bucket = by_count[static_cast<std::size_t>(c)];
                for (auto it = bucket.rbegin(); it != bucket.rend(); ++it) {
                    const std::size_t idx = *it;
                    if (!kept[idx]) continue;
                    const int row = static_cast<int>(idx / static_cast<std::size_t>(nk));
                    const std::size_t rb = static_cast<std::size_t>(row) * nk;
                    int row_kept = 0;
                    for (int k = 0; k < nk; ++k) row_kept += kept[rb + k];
                    if (row_kept >= 2) {
                        kept[idx] = 0;
                        --kept_n;
                        dropped = true;
                        break;
                    }
                }
            }
        }
    }

    ThresholdResult res;
    res.k_min = k_min;
    res.pattern.n_queries = nq;
    res.pattern.n_keys = nk;
    res.pattern.row_offsets.resize(static_cast<std::size_t>(nq) + 1, 0);
    res.pattern.cols.reserve(kept_n);
    for (int q = 0; q < nq; ++q) {
        const std::size_t base = static_cast<std::size_t>(q) * nk;
        for (int k = 0; k < nk; ++k)
            if (kept[base + k]) res.pattern.cols.push_back(k);
        res.pattern.row_offsets[static_cast<std::size_t>(q) + 1] =
            static_cast<int>(res.pattern.cols.size());
    }
    return res;
}

namespace {

// Shared kernel for dense and pattern-masked attention. q [H,Nq,d],
// k [H,Nk,d], v [H,Nk,dv]; the pattern (if any) is shared across heads.
Tensor attention_impl(const Tensor& q, const Tensor& k, const Tensor& v,
                      const SparsityPattern* pattern, float scale) {
    const bool rank2 = q.ndim() == 2;
    const Tensor q3 = rank2 ? reshape(q, {1, q.dim(0), q.dim(1)}) : q;
    const Tensor k3 = rank2 ? reshape(k, {1, k.dim(0), k.dim(1)}) : k;
    const Tensor v3 = rank2 ? reshape(v, {1, v.dim(0), v.dim(1)}) : v;
    if (q3.ndim() != 3 || k3.ndim() != 3 || v3.ndim() != 3)
        throw DimensionError("attention: inputs must be rank 2 or 3");
    const int H = q3.dim(0), Nq = q3.dim(1), d = q3.dim(2);
    const int Nk = k3.dim(1), dv = v3.dim(2);
    if (k3.dim(0) != H || v3.dim(0) != H || k3.dim(2) != d || v3.dim(1) != Nk)
        throw DimensionError("attention: shape mismatch");
    if (pattern && (pattern->n_queries != Nq || pattern->n_keys != Nk))
        throw DimensionError("attention: pattern shape mismatch");

    // Probabilities stored per kept entry (CSR-aligned) per head.
    const std::size_t row_total =
        pattern ? pattern->kept_count() : static_cast<std::size_t>(Nq) * Nk;
    auto probs = std::make_shared<std::vector<float>>(static_cast<std::size_t>(H) * row_total);

    Tensor out = Tensor::zeros({H, Nq, dv});
    const float* pq = q3.data();
    const float* pk = k3.data();
    const float* pv = v3.data();
    float* po = out.data();

    parallel_for(static_cast<std::int64_t>(H) * Nq, [&](std::int64_t r0, std::int64_t r1) {
        std::vector<float> logits(static_cast<std::size_t>(Nk));
        for (std::int64_t r = r0; r < r1; ++r) {
            const int h = static_cast<int>(r / Nq);
            const int i = static_cast<int>(r % Nq);
            const float* qi = pq + (static_cast<std::size_t>(h) * Nq + i) * d;
            const float* kh = pk + static_cast<std::size_t>(h) * Nk * d;
            const float* vh = pv + static_cast<std::size_t>(h) * Nk * dv;
            float* oi = po + (static_cast<std::size_t>(h) * Nq + i) * dv;
            const int begin = pattern ? pattern->row_offsets[static_cast<std::size_t>(i)] : 0;
            const int end = pattern ? pattern->row_offsets[static_cast<std::size_t>(i) + 1] : Nk;
            if (begin == end) throw DegenerateRowError("attention: query row keeps no keys");
            float mx = -std::numeric_limits<float>::infinity();
            for (int e = begin; e < end; ++e) {
                const int j = pattern ? pattern->cols[static_cast<std::size_t>(e)] : e;
                const float* kj = kh + static_cast<std::size_t>(j) * d;
                float dot = 0.0f;
                for (int c = 0; c < d; ++c) dot += qi[c] * kj[c];
                logits[static_cast<std::size_t>(e - begin)] = dot * scale;
                mx = std::max(mx, dot * scale);
            }
            float denom = 0.0f;
            for (int e = begin; e < end; ++e) {
                const float ev = std::exp(logits[static_cast<std::size_t>(e - begin)] - mx);
                logits[static_cast<std::size_t>(e - begin)] = ev;
                denom += ev;
            }
            const std::size_t row_base =
                pattern ? static_cast<std::size_t>(begin) : static_cast<std::size_t>(i) * Nk;
            float* prow = probs->data() + static_cast<std::size_t>(h) * row_total + row_base;
            const float inv = 1.0f / denom;
            for (int e = begin; e < end; ++e) {
                const float p = logits[static_cast<std::size_t>(e - begin)] * inv;
                prow[e - begin] = p;
                const int j = pattern ? pattern->cols[static_cast<std::size_t>(e)] : e;
                const float* vj = vh + static_cast<std::size_t>(j) * dv;
                for (int c = 0; c < dv; ++c) oi[c] += p * vj[c];
            }
        }
    }, std::max<std::int64_t>(1, 16384 / (static_cast<std::int64_t>(Nk) * (d + dv) + 1)));

    SparsityPattern pat_copy;
    const bool has_pattern = pattern != nullptr;
    if (has_pattern) pat_copy = *pattern;
    Tensor out3 = autograd_wrap(
        std::move(out), {q3, k3, v3},
        [q3, k3, v3, probs, pat_copy, has_pattern, H, Nq, Nk, d, dv, scale,
         row_total](const Tensor& o) {
            const float* g = o.grad_vec().data();
            const float* pq2 = q3.data();
            const float* pk2 = k3.data();
            const float* pv2 = v3.data();
            float* gq = q3.requires_grad() ? const_cast<Tensor&>(q3).grad_vec().data() : nullptr;
            float* gk = k3.requires_grad() ? const_cast<Tensor&>(k3).grad_vec().data() : nullptr;
            float* gv = v3.requires_grad() ? const_cast<Tensor&>(v3).grad_vec().data() : nullptr;
            parallel_for(H, [&](std::int64_t h0, std::int64_t h1) {
                std::vector<float> ds(static_cast<std::size_t>(Nk));
                for (std::int64_t h = h0; h < h1; ++h) {
                    const float* kh = pk2 + static_cast<std::size_t>(h) * Nk * d;
                    const float* vh = pv2 + static_cast<std::size_t>(h) * Nk * dv;
                    for (int i = 0; i < Nq; ++i) {
                        const int begin =
                            has_pattern ? pat_copy.row_offsets[static_cast<std::size_t>(i)] : 0;
                        const int end =
                            has_pattern ? pat_copy.row_offsets[static_cast<std::size_t>(i) + 1] : Nk;
                        const float* gi = g + (static_cast<std::size_t>(h) * Nq + i) * dv;
                        const std::size_t row_base = has_pattern ? static_cast<std::size_t>(begin)
                                                                 : static_cast<std::size_t>(i) * Nk;
                        const float* prow =
                            probs->data() + static_cast<std::size_t>(h) * row_total + row_base;
                        const float* qi = pq2 + (static_cast<std::size_t>(h) * Nq + i) * d;
                        float sum_pdp = 0.0f;
                        for (int e = begin; e < end; ++e) {
                            const int j = has_pattern ? pat_copy.cols[static_cast<std::size_t>(e)] : e;
                            const float* vj = vh + static_cast<std::size_t>(j) * dv;
                            float dp = 0.0f;
                            for (int c = 0; c < dv; ++c) dp += gi[c] * vj[c];
                            ds[static_cast<std::size_t>(e - begin)] = dp;
                            sum_pdp += prow[e - begin] * dp;
                        }
                        for (int e = begin; e < end; ++e) {
                            const int j = has_pattern ? pat_copy.cols[static_cast<std::size_t>(e)] : e;
                            const float p = prow[e - begin];
                            const float dlogit = p * (ds[static_cast<std::size_t>(e - begin)] - sum_pdp);
                            if (gv) {
                                float* gvj = gv + (static_cast<std::size_t>(h) * Nk + j) * dv;
                                for (int c = 0; c < dv; ++c) gvj[c] += p * gi[c];
                            }
                            if (gq) {
                                const float* kj = kh + static_cast<std::size_t>(j) * d;
                                float* gqi = gq + (static_cast<std::size_t>(h) * Nq + i) * d;
                                for (int c = 0; c < d; ++c) gqi[c] += scale * dlogit * kj[c];
                            }
                            if (gk) {
                                float* gkj = gk + (static_cast<std::size_t>(h) * Nk + j) * d;
                                for (int c = 0; c < d; ++c) gkj[c] += scale * dlogit * qi[c];
                            }
                        }
                    }
                }
            }, 1);
        });
    return rank2 ? reshape(out3, {Nq, dv}) : out3;
}

}  // namespace

Tensor sparse_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const SparsityPattern& pattern, float scale) {
    return attention_impl(q, k, v, &pattern, scale);
}

Tensor dense_attention(const Tensor& q, const Tensor& k, const Tensor& v, float scale) {
    return attention_impl(q, k, v, nullptr, scale);
}

}  // namespace stemsep
