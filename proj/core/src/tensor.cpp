#include "stemsep/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <unordered_set>

#include "stemsep/sparse_attention.hpp"
#include "stemsep/threading.hpp"

namespace stemsep {

namespace {

thread_local bool g_grad_enabled = true;

std::size_t checked_numel(const std::vector<int>& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("tensor dimensions must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::vector<std::size_t> row_major_strides(const std::vector<int>& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] =
            s[static_cast<std::size_t>(i) + 1] * static_cast<std::size_t>(shape[static_cast<std::size_t>(i) + 1]);
    }
    return s;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) throw DimensionError(std::string(op) + ": shape mismatch");
}

// Splits a shape at `axis` into [outer, n_axis, inner].
struct AxisSplit {
    std::size_t outer, n, inner;
};
AxisSplit split_at(const std::vector<int>& shape, int axis) {
    if (axis < 0 || axis >= static_cast<int>(shape.size()))
        throw DimensionError("axis out of range");
    AxisSplit s{1, static_cast<std::size_t>(shape[static_cast<std::size_t>(axis)]), 1};
    for (int i = 0; i < axis; ++i) s.outer *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
    for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i)
        s.inner *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
    return s;
}

}  // namespace

std::size_t Tensor::numel() const {
    return data_ ? data_->size() : 0;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    Tensor t;
    const std::size_t n = checked_numel(shape);
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<float>>(n, 0.0f);
    t.requires_grad_ = requires_grad;
    // Grad storage is allocated as soon as a tensor requires it so that every
    // shallow copy (including those captured inside backprop closures) shares
    // the same buffer.
    if (requires_grad) t.ensure_grad();
    return t;
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.data_->begin(), t.data_->end(), value);
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> values, bool requires_grad) {
    const std::size_t n = checked_numel(shape);
    if (n != values.size()) throw DimensionError("from_data: shape does not match value count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<float>>(std::move(values));
    t.requires_grad_ = requires_grad;
    if (requires_grad) t.ensure_grad();
    return t;
}

Tensor Tensor::scalar(float value) {
    return from_data({1}, {value});
}

Tensor Tensor::rand_uniform(std::vector<int> shape, float lo, float hi, Rng& rng,
                            bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (float& v : *t.data_) v = rng.uniform(lo, hi);
    return t;
}

Tensor Tensor::rand_normal(std::vector<int> shape, float mean, float stddev, Rng& rng,
                           bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (float& v : *t.data_) v = mean + stddev * rng.normal();
    return t;
}

float Tensor::item() const {
    if (numel() != 1) throw ContractError("item: tensor is not a scalar");
    return (*data_)[0];
}

float Tensor::at(std::initializer_list<int> idx) const {
    if (idx.size() != shape_.size()) throw DimensionError("at: index rank mismatch");
    const auto strides = row_major_strides(shape_);
    std::size_t off = 0;
    std::size_t k = 0;
    for (int i : idx) {
        if (i < 0 || i >= shape_[k]) throw DimensionError("at: index out of range");
        off += static_cast<std::size_t>(i) * strides[k];
        ++k;
    }
    return (*data_)[off];
}

void Tensor::ensure_grad() {
    if (!data_) throw ContractError("ensure_grad on undefined tensor");
    if (!grad_) grad_ = std::make_shared<std::vector<float>>(data_->size(), 0.0f);
}

void Tensor::zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0f);
}

Tensor Tensor::grad_tensor() const {
    if (!grad_) throw ContractError("grad_tensor: no grad allocated");
    Tensor t;
    t.shape_ = shape_;
    t.data_ = grad_;
    return t;
}

Tensor Tensor::detach() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

Tensor autograd_wrap(Tensor out, std::vector<Tensor> parents,
                     std::function<void(const Tensor&)> backprop) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    if (g_grad_enabled && rg) {
        out.requires_grad_ = true;
        out.ensure_grad();
        out.node_ = std::make_shared<AutogradNode>();
        out.node_->parents = std::move(parents);
        out.node_->backprop = std::move(backprop);
    }
    return out;
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw ContractError("backward: loss must be a scalar");
    if (!loss.requires_grad() || !loss.node_)
        throw ContractError("backward: loss is not connected to any tensor with requires_grad");

    // Post-order DFS over tape nodes; `order` ends with the loss.
    std::vector<Tensor> order;
    std::unordered_set<AutogradNode*> visited;
    struct Frame {
        Tensor t;
        std::size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({loss, 0});
    visited.insert(loss.node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        const auto& parents = f.t.node()->parents;
        bool descended = false;
        while (f.next < parents.size()) {
            const Tensor& p = parents[f.next];
            ++f.next;
            if (p.node() && !visited.count(p.node().get())) {
                visited.insert(p.node().get());
                stack.push_back({p, 0});
                descended = true;
                break;
            }
        }
        if (descended) continue;
        order.push_back(stack.back().t);
        stack.pop_back();
    }

    const_cast<Tensor&>(loss).ensure_grad();
    loss.grad_->at(0) += 1.0f;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor& t = *it;
        for (auto& p : t.node()->parents) {
            if (p.requires_grad()) const_cast<Tensor&>(p).ensure_grad();
        }
        t.node()->backprop(t);
    }
}

float reduce_sum(const float* v, std::size_t n) {
    if (n <= 16) {
        float s = 0.0f;
        for (std::size_t i = 0; i < n; ++i) s += v[i];
        return s;
    }
    const std::size_t h = n / 2;
    return reduce_sum(v, h) + reduce_sum(v + h, n - h);
}

float tensor_mean(const Tensor& t) {
    return reduce_sum(t.data(), t.numel()) / static_cast<float>(t.numel());
}

float tensor_std(const Tensor& t) {
    const float m = tensor_mean(t);
    std::vector<float> sq(t.numel());
    const float* x = t.data();
    for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = (x[i] - m) * (x[i] - m);
    return std::sqrt(reduce_sum(sq.data(), sq.size()) / static_cast<float>(sq.size()));
}

float tensor_max_abs(const Tensor& t) {
    float m = 0.0f;
    for (float v : t.vec()) m = std::max(m, std::fabs(v));
    return m;
}

bool tensor_all_finite(const Tensor& t) {
    for (float v : t.vec()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    return autograd_wrap(std::move(out), {a, b}, [a, b](const Tensor& o) {
        const std::size_t m = o.numel();
        const float* g = o.grad_vec().data();
        if (a.requires_grad()) {
            float* ga = const_cast<Tensor&>(a).grad_vec().data();
            for (std::size_t i = 0; i < m; ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            float* gb = const_cast<Tensor&>(b).grad_vec().data();
            for (std::size_t i = 0; i < m; ++i) gb[i] += g[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    return autograd_wrap(std::move(out), {a, b}, [a, b](const Tensor& o) {
        const std::size_t m = o.numel();
        const float* g = o.grad_vec().data();
        if (a.requires_grad()) {
            float* ga = const_cast<Tensor&>(a).grad_vec().data();
            for (std::size_t i = 0; i < m; ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            float* gb = const_cast<Tensor&>(b).grad_vec().data();
            for (std::size_t i = 0; i < m; ++i) gb[i] -= g[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    return autograd_wrap(std::move(out), {a, b}, [a, b](const Tensor& o) {
        const std::size_t m = o.numel();
        const float* g = o.grad_vec().data();
        const float* pa2 = a.data();
        const float* pb2 = b.data();
        if (a.requires_grad()) {
            float* ga = const_cast<Tensor&>(a).grad_vec().data();
            for (std::size_t i = 0; i < m; ++i) ga[i] += g[i] * pb2[i];
        }
        if (b.requires_grad()) {
            float* gb = const_cast<Tensor&>(b).grad_vec().data();
            for (std::size_t i = 0; i < m; ++i) gb[i] += g[i] * pa2[i];
        }
    });
}

Tensor scale(const Tensor& a, float s) {
    Tensor out = Tensor::zeros(a.shape());
    const float* pa = a.data();
    float* po = out.data();
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * s;
    return autograd_wrap(std::move(out), {a}, [a, s](const Tensor& o) {
        if (!a.requires_grad()) return;
        const std::size_t m = o.numel();
        const float* g = o.grad_vec().data();
        float* ga = const_cast<Tensor&>(a).grad_vec().data();
        for (std::size_t i = 0; i < m; ++i) ga[i] += g[i] * s;
    });
}

Tensor affine_const(const Tensor& a, float mul, float add) {
    Tensor out = Tensor::zeros(a.shape());
    const float* pa = a.data();
    float* po = out.data();
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * mul + add;
    return autograd_wrap(std::move(out), {a}, [a, mul](const Tensor& o) {
        if (!a.requires_grad()) return;
        const std::size_t m = o.numel();
        const float* g = o.grad_vec().data();
        float* ga = const_cast<Tensor&>(a).grad_vec().data();
        for (std::size_t i = 0; i < m; ++i) ga[i] += g[i] * mul;
    });
}

Tensor abs(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const float* pa = a.data();
    float* po = out.data();
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = std::fabs(pa[i]);
    return autograd_wrap(std::move(out), {a}, [a](const Tensor& o) {
        if (!a.requires_grad()) return;
        const std::size_t m = o.numel();
        const float* g = o.grad_vec().data();
        const float* pa2 = a.data();
        float* ga = const_cast<Tensor&>(a).grad_vec().data();
        for (std::size_t i = 0; i < m; ++i) {
            const float s = pa2[i] > 0.0f ? 1.0f : (pa2[i] < 0.0f ? -1.0f : 0.0f);
            ga[i] += g[i] * s;
        }
    });
}

Tensor mul_lastdim(const Tensor& x, const Tensor& s) {
    if (s.ndim() != 1 || s.dim(0) != x.shape().back())
        throw DimensionError("mul_lastdim: scale must span the last axis");
    Tensor out = Tensor::zeros(x.shape());
    const std::size_t d = static_cast<std::size_t>(s.dim(0));
    const std::size_t rows = x.numel() / d;
    const float* px = x.data();
    const float* ps = s.data();
    float* po = out.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) po[r * d + j] = px[r * d + j] * ps[j];
    return autograd_wrap(std::move(out), {x, s}, [x, s, rows, d](const Tensor& o) {
        const float* g = o.grad_vec().data();
        if (x.requires_grad()) {
            float* gx = const_cast<Tensor&>(x).grad_vec().data();
            const float* ps2 = s.data();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += g[r * d + j] * ps2[j];
        }
        if (s.requires_grad()) {
            float* gs = const_cast<Tensor&>(s).grad_vec().data();
            const float* px2 = x.data();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) gs[j] += g[r * d + j] * px2[r * d + j];
        }
    });
}

Tensor gelu(const Tensor& x) {
    constexpr float kInvSqrt2 = 0.7071067811865475f;
    constexpr float kInvSqrt2Pi = 0.3989422804014327f;
    Tensor out = Tensor::zeros(x.shape());
    const float* px = x.data();
    float* po = out.data();
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) {
        const float cdf = 0.5f * (1.0f + std::erf(px[i] * kInvSqrt2));
        po[i] = px[i] * cdf;
    }
    return autograd_wrap(std::move(out), {x}, [x](const Tensor& o) {
        if (!x.requires_grad()) return;
        const std::size_t m = o.numel();
        const float* g = o.grad_vec().data();
        const float* px2 = x.data();
        float* gx = const_cast<Tensor&>(x).grad_vec().data();
        for (std::size_t i = 0; i < m; ++i) {
            const float v = px2[i];
            const float cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2));
            const float pdf = kInvSqrt2Pi * std::exp(-0.5f * v * v);
            gx[i] += g[i] * (cdf + v * pdf);
        }
    });
}

Tensor glu(const Tensor& x, int axis) {
    const AxisSplit sp = split_at(x.shape(), axis);
    if (sp.n % 2 != 0) throw DimensionError("glu: gated axis must have even size");
    std::vector<int> oshape = x.shape();
    oshape[static_cast<std::size_t>(axis)] = static_cast<int>(sp.n / 2);
    Tensor out = Tensor::zeros(oshape);
    const std::size_t half = sp.n / 2;
    const float* px = x.data();
    float* po = out.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
        const float* xa = px + o * sp.n * sp.inner;
        const float* xg = xa + half * sp.inner;
        float* y = po + o * half * sp.inner;
        for (std::size_t c = 0; c < half * sp.inner; ++c) {
            const float sig = 1.0f / (1.0f + std::exp(-xg[c]));
            y[c] = xa[c] * sig;
        }
    }
    return autograd_wrap(std::move(out), {x}, [x, sp, half](const Tensor& o) {
        if (!x.requires_grad()) return;
        const float* g = o.grad_vec().data();
        const float* px2 = x.data();
        float* gx = const_cast<Tensor&>(x).grad_vec().data();
        for (std::size_t ot = 0; ot < sp.outer; ++ot) {
            const float* xa = px2 + ot * sp.n * sp.inner;
            const float* xg = xa + half * sp.inner;
            float* ga = gx + ot * sp.n * sp.inner;
            float* gg = ga + half * sp.inner;
            const float* gy = g + ot * half * sp.inner;
            for (std::size_t c = 0; c < half * sp.inner; ++c) {
                const float sig = 1.0f / (1.0f + std::exp(-xg[c]));
                ga[c] += gy[c] * sig;
                gg[c] += gy[c] * xa[c] * sig * (1.0f - sig);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// matmul / linear
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) throw DimensionError("matmul: expects rank-2 tensors");
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) throw DimensionError("matmul: inner dimensions disagree");
    Tensor out = Tensor::zeros({m, n});
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    const std::int64_t grain = std::max<std::int64_t>(1, 65536 / (static_cast<std::int64_t>(k) * n + 1));
    parallel_for(m, [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i) {
            float* orow = po + i * n;
            for (int kk = 0; kk < k; ++kk) {
                const float av = pa[i * k + kk];
                const float* brow = pb + static_cast<std::size_t>(kk) * n;
                for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    }, grain);
    return autograd_wrap(std::move(out), {a, b}, [a, b, m, k, n](const Tensor& o) {
        const float* g = o.grad_vec().data();
        if (a.requires_grad()) {
            float* ga = const_cast<Tensor&>(a).grad_vec().data();
            const float* pb2 = b.data();
            // da[i,kk] = sum_j g[i,j] * b[kk,j]
            parallel_for(m, [&](std::int64_t i0, std::int64_t i1) {
                for (std::int64_t i = i0; i < i1; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        const float* grow = g + i * n;
                        const float* brow = pb2 + static_cast<std::size_t>(kk) * n;
                        float acc = 0.0f;
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[i * k + kk] += acc;
                    }
            }, std::max<std::int64_t>(1, 65536 / (static_cast<std::int64_t>(k) * n + 1)));
        }
        if (b.requires_grad()) {
            float* gb = const_cast<Tensor&>(b).grad_vec().data();
            const float* pa2 = a.data();
            // db[kk,j] = sum_i a[i,kk] * g[i,j]
            parallel_for(k, [&](std::int64_t k0, std::int64_t k1) {
                for (std::int64_t kk = k0; kk < k1; ++kk) {
                    float* brow = gb + kk * n;
                    for (int i = 0; i < m; ++i) {
                        const float av = pa2[static_cast<std::size_t>(i) * k + kk];
                        const float* grow = g + static_cast<std::size_t>(i) * n;
                        for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
                    }
                }
            }, std::max<std::int64_t>(1, 65536 / (static_cast<std::int64_t>(m) * n + 1)));
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.ndim() != 2 || w.ndim() != 2) throw DimensionError("linear: expects rank-2 tensors");
    const int rows = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    if (w.dim(1) != in) throw DimensionError("linear: weight fan-in mismatch");
    if (b.defined() && (b.ndim() != 1 || b.dim(0) != out_dim))
        throw DimensionError("linear: bias shape mismatch");
    Tensor out = Tensor::zeros({rows, out_dim});
    const float* px = x.data();
    const float* pw = w.data();
    const float* pbias = b.defined() ? b.data() : nullptr;
    float* po = out.data();
    const std::int64_t grain =
        std::max<std::int64_t>(1, 65536 / (static_cast<std::int64_t>(in) * out_dim + 1));
    parallel_for(rows, [&](std::int64_t r0, std::int64_t r1) {
        for (std::int64_t r = r0; r < r1; ++r) {
            const float* xrow = px + r * in;
            float* orow = po + r * out_dim;
            for (int o = 0; o < out_dim; ++o) {
                const float* wrow = pw + static_cast<std::size_t>(o) * in;
                float acc = pbias ? pbias[o] : 0.0f;
                for (int i = 0; i < in; ++i) acc += xrow[i] * wrow[i];
                orow[o] = acc;
            }
        }
    }, grain);
    return autograd_wrap(std::move(out), {x, w, b.defined() ? b : Tensor::zeros({1})},
                         [x, w, b, rows, in, out_dim](const Tensor& o) {
        const float* g = o.grad_vec().data();
        if (x.requires_grad()) {
            float* gx = const_cast<Tensor&>(x).grad_vec().data();
            const float* pw2 = w.data();
            parallel_for(rows, [&](std::int64_t r0, std::int64_t r1) {
                for (std::int64_t r = r0; r < r1; ++r) {
                    const float* grow = g + r * out_dim;
                    float* gxrow = gx + r * in;
                    for (int o = 0; o < out_dim; ++o) {
                        const float gv = grow[o];
                        const float* wrow = pw2 + static_cast<std::size_t>(o) * in;
                        for (int i = 0; i < in; ++i) gxrow[i] += gv * wrow[i];
                    }
                }
            }, std::max<std::int64_t>(1, 65536 / (static_cast<std::int64_t>(in) * out_dim + 1)));
        }
        if (w.requires_grad()) {
            float* gw = const_cast<Tensor&>(w).grad_vec().data();
            const float* px2 = x.data();
            parallel_for(out_dim, [&](std::int64_t o0, std::int64_t o1) {
                for (std::int64_t o = o0; o < o1; ++o) {
                    float* gwrow = gw + o * in;
                    for (int r = 0; r < rows; ++r) {
                        const float gv = g[static_cast<std::size_t>(r) * out_dim + o];
                        const float* xrow = px2 + static_cast<std::size_t>(r) * in;
                        for (int i = 0; i < in; ++i) gwrow[i] += gv * xrow[i];
                    }
                }
            }, std::max<std::int64_t>(1, 65536 / (static_cast<std::int64_t>(rows) * in + 1)));
        }
        if (b.defined() && b.requires_grad()) {
            float* gb = const_cast<Tensor&>(b).grad_vec().data();
            for (int r = 0; r < rows; ++r)
                for (int o = 0; o < out_dim; ++o)
                    gb[o] += g[static_cast<std::size_t>(r) * out_dim + o];
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& w) {
    return linear(x, w, Tensor());
}

// ---------------------------------------------------------------------------
// conv1d / conv1d_transpose
// ---------------------------------------------------------------------------

namespace {

Tensor conv1d_3d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding) {
    const int B = x.dim(0), Cin = x.dim(1), L = x.dim(2);
    const int Cout = w.dim(0), K = w.dim(2);
    if (w.dim(1) != Cin) throw DimensionError("conv1d: channel mismatch");
    if (K < 1 || stride < 1 || padding < 0) throw DimensionError("conv1d: bad geometry");
    const int Lout = (L + 2 * padding - K) / stride + 1;
    if (L + 2 * padding < K || Lout < 1) throw DimensionError("conv1d: output length < 1");
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != Cout))
        throw DimensionError("conv1d: bias shape mismatch");

    Tensor out = Tensor::zeros({B, Cout, Lout});
    const float* px = x.data();
    const float* pw = w.data();
    const float* pb = bias.defined() ? bias.data() : nullptr;
    float* po = out.data();
    const std::int64_t rows = static_cast<std::int64_t>(B) * Cout;
    const std::int64_t grain =
        std::max<std::int64_t>(1, 65536 / (static_cast<std::int64_t>(Lout) * Cin * K + 1));
    parallel_for(rows, [&](std::int64_t r0, std::int64_t r1) {
        for (std::int64_t r = r0; r < r1; ++r) {
            const int b = static_cast<int>(r / Cout);
            const int oc = static_cast<int>(r % Cout);
            float* orow = po + r * Lout;
            for (int t = 0; t < Lout; ++t) {
                float acc = pb ? pb[oc] : 0.0f;
                const int base = t * stride - padding;
                for (int ic = 0; ic < Cin; ++ic) {
                    const float* xrow = px + (static_cast<std::size_t>(b) * Cin + ic) * L;
                    const float* wrow = pw + (static_cast<std::size_t>(oc) * Cin + ic) * K;
                    const int k0 = std::max(0, -base);
                    const int k1 = std::min(K, L - base);
                    for (int k = k0; k < k1; ++k) acc += wrow[k] * xrow[base + k];
                }
                orow[t] = acc;
            }
        }
    }, grain);

    return autograd_wrap(std::move(out), {x, w, bias.defined() ? bias : Tensor::zeros({1})},
                         [x, w, bias, B, Cin, Cout, L, Lout, K, stride, padding](const Tensor& o) {
        const float* g = o.grad_vec().data();
        if (x.requires_grad()) {
            float* gx = const_cast<Tensor&>(x).grad_vec().data();
            const float* pw2 = w.data();
            const std::int64_t n = static_cast<std::int64_t>(B) * Cin;
            parallel_for(n, [&](std::int64_t r0, std::int64_t r1) {
                for (std::int64_t r = r0; r < r1; ++r) {
                    const int b = static_cast<int>(r / Cin);
                    const int ic = static_cast<int>(r % Cin);
                    float* gxrow = gx + r * L;
                    for (int oc = 0; oc < Cout; ++oc) {
                        const float* grow = g + (static_cast<std::size_t>(b) * Cout + oc) * Lout;
                        const float* wrow = pw2 + (static_cast<std::size_t>(oc) * Cin + ic) * K;
                        for (int t = 0; t < Lout; ++t) {
                            const float gv = grow[t];
                            if (gv == 0.0f) continue;
                            const int base = t * stride - padding;
                            const int k0 = std::max(0, -base);
                            const int k1 = std::min(K, L - base);
                            for (int k = k0; k < k1; ++k) gxrow[base + k] += gv * wrow[k];
                        }
                    }
                }
            }, std::max<std::int64_t>(1, 65536 / (static_cast<std::int64_t>(Lout) * Cout * K + 1)));
        }
        if (w.requires_grad()) {
            float* gw = const_cast<Tensor&>(w).grad_vec().data();
            const float* px2 = x.data();
            parallel_for(Cout, [&](std::int64_t o0, std::int64_t o1) {
                for (std::int64_t oc = o0; oc < o1; ++oc)
                    for (int b = 0; b < B; ++b) {
                        const float* grow = g + (static_cast<std::size_t>(b) * Cout + oc) * Lout;
                        for (int ic = 0; ic < Cin; ++ic) {
                            const float* xrow = px2 + (static_cast<std::size_t>(b) * Cin + ic) * L;
                            float* gwrow = gw + (static_cast<std::size_t>(oc) * Cin + ic) * K;
                            for (int t = 0; t < Lout; ++t) {
                                const float gv = grow[t];
                                if (gv == 0.0f) continue;
                                const int base = t * stride - padding;
                                const int k0 = std::max(0, -base);
                                const int k1 = std::min(K, L - base);
                                for (int k = k0; k < k1; ++k) gwrow[k] += gv * xrow[base + k];
                            }
                        }
                    }
            }, 1);
        }
        if (bias.defined() && bias.requires_grad()) {
            float* gb = const_cast<Tensor&>(bias).grad_vec().data();
            for (int b = 0; b < B; ++b)
                for (int oc = 0; oc < Cout; ++oc) {
                    const float* grow = g + (static_cast<std::size_t>(b) * Cout + oc) * Lout;
                    gb[oc] += reduce_sum(grow, static_cast<std::size_t>(Lout));
                }
        }
    });
}

Tensor conv1d_transpose_3d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
                           int padding) {
    const int B = x.dim(0), Cin = x.dim(1), L = x.dim(2);
    const int Cout = w.dim(1), K = w.dim(2);
    if (w.dim(0) != Cin) throw DimensionError("conv1d_transpose: channel mismatch");
    if (K < 1 || stride < 1 || padding < 0) throw DimensionError("conv1d_transpose: bad geometry");
    const int Lout = (L - 1) * stride + K - 2 * padding;
    if (Lout < 1) throw DimensionError("conv1d_transpose: output length < 1");
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != Cout))
        throw DimensionError("conv1d_transpose: bias shape mismatch");

    Tensor out = Tensor::zeros({B, Cout, Lout});
    const float* px = x.data();
    const float* pw = w.data();
    const float* pb = bias.defined() ? bias.data() : nullptr;
    float* po = out.data();
    const std::int64_t rows = static_cast<std::int64_t>(B) * Cout;
    parallel_for(rows, [&](std::int64_t r0, std::int64_t r1) {
        for (std::int64_t r = r0; r < r1; ++r) {
            const int b = static_cast<int>(r / Cout);
            const int oc = static_cast<int>(r % Cout);
            float* orow = po + r * Lout;
            if (pb) {
                for (int u = 0; u < Lout; ++u) orow[u] = pb[oc];
            }
            for (int ic = 0; ic < Cin; ++ic) {
                const float* xrow = px + (static_cast<std::size_t>(b) * Cin + ic) * L;
                const float* wrow = pw + (static_cast<std::size_t>(ic) * Cout + oc) * K;
                for (int t = 0; t < L; ++t) {
                    const float xv = xrow[t];
                    if (xv == 0.0f) continue;
                    const int base = t * stride - padding;
                    const int k0 = std::max(0, -base);
                    const int k1 = std::min(K, Lout - base);
                    for (int k = k0; k < k1; ++k) orow[base + k] += xv * wrow[k];
                }
            }
        }
    }, std::max<std::int64_t>(1, 65536 / (static_cast<std::int64_t>(L) * Cin * K + 1)));

    return autograd_wrap(std::move(out), {x, w, bias.defined() ? bias : Tensor::zeros({1})},
                         [x, w, bias, B, Cin, Cout, L, Lout, K, stride, padding](const Tensor& o) {
        const float* g = o.grad_vec().data();
        if (x.requires_grad()) {
            float* gx = const_cast<Tensor&>(x).grad_vec().data();
            const float* pw2 = w.data();
            const std::int64_t n = static_cast<std::int64_t>(B) * Cin;
            parallel_for(n, [&](std::int64_t r0, std::int64_t r1) {
                for (std::int64_t r = r0; r < r1; ++r) {
                    const int b = static_cast<int>(r / Cin);
                    const int ic = static_cast<int>(r % Cin);
                    float* gxrow = gx + r * L;
                    for (int oc = 0; oc < Cout; ++oc) {
                        const float* grow = g + (static_cast<std::size_t>(b) * Cout + oc) * Lout;
                        const float* wrow = pw2 + (static_cast<std::size_t>(ic) * Cout + oc) * K;
                        for (int t = 0; t < L; ++t) {
                            const int base = t * stride - padding;
                            const int k0 = std::max(0, -base);
                            const int k1 = std::min(K, Lout - base);
                            float acc = 0.0f;
                            for (int k = k0; k < k1; ++k) acc += grow[base + k] * wrow[k];
                            gxrow[t] += acc;
                        }
                    }
                }
            }, std::max<std::int64_t>(1, 65536 / (static_cast<std::int64_t>(L) * Cout * K + 1)));
        }
        if (w.requires_grad()) {
            float* gw = const_cast<Tensor&>(w).grad_vec().data();
            const float* px2 = x.data();
            parallel_for(Cin, [&](std::int64_t i0, std::int64_t i1) {
                for (std::int64_t ic = i0; ic < i1; ++ic)
                    for (int oc = 0; oc < Cout; ++oc) {
                        float* gwrow = gw + (static_cast<std::size_t>(ic) * Cout + oc) * K;
                        for (int b = 0; b < B; ++b) {
                            const float* xrow = px2 + (static_cast<std::size_t>(b) * Cin + ic) * L;
                            const float* grow = g + (static_cast<std::size_t>(b) * Cout + oc) * Lout;
                            for (int t = 0; t < L; ++t) {
                                const float xv = xrow[t];
                                if (xv == 0.0f) continue;
                                const int base = t * stride - padding;
                                const int k0 = std::max(0, -base);
                                const int k1 = std::min(K, Lout - base);
                                for (int k = k0; k < k1; ++k) gwrow[k] += xv * grow[base + k];
                            }
                        }
                    }
            }, 1);
        }
        if (bias.defined() && bias.requires_grad()) {
            float* gb = const_cast<Tensor&>(bias).grad_vec().data();
            for (int b = 0; b < B; ++b)
                for (int oc = 0; oc < Cout; ++oc) {
                    const float* grow = g + (static_cast<std::size_t>(b) * Cout + oc) * Lout;
                    gb[oc] += reduce_sum(grow, static_cast<std::size_t>(Lout));
                }
        }
    });
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding) {
    if (w.ndim() != 3) throw DimensionError("conv1d: weight must be [C_out, C_in, K]");
    if (x.ndim() == 3) return conv1d_3d(x, w, bias, stride, padding);
    if (x.ndim() == 2) {
        Tensor x3 = reshape(x, {1, x.dim(0), x.dim(1)});
        Tensor y = conv1d_3d(x3, w, bias, stride, padding);
        return reshape(y, {y.dim(1), y.dim(2)});
    }
    throw DimensionError("conv1d: input must be [C_in, L] or [B, C_in, L]");
}

Tensor conv1d(const Tensor& x, const Tensor& w, int stride, int padding) {
    return conv1d(x, w, Tensor(), stride, padding);
}

Tensor conv1d_transpose(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
                        int padding) {
    if (w.ndim() != 3) throw DimensionError("conv1d_transpose: weight must be [C_in, C_out, K]");
    if (x.ndim() == 3) return conv1d_transpose_3d(x, w, bias, stride, padding);
    if (x.ndim() == 2) {
        Tensor x3 = reshape(x, {1, x.dim(0), x.dim(1)});
        Tensor y = conv1d_transpose_3d(x3, w, bias, stride, padding);
        return reshape(y, {y.dim(1), y.dim(2)});
    }
    throw DimensionError("conv1d_transpose: input must be [C_in, L] or [B, C_in, L]");
}

Tensor conv1d_transpose(const Tensor& x, const Tensor& w, int stride, int padding) {
    return conv1d_transpose(x, w, Tensor(), stride, padding);
}

// ---------------------------------------------------------------------------
// softmax / layer_norm
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis, const SparsityPattern* mask) {
    if (mask) {
        if (x.ndim() != 2 || axis != 1)
            throw DimensionError("softmax: mask requires [n_queries, n_keys] input with axis 1");
        if (mask->n_queries != x.dim(0) || mask->n_keys != x.dim(1))
            throw DimensionError("softmax: mask shape mismatch");
        Tensor out = Tensor::zeros(x.shape());
        const int nq = x.dim(0), nk = x.dim(1);
        const float* px = x.data();
        float* po = out.data();
        for (int q = 0; q < nq; ++q) {
            const int begin = mask->row_offsets[static_cast<std::size_t>(q)];
            const int end = mask->row_offsets[static_cast<std::size_t>(q) + 1];
            if (begin == end) throw DegenerateRowError("softmax: fully masked row");
            const float* row = px + static_cast<std::size_t>(q) * nk;
            float mx = -std::numeric_limits<float>::infinity();
            for (int e = begin; e < end; ++e) mx = std::max(mx, row[mask->cols[static_cast<std::size_t>(e)]]);
            float denom = 0.0f;
            float* orow = po + static_cast<std::size_t>(q) * nk;
            for (int e = begin; e < end; ++e) {
                const int c = mask->cols[static_cast<std::size_t>(e)];
                const float ev = std::exp(row[c] - mx);
                orow[c] = ev;
                denom += ev;
            }
            for (int e = begin; e < end; ++e) orow[mask->cols[static_cast<std::size_t>(e)]] /= denom;
        }
        return autograd_wrap(std::move(out), {x}, [x, nk](const Tensor& o) {
            if (!x.requires_grad()) return;
            const int nq2 = o.dim(0);
            const float* p = o.data();
            const float* g = o.grad_vec().data();
            float* gx = const_cast<Tensor&>(x).grad_vec().data();
            for (int q = 0; q < nq2; ++q) {
                const float* prow = p + static_cast<std::size_t>(q) * nk;
                const float* grow = g + static_cast<std::size_t>(q) * nk;
                float dot = 0.0f;
                for (int j = 0; j < nk; ++j) dot += prow[j] * grow[j];
                float* gxrow = gx + static_cast<std::size_t>(q) * nk;
                for (int j = 0; j < nk; ++j) gxrow[j] += prow[j] * (grow[j] - dot);
            }
        });
    }

    const AxisSplit sp = split_at(x.shape(), axis);
    Tensor out = Tensor::zeros(x.shape());
    const float* px = x.data();
    float* po = out.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.n * sp.inner + i;
            float mx = -std::numeric_limits<float>::infinity();
            for (std::size_t a = 0; a < sp.n; ++a) mx = std::max(mx, px[base + a * sp.inner]);
            float denom = 0.0f;
            for (std::size_t a = 0; a < sp.n; ++a) {
                const float ev = std::exp(px[base + a * sp.inner] - mx);
                po[base + a * sp.inner] = ev;
                denom += ev;
            }
            for (std::size_t a = 0; a < sp.n; ++a) po[base + a * sp.inner] /= denom;
        }
    return autograd_wrap(std::move(out), {x}, [x, sp](const Tensor& o) {
        if (!x.requires_grad()) return;
        const float* p = o.data();
        const float* g = o.grad_vec().data();
        float* gx = const_cast<Tensor&>(x).grad_vec().data();
        for (std::size_t ot = 0; ot < sp.outer; ++ot)
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const std::size_t base = ot * sp.n * sp.inner + i;
                float dot = 0.0f;
                for (std::size_t a = 0; a < sp.n; ++a)
                    dot += p[base + a * sp.inner] * g[base + a * sp.inner];
                for (std::size_t a = 0; a < sp.n; ++a)
                    gx[base + a * sp.inner] +=
                        p[base + a * sp.inner] * (g[base + a * sp.inner] - dot);
            }
    });
}

namespace {

// Offsets of every element of each normalization group, plus the per-element
// index along the last axis (for the affine parameters).
struct NormLayout {
    std::vector<std::size_t> group_base;    // size G
    std::vector<std::size_t> red_offs;      // size R
    std::size_t last_dim;
};

NormLayout norm_layout(const std::vector<int>& shape, const std::vector<int>& axes) {
    const auto strides = row_major_strides(shape);
    std::vector<bool> reduced(shape.size(), false);
    for (int a : axes) {
        if (a < 0 || a >= static_cast<int>(shape.size()))
            throw DimensionError("layer_norm: axis out of range");
        reduced[static_cast<std::size_t>(a)] = true;
    }
    NormLayout lay;
    lay.last_dim = static_cast<std::size_t>(shape.back());
    std::vector<std::size_t> kept_dims, kept_strides, red_dims, red_strides;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (reduced[i]) {
            red_dims.push_back(static_cast<std::size_t>(shape[i]));
            red_strides.push_back(strides[i]);
        } else {
            kept_dims.push_back(static_cast<std::size_t>(shape[i]));
            kept_strides.push_back(strides[i]);
        }
    }
    auto enumerate = [](const std::vector<std::size_t>& dims, const std::vector<std::size_t>& strs) {
        std::size_t total = 1;
        for (std::size_t d : dims) total *= d;
        std::vector<std::size_t> offs(total, 0);
        for (std::size_t idx = 0; idx < total; ++idx) {
            std::size_t rem = idx, off = 0;
            for (std::size_t k = dims.size(); k-- > 0;) {
                off += (rem % dims[k]) * strs[k];
                rem /= dims[k];
            }
            offs[idx] = off;
        }
        return offs;
    };
    lay.group_base = enumerate(kept_dims, kept_strides);
    lay.red_offs = enumerate(red_dims, red_strides);
    return lay;
}

}  // namespace

Tensor layer_norm(const Tensor& x, const std::vector<int>& axes, const Tensor& gamma,
                  const Tensor& beta, float eps) {
    if (axes.empty()) throw DimensionError("layer_norm: axis set must be nonempty");
    const std::size_t last = static_cast<std::size_t>(x.shape().back());
    auto check_affine = [&](const Tensor& t, const char* name) {
        if (!t.defined()) throw DimensionError(std::string("layer_norm: undefined ") + name);
        if (!(t.numel() == 1 || (t.ndim() == 1 && static_cast<std::size_t>(t.dim(0)) == last)))
            throw DimensionError(std::string("layer_norm: ") + name +
                                 " must be scalar or span the last axis");
    };
    check_affine(gamma, "gamma");
    check_affine(beta, "beta");

    const NormLayout lay = norm_layout(x.shape(), axes);
    const std::size_t G = lay.group_base.size();
    const std::size_t R = lay.red_offs.size();
    const bool affine_vec = gamma.numel() == last && last > 1;

    Tensor out = Tensor::zeros(x.shape());
    const float* px = x.data();
    const float* pg = gamma.data();
    const float* pbeta = beta.data();
    float* po = out.data();
    auto mus = std::make_shared<std::vector<float>>(G);
    auto istds = std::make_shared<std::vector<float>>(G);
    std::vector<float> scratch(R);
    for (std::size_t g = 0; g < G; ++g) {
        const std::size_t base = lay.group_base[g];
        for (std::size_t r = 0; r < R; ++r) scratch[r] = px[base + lay.red_offs[r]];
        const float mu = reduce_sum(scratch.data(), R) / static_cast<float>(R);
        for (std::size_t r = 0; r < R; ++r) scratch[r] = (scratch[r] - mu) * (scratch[r] - mu);
        const float var = reduce_sum(scratch.data(), R) / static_cast<float>(R);
        const float istd = 1.0f / std::sqrt(var + eps);
        (*mus)[g] = mu;
        (*istds)[g] = istd;
        for (std::size_t r = 0; r < R; ++r) {
            const std::size_t off = base + lay.red_offs[r];
            const std::size_t t = affine_vec ? off % last : 0;
            po[off] = pg[t] * (px[off] - mu) * istd + pbeta[t];
        }
    }

    return autograd_wrap(std::move(out), {x, gamma, beta},
                         [x, gamma, beta, lay, mus, istds, affine_vec](const Tensor& o) {
        const std::size_t G2 = lay.group_base.size();
        const std::size_t R2 = lay.red_offs.size();
        const std::size_t last2 = lay.last_dim;
        const float* g = o.grad_vec().data();
        const float* px2 = x.data();
        const float* pg2 = gamma.data();
        float* gx = x.requires_grad() ? const_cast<Tensor&>(x).grad_vec().data() : nullptr;
        float* ggamma = gamma.requires_grad() ? const_cast<Tensor&>(gamma).grad_vec().data() : nullptr;
        float* gbeta = beta.requires_grad() ? const_cast<Tensor&>(beta).grad_vec().data() : nullptr;
        std::vector<float> gn(R2), xhat(R2);
        for (std::size_t grp = 0; grp < G2; ++grp) {
            const std::size_t base = lay.group_base[grp];
            const float mu = (*mus)[grp];
            const float istd = (*istds)[grp];
            for (std::size_t r = 0; r < R2; ++r) {
                const std::size_t off = base + lay.red_offs[r];
                const std::size_t t = affine_vec ? off % last2 : 0;
                xhat[r] = (px2[off] - mu) * istd;
                gn[r] = g[off] * pg2[t];
                if (ggamma) ggamma[t] += g[off] * xhat[r];
                if (gbeta) gbeta[t] += g[off];
            }
            if (gx) {
                float m1 = reduce_sum(gn.data(), R2) / static_cast<float>(R2);
                std::vector<float> prod(R2);
                for (std::size_t r = 0; r < R2; ++r) prod[r] = gn[r] * xhat[r];
                float m2 = reduce_sum(prod.data(), R2) / static_cast<float>(R2);
                for (std::size_t r = 0; r < R2; ++r) {
                    const std::size_t off = base + lay.red_offs[r];
                    gx[off] += istd * (gn[r] - m1 - xhat[r] * m2);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
    Tensor out = Tensor::scalar(reduce_sum(x.data(), x.numel()));
    return autograd_wrap(std::move(out), {x}, [x](const Tensor& o) {
        if (!x.requires_grad()) return;
        const float g = o.grad_vec()[0];
        float* gx = const_cast<Tensor&>(x).grad_vec().data();
        const std::size_t n = x.numel();
        for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    });
}

Tensor mean(const Tensor& x) {
    const float inv = 1.0f / static_cast<float>(x.numel());
    Tensor out = Tensor::scalar(reduce_sum(x.data(), x.numel()) * inv);
    return autograd_wrap(std::move(out), {x}, [x, inv](const Tensor& o) {
        if (!x.requires_grad()) return;
        const float g = o.grad_vec()[0] * inv;
        float* gx = const_cast<Tensor&>(x).grad_vec().data();
        const std::size_t n = x.numel();
        for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
    if (checked_numel(new_shape) != x.numel()) throw DimensionError("reshape: element count changed");
    Tensor out;
    out.shape_ = std::move(new_shape);
    out.data_ = x.data_;  // values are shared; only the view changes
    return autograd_wrap(std::move(out), {x}, [x](const Tensor& o) {
        if (!x.requires_grad()) return;
        const float* g = o.grad_vec().data();
        float* gx = const_cast<Tensor&>(x).grad_vec().data();
        const std::size_t n = x.numel();
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
    });
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
    const int nd = x.ndim();
    if (static_cast<int>(perm.size()) != nd) throw DimensionError("permute: rank mismatch");
    std::vector<bool> seen(perm.size(), false);
    std::vector<int> oshape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        if (perm[i] < 0 || perm[i] >= nd || seen[static_cast<std::size_t>(perm[i])])
            throw DimensionError("permute: invalid permutation");
        seen[static_cast<std::size_t>(perm[i])] = true;
        oshape[i] = x.dim(perm[i]);
    }
    Tensor out = Tensor::zeros(oshape);
    const auto in_strides = row_major_strides(x.shape());
    const auto out_strides = row_major_strides(oshape);
    // out stride applied at the position of input axis perm[i]
    std::vector<std::size_t> scatter(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) scatter[static_cast<std::size_t>(perm[i])] = out_strides[i];
    const float* px = x.data();
    float* po = out.data();
    const std::size_t n = x.numel();
    const auto shape = x.shape();
    parallel_for(static_cast<std::int64_t>(n), [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t lin = b; lin < e; ++lin) {
            std::size_t rem = static_cast<std::size_t>(lin), off = 0;
            for (std::size_t k = 0; k < in_strides.size(); ++k) {
                const std::size_t idx = rem / in_strides[k];
                rem %= in_strides[k];
                off += idx * scatter[k];
            }
            po[off] = px[lin];
        }
    }, 65536);
    auto mapping = [in_strides, scatter](std::size_t lin) {
        std::size_t rem = lin, off = 0;
        for (std::size_t k = 0; k < in_strides.size(); ++k) {
            const std::size_t idx = rem / in_strides[k];
            rem %= in_strides[k];
            off += idx * scatter[k];
        }
        return off;
    };
    return autograd_wrap(std::move(out), {x}, [x, mapping](const Tensor& o) {
        if (!x.requires_grad()) return;
        const float* g = o.grad_vec().data();
        float* gx = const_cast<Tensor&>(x).grad_vec().data();
        const std::size_t n2 = x.numel();
        for (std::size_t i = 0; i < n2; ++i) gx[i] += g[mapping(i)];
    });
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
    const AxisSplit sp = split_at(x.shape(), axis);
    if (start < 0 || len < 1 || start + len > static_cast<int>(sp.n))
        throw DimensionError("slice: range out of bounds");
    std::vector<int> oshape = x.shape();
    oshape[static_cast<std::size_t>(axis)] = len;
    Tensor out = Tensor::zeros(oshape);
    const float* px = x.data();
    float* po = out.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
        const float* src = px + (o * sp.n + static_cast<std::size_t>(start)) * sp.inner;
        float* dst = po + o * static_cast<std::size_t>(len) * sp.inner;
        std::memcpy(dst, src, static_cast<std::size_t>(len) * sp.inner * sizeof(float));
    }
    return autograd_wrap(std::move(out), {x}, [x, sp, start, len](const Tensor& o) {
        if (!x.requires_grad()) return;
        const float* g = o.grad_vec().data();
        float* gx = const_cast<Tensor&>(x).grad_vec().data();
        for (std::size_t ot = 0; ot < sp.outer; ++ot) {
            float* dst = gx + (ot * sp.n + static_cast<std::size_t>(start)) * sp.inner;
            const float* src = g + ot * static_cast<std::size_t>(len) * sp.inner;
            for (std::size_t i = 0; i < static_cast<std::size_t>(len) * sp.inner; ++i) dst[i] += src[i];
        }
    });
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    if (a.ndim() != b.ndim()) throw DimensionError("concat: rank mismatch");
    for (int i = 0; i < a.ndim(); ++i) {
        if (i != axis && a.dim(i) != b.dim(i)) throw DimensionError("concat: shape mismatch");
    }
    const AxisSplit sa = split_at(a.shape(), axis);
    const AxisSplit sb = split_at(b.shape(), axis);
    std::vector<int> oshape = a.shape();
    oshape[static_cast<std::size_t>(axis)] = static_cast<int>(sa.n + sb.n);
    Tensor out = Tensor::zeros(oshape);
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    const std::size_t an = sa.n * sa.inner, bn = sb.n * sb.inner;
    for (std::size_t o = 0; o < sa.outer; ++o) {
        std::memcpy(po + o * (an + bn), pa + o * an, an * sizeof(float));
        std::memcpy(po + o * (an + bn) + an, pb + o * bn, bn * sizeof(float));
    }
    return autograd_wrap(std::move(out), {a, b}, [a, b, sa, an, bn](const Tensor& o) {
        const float* g = o.grad_vec().data();
        if (a.requires_grad()) {
            float* ga = const_cast<Tensor&>(a).grad_vec().data();
            for (std::size_t ot = 0; ot < sa.outer; ++ot)
                for (std::size_t i = 0; i < an; ++i) ga[ot * an + i] += g[ot * (an + bn) + i];
        }
        if (b.requires_grad()) {
            float* gb = const_cast<Tensor&>(b).grad_vec().data();
            for (std::size_t ot = 0; ot < sa.outer; ++ot)
                for (std::size_t i = 0; i < bn; ++i) gb[ot * bn + i] += g[ot * (an + bn) + an + i];
        }
    });
}

Tensor pad_lastdim(const Tensor& x, int left, int right, PadMode mode) {
    if (left < 0 || right < 0) throw DimensionError("pad_lastdim: negative padding");
    const int L = x.shape().back();
    if (mode == PadMode::kReflect && (left >= L || right >= L))
        throw LengthError("pad_lastdim: reflect padding wider than the signal");
    std::vector<int> oshape = x.shape();
    oshape.back() = L + left + right;
    const std::size_t rows = x.numel() / static_cast<std::size_t>(L);
    Tensor out = Tensor::zeros(oshape);
    const float* px = x.data();
    float* po = out.data();
    const std::size_t Lo = static_cast<std::size_t>(L + left + right);
    for (std::size_t r = 0; r < rows; ++r) {
        const float* src = px + r * static_cast<std::size_t>(L);
        float* dst = po + r * Lo;
        std::memcpy(dst + left, src, static_cast<std::size_t>(L) * sizeof(float));
        if (mode == PadMode::kReflect) {
            for (int j = 0; j < left; ++j) dst[j] = src[left - j];
            for (int j = 0; j < right; ++j) dst[left + L + j] = src[L - 2 - j];
        }
    }
    return autograd_wrap(std::move(out), {x}, [x, left, right, L, rows, Lo, mode](const Tensor& o) {
        if (!x.requires_grad()) return;
        const float* g = o.grad_vec().data();
        float* gx = const_cast<Tensor&>(x).grad_vec().data();
        for (std::size_t r = 0; r < rows; ++r) {
            const float* grow = g + r * Lo;
            float* dst = gx + r * static_cast<std::size_t>(L);
            for (int j = 0; j < L; ++j) dst[j] += grow[left + j];
            if (mode == PadMode::kReflect) {
                for (int j = 0; j < left; ++j) dst[left - j] += grow[j];
                for (int j = 0; j < right; ++j) dst[L - 2 - j] += grow[left + L + j];
            }
        }
    });
}

}  // namespace stemsep
