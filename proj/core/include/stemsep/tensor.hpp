#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "stemsep/errors.hpp"
#include "stemsep/rng.hpp"

namespace stemsep {

struct SparsityPattern;
class Tensor;

struct AutogradNode {
    std::vector<Tensor> parents;
    std::function<void(const Tensor& out)> backprop;
};

// Dense row-major float32 tensor with an optional define-by-run gradient tape.
// Copies are shallow: they share the value buffer, the grad buffer and the
// tape node. Values are immutable once an op has produced them; only grad
// accumulation mutates state, and that is confined to the training thread.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<float> values,
                            bool requires_grad = false);
    static Tensor scalar(float value);
    static Tensor rand_uniform(std::vector<int> shape, float lo, float hi, Rng& rng,
                               bool requires_grad = false);
    static Tensor rand_normal(std::vector<int> shape, float mean, float stddev, Rng& rng,
                              bool requires_grad = false);

    bool defined() const { return static_cast<bool>(data_); }
    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    std::size_t numel() const;

    float* data() { return data_->data(); }
    const float* data() const { return data_->data(); }
    std::vector<float>& vec() { return *data_; }
    const std::vector<float>& vec() const { return *data_; }

    float item() const;
    float at(std::initializer_list<int> idx) const;

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool v) {
        requires_grad_ = v;
        if (v && data_) ensure_grad();
    }

    bool has_grad() const { return static_cast<bool>(grad_); }
    void ensure_grad();
    void zero_grad();
    std::vector<float>& grad_vec() { return *grad_; }
    const std::vector<float>& grad_vec() const { return *grad_; }
    Tensor grad_tensor() const;  // shares the grad buffer, shape == shape()

    // Same values, no tape, no requires_grad. Shares the value buffer.
    Tensor detach() const;

    const std::shared_ptr<AutogradNode>& node() const { return node_; }

  private:
    friend Tensor autograd_wrap(Tensor, std::vector<Tensor>,
                                std::function<void(const Tensor&)>);
    friend Tensor reshape(const Tensor&, std::vector<int>);
    friend void backward(const Tensor&);

    std::vector<int> shape_;
    std::shared_ptr<std::vector<float>> data_;
    std::shared_ptr<std::vector<float>> grad_;
    std::shared_ptr<AutogradNode> node_;
    bool requires_grad_ = false;
};

// Tape recording can be suspended for inference paths.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool saved_;
};

// Attaches a tape node to already-computed output values. Used by ops whose
// kernels live outside tensor.cpp (attention, stft/istft).
Tensor autograd_wrap(Tensor out, std::vector<Tensor> parents,
                     std::function<void(const Tensor& out)> backprop);

// Elementwise, same shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor affine_const(const Tensor& a, float mul, float add);  // mul * a + add
Tensor abs(const Tensor& a);

// y[..., d] = x[..., d] * s[d]; s spans the last axis (Layer Scale, gating).
Tensor mul_lastdim(const Tensor& x, const Tensor& s);

Tensor gelu(const Tensor& x);       // exact Gaussian CDF
Tensor glu(const Tensor& x, int axis);

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]

// y = x . w^T + b with x [rows, in], w [out, in], optional b [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor linear(const Tensor& x, const Tensor& w);

// x [B, C_in, L] or [C_in, L]; w [C_out, C_in, K]; optional bias [C_out].
// Zero padding, cross-correlation semantics.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding);
Tensor conv1d(const Tensor& x, const Tensor& w, int stride, int padding);

// Transposed geometry; w [C_in, C_out, K]; L_out = (L-1)*stride + K - 2*padding.
Tensor conv1d_transpose(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
                        int padding);
Tensor conv1d_transpose(const Tensor& x, const Tensor& w, int stride, int padding);

// Max-subtracted softmax along `axis`. A mask restricts the normalization to
// kept (query,key) pairs and requires x to be [n_queries, n_keys] with axis 1;
// masked-out entries come back exactly 0.
Tensor softmax(const Tensor& x, int axis, const SparsityPattern* mask = nullptr);

// Zero mean / unit variance over the axes in `axes` before the affine map.
// gamma/beta are scalar or span the last axis.
Tensor layer_norm(const Tensor& x, const std::vector<int>& axes, const Tensor& gamma,
                  const Tensor& beta, float eps = 1e-5f);

Tensor sum(const Tensor& x);   // scalar
Tensor mean(const Tensor& x);  // scalar

Tensor reshape(const Tensor& x, std::vector<int> new_shape);  // shares the buffer
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor concat(const Tensor& a, const Tensor& b, int axis);

enum class PadMode { kZero, kReflect };
Tensor pad_lastdim(const Tensor& x, int left, int right, PadMode mode);

// Populates grads of every tensor participating in the tape below `loss`.
void backward(const Tensor& loss);

// Non-tape helpers.
float reduce_sum(const float* v, std::size_t n);  // pairwise, float32
float tensor_mean(const Tensor& t);
float tensor_std(const Tensor& t);
float tensor_max_abs(const Tensor& t);
bool tensor_all_finite(const Tensor& t);

}  // namespace stemsep
