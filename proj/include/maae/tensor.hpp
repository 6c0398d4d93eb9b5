#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors.
// Operations execute eagerly; each one that touches a differentiable input
// pushes a backward closure onto the Tape. backward() replays the tape in
// reverse, accumulating (+=) gradients at every fan-in.
//
// Two precision modes are intended: T = float for training, T = double for
// finite-difference gradient verification.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "maae/errors.hpp"
#include "maae/rng.hpp"

namespace maae {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;            // sized iff requires_grad
    bool requires_grad = false;
    const void* tape_tag = nullptr; // tape that produced this node, null for leaves
};

// Row-major GEMM: c = (acc ? c : 0) + op(a) * op(b). Eigen does the heavy
// lifting; everything above this call is plain loops.
template <typename T>
void gemm(const T* a, const T* b, T* c,
          std::size_t m, std::size_t k, std::size_t n,
          bool accumulate = false, bool trans_a = false, bool trans_b = false) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using CMap = Eigen::Map<const Mat>;
    using MMap = Eigen::Map<Mat>;
    const auto im = static_cast<Eigen::Index>(m);
    const auto ik = static_cast<Eigen::Index>(k);
    const auto in = static_cast<Eigen::Index>(n);
    CMap ma(a, trans_a ? ik : im, trans_a ? im : ik);
    CMap mb(b, trans_b ? in : ik, trans_b ? ik : in);
    MMap mc(c, im, in);
    if (trans_a && trans_b) {
        if (accumulate) mc.noalias() += ma.transpose() * mb.transpose();
        else            mc.noalias() = ma.transpose() * mb.transpose();
    } else if (trans_a) {
        if (accumulate) mc.noalias() += ma.transpose() * mb;
        else            mc.noalias() = ma.transpose() * mb;
    } else if (trans_b) {
        if (accumulate) mc.noalias() += ma * mb.transpose();
        else            mc.noalias() = ma * mb.transpose();
    } else {
        if (accumulate) mc.noalias() += ma * mb;
        else            mc.noalias() = ma * mb;
    }
}

} // namespace detail

/// Handle to a dense tensor node. Copies share the underlying node.
/// Value buffers are immutable under tensor ops; values_mut() exists for
/// optimizers and test harnesses that update leaves between tapes.
template <typename T>
class Tensor {
public:
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return make(std::move(shape), {}, requires_grad);
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        std::vector<T> v(shape_numel(shape), value);
        return make(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw ShapeMismatch("tensor data size " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
        return make(std::move(shape), std::move(data), requires_grad);
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return from({1}, {value}, requires_grad);
    }

    static Tensor random_uniform(Shape shape, SplitMix64& rng, T lo, T hi,
                                 bool requires_grad = false) {
        std::vector<T> v(shape_numel(shape));
        for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
        return make(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor random_normal(Shape shape, SplitMix64& rng, T mean, T stddev,
                                bool requires_grad = false) {
        std::vector<T> v(shape_numel(shape));
        for (auto& x : v) x = static_cast<T>(mean + stddev * rng.normal());
        return make(std::move(shape), std::move(v), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->values.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape[i]; }

    std::span<const T> values() const { return node_->values; }
    std::span<T> values_mut() { return node_->values; }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> grad_mut() { return node_->grad; }
    T item() const {
        if (numel() != 1) throw NotScalar("item() on tensor of shape " + shape_str(shape()));
        return node_->values[0];
    }

    bool requires_grad() const { return node_->requires_grad; }

    void set_requires_grad(bool on) {
        node_->requires_grad = on;
        if (on && node_->grad.size() != node_->values.size())
            node_->grad.assign(node_->values.size(), T{0});
    }

    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T{0}); }

    /// Value copy that participates in no gradient flow.
    Tensor detach() const {
        return make(node_->shape, std::vector<T>(node_->values), false);
    }

    /// Deep copy preserving requires_grad (grad buffer reset to zero).
    Tensor clone() const {
        return make(node_->shape, std::vector<T>(node_->values), node_->requires_grad);
    }

    bool all_finite() const {
        for (T v : node_->values)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    NodePtr node() const { return node_; }

private:
    friend class Tape<T>;

    static Tensor make(Shape shape, std::vector<T> data, bool requires_grad) {
        Tensor t;
        t.node_ = std::make_shared<detail::Node<T>>();
        t.node_->shape = std::move(shape);
        if (data.empty())
            t.node_->values.assign(shape_numel(t.node_->shape), T{0});
        else
            t.node_->values = std::move(data);
        if (requires_grad) {
            t.node_->requires_grad = true;
            t.node_->grad.assign(t.node_->values.size(), T{0});
        }
        return t;
    }

    NodePtr node_;
};

/// Ordered record of executed operations. Ops append their backward closure
/// during the forward pass, so the record is already topologically sorted;
/// backward() walks it once, in reverse.
template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(Tensor<T>& out, std::function<void()> backward_fn) {
        out.node()->tape_tag = this;
        records_.push_back(std::move(backward_fn));
    }

    bool owns(const Tensor<T>& t) const { return t.node()->tape_tag == this; }
    std::size_t size() const { return records_.size(); }
    void clear() { records_.clear(); }

    /// Populate dloss/dx for every requires_grad tensor reachable from loss.
    void backward(const Tensor<T>& loss) {
        if (loss.numel() != 1)
            throw NotScalar("backward() needs a scalar loss, got " + shape_str(loss.shape()));
        if (!loss.requires_grad() || !owns(loss))
            throw DetachedTensor("loss tensor was not produced on this tape");
        loss.node()->grad[0] += T{1};
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> records_;
};

namespace detail {

template <typename T>
bool wants_grad(const Tensor<T>& a) {
    return a.requires_grad();
}

template <typename T, typename... Rest>
bool wants_grad(const Tensor<T>& a, const Rest&... rest) {
    return a.requires_grad() || wants_grad(rest...);
}

} // namespace detail

// ---------------------------------------------------------------------------
// core ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw RankError("matmul expects rank-2 tensors, got " + shape_str(a.shape()) +
                        " and " + shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeMismatch("matmul inner dims disagree: " + shape_str(a.shape()) +
                            " vs " + shape_str(b.shape()));
    auto out = Tensor<T>::zeros({m, n});
    detail::gemm(a.values().data(), b.values().data(), out.values_mut().data(), m, k, n);
    if (detail::wants_grad(a, b)) {
        out.set_requires_grad(true);
        tape.record(out, [an = a.node(), bn = b.node(), on = out.node(), m, k, n] {
            if (an->requires_grad)
                detail::gemm(on->grad.data(), bn->values.data(), an->grad.data(),
                             m, n, k, true, false, true);
            if (bn->requires_grad)
                detail::gemm(an->values.data(), on->grad.data(), bn->grad.data(),
                             k, m, n, true, true, false);
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose2d(Tape<T>& tape, const Tensor<T>& x) {
    if (x.rank() != 2)
        throw RankError("transpose2d expects rank-2, got " + shape_str(x.shape()));
    const std::size_t r = x.dim(0), c = x.dim(1);
    auto out = Tensor<T>::zeros({c, r});
    const auto xv = x.values();
    auto ov = out.values_mut();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ov[j * r + i] = xv[i * c + j];
    if (x.requires_grad()) {
        out.set_requires_grad(true);
        tape.record(out, [xn = x.node(), on = out.node(), r, c] {
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    xn->grad[i * c + j] += on->grad[j * r + i];
        });
    }
    return out;
}

/// Row-wise softmax, stabilized by max subtraction so huge logits cannot
/// overflow. Each output row sums to 1.
template <typename T>
Tensor<T> softmax_rows(Tape<T>& tape, const Tensor<T>& x) {
    if (x.rank() != 2)
        throw RankError("softmax_rows expects rank-2, got " + shape_str(x.shape()));
    const std::size_t m = x.dim(0), n = x.dim(1);
    auto out = Tensor<T>::zeros({m, n});
    const auto xv = x.values();
    auto ov = out.values_mut();
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = xv.data() + i * n;
        T* orow = ov.data() + i * n;
        T mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        T sum{0};
        for (std::size_t j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (std::size_t j = 0; j < n; ++j) orow[j] /= sum;
    }
    if (x.requires_grad()) {
        out.set_requires_grad(true);
        tape.record(out, [xn = x.node(), on = out.node(), m, n] {
            for (std::size_t i = 0; i < m; ++i) {
                const T* y = on->values.data() + i * n;
                const T* g = on->grad.data() + i * n;
                T dot{0};
                for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
                T* gx = xn->grad.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) gx[j] += y[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

namespace detail {

struct ConvDims {
    std::size_t c_in, h, w, c_out, kh, kw, h_out, w_out;
    int stride, dilation, padding;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& k,
                   int stride, int dilation, int padding) {
    if (x.rank() != 3) throw RankError("conv2d input must be CxHxW, got " + shape_str(x.shape()));
    if (k.rank() != 4) throw RankError("conv2d kernel must be OxIxKhxKw, got " + shape_str(k.shape()));
    if (stride < 1 || dilation < 1 || padding < 0)
        throw ShapeMismatch("conv2d: stride/dilation must be >= 1 and padding >= 0");
    ConvDims d;
    d.c_in = x.dim(0); d.h = x.dim(1); d.w = x.dim(2);
    d.c_out = k.dim(0); d.kh = k.dim(2); d.kw = k.dim(3);
    d.stride = stride; d.dilation = dilation; d.padding = padding;
    if (k.dim(1) != d.c_in)
        throw ShapeMismatch("conv2d channel mismatch: input has " + std::to_string(d.c_in) +
                            ", kernel expects " + std::to_string(k.dim(1)));
    const auto span_h = static_cast<long>(d.h) + 2 * padding -
                        dilation * (static_cast<long>(d.kh) - 1) - 1;
    const auto span_w = static_cast<long>(d.w) + 2 * padding -
                        dilation * (static_cast<long>(d.kw) - 1) - 1;
    if (span_h < 0 || span_w < 0)
        throw EmptyOutput("conv2d output would be empty for input " + shape_str(x.shape()));
    d.h_out = static_cast<std::size_t>(span_h / stride) + 1;
    d.w_out = static_cast<std::size_t>(span_w / stride) + 1;
    return d;
}

// col is (c_in*kh*kw) x (h_out*w_out), row-major.
template <typename T>
void im2col(const T* x, const ConvDims& d, T* col) {
    const std::size_t cols = d.h_out * d.w_out;
    for (std::size_t ci = 0; ci < d.c_in; ++ci) {
        for (std::size_t u = 0; u < d.kh; ++u) {
            for (std::size_t v = 0; v < d.kw; ++v) {
                T* dst = col + ((ci * d.kh + u) * d.kw + v) * cols;
                for (std::size_t oh = 0; oh < d.h_out; ++oh) {
                    const long iy = static_cast<long>(oh) * d.stride - d.padding +
                                    static_cast<long>(u) * d.dilation;
                    for (std::size_t ow = 0; ow < d.w_out; ++ow) {
                        const long ix = static_cast<long>(ow) * d.stride - d.padding +
                                        static_cast<long>(v) * d.dilation;
                        T val{0};
                        if (iy >= 0 && iy < static_cast<long>(d.h) &&
                            ix >= 0 && ix < static_cast<long>(d.w))
                            val = x[(ci * d.h + iy) * d.w + ix];
                        dst[oh * d.w_out + ow] = val;
                    }
                }
            }
        }
    }
}

// Scatter-add of the column gradient back onto the input image.
template <typename T>
void col2im_add(const T* col, const ConvDims& d, T* gx) {
    const std::size_t cols = d.h_out * d.w_out;
    for (std::size_t ci = 0; ci < d.c_in; ++ci) {
        for (std::size_t u = 0; u < d.kh; ++u) {
            for (std::size_t v = 0; v < d.kw; ++v) {
                const T* src = col + ((ci * d.kh + u) * d.kw + v) * cols;
                for (std::size_t oh = 0; oh < d.h_out; ++oh) {
                    const long iy = static_cast<long>(oh) * d.stride - d.padding +
                                    static_cast<long>(u) * d.dilation;
                    if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
                    for (std::size_t ow = 0; ow < d.w_out; ++ow) {
                        const long ix = static_cast<long>(ow) * d.stride - d.padding +
                                        static_cast<long>(v) * d.dilation;
                        if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
                        gx[(ci * d.h + iy) * d.w + ix] += src[oh * d.w_out + ow];
                    }
                }
            }
        }
    }
}

} // namespace detail

/// 2-D cross-correlation (deep-learning convention, no kernel flip) with
/// stride, dilation and zero padding. Implemented as im2col + GEMM.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& k,
                 int stride, int dilation, int padding) {
    const auto d = detail::conv_dims(x, k, stride, dilation, padding);
    const std::size_t patch = d.c_in * d.kh * d.kw;
    const std::size_t cols = d.h_out * d.w_out;
    auto col = std::make_shared<std::vector<T>>(patch * cols);
    detail::im2col(x.values().data(), d, col->data());
    auto out = Tensor<T>::zeros({d.c_out, d.h_out, d.w_out});
    detail::gemm(k.values().data(), col->data(), out.values_mut().data(),
                 d.c_out, patch, cols);
    if (detail::wants_grad(x, k)) {
        out.set_requires_grad(true);
        tape.record(out, [xn = x.node(), kn = k.node(), on = out.node(), d, col, patch, cols] {
            if (kn->requires_grad)
                detail::gemm(on->grad.data(), col->data(), kn->grad.data(),
                             d.c_out, cols, patch, true, false, true);
            if (xn->requires_grad) {
                std::vector<T> dcol(patch * cols);
                detail::gemm(kn->values.data(), on->grad.data(), dcol.data(),
                             patch, d.c_out, cols, false, true, false);
                detail::col2im_add(dcol.data(), d, xn->grad.data());
            }
        });
    }
    return out;
}

/// x: CxHxW plus a per-channel bias vector of length C.
template <typename T>
Tensor<T> add_channel_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias) {
    if (x.rank() != 3 || bias.rank() != 1)
        throw RankError("add_channel_bias expects CxHxW and C");
    const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    if (bias.dim(0) != c)
        throw ShapeMismatch("bias length " + std::to_string(bias.dim(0)) +
                            " vs channels " + std::to_string(c));
    auto out = Tensor<T>::zeros(x.shape());
    const auto xv = x.values();
    const auto bv = bias.values();
    auto ov = out.values_mut();
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t i = 0; i < hw; ++i) ov[ci * hw + i] = xv[ci * hw + i] + bv[ci];
    if (detail::wants_grad(x, bias)) {
        out.set_requires_grad(true);
        tape.record(out, [xn = x.node(), bn = bias.node(), on = out.node(), c, hw] {
            if (xn->requires_grad)
                for (std::size_t i = 0; i < c * hw; ++i) xn->grad[i] += on->grad[i];
            if (bn->requires_grad)
                for (std::size_t ci = 0; ci < c; ++ci) {
                    T s{0};
                    for (std::size_t i = 0; i < hw; ++i) s += on->grad[ci * hw + i];
                    bn->grad[ci] += s;
                }
        });
    }
    return out;
}

namespace detail {

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> pointwise_binary(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b,
                           const char* name, FwdFn fwd, BwdFn bwd) {
    if (a.shape() != b.shape())
        throw ShapeMismatch(std::string(name) + ": shapes differ, " + shape_str(a.shape()) +
                            " vs " + shape_str(b.shape()));
    auto out = Tensor<T>::zeros(a.shape());
    const auto av = a.values();
    const auto bv = b.values();
    auto ov = out.values_mut();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i], bv[i]);
    if (wants_grad(a, b)) {
        out.set_requires_grad(true);
        tape.record(out, [an = a.node(), bn = b.node(), on = out.node(), bwd] {
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                bwd(on->grad[i], an, bn, i);
        });
    }
    return out;
}

} // namespace detail

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    return detail::pointwise_binary(
        tape, a, b, "add", [](T x, T y) { return x + y; },
        [](T g, auto& an, auto& bn, std::size_t i) {
            if (an->requires_grad) an->grad[i] += g;
            if (bn->requires_grad) bn->grad[i] += g;
        });
}

template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    return detail::pointwise_binary(
        tape, a, b, "sub", [](T x, T y) { return x - y; },
        [](T g, auto& an, auto& bn, std::size_t i) {
            if (an->requires_grad) an->grad[i] += g;
            if (bn->requires_grad) bn->grad[i] -= g;
        });
}

template <typename T>
Tensor<T> hadamard(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    return detail::pointwise_binary(
        tape, a, b, "hadamard", [](T x, T y) { return x * y; },
        [](T g, auto& an, auto& bn, std::size_t i) {
            if (an->requires_grad) an->grad[i] += g * bn->values[i];
            if (bn->requires_grad) bn->grad[i] += g * an->values[i];
        });
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T c) {
    auto out = Tensor<T>::zeros(a.shape());
    const auto av = a.values();
    auto ov = out.values_mut();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * c;
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        tape.record(out, [an = a.node(), on = out.node(), c] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * c;
        });
    }
    return out;
}

template <typename T>
Tensor<T> leaky_ramp(Tape<T>& tape, const Tensor<T>& x, T slope) {
    auto out = Tensor<T>::zeros(x.shape());
    const auto xv = x.values();
    auto ov = out.values_mut();
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] > T{0} ? xv[i] : slope * xv[i];
    if (x.requires_grad()) {
        out.set_requires_grad(true);
        tape.record(out, [xn = x.node(), on = out.node(), slope] {
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                xn->grad[i] += on->grad[i] * (xn->values[i] > T{0} ? T{1} : slope);
        });
    }
    return out;
}

/// Channels of a first, then channels of b; spatial dims must agree.
template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 3 || b.rank() != 3)
        throw RankError("concat_channels expects CxHxW inputs");
    if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
        throw ShapeMismatch("concat_channels spatial dims differ: " + shape_str(a.shape()) +
                            " vs " + shape_str(b.shape()));
    const std::size_t ca = a.dim(0), cb = b.dim(0), hw = a.dim(1) * a.dim(2);
    auto out = Tensor<T>::zeros({ca + cb, a.dim(1), a.dim(2)});
    auto ov = out.values_mut();
    std::copy(a.values().begin(), a.values().end(), ov.begin());
    std::copy(b.values().begin(), b.values().end(), ov.begin() + ca * hw);
    if (detail::wants_grad(a, b)) {
        out.set_requires_grad(true);
        tape.record(out, [an = a.node(), bn = b.node(), on = out.node(), ca, cb, hw] {
            if (an->requires_grad)
                for (std::size_t i = 0; i < ca * hw; ++i) an->grad[i] += on->grad[i];
            if (bn->requires_grad)
                for (std::size_t i = 0; i < cb * hw; ++i) bn->grad[i] += on->grad[ca * hw + i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
    auto out = Tensor<T>::zeros({1});
    T s{0};
    for (T v : x.values()) s += v;
    out.values_mut()[0] = s;
    if (x.requires_grad()) {
        out.set_requires_grad(true);
        tape.record(out, [xn = x.node(), on = out.node()] {
            const T g = on->grad[0];
            for (auto& gi : xn->grad) gi += g;
        });
    }
    return out;
}

/// Squared L2 norm of (y - t) divided by n; n is the token count, not the
/// element count.
template <typename T>
Tensor<T> mse(Tape<T>& tape, const Tensor<T>& y, const Tensor<T>& t, std::size_t n) {
    if (y.shape() != t.shape())
        throw ShapeMismatch("mse shapes differ: " + shape_str(y.shape()) + " vs " +
                            shape_str(t.shape()));
    auto out = Tensor<T>::zeros({1});
    const auto yv = y.values();
    const auto tv = t.values();
    T s{0};
    for (std::size_t i = 0; i < yv.size(); ++i) {
        const T d = yv[i] - tv[i];
        s += d * d;
    }
    out.values_mut()[0] = s / static_cast<T>(n);
    if (detail::wants_grad(y, t)) {
        out.set_requires_grad(true);
        tape.record(out, [yn = y.node(), tn = t.node(), on = out.node(), n] {
            const T g = on->grad[0] * T{2} / static_cast<T>(n);
            for (std::size_t i = 0; i < yn->values.size(); ++i) {
                const T d = yn->values[i] - tn->values[i];
                if (yn->requires_grad) yn->grad[i] += g * d;
                if (tn->requires_grad) tn->grad[i] -= g * d;
            }
        });
    }
    return out;
}

/// sqrt(sum of squares). The gradient at the exact zero tensor is defined
/// as zero (subgradient choice).
template <typename T>
Tensor<T> l2_norm(Tape<T>& tape, const Tensor<T>& w) {
    auto out = Tensor<T>::zeros({1});
    T s{0};
    for (T v : w.values()) s += v * v;
    const T norm = std::sqrt(s);
    out.values_mut()[0] = norm;
    if (w.requires_grad()) {
        out.set_requires_grad(true);
        tape.record(out, [wn = w.node(), on = out.node(), norm] {
            if (norm == T{0}) return;
            const T g = on->grad[0] / norm;
            for (std::size_t i = 0; i < wn->values.size(); ++i)
                wn->grad[i] += g * wn->values[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

struct GradCheckReport {
    bool passed = false;
    double max_rel_err = 0.0;
    std::size_t worst_leaf = 0;   // index into the perturbed-leaf list
    std::size_t worst_index = 0;  // flat element index inside that leaf
    std::size_t checked = 0;
};

/// Compare analytic gradients of a scalar-valued graph against central finite
/// differences. `build` must reconstruct the graph from the current leaf
/// values on every call. 64-bit mode is assumed; float tolerances are not
/// reliable here.
template <typename T>
GradCheckReport grad_check_leaves(const std::function<Tensor<T>(Tape<T>&)>& build,
                                  std::vector<Tensor<T>> leaves, T eps, T tol) {
    for (auto& l : leaves) {
        l.set_requires_grad(true);
        l.zero_grad();
    }
    std::vector<std::vector<T>> analytic;
    {
        Tape<T> tape;
        auto loss = build(tape);
        tape.backward(loss);
        for (auto& l : leaves) analytic.emplace_back(l.grad().begin(), l.grad().end());
    }
    auto eval = [&]() -> T {
        Tape<T> tape;
        return build(tape).item();
    };
    GradCheckReport rep;
    rep.passed = true;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto vals = leaves[li].values_mut();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const T saved = vals[i];
            vals[i] = saved + eps;
            const T up = eval();
            vals[i] = saved - eps;
            const T dn = eval();
            vals[i] = saved;
            const double numeric = (static_cast<double>(up) - static_cast<double>(dn)) /
                                   (2.0 * static_cast<double>(eps));
            const double a = static_cast<double>(analytic[li][i]);
            const double denom = std::max({std::abs(a), std::abs(numeric), 1.0});
            const double rel = std::abs(a - numeric) / denom;
            ++rep.checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_leaf = li;
                rep.worst_index = i;
            }
        }
    }
    rep.passed = rep.max_rel_err <= static_cast<double>(tol);
    return rep;
}

template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>(Tape<T>&, const Tensor<T>&)>& f,
                           Tensor<T> x, T eps, T tol) {
    auto build = [&f, x](Tape<T>& tape) { return f(tape, x); };
    return grad_check_leaves<T>(build, {x}, eps, tol);
}

} // namespace maae
