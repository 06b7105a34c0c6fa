#pragma once

#include <array>
#include <cmath>
#include <limits>

#include "mlc/tensor.hpp"

// Differentiable operation catalog. Shape rules, per op:
//   add(a, b)                 identical shapes, or b a vector of length a.shape.back()
//                             broadcast across a's leading dims
//   sub(a, b), mul(a, b)      identical shapes
//   scalar_mul(a, c)          any shape
//   matmul(a, b)              (..., m, k) x (..., k, n) -> (..., m, n); leading dims
//                             broadcast (equal, 1, or absent)
//   conv2d(x, w, stride, pad) x (B, H, W, Cin), w (kh, kw, Cin, Cout), zero padding
//   relu/sigmoid/softplus/log/exp/power(x, e)   elementwise, any shape
//   softmax_lastdim(x)        normalizes over the last dim
//   mean_axes/sum_axes(x, axes)  reduces the given axes, keepdims=false
//   reshape(x, dims)          same element count
//   transpose(x, perm)        perm a permutation of axes; empty = reverse all
//   layer_norm_lastdim(x, gain, shift, eps)   gain/shift vectors of length x.shape.back()
//   pad2d(x, {top,bottom,left,right})   zero-pads H, W of (H,W,C) or (B,H,W,C)
//   max_pool2d(x, window, stride)       x (B, H, W, C), no padding

namespace mlc {

template <typename S>
struct OpAttrs {
    S scalar = S(0);                       // scalar_mul factor / power exponent
    std::vector<std::size_t> axes;         // mean_axes, sum_axes
    std::vector<std::size_t> dims;         // reshape target
    std::vector<std::size_t> perm;         // transpose
    std::size_t stride = 1;                // conv2d, max_pool2d
    std::size_t pad = 0;                   // conv2d
    std::size_t window = 2;                // max_pool2d
    std::array<std::size_t, 4> pads{0, 0, 0, 0};  // pad2d: top, bottom, left, right
    S eps = S(1e-5);                       // layer_norm_lastdim
};

// Numerically stable scalar primitives, shared with the loss module.
template <typename S>
inline S sigmoid_scalar(S z) {
    if (z >= S(0)) return S(1) / (S(1) + std::exp(-z));
    S e = std::exp(z);
    return e / (S(1) + e);
}

template <typename S>
inline S softplus_scalar(S z) {
    // log(1 + e^z) = max(z, 0) + log1p(e^{-|z|})
    S a = z > S(0) ? z : S(0);
    return a + std::log1p(std::exp(-std::abs(z)));
}

namespace detail {

template <typename S>
inline void check_finite_values(const std::vector<S>& v, OpKind op) {
    for (S x : v)
        if (!std::isfinite(x))
            throw NonFinite(std::string("non-finite value in output of ") + op_name(op));
}

template <typename S>
Tensor<S> make_op(OpKind op, std::vector<std::size_t> shape, std::vector<S> value,
                  std::vector<Tensor<S>> inputs,
                  std::function<void(TensorNode<S>&)> backward_fn) {
    if (finite_checks_enabled()) check_finite_values(value, op);
    auto node = std::make_shared<TensorNode<S>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool track = false;
    if (autograd_enabled())
        for (const auto& t : inputs) track = track || t.requires_grad();
    if (track) {
        node->op = op;
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (const auto& t : inputs) node->parents.push_back(t.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor<S>(std::move(node));
}

inline std::vector<std::size_t> row_major_strides(const std::vector<std::size_t>& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (std::size_t d = shape.size(); d-- > 1;) s[d - 1] = s[d] * shape[d];
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    const auto& av = a.data();
    const auto& bv = b.data();
    bool bcast = false;
    if (a.shape() != b.shape()) {
        bcast = b.rank() == 1 && a.rank() >= 1 && b.shape()[0] == a.shape().back();
        if (!bcast)
            throw ShapeMismatch("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::vector<S> out(av.size());
    if (bcast) {
        std::size_t last = b.shape()[0];
        for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i % last];
    } else {
        for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    }
    return detail::make_op<S>(
        OpKind::add, a.shape(), std::move(out), {a, b}, [bcast](TensorNode<S>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                if (bcast) {
                    std::size_t last = pb.value.size();
                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                        pb.grad[i % last] += self.grad[i];
                } else {
                    for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i];
                }
            }
        });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeMismatch("sub: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<S> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    return detail::make_op<S>(OpKind::sub, a.shape(), std::move(out), {a, b},
                              [](TensorNode<S>& self) {
                                  auto& pa = *self.parents[0];
                                  auto& pb = *self.parents[1];
                                  if (pa.requires_grad) {
                                      pa.ensure_grad();
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          pa.grad[i] += self.grad[i];
                                  }
                                  if (pb.requires_grad) {
                                      pb.ensure_grad();
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          pb.grad[i] -= self.grad[i];
                                  }
                              });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeMismatch("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<S> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    return detail::make_op<S>(OpKind::mul, a.shape(), std::move(out), {a, b},
                              [](TensorNode<S>& self) {
                                  auto& pa = *self.parents[0];
                                  auto& pb = *self.parents[1];
                                  if (pa.requires_grad) {
                                      pa.ensure_grad();
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          pa.grad[i] += self.grad[i] * pb.value[i];
                                  }
                                  if (pb.requires_grad) {
                                      pb.ensure_grad();
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          pb.grad[i] += self.grad[i] * pa.value[i];
                                  }
                              });
}

template <typename S>
Tensor<S> scalar_mul(const Tensor<S>& a, S c) {
    const auto& av = a.data();
    std::vector<S> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
    return detail::make_op<S>(OpKind::scalar_mul, a.shape(), std::move(out), {a},
                              [c](TensorNode<S>& self) {
                                  auto& pa = *self.parents[0];
                                  if (!pa.requires_grad) return;
                                  pa.ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      pa.grad[i] += self.grad[i] * c;
                              });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
    const auto& av = a.data();
    std::vector<S> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > S(0) ? av[i] : S(0);
    return detail::make_op<S>(OpKind::relu, a.shape(), std::move(out), {a},
                              [](TensorNode<S>& self) {
                                  auto& pa = *self.parents[0];
                                  if (!pa.requires_grad) return;
                                  pa.ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      if (pa.value[i] > S(0)) pa.grad[i] += self.grad[i];
                              });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    const auto& av = a.data();
    std::vector<S> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = sigmoid_scalar(av[i]);
    return detail::make_op<S>(OpKind::sigmoid, a.shape(), std::move(out), {a},
                              [](TensorNode<S>& self) {
                                  auto& pa = *self.parents[0];
                                  if (!pa.requires_grad) return;
                                  pa.ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                      S y = self.value[i];
                                      pa.grad[i] += self.grad[i] * y * (S(1) - y);
                                  }
                              });
}

template <typename S>
Tensor<S> softplus(const Tensor<S>& a) {
    const auto& av = a.data();
    std::vector<S> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = softplus_scalar(av[i]);
    return detail::make_op<S>(OpKind::softplus, a.shape(), std::move(out), {a},
                              [](TensorNode<S>& self) {
                                  auto& pa = *self.parents[0];
                                  if (!pa.requires_grad) return;
                                  pa.ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      pa.grad[i] += self.grad[i] * sigmoid_scalar(pa.value[i]);
                              });
}

template <typename S>
Tensor<S> log(const Tensor<S>& a) {
    const auto& av = a.data();
    std::vector<S> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::log(av[i]);
    return detail::make_op<S>(OpKind::log, a.shape(), std::move(out), {a},
                              [](TensorNode<S>& self) {
                                  auto& pa = *self.parents[0];
                                  if (!pa.requires_grad) return;
                                  pa.ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      pa.grad[i] += self.grad[i] / pa.value[i];
                              });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
    const auto& av = a.data();
    std::vector<S> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::exp(av[i]);
    return detail::make_op<S>(OpKind::exp, a.shape(), std::move(out), {a},
                              [](TensorNode<S>& self) {
                                  auto& pa = *self.parents[0];
                                  if (!pa.requires_grad) return;
                                  pa.ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      pa.grad[i] += self.grad[i] * self.value[i];
                              });
}

template <typename S>
Tensor<S> power(const Tensor<S>& a, S exponent) {
    const auto& av = a.data();
    std::vector<S> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::pow(av[i], exponent);
    return detail::make_op<S>(
        OpKind::power, a.shape(), std::move(out), {a}, [exponent](TensorNode<S>& self) {
            auto& pa = *self.parents[0];
            if (!pa.requires_grad) return;
            if (exponent == S(0)) return;  // constant 1, zero gradient
            pa.ensure_grad();
            if (exponent == S(1)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
                return;
            }
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pa.grad[i] += self.grad[i] * exponent * std::pow(pa.value[i], exponent - S(1));
        });
}

template <typename S>
Tensor<S> softmax_lastdim(const Tensor<S>& a) {
    if (a.rank() < 1) throw ShapeMismatch("softmax_lastdim: rank >= 1 required");
    std::size_t d = a.shape().back();
    std::size_t rows = a.size() / d;
    const auto& av = a.data();
    std::vector<S> out(av.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const S* x = &av[r * d];
        S* y = &out[r * d];
        S mx = x[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, x[j]);
        S sum = S(0);
        for (std::size_t j = 0; j < d; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        for (std::size_t j = 0; j < d; ++j) y[j] /= sum;
    }
    return detail::make_op<S>(OpKind::softmax_lastdim, a.shape(), std::move(out), {a},
                              [d](TensorNode<S>& self) {
                                  auto& pa = *self.parents[0];
                                  if (!pa.requires_grad) return;
                                  pa.ensure_grad();
                                  std::size_t rows = self.value.size() / d;
                                  for (std::size_t r = 0; r < rows; ++r) {
                                      const S* y = &self.value[r * d];
                                      const S* g = &self.grad[r * d];
                                      S dot = S(0);
                                      for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
                                      S* dst = &pa.grad[r * d];
                                      for (std::size_t j = 0; j < d; ++j)
                                          dst[j] += y[j] * (g[j] - dot);
                                  }
                              });
}

// ---------------------------------------------------------------------------
// matmul with leading-dim broadcasting
// ---------------------------------------------------------------------------

namespace detail {

struct MatmulPlan {
    std::size_t m, k, n;
    std::size_t batch;                     // product of output leading dims
    std::vector<std::size_t> out_lead;
    std::vector<std::size_t> a_bstride;    // element stride per output lead dim; 0 = broadcast
    std::vector<std::size_t> b_bstride;

    void offsets(std::size_t beta, std::size_t& aoff, std::size_t& boff) const {
        aoff = 0;
        boff = 0;
        std::size_t rem = beta;
        for (std::size_t i = out_lead.size(); i-- > 0;) {
            std::size_t d = rem % out_lead[i];
            rem /= out_lead[i];
            aoff += d * a_bstride[i];
            boff += d * b_bstride[i];
        }
    }
};

inline MatmulPlan matmul_plan(const std::vector<std::size_t>& as,
                              const std::vector<std::size_t>& bs) {
    if (as.size() < 2 || bs.size() < 2)
        throw ShapeMismatch("matmul: both inputs need rank >= 2, got " + shape_str(as) + " x " +
                            shape_str(bs));
    MatmulPlan p;
    p.m = as[as.size() - 2];
    p.k = as[as.size() - 1];
    p.n = bs[bs.size() - 1];
    if (bs[bs.size() - 2] != p.k)
        throw ShapeMismatch("matmul: inner dims disagree, " + shape_str(as) + " x " +
                            shape_str(bs));
    const std::size_t la = as.size() - 2, lb = bs.size() - 2;
    const std::size_t L = std::max(la, lb);
    p.out_lead.resize(L);
    p.a_bstride.assign(L, 0);
    p.b_bstride.assign(L, 0);
    auto astr = row_major_strides(as);
    auto bstr = row_major_strides(bs);
    p.batch = 1;
    for (std::size_t i = 0; i < L; ++i) {
        std::size_t da = (i + la >= L) ? as[i - (L - la)] : 1;
        std::size_t db = (i + lb >= L) ? bs[i - (L - lb)] : 1;
        if (da != db && da != 1 && db != 1)
            throw ShapeMismatch("matmul: leading dims do not broadcast, " + shape_str(as) +
                                " x " + shape_str(bs));
        p.out_lead[i] = std::max(da, db);
        p.batch *= p.out_lead[i];
        if (i + la >= L && da != 1) p.a_bstride[i] = astr[i - (L - la)];
        if (i + lb >= L && db != 1) p.b_bstride[i] = bstr[i - (L - lb)];
    }
    return p;
}

}  // namespace detail

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    const detail::MatmulPlan plan = detail::matmul_plan(a.shape(), b.shape());
    const std::size_t m = plan.m, k = plan.k, n = plan.n;
    std::vector<std::size_t> out_shape = plan.out_lead;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<S> out(plan.batch * m * n, S(0));
    const auto& av = a.data();
    const auto& bv = b.data();
    for (std::size_t beta = 0; beta < plan.batch; ++beta) {
        std::size_t aoff, boff;
        plan.offsets(beta, aoff, boff);
        const std::size_t ooff = beta * m * n;
        for (std::size_t i = 0; i < m; ++i) {
            S* orow = &out[ooff + i * n];
            for (std::size_t kk = 0; kk < k; ++kk) {
                const S v = av[aoff + i * k + kk];
                const S* brow = &bv[boff + kk * n];
                for (std::size_t j = 0; j < n; ++j) orow[j] += v * brow[j];
            }
        }
    }
    return detail::make_op<S>(
        OpKind::matmul, std::move(out_shape), std::move(out), {a, b},
        [plan](TensorNode<S>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            const std::size_t m = plan.m, k = plan.k, n = plan.n;
            if (pa.requires_grad) pa.ensure_grad();
            if (pb.requires_grad) pb.ensure_grad();
            for (std::size_t beta = 0; beta < plan.batch; ++beta) {
                std::size_t aoff, boff;
                plan.offsets(beta, aoff, boff);
                const std::size_t ooff = beta * m * n;
                if (pa.requires_grad) {
                    for (std::size_t i = 0; i < m; ++i) {
                        const S* grow = &self.grad[ooff + i * n];
                        for (std::size_t kk = 0; kk < k; ++kk) {
                            const S* brow = &pb.value[boff + kk * n];
                            S acc = S(0);
                            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                            pa.grad[aoff + i * k + kk] += acc;
                        }
                    }
                }
                if (pb.requires_grad) {
                    for (std::size_t i = 0; i < m; ++i) {
                        const S* grow = &self.grad[ooff + i * n];
                        const S* arow = &pa.value[aoff + i * k];
                        for (std::size_t kk = 0; kk < k; ++kk) {
                            S* drow = &pb.grad[boff + kk * n];
                            const S v = arow[kk];
                            for (std::size_t j = 0; j < n; ++j) drow[j] += v * grow[j];
                        }
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// conv2d (NHWC, zero padding, square stride)
// ---------------------------------------------------------------------------

namespace detail {
struct ConvDims {
    std::size_t B, H, W, Ci, kh, kw, Co, Ho, Wo, stride;
    std::ptrdiff_t pad;
};
}  // namespace detail

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, std::size_t stride = 1,
                 std::size_t pad = 0) {
    if (x.rank() != 4 || w.rank() != 4)
        throw ShapeMismatch("conv2d: x must be (B,H,W,Cin) and w (kh,kw,Cin,Cout)");
    if (stride == 0) throw ShapeMismatch("conv2d: stride must be >= 1");
    detail::ConvDims d;
    d.B = x.shape()[0];
    d.H = x.shape()[1];
    d.W = x.shape()[2];
    d.Ci = x.shape()[3];
    d.kh = w.shape()[0];
    d.kw = w.shape()[1];
    d.Co = w.shape()[3];
    d.stride = stride;
    d.pad = static_cast<std::ptrdiff_t>(pad);
    if (w.shape()[2] != d.Ci)
        throw ShapeMismatch("conv2d: weight channels " + std::to_string(w.shape()[2]) +
                            " vs input channels " + std::to_string(d.Ci));
    if (d.H + 2 * pad < d.kh || d.W + 2 * pad < d.kw)
        throw ShapeMismatch("conv2d: kernel larger than padded input");
    d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
    d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;

    std::vector<S> out(d.B * d.Ho * d.Wo * d.Co, S(0));
    const auto& xv = x.data();
    const auto& wv = w.data();
    for (std::size_t b = 0; b < d.B; ++b)
        for (std::size_t oy = 0; oy < d.Ho; ++oy)
            for (std::size_t ox = 0; ox < d.Wo; ++ox) {
                S* orow = &out[((b * d.Ho + oy) * d.Wo + ox) * d.Co];
                const std::ptrdiff_t iy0 = static_cast<std::ptrdiff_t>(oy * stride) - d.pad;
                const std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(ox * stride) - d.pad;
                for (std::size_t ky = 0; ky < d.kh; ++ky) {
                    const std::ptrdiff_t iy = iy0 + static_cast<std::ptrdiff_t>(ky);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.H)) continue;
                    for (std::size_t kx = 0; kx < d.kw; ++kx) {
                        const std::ptrdiff_t ix = ix0 + static_cast<std::ptrdiff_t>(kx);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.W)) continue;
                        const S* xrow = &xv[((b * d.H + iy) * d.W + ix) * d.Ci];
                        const S* wrow = &wv[(ky * d.kw + kx) * d.Ci * d.Co];
                        for (std::size_t ci = 0; ci < d.Ci; ++ci) {
                            const S v = xrow[ci];
                            const S* wc = &wrow[ci * d.Co];
                            for (std::size_t co = 0; co < d.Co; ++co) orow[co] += v * wc[co];
                        }
                    }
                }
            }

    return detail::make_op<S>(
        OpKind::conv2d, {d.B, d.Ho, d.Wo, d.Co}, std::move(out), {x, w},
        [d](TensorNode<S>& self) {
            auto& px = *self.parents[0];
            auto& pw = *self.parents[1];
            if (px.requires_grad) px.ensure_grad();
            if (pw.requires_grad) pw.ensure_grad();
            if (!px.requires_grad && !pw.requires_grad) return;
            for (std::size_t b = 0; b < d.B; ++b)
                for (std::size_t oy = 0; oy < d.Ho; ++oy)
                    for (std::size_t ox = 0; ox < d.Wo; ++ox) {
                        const S* grow = &self.grad[((b * d.Ho + oy) * d.Wo + ox) * d.Co];
                        const std::ptrdiff_t iy0 =
                            static_cast<std::ptrdiff_t>(oy * d.stride) - d.pad;
                        const std::ptrdiff_t ix0 =
                            static_cast<std::ptrdiff_t>(ox * d.stride) - d.pad;
                        for (std::size_t ky = 0; ky < d.kh; ++ky) {
                            const std::ptrdiff_t iy = iy0 + static_cast<std::ptrdiff_t>(ky);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.H)) continue;
                            for (std::size_t kx = 0; kx < d.kw; ++kx) {
                                const std::ptrdiff_t ix = ix0 + static_cast<std::ptrdiff_t>(kx);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.W)) continue;
                                const std::size_t xoff = ((b * d.H + iy) * d.W + ix) * d.Ci;
                                const std::size_t woff = (ky * d.kw + kx) * d.Ci * d.Co;
                                for (std::size_t ci = 0; ci < d.Ci; ++ci) {
                                    if (pw.requires_grad) {
                                        const S v = px.value[xoff + ci];
                                        S* wrow = &pw.grad[woff + ci * d.Co];
                                        for (std::size_t co = 0; co < d.Co; ++co)
                                            wrow[co] += v * grow[co];
                                    }
                                    if (px.requires_grad) {
                                        const S* wrow = &pw.value[woff + ci * d.Co];
                                        S acc = S(0);
                                        for (std::size_t co = 0; co < d.Co; ++co)
                                            acc += wrow[co] * grow[co];
                                        px.grad[xoff + ci] += acc;
                                    }
                                }
                            }
                        }
                    }
        });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
Tensor<S> reduce_axes(const Tensor<S>& a, std::vector<std::size_t> axes, bool is_mean) {
    const auto& shape = a.shape();
    const std::size_t rank = shape.size();
    if (axes.empty()) throw ShapeMismatch("reduce: axes must be non-empty");
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    for (std::size_t ax : axes)
        if (ax >= rank) throw ShapeMismatch("reduce: axis " + std::to_string(ax) +
                                            " out of range for " + shape_str(shape));
    std::vector<bool> reduced(rank, false);
    for (std::size_t ax : axes) reduced[ax] = true;

    std::vector<std::size_t> out_shape;
    std::size_t count = 1;
    for (std::size_t dd = 0; dd < rank; ++dd) {
        if (reduced[dd])
            count *= shape[dd];
        else
            out_shape.push_back(shape[dd]);
    }
    // output stride contributed by each input dim (0 for reduced dims)
    std::vector<std::size_t> ostride(rank, 0);
    {
        std::size_t s = 1;
        for (std::size_t dd = rank; dd-- > 0;) {
            if (!reduced[dd]) {
                ostride[dd] = s;
                s *= shape[dd];
            }
        }
    }

    const auto& av = a.data();
    std::vector<S> out(shape_size(out_shape), S(0));
    {
        std::vector<std::size_t> idx(rank, 0);
        std::size_t ooff = 0;
        for (std::size_t flat = 0; flat < av.size(); ++flat) {
            out[ooff] += av[flat];
            for (std::size_t dd = rank; dd-- > 0;) {
                ++idx[dd];
                ooff += ostride[dd];
                if (idx[dd] < shape[dd]) break;
                ooff -= ostride[dd] * shape[dd];
                idx[dd] = 0;
            }
        }
    }
    const S scale = is_mean ? S(1) / static_cast<S>(count) : S(1);
    if (is_mean)
        for (S& v : out) v *= scale;

    return detail::make_op<S>(
        is_mean ? OpKind::mean_axes : OpKind::sum_axes, std::move(out_shape), std::move(out),
        {a}, [shape, ostride, scale, rank](TensorNode<S>& self) {
            auto& pa = *self.parents[0];
            if (!pa.requires_grad) return;
            pa.ensure_grad();
            std::vector<std::size_t> idx(rank, 0);
            std::size_t ooff = 0;
            for (std::size_t flat = 0; flat < pa.value.size(); ++flat) {
                pa.grad[flat] += self.grad[ooff] * scale;
                for (std::size_t dd = rank; dd-- > 0;) {
                    ++idx[dd];
                    ooff += ostride[dd];
                    if (idx[dd] < shape[dd]) break;
                    ooff -= ostride[dd] * shape[dd];
                    idx[dd] = 0;
                }
            }
        });
}

}  // namespace detail

template <typename S>
Tensor<S> mean_axes(const Tensor<S>& a, std::vector<std::size_t> axes) {
    return detail::reduce_axes(a, std::move(axes), true);
}

template <typename S>
Tensor<S> sum_axes(const Tensor<S>& a, std::vector<std::size_t> axes) {
    return detail::reduce_axes(a, std::move(axes), false);
}

// ---------------------------------------------------------------------------
// shape manipulation
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, std::vector<std::size_t> dims) {
    if (shape_size(dims) != a.size())
        throw ShapeMismatch("reshape: " + shape_str(a.shape()) + " -> " + shape_str(dims) +
                            " changes element count");
    std::vector<S> out = a.data();
    return detail::make_op<S>(OpKind::reshape, std::move(dims), std::move(out), {a},
                              [](TensorNode<S>& self) {
                                  auto& pa = *self.parents[0];
                                  if (!pa.requires_grad) return;
                                  pa.ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      pa.grad[i] += self.grad[i];
                              });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a, std::vector<std::size_t> perm = {}) {
    const std::size_t rank = a.rank();
    if (perm.empty()) {
        perm.resize(rank);
        for (std::size_t i = 0; i < rank; ++i) perm[i] = rank - 1 - i;
    }
    if (perm.size() != rank) throw ShapeMismatch("transpose: perm rank mismatch");
    {
        std::vector<bool> seen(rank, false);
        for (std::size_t p : perm) {
            if (p >= rank || seen[p]) throw ShapeMismatch("transpose: invalid permutation");
            seen[p] = true;
        }
    }
    std::vector<std::size_t> out_shape(rank);
    for (std::size_t i = 0; i < rank; ++i) out_shape[i] = a.shape()[perm[i]];
    auto in_strides = detail::row_major_strides(a.shape());
    std::vector<std::size_t> map_stride(rank);
    for (std::size_t i = 0; i < rank; ++i) map_stride[i] = in_strides[perm[i]];

    const auto& av = a.data();
    std::vector<S> out(av.size());
    {
        std::vector<std::size_t> idx(rank, 0);
        std::size_t in_off = 0;
        for (std::size_t flat = 0; flat < av.size(); ++flat) {
            out[flat] = av[in_off];
            for (std::size_t dd = rank; dd-- > 0;) {
                ++idx[dd];
                in_off += map_stride[dd];
                if (idx[dd] < out_shape[dd]) break;
                in_off -= map_stride[dd] * out_shape[dd];
                idx[dd] = 0;
            }
        }
    }
    return detail::make_op<S>(
        OpKind::transpose, out_shape, std::move(out), {a},
        [out_shape, map_stride, rank](TensorNode<S>& self) {
            auto& pa = *self.parents[0];
            if (!pa.requires_grad) return;
            pa.ensure_grad();
            std::vector<std::size_t> idx(rank, 0);
            std::size_t in_off = 0;
            for (std::size_t flat = 0; flat < self.grad.size(); ++flat) {
                pa.grad[in_off] += self.grad[flat];
                for (std::size_t dd = rank; dd-- > 0;) {
                    ++idx[dd];
                    in_off += map_stride[dd];
                    if (idx[dd] < out_shape[dd]) break;
                    in_off -= map_stride[dd] * out_shape[dd];
                    idx[dd] = 0;
                }
            }
        });
}

// ---------------------------------------------------------------------------
// layer norm over the last dim
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> layer_norm_lastdim(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& shift,
                             S eps = S(1e-5)) {
    if (x.rank() < 1) throw ShapeMismatch("layer_norm_lastdim: rank >= 1 required");
    const std::size_t d = x.shape().back();
    if (gain.rank() != 1 || gain.shape()[0] != d || shift.rank() != 1 || shift.shape()[0] != d)
        throw ShapeMismatch("layer_norm_lastdim: gain/shift must be vectors of length " +
                            std::to_string(d));
    const std::size_t rows = x.size() / d;
    const auto& xv = x.data();
    const auto& gv = gain.data();
    const auto& sv = shift.data();
    std::vector<S> out(xv.size());
    std::vector<S> mean(rows), inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const S* row = &xv[r * d];
        S mu = S(0);
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<S>(d);
        S var = S(0);
        for (std::size_t j = 0; j < d; ++j) {
            S c = row[j] - mu;
            var += c * c;
        }
        var /= static_cast<S>(d);
        const S inv = S(1) / std::sqrt(var + eps);
        mean[r] = mu;
        inv_std[r] = inv;
        S* y = &out[r * d];
        for (std::size_t j = 0; j < d; ++j) y[j] = gv[j] * (row[j] - mu) * inv + sv[j];
    }
    return detail::make_op<S>(
        OpKind::layer_norm_lastdim, x.shape(), std::move(out), {x, gain, shift},
        [d, mean, inv_std](TensorNode<S>& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& ps = *self.parents[2];
            if (px.requires_grad) px.ensure_grad();
            if (pg.requires_grad) pg.ensure_grad();
            if (ps.requires_grad) ps.ensure_grad();
            const std::size_t rows = self.value.size() / d;
            const S dn = static_cast<S>(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const S* xrow = &px.value[r * d];
                const S* g = &self.grad[r * d];
                const S inv = inv_std[r];
                const S mu = mean[r];
                S s1 = S(0), s2 = S(0);
                for (std::size_t j = 0; j < d; ++j) {
                    const S xh = (xrow[j] - mu) * inv;
                    const S dxh = g[j] * pg.value[j];
                    s1 += dxh;
                    s2 += dxh * xh;
                }
                for (std::size_t j = 0; j < d; ++j) {
                    const S xh = (xrow[j] - mu) * inv;
                    if (px.requires_grad)
                        px.grad[r * d + j] += inv * (g[j] * pg.value[j] - s1 / dn - xh * s2 / dn);
                    if (pg.requires_grad) pg.grad[j] += g[j] * xh;
                    if (ps.requires_grad) ps.grad[j] += g[j];
                }
            }
        });
}

// ---------------------------------------------------------------------------
// spatial padding and pooling
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> pad2d(const Tensor<S>& a, std::array<std::size_t, 4> pads) {
    const std::size_t rank = a.rank();
    if (rank != 3 && rank != 4)
        throw ShapeMismatch("pad2d: expects (H,W,C) or (B,H,W,C), got " + shape_str(a.shape()));
    const std::size_t B = rank == 4 ? a.shape()[0] : 1;
    const std::size_t H = a.shape()[rank - 3], W = a.shape()[rank - 2], C = a.shape()[rank - 1];
    const auto [top, bottom, left, right] = pads;
    const std::size_t H2 = H + top + bottom, W2 = W + left + right;
    std::vector<std::size_t> out_shape = rank == 4
                                             ? std::vector<std::size_t>{B, H2, W2, C}
                                             : std::vector<std::size_t>{H2, W2, C};
    const auto& av = a.data();
    std::vector<S> out(shape_size(out_shape), S(0));
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xcol = 0; xcol < W; ++xcol) {
                const S* src = &av[((b * H + y) * W + xcol) * C];
                S* dst = &out[((b * H2 + y + top) * W2 + xcol + left) * C];
                for (std::size_t c = 0; c < C; ++c) dst[c] = src[c];
            }
    return detail::make_op<S>(
        OpKind::pad2d, std::move(out_shape), std::move(out), {a},
        [B, H, W, C, top, left, H2, W2](TensorNode<S>& self) {
            auto& pa = *self.parents[0];
            if (!pa.requires_grad) return;
            pa.ensure_grad();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t xcol = 0; xcol < W; ++xcol) {
                        const S* g = &self.grad[((b * H2 + y + top) * W2 + xcol + left) * C];
                        S* dst = &pa.grad[((b * H + y) * W + xcol) * C];
                        for (std::size_t c = 0; c < C; ++c) dst[c] += g[c];
                    }
        });
}

template <typename S>
Tensor<S> max_pool2d(const Tensor<S>& a, std::size_t window, std::size_t stride) {
    if (a.rank() != 4) throw ShapeMismatch("max_pool2d: expects (B,H,W,C)");
    if (window == 0 || stride == 0) throw ShapeMismatch("max_pool2d: window/stride must be >= 1");
    const std::size_t B = a.shape()[0], H = a.shape()[1], W = a.shape()[2], C = a.shape()[3];
    if (H < window || W < window) throw ShapeMismatch("max_pool2d: window larger than input");
    const std::size_t Ho = (H - window) / stride + 1;
    const std::size_t Wo = (W - window) / stride + 1;

    const auto& av = a.data();
    std::vector<S> out(B * Ho * Wo * C, std::numeric_limits<S>::lowest());
    std::vector<std::size_t> argmax(out.size(), 0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t oy = 0; oy < Ho; ++oy)
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                const std::size_t obase = ((b * Ho + oy) * Wo + ox) * C;
                for (std::size_t ky = 0; ky < window; ++ky)
                    for (std::size_t kx = 0; kx < window; ++kx) {
                        const std::size_t iy = oy * stride + ky, ix = ox * stride + kx;
                        const std::size_t ibase = ((b * H + iy) * W + ix) * C;
                        for (std::size_t c = 0; c < C; ++c) {
                            if (av[ibase + c] > out[obase + c]) {
                                out[obase + c] = av[ibase + c];
                                argmax[obase + c] = ibase + c;
                            }
                        }
                    }
            }
    return detail::make_op<S>(OpKind::max_pool2d, {B, Ho, Wo, C}, std::move(out), {a},
                              [argmax](TensorNode<S>& self) {
                                  auto& pa = *self.parents[0];
                                  if (!pa.requires_grad) return;
                                  pa.ensure_grad();
                                  for (std::size_t o = 0; o < self.grad.size(); ++o)
                                      pa.grad[argmax[o]] += self.grad[o];
                              });
}

// ---------------------------------------------------------------------------
// generic dispatcher
// ---------------------------------------------------------------------------

/// Invoke a catalog op by tag. Throws UnsupportedOp for tags outside the
/// catalog and ShapeMismatch when the input count is wrong for the op.
template <typename S>
Tensor<S> forward(OpKind op, const std::vector<Tensor<S>>& inputs, const OpAttrs<S>& attrs = {}) {
    auto need = [&](std::size_t n) {
        if (inputs.size() != n)
            throw ShapeMismatch(std::string(op_name(op)) + ": expects " + std::to_string(n) +
                                " inputs, got " + std::to_string(inputs.size()));
    };
    switch (op) {
        case OpKind::add: need(2); return add(inputs[0], inputs[1]);
        case OpKind::sub: need(2); return sub(inputs[0], inputs[1]);
        case OpKind::mul: need(2); return mul(inputs[0], inputs[1]);
        case OpKind::scalar_mul: need(1); return scalar_mul(inputs[0], attrs.scalar);
        case OpKind::matmul: need(2); return matmul(inputs[0], inputs[1]);
        case OpKind::conv2d: need(2); return conv2d(inputs[0], inputs[1], attrs.stride, attrs.pad);
        case OpKind::relu: need(1); return relu(inputs[0]);
        case OpKind::sigmoid: need(1); return sigmoid(inputs[0]);
        case OpKind::softmax_lastdim: need(1); return softmax_lastdim(inputs[0]);
        case OpKind::log: need(1); return log(inputs[0]);
        case OpKind::exp: need(1); return exp(inputs[0]);
        case OpKind::power: need(1); return power(inputs[0], attrs.scalar);
        case OpKind::mean_axes: need(1); return mean_axes(inputs[0], attrs.axes);
        case OpKind::sum_axes: need(1); return sum_axes(inputs[0], attrs.axes);
        case OpKind::reshape: need(1); return reshape(inputs[0], attrs.dims);
        case OpKind::transpose: need(1); return transpose(inputs[0], attrs.perm);
        case OpKind::layer_norm_lastdim:
            need(3);
            return layer_norm_lastdim(inputs[0], inputs[1], inputs[2], attrs.eps);
        case OpKind::pad2d: need(1); return pad2d(inputs[0], attrs.pads);
        case OpKind::max_pool2d: need(1); return max_pool2d(inputs[0], attrs.window, attrs.stride);
        case OpKind::softplus: need(1); return softplus(inputs[0]);
        case OpKind::leaf: break;
    }
    throw UnsupportedOp("forward: op " + std::to_string(static_cast<int>(op)) +
                        " is not in the catalog");
}

}  // namespace mlc
