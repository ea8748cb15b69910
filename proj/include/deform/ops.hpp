#pragma once

#include <cblas.h>

#include <cmath>
#include <cstring>

#include "deform/tensor.hpp"

namespace deform {

namespace detail {

inline std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

inline void dgemm(bool ta, bool tb, int m, int n, int k, const double* a, const double* b,
                  double* c, double beta = 0.0) {
  // Row-major C[m,n] = op(A) op(B) + beta*C.
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, 1.0, a, ta ? m : k, b, tb ? k : n, beta, c, n);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops. Shapes must match exactly, except that a 1-element
// tensor broadcasts against anything (scalar-tensor only, no general
// broadcasting).
// ---------------------------------------------------------------------------

namespace detail {

enum class BinKind { Add, Sub, Mul, Div };

inline const char* bin_name(BinKind k) {
  switch (k) {
    case BinKind::Add: return "add";
    case BinKind::Sub: return "sub";
    case BinKind::Mul: return "mul";
    default: return "div";
  }
}

inline Tensor binary_op(BinKind kind, const Tensor& a, const Tensor& b) {
  const bool sa = a.size() == 1, sb = b.size() == 1;
  if (!sa && !sb && a.shape() != b.shape())
    throw ShapeError(std::string(bin_name(kind)) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  const Shape& out_shape = sa ? b.shape() : a.shape();
  const int64_t n = shape_numel(out_shape);
  std::vector<double> out(static_cast<size_t>(n));
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (int64_t i = 0; i < n; ++i) {
    const double x = ad[sa ? 0 : i], y = bd[sb ? 0 : i];
    switch (kind) {
      case BinKind::Add: out[i] = x + y; break;
      case BinKind::Sub: out[i] = x - y; break;
      case BinKind::Mul: out[i] = x * y; break;
      case BinKind::Div: out[i] = x / y; break;
    }
  }
  return make_op_node(out_shape, std::move(out), {a, b}, [kind, a, b, sa, sb, n](TensorNode& o) {
    auto& an = *a.node();
    auto& bn = *b.node();
    for (int64_t i = 0; i < n; ++i) {
      const double g = o.grad[i];
      const double x = an.data[sa ? 0 : i], y = bn.data[sb ? 0 : i];
      double ga = 0, gb = 0;
      switch (kind) {
        case BinKind::Add: ga = g; gb = g; break;
        case BinKind::Sub: ga = g; gb = -g; break;
        case BinKind::Mul: ga = g * y; gb = g * x; break;
        case BinKind::Div: ga = g / y; gb = -g * x / (y * y); break;
      }
      if (an.requires_grad) an.grad[sa ? 0 : i] += ga;
      if (bn.requires_grad) bn.grad[sb ? 0 : i] += gb;
    }
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary_op(detail::BinKind::Add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary_op(detail::BinKind::Sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary_op(detail::BinKind::Mul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return detail::binary_op(detail::BinKind::Div, a, b); }

// ---------------------------------------------------------------------------
// Elementwise unary ops.
// ---------------------------------------------------------------------------

namespace detail {

template <class F, class DF>
Tensor unary_op(const char* name, const Tensor& a, F f, DF df) {
  const int64_t n = a.size();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = f(a.data()[i]);
  (void)name;
  return make_op_node(a.shape(), std::move(out), {a}, [a, df, n](TensorNode& o) {
    auto& an = *a.node();
    for (int64_t i = 0; i < n; ++i) an.grad[i] += o.grad[i] * df(an.data[i], o.data[i]);
  });
}

}  // namespace detail

inline Tensor neg(const Tensor& a) {
  return detail::unary_op("neg", a, [](double x) { return -x; },
                          [](double, double) { return -1.0; });
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::unary_op("scale", a, [c](double x) { return c * x; },
                          [c](double, double) { return c; });
}

inline Tensor add_const(const Tensor& a, double c) {
  return detail::unary_op("add_const", a, [c](double x) { return x + c; },
                          [](double, double) { return 1.0; });
}

inline Tensor exp_op(const Tensor& a) {
  return detail::unary_op("exp", a, [](double x) { return std::exp(x); },
                          [](double, double y) { return y; });
}

inline Tensor log_op(const Tensor& a) {
  return detail::unary_op("log", a, [](double x) { return std::log(x); },
                          [](double x, double) { return 1.0 / x; });
}

inline Tensor sqrt_op(const Tensor& a) {
  return detail::unary_op("sqrt", a, [](double x) { return std::sqrt(x); },
                          [](double, double y) { return 0.5 / y; });
}

// Debug hook for the gradcheck negative control: when nonzero, the leaky_relu
// VJP is deliberately wrong by this amount.
inline double& vjp_corruption() {
  static double v = 0.0;
  return v;
}

inline Tensor leaky_relu(const Tensor& a, double alpha = 0.01) {
  return detail::unary_op("leaky_relu", a,
                          [alpha](double x) { return x > 0 ? x : alpha * x; },
                          [alpha](double x, double) {
                            return (x > 0 ? 1.0 : alpha) + vjp_corruption();
                          });
}

inline Tensor softplus(const Tensor& a) {
  // log(1+e^x), overflow-safe
  return detail::unary_op("softplus", a,
                          [](double x) { return x > 30 ? x : std::log1p(std::exp(x)); },
                          [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  double s = 0;
  for (double v : a.data()) s += v;
  return make_op_node({1}, {s}, {a}, [a](TensorNode& o) {
    auto& an = *a.node();
    const double g = o.grad[0];
    for (auto& gv : an.grad) gv += g;
  });
}

inline Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  double s = 0;
  for (double v : a.data()) s += v;
  return make_op_node({1}, {s * inv}, {a}, [a, inv](TensorNode& o) {
    auto& an = *a.node();
    const double g = o.grad[0] * inv;
    for (auto& gv : an.grad) gv += g;
  });
}

// ---------------------------------------------------------------------------
// Shape ops.
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  return make_op_node(std::move(shape), a.data(), {a}, [a](TensorNode& o) {
    auto& an = *a.node();
    for (size_t i = 0; i < an.grad.size(); ++i) an.grad[i] += o.grad[i];
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != s0.size()) throw ShapeError("concat: rank mismatch");
    for (size_t d = 0; d < s0.size(); ++d)
      if (d != axis && p.shape()[d] != s0[d])
        throw ShapeError("concat: shape mismatch on dim " + std::to_string(d) + ": " +
                         shape_str(p.shape()) + " vs " + shape_str(s0));
    out_shape[axis] += p.shape()[axis];
  }
  // outer = product of dims before axis, inner = product after
  int64_t outer = 1, inner = 1;
  for (size_t d = 0; d < axis; ++d) outer *= s0[d];
  for (size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];
  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
  const int64_t out_ax = out_shape[axis];
  int64_t off = 0;
  for (const Tensor& p : parts) {
    const int64_t ax = p.shape()[axis];
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(&out[(o * out_ax + off) * inner], &p.data()[o * ax * inner],
                  static_cast<size_t>(ax * inner) * sizeof(double));
    off += ax;
  }
  std::vector<int64_t> ax_sizes;
  for (const Tensor& p : parts) ax_sizes.push_back(p.shape()[axis]);
  return make_op_node(out_shape, std::move(out), parts,
                      [parts, ax_sizes, outer, inner, out_ax](TensorNode& o) {
                        int64_t off = 0;
                        for (size_t pi = 0; pi < parts.size(); ++pi) {
                          auto& pn = *parts[pi].node();
                          const int64_t ax = ax_sizes[pi];
                          if (pn.requires_grad) {
                            for (int64_t ou = 0; ou < outer; ++ou) {
                              const double* src = &o.grad[(ou * out_ax + off) * inner];
                              double* dst = &pn.grad[ou * ax * inner];
                              for (int64_t i = 0; i < ax * inner; ++i) dst[i] += src[i];
                            }
                          }
                          off += ax;
                        }
                      });
}

inline Tensor slice(const Tensor& a, const std::vector<int64_t>& starts,
                    const std::vector<int64_t>& sizes) {
  const Shape& s = a.shape();
  if (starts.size() != s.size() || sizes.size() != s.size())
    throw ShapeError("slice: starts/sizes rank mismatch with " + shape_str(s));
  for (size_t d = 0; d < s.size(); ++d)
    if (starts[d] < 0 || sizes[d] < 1 || starts[d] + sizes[d] > s[d])
      throw ShapeError("slice: out of bounds on dim " + std::to_string(d) + " of " + shape_str(s));
  Shape out_shape(sizes.begin(), sizes.end());
  const auto ast = detail::row_major_strides(s);
  const int64_t n = shape_numel(out_shape);
  std::vector<double> out(static_cast<size_t>(n));
  std::vector<int64_t> idx(s.size(), 0);
  for (int64_t i = 0; i < n; ++i) {
    int64_t src = 0;
    for (size_t d = 0; d < s.size(); ++d) src += (starts[d] + idx[d]) * ast[d];
    out[i] = a.data()[src];
    for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
      if (++idx[d] < sizes[d]) break;
      idx[d] = 0;
    }
  }
  return make_op_node(out_shape, std::move(out), {a},
                      [a, starts, sizes, ast, n](TensorNode& o) {
                        auto& an = *a.node();
                        std::vector<int64_t> idx(starts.size(), 0);
                        for (int64_t i = 0; i < n; ++i) {
                          int64_t src = 0;
                          for (size_t d = 0; d < starts.size(); ++d)
                            src += (starts[d] + idx[d]) * ast[d];
                          an.grad[src] += o.grad[i];
                          for (int d = static_cast<int>(starts.size()) - 1; d >= 0; --d) {
                            if (++idx[d] < sizes[d]) break;
                            idx[d] = 0;
                          }
                        }
                      });
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank-2, got " + shape_str(a.shape()));
  const int64_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.data().size());
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  return make_op_node({n, m}, std::move(out), {a}, [a, m, n](TensorNode& o) {
    auto& an = *a.node();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) an.grad[i * n + j] += o.grad[j * m + i];
  });
}

// ---------------------------------------------------------------------------
// matmul: [m,k] x [k,n] -> [m,n]
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int m = static_cast<int>(a.dim(0)), k = static_cast<int>(a.dim(1)),
            n = static_cast<int>(b.dim(1));
  std::vector<double> out(static_cast<size_t>(m) * n);
  detail::dgemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data());
  return make_op_node({m, n}, std::move(out), {a, b}, [a, b, m, n, k](TensorNode& o) {
    auto& an = *a.node();
    auto& bn = *b.node();
    if (an.requires_grad)  // dA = dC B^T
      detail::dgemm(false, true, m, k, n, o.grad.data(), bn.data.data(), an.grad.data(), 1.0);
    if (bn.requires_grad)  // dB = A^T dC
      detail::dgemm(true, false, k, n, m, an.data.data(), o.grad.data(), bn.grad.data(), 1.0);
  });
}

// ---------------------------------------------------------------------------
// conv2d: input [H,W,Cin], kernel [kh,kw,Cin,Cout], optional bias [Cout],
// zero padding, square stride. Output [Ho,Wo,Cout].
// ---------------------------------------------------------------------------

namespace detail {

struct ConvDims {
  int H, W, Cin, kh, kw, Cout, stride, pad, Ho, Wo;
};

inline ConvDims conv_dims(const Tensor& input, const Tensor& kernel, int stride, int pad) {
  if (input.rank() != 3 || kernel.rank() != 4)
    throw ShapeError("conv2d: input must be [H,W,Cin], kernel [kh,kw,Cin,Cout]; got " +
                     shape_str(input.shape()) + " and " + shape_str(kernel.shape()));
  ConvDims d;
  d.H = static_cast<int>(input.dim(0));
  d.W = static_cast<int>(input.dim(1));
  d.Cin = static_cast<int>(input.dim(2));
  d.kh = static_cast<int>(kernel.dim(0));
  d.kw = static_cast<int>(kernel.dim(1));
  d.Cout = static_cast<int>(kernel.dim(3));
  d.stride = stride;
  d.pad = pad;
  if (kernel.dim(2) != d.Cin)
    throw ShapeError("conv2d: kernel Cin " + std::to_string(kernel.dim(2)) +
                     " != input Cin " + std::to_string(d.Cin));
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: bad stride/pad");
  d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
  d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;
  if (d.Ho < 1 || d.Wo < 1)
    throw ShapeError("conv2d: kernel larger than padded input for " + shape_str(input.shape()));
  return d;
}

// col layout: [Ho*Wo, kh*kw*Cin], entry order (dh, dw, cin) matching the
// flattened kernel's leading dims.
inline void im2col(const double* img, const ConvDims& d, double* col) {
  const int K = d.kh * d.kw * d.Cin;
  for (int oy = 0; oy < d.Ho; ++oy) {
    for (int ox = 0; ox < d.Wo; ++ox) {
      double* row = col + (static_cast<int64_t>(oy) * d.Wo + ox) * K;
      for (int dy = 0; dy < d.kh; ++dy) {
        const int iy = oy * d.stride + dy - d.pad;
        for (int dx = 0; dx < d.kw; ++dx) {
          const int ix = ox * d.stride + dx - d.pad;
          double* dst = row + (dy * d.kw + dx) * d.Cin;
          if (iy < 0 || iy >= d.H || ix < 0 || ix >= d.W) {
            std::memset(dst, 0, sizeof(double) * d.Cin);
          } else {
            std::memcpy(dst, img + (static_cast<int64_t>(iy) * d.W + ix) * d.Cin,
                        sizeof(double) * d.Cin);
          }
        }
      }
    }
  }
}

inline void col2im_add(const double* col, const ConvDims& d, double* img) {
  const int K = d.kh * d.kw * d.Cin;
  for (int oy = 0; oy < d.Ho; ++oy) {
    for (int ox = 0; ox < d.Wo; ++ox) {
      const double* row = col + (static_cast<int64_t>(oy) * d.Wo + ox) * K;
      for (int dy = 0; dy < d.kh; ++dy) {
        const int iy = oy * d.stride + dy - d.pad;
        if (iy < 0 || iy >= d.H) continue;
        for (int dx = 0; dx < d.kw; ++dx) {
          const int ix = ox * d.stride + dx - d.pad;
          if (ix < 0 || ix >= d.W) continue;
          const double* src = row + (dy * d.kw + dx) * d.Cin;
          double* dst = img + (static_cast<int64_t>(iy) * d.W + ix) * d.Cin;
          for (int c = 0; c < d.Cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace detail

inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
                     int pad) {
  const detail::ConvDims d = detail::conv_dims(input, kernel, stride, pad);
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != d.Cout))
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " != [Cout]");
  const int K = d.kh * d.kw * d.Cin;
  const int M = d.Ho * d.Wo;
  std::vector<double> col(static_cast<size_t>(M) * K);
  detail::im2col(input.data().data(), d, col.data());
  std::vector<double> out(static_cast<size_t>(M) * d.Cout);
  detail::dgemm(false, false, M, d.Cout, K, col.data(), kernel.data().data(), out.data());
  if (has_bias) {
    for (int i = 0; i < M; ++i)
      for (int c = 0; c < d.Cout; ++c) out[static_cast<int64_t>(i) * d.Cout + c] += bias.data()[c];
  }
  std::vector<Tensor> inputs{input, kernel};
  if (has_bias) inputs.push_back(bias);
  return make_op_node({d.Ho, d.Wo, d.Cout}, std::move(out), inputs,
                      [input, kernel, bias, has_bias, d, K, M](TensorNode& o) {
                        auto& in = *input.node();
                        auto& kn = *kernel.node();
                        if (kn.requires_grad || in.requires_grad) {
                          std::vector<double> col(static_cast<size_t>(M) * K);
                          detail::im2col(in.data.data(), d, col.data());
                          if (kn.requires_grad)  // dW = col^T dOut
                            detail::dgemm(true, false, K, d.Cout, M, col.data(), o.grad.data(),
                                          kn.grad.data(), 1.0);
                          if (in.requires_grad) {  // dcol = dOut W^T, scatter back
                            std::vector<double> dcol(static_cast<size_t>(M) * K);
                            detail::dgemm(false, true, M, K, d.Cout, o.grad.data(), kn.data.data(),
                                          dcol.data());
                            detail::col2im_add(dcol.data(), d, in.grad.data());
                          }
                        }
                        if (has_bias && bias.node()->requires_grad) {
                          auto& bn = *bias.node();
                          for (int i = 0; i < M; ++i)
                            for (int c = 0; c < d.Cout; ++c)
                              bn.grad[c] += o.grad[static_cast<int64_t>(i) * d.Cout + c];
                        }
                      });
}

inline Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad) {
  return conv2d(input, kernel, Tensor(), stride, pad);
}

// ---------------------------------------------------------------------------
// spatial_softmax: [H,W,K] -> [H,W,K]; each channel slice k becomes a strictly
// positive distribution summing to 1 over (H,W).
// ---------------------------------------------------------------------------

inline Tensor spatial_softmax(const Tensor& a) {
  if (a.rank() != 3) throw ShapeError("spatial_softmax: expected [H,W,K], got " + shape_str(a.shape()));
  const int64_t H = a.dim(0), W = a.dim(1), K = a.dim(2), HW = H * W;
  std::vector<double> out(a.data().size());
  for (int64_t k = 0; k < K; ++k) {
    double mx = -1e300;
    for (int64_t p = 0; p < HW; ++p) mx = std::max(mx, a.data()[p * K + k]);
    double z = 0;
    for (int64_t p = 0; p < HW; ++p) z += std::exp(a.data()[p * K + k] - mx);
    const double inv = 1.0 / z;
    for (int64_t p = 0; p < HW; ++p) out[p * K + k] = std::exp(a.data()[p * K + k] - mx) * inv;
  }
  return make_op_node(a.shape(), std::move(out), {a}, [a, K, HW](TensorNode& o) {
    auto& an = *a.node();
    // dX = Y ∘ (dY − <dY, Y>) per slice
    for (int64_t k = 0; k < K; ++k) {
      double dot = 0;
      for (int64_t p = 0; p < HW; ++p) dot += o.grad[p * K + k] * o.data[p * K + k];
      for (int64_t p = 0; p < HW; ++p)
        an.grad[p * K + k] += o.data[p * K + k] * (o.grad[p * K + k] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// belief_pool: B [H,W,K], F [H,W,C] -> V [K,C] with
// V[k,c] = sum_{h,w} B[h,w,k] * F[h,w,c]. Bilinear; exact VJPs.
// ---------------------------------------------------------------------------

inline Tensor belief_pool(const Tensor& B, const Tensor& F) {
  if (B.rank() != 3 || F.rank() != 3 || B.dim(0) != F.dim(0) || B.dim(1) != F.dim(1))
    throw ShapeError("belief_pool: spatial mismatch " + shape_str(B.shape()) + " vs " +
                     shape_str(F.shape()));
  const int HW = static_cast<int>(B.dim(0) * B.dim(1));
  const int K = static_cast<int>(B.dim(2)), C = static_cast<int>(F.dim(2));
  std::vector<double> out(static_cast<size_t>(K) * C);
  // V = B^T F with B as [HW,K], F as [HW,C]
  detail::dgemm(true, false, K, C, HW, B.data().data(), F.data().data(), out.data());
  return make_op_node({K, C}, std::move(out), {B, F}, [B, F, HW, K, C](TensorNode& o) {
    auto& bn = *B.node();
    auto& fn = *F.node();
    if (bn.requires_grad)  // dB = F dV^T  ([HW,C]x[C,K])
      detail::dgemm(false, true, HW, K, C, fn.data.data(), o.grad.data(), bn.grad.data(), 1.0);
    if (fn.requires_grad)  // dF = B dV   ([HW,K]x[K,C])
      detail::dgemm(false, false, HW, C, K, bn.data.data(), o.grad.data(), fn.grad.data(), 1.0);
  });
}

}  // namespace deform
