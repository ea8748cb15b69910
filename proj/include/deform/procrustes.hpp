#pragma once

#include <array>
#include <iostream>

#include "deform/geometry.hpp"
#include "deform/ops.hpp"

namespace deform {

// ---------------------------------------------------------------------------
// Small symmetric eigensolver (cyclic Jacobi). 4x4 and 3x3 are small enough to
// solve exactly here rather than pulling in a general eigensolver.
// ---------------------------------------------------------------------------

template <int N>
struct EigSym {
  std::array<double, N> values;              // descending
  std::array<std::array<double, N>, N> vec;  // vec[k] = eigenvector for values[k]
};

template <int N>
EigSym<N> eig_sym(const std::array<double, N * N>& m_in) {
  std::array<double, N * N> a = m_in;
  // symmetry tolerance check
  for (int i = 0; i < N; ++i)
    for (int j = i + 1; j < N; ++j)
      if (std::abs(a[i * N + j] - a[j * N + i]) > 1e-9)
        throw NumericError("eig_sym: matrix not symmetric");
  std::array<double, N * N> v{};
  for (int i = 0; i < N; ++i) v[i * N + i] = 1.0;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (int p = 0; p < N; ++p)
      for (int q = p + 1; q < N; ++q) off += a[p * N + q] * a[p * N + q];
    if (off < 1e-30) break;
    for (int p = 0; p < N; ++p) {
      for (int q = p + 1; q < N; ++q) {
        const double apq = a[p * N + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * N + q] - a[p * N + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < N; ++k) {
          const double akp = a[k * N + p], akq = a[k * N + q];
          a[k * N + p] = c * akp - s * akq;
          a[k * N + q] = s * akp + c * akq;
        }
        for (int k = 0; k < N; ++k) {
          const double apk = a[p * N + k], aqk = a[q * N + k];
          a[p * N + k] = c * apk - s * aqk;
          a[q * N + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < N; ++k) {
          const double vkp = v[k * N + p], vkq = v[k * N + q];
          v[k * N + p] = c * vkp - s * vkq;
          v[k * N + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  EigSym<N> out;
  std::array<int, N> order;
  for (int i = 0; i < N; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](int x, int y) { return a[x * N + x] > a[y * N + y]; });
  for (int k = 0; k < N; ++k) {
    out.values[k] = a[order[k] * N + order[k]];
    for (int r = 0; r < N; ++r) out.vec[k][r] = v[r * N + order[k]];
  }
  return out;
}

inline EigSym<4> eig_sym4(const std::array<double, 16>& m) { return eig_sym<4>(m); }

// Events where the top eigenvalue gap was too small for a well-defined
// gradient (gradient substituted with zero).
inline uint64_t& degenerate_eig_events() {
  static uint64_t n = 0;
  return n;
}

// ---------------------------------------------------------------------------
// Horn's quaternion profile matrix from a 3x3 cross-covariance S with
// S[p][q] = sum_i a_{i,p} * b_{i,q}. Its largest eigenvalue equals
// max over rotations R of sum_i (R a_i) . b_i.
// ---------------------------------------------------------------------------

inline std::array<double, 16> horn_matrix(const std::array<double, 9>& S) {
  const double Sxx = S[0], Sxy = S[1], Sxz = S[2];
  const double Syx = S[3], Syy = S[4], Syz = S[5];
  const double Szx = S[6], Szy = S[7], Szz = S[8];
  return {Sxx + Syy + Szz, Syz - Szy,       Szx - Sxz,        Sxy - Syx,
          Syz - Szy,       Sxx - Syy - Szz, Sxy + Syx,        Szx + Sxz,
          Szx - Sxz,       Sxy + Syx,       -Sxx + Syy - Szz, Syz + Szy,
          Sxy - Syx,       Szx + Sxz,       Syz + Szy,        -Sxx - Syy + Szz};
}

// The sparsity pattern of horn_matrix as a linear map, used for its VJP:
// K[r] = sum_q coeff[r][q] * S[q].
inline Tensor horn_quat_op(const Tensor& S) {
  if (S.shape() != Shape{3, 3}) throw ShapeError("horn_quat_op: expected [3,3] covariance");
  std::array<double, 9> s;
  std::copy(S.data().begin(), S.data().end(), s.begin());
  const auto k = horn_matrix(s);
  // coefficient table: (entry index in K, entry index in S, weight)
  static const std::array<std::array<double, 9>, 16> coeff = [] {
    std::array<std::array<double, 9>, 16> c{};
    for (int q = 0; q < 9; ++q) {
      std::array<double, 9> e{};
      e[q] = 1.0;
      const auto col = horn_matrix(e);
      for (int r = 0; r < 16; ++r) c[r][q] = col[r];
    }
    return c;
  }();
  return make_op_node({4, 4}, std::vector<double>(k.begin(), k.end()), {S}, [S](TensorNode& o) {
    auto& sn = *S.node();
    for (int q = 0; q < 9; ++q) {
      std::array<double, 9> e{};
      e[q] = 1.0;
      const auto col = horn_matrix(e);
      double g = 0;
      for (int r = 0; r < 16; ++r) g += o.grad[r] * col[r];
      sn.grad[q] += g;
    }
  });
}

// lambda_max of a symmetric 4x4, with VJP v v^T (first-order eigenvalue
// perturbation). If the top gap is below 1e-9 the gradient is replaced by
// zero and the event is counted: the optimum rotation is then non-unique and
// the derivative does not exist.
inline Tensor lambda_max_sym4(const Tensor& K) {
  if (K.shape() != Shape{4, 4}) throw ShapeError("lambda_max_sym4: expected [4,4]");
  std::array<double, 16> m;
  std::copy(K.data().begin(), K.data().end(), m.begin());
  const EigSym<4> e = eig_sym4(m);
  const double lam = e.values[0];
  const std::array<double, 4> vmax = e.vec[0];
  const bool degenerate = (e.values[0] - e.values[1]) < 1e-9;
  return make_op_node({1}, {lam}, {K}, [K, vmax, degenerate](TensorNode& o) {
    if (degenerate) {
      ++degenerate_eig_events();
      std::cerr << "[procrustes] warning: near-degenerate top eigenvalue, "
                   "zero gradient substituted\n";
      return;
    }
    auto& kn = *K.node();
    const double g = o.grad[0];
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) kn.grad[r * 4 + c] += g * vmax[r] * vmax[c];
  });
}

// ---------------------------------------------------------------------------
// Shape normalization: subtract centroid, divide by root total squared
// deviation, so the result has zero centroid and unit Frobenius norm.
// ---------------------------------------------------------------------------

inline Tensor normalize_shape_op(const Tensor& X) {
  if (X.rank() != 2 || X.dim(1) != 3) throw ShapeError("normalize_shape: expected [K,3]");
  const int64_t K = X.dim(0);
  Tensor mean_row = matmul(Tensor::full({1, K}, 1.0 / static_cast<double>(K)), X);  // [1,3]
  Tensor centered = sub(X, matmul(Tensor::full({K, 1}, 1.0), mean_row));
  Tensor s = sqrt_op(sum(mul(centered, centered)));
  if (s.item() < 1e-12) throw NumericError("normalize_shape: degenerate shape (zero spread)");
  return div(centered, s);
}

struct NormalizedShape {
  std::vector<Vec3> points;  // zero centroid, unit Frobenius norm
  Vec3 centroid;
  double scale = 0;
};

inline NormalizedShape normalize_shape(const std::vector<Vec3>& pts) {
  NormalizedShape out;
  Vec3 c{};
  for (const Vec3& p : pts) c = c + p;
  c = (1.0 / static_cast<double>(pts.size())) * c;
  double ss = 0;
  for (const Vec3& p : pts) ss += dot(p - c, p - c);
  const double s = std::sqrt(ss);
  if (s < 1e-12) throw NumericError("normalize_shape: degenerate shape (zero spread)");
  out.centroid = c;
  out.scale = s;
  out.points.reserve(pts.size());
  for (const Vec3& p : pts) out.points.push_back((1.0 / s) * (p - c));
  return out;
}

inline std::array<double, 9> cross_covariance(const std::vector<Vec3>& a,
                                              const std::vector<Vec3>& b) {
  if (a.size() != b.size()) throw ShapeError("cross_covariance: point count mismatch");
  std::array<double, 9> S{};
  for (size_t i = 0; i < a.size(); ++i) {
    const double av[3] = {a[i].x, a[i].y, a[i].z};
    const double bv[3] = {b[i].x, b[i].y, b[i].z};
    for (int p = 0; p < 3; ++p)
      for (int q = 0; q < 3; ++q) S[p * 3 + q] += av[p] * bv[q];
  }
  return S;
}

inline std::array<double, 16> quat_matrix(const NormalizedShape& a, const NormalizedShape& b) {
  return horn_matrix(cross_covariance(a.points, b.points));
}

// ---------------------------------------------------------------------------
// Alignment error: sqrt((|A|^2 + |B|^2 - 2 lambda_max) / Nv) over the
// normalized shapes. Differentiable through the eigendecomposition.
// ---------------------------------------------------------------------------

inline Tensor err_align_op(const Tensor& X, const Tensor& X_star) {
  if (X.shape() != X_star.shape()) throw ShapeError("err_align: shape mismatch");
  const int64_t K = X.dim(0);
  Tensor A = normalize_shape_op(X);
  Tensor B = normalize_shape_op(X_star);
  Tensor S = matmul(transpose(A), B);  // 3x3 cross covariance
  Tensor lam = lambda_max_sym4(horn_quat_op(S));
  Tensor sa = sum(mul(A, A));
  Tensor sb = sum(mul(B, B));
  Tensor arg = scale(sub(add(sa, sb), scale(lam, 2.0)), 1.0 / static_cast<double>(K));
  // clamp tiny negative round-off before the sqrt
  return sqrt_op(leaky_relu(arg, 0.0));
}

inline double err_align(const MeshGrid3D& X, const MeshGrid3D& X_star) {
  if (X.v.size() != X_star.v.size()) throw ShapeError("err_align: vertex count mismatch");
  const NormalizedShape a = normalize_shape(X.v);
  const NormalizedShape b = normalize_shape(X_star.v);
  // The top eigenvector of the quaternion profile matrix is the rotation
  // taking a onto b, and sum |R a_i - b_i|^2 = |A|^2 + |B|^2 - 2 lambda_max.
  // Evaluating the residual directly (instead of via lambda_max) avoids the
  // cancellation that caps the closed form near 1e-8 for identical shapes.
  const EigSym<4> e = eig_sym4(quat_matrix(a, b));
  const auto& q = e.vec[0];
  const std::array<double, 9> R = rotation_from_quat(q[0], q[1], q[2], q[3]);
  double ss = 0;
  for (size_t i = 0; i < a.points.size(); ++i) {
    const Vec3& p = a.points[i];
    const Vec3 ra{R[0] * p.x + R[1] * p.y + R[2] * p.z,
                  R[3] * p.x + R[4] * p.y + R[5] * p.z,
                  R[6] * p.x + R[7] * p.y + R[8] * p.z};
    ss += dot(ra - b.points[i], ra - b.points[i]);
  }
  return std::sqrt(ss / static_cast<double>(X.v.size()));
}

// ---------------------------------------------------------------------------
// SVD-based rigid alignment: independent of the quaternion path. Finds the
// proper rotation R minimizing sum |a_i - R b_i|^2 via the Kabsch method.
// ---------------------------------------------------------------------------

struct RigidAlignment {
  std::array<double, 9> rotation;  // row-major R
  double rmsd = 0;
};

inline RigidAlignment svd_align(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.size() != b.size() || a.size() < 3)
    throw ShapeError("svd_align: need equal counts, at least 3 points");
  // maximize tr(R H) with H = sum b_i a_i^T
  std::array<double, 9> H = cross_covariance(b, a);

  // One-sided Jacobi SVD of the 3x3: orthogonalize columns of H by right
  // rotations accumulated in V. Then H V = U * diag(sigma).
  std::array<double, 9> W = H;
  std::array<double, 9> V{1, 0, 0, 0, 1, 0, 0, 0, 1};
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0;
    for (int p = 0; p < 3; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        double alpha = 0, beta = 0, gamma = 0;
        for (int r = 0; r < 3; ++r) {
          alpha += W[r * 3 + p] * W[r * 3 + p];
          beta += W[r * 3 + q] * W[r * 3 + q];
          gamma += W[r * 3 + p] * W[r * 3 + q];
        }
        off += gamma * gamma;
        if (std::abs(gamma) < 1e-300) continue;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int r = 0; r < 3; ++r) {
          const double wp = W[r * 3 + p], wq = W[r * 3 + q];
          W[r * 3 + p] = c * wp - s * wq;
          W[r * 3 + q] = s * wp + c * wq;
          const double vp = V[r * 3 + p], vq = V[r * 3 + q];
          V[r * 3 + p] = c * vp - s * vq;
          V[r * 3 + q] = s * vp + c * vq;
        }
      }
    }
    if (off < 1e-30) break;
  }
  std::array<double, 3> sigma;
  std::array<Vec3, 3> ucol;
  for (int j = 0; j < 3; ++j) {
    Vec3 w{W[j], W[3 + j], W[6 + j]};
    sigma[j] = norm(w);
    ucol[j] = sigma[j] > 0 ? (1.0 / sigma[j]) * w : Vec3{};
  }
  // sort descending
  std::array<int, 3> ord{0, 1, 2};
  std::sort(ord.begin(), ord.end(), [&](int x, int y) { return sigma[x] > sigma[y]; });
  std::array<double, 3> sg{sigma[ord[0]], sigma[ord[1]], sigma[ord[2]]};
  std::array<Vec3, 3> u{ucol[ord[0]], ucol[ord[1]], ucol[ord[2]]};
  std::array<Vec3, 3> v;
  for (int j = 0; j < 3; ++j) v[j] = {V[ord[j]], V[3 + ord[j]], V[6 + ord[j]]};

  if (sg[1] < 1e-12 * std::max(1.0, sg[0]))
    throw NumericError("svd_align: rank-deficient covariance (collinear points)");
  if (sg[2] < 1e-12 * std::max(1.0, sg[0])) {
    u[2] = normalized(cross(u[0], u[1]));
    v[2] = normalized(cross(v[0], v[1]));
  }
  auto det3 = [](const std::array<Vec3, 3>& cols) {
    return dot(cols[0], cross(cols[1], cols[2]));
  };
  const double d = (det3(u) * det3(v) >= 0) ? 1.0 : -1.0;

  // R = V diag(1,1,d) U^T (columns of U, V as Vec3)
  RigidAlignment out;
  const double dd[3] = {1.0, 1.0, d};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      double val = 0;
      const double vr[3] = {v[0].x, v[1].x, v[2].x};
      (void)vr;
      for (int k = 0; k < 3; ++k) {
        const double vk = (r == 0 ? v[k].x : r == 1 ? v[k].y : v[k].z);
        const double uk = (c == 0 ? u[k].x : c == 1 ? u[k].y : u[k].z);
        val += vk * dd[k] * uk;
      }
      out.rotation[r * 3 + c] = val;
    }
  }
  double ss = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const Vec3 rb = {out.rotation[0] * b[i].x + out.rotation[1] * b[i].y + out.rotation[2] * b[i].z,
                     out.rotation[3] * b[i].x + out.rotation[4] * b[i].y + out.rotation[5] * b[i].z,
                     out.rotation[6] * b[i].x + out.rotation[7] * b[i].y + out.rotation[8] * b[i].z};
    ss += dot(a[i] - rb, a[i] - rb);
  }
  out.rmsd = std::sqrt(ss / static_cast<double>(a.size()));
  return out;
}

inline Vec3 apply_rot(const std::array<double, 9>& R, const Vec3& p) {
  return {R[0] * p.x + R[1] * p.y + R[2] * p.z, R[3] * p.x + R[4] * p.y + R[5] * p.z,
          R[6] * p.x + R[7] * p.y + R[8] * p.z};
}

}  // namespace deform
