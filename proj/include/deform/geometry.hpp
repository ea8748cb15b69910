#pragma once

#include <array>
#include <cmath>

#include "deform/ops.hpp"
#include "deform/tensor.hpp"

namespace deform {

struct Vec2 {
  double u = 0, v = 0;
};

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(Vec3 a) {
  const double n = norm(a);
  return n > 0 ? (1.0 / n) * a : a;
}

// Row-major 3x3 rotation from a unit quaternion (w,x,y,z).
inline std::array<double, 9> rotation_from_quat(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  w /= n;
  x /= n;
  y /= n;
  z /= n;
  return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
          2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
          2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

// Pinhole intrinsics. Pixel convention: (u,v) = (column, row), origin at the
// top-left pixel center.
struct Camera {
  double f_u = 0, f_v = 0, u_c = 0, v_c = 0;
  int width = 0, height = 0;

  void validate() const {
    if (f_u <= 0 || f_v <= 0) throw NumericError("Camera: focal lengths must be positive");
    if (u_c < 0 || u_c >= width || v_c < 0 || v_c >= height)
      throw NumericError("Camera: principal point outside the image");
  }
};

// N x N vertex grids, row-major vertex order: i -> (j,k) = (i/N, i%N).
struct MeshGrid2D {
  int n = 0;
  std::vector<Vec2> v;
};

struct MeshGrid3D {
  int n = 0;
  std::vector<Vec3> v;
};

inline std::pair<int, int> grid_index(int i, int n) {
  if (i < 0 || i >= n * n)
    throw ShapeError("grid_index: vertex " + std::to_string(i) + " out of range for N=" +
                     std::to_string(n));
  return {i / n, i % n};
}

inline MeshGrid2D project(const Camera& cam, const MeshGrid3D& mesh) {
  MeshGrid2D out;
  out.n = mesh.n;
  out.v.reserve(mesh.v.size());
  for (size_t i = 0; i < mesh.v.size(); ++i) {
    const Vec3& p = mesh.v[i];
    if (p.z <= 0)
      throw NumericError("project: vertex " + std::to_string(i) + " behind camera (z=" +
                         std::to_string(p.z) + ")");
    out.v.push_back({cam.f_u * p.x / p.z + cam.u_c, cam.f_v * p.y / p.z + cam.v_c});
  }
  return out;
}

inline MeshGrid3D lift(const Camera& cam, const MeshGrid2D& uv, const std::vector<double>& z) {
  if (z.size() != uv.v.size()) throw ShapeError("lift: depth count != vertex count");
  MeshGrid3D out;
  out.n = uv.n;
  out.v.reserve(uv.v.size());
  for (size_t i = 0; i < uv.v.size(); ++i) {
    if (z[i] <= 0)
      throw NumericError("lift: nonpositive depth at vertex " + std::to_string(i));
    out.v.push_back({z[i] * (uv.v[i].u - cam.u_c) / cam.f_u,
                     z[i] * (uv.v[i].v - cam.v_c) / cam.f_v, z[i]});
  }
  return out;
}

// Differentiable lifting layer: U [K,2] in pixels, z [K,1] positive depths,
// output [K,3] camera-frame points. Composed from recorded elementwise ops so
// the VJP needs no extra code.
inline Tensor lift_op(const Camera& cam, const Tensor& U, const Tensor& z) {
  if (U.rank() != 2 || U.dim(1) != 2) throw ShapeError("lift_op: U must be [K,2]");
  if (z.rank() != 2 || z.dim(1) != 1 || z.dim(0) != U.dim(0))
    throw ShapeError("lift_op: z must be [K,1] matching U");
  for (double zv : z.data())
    if (zv <= 0) throw NumericError("lift_op: nonpositive depth");
  const int64_t K = U.dim(0);
  Tensor u = slice(U, {0, 0}, {K, 1});
  Tensor v = slice(U, {0, 1}, {K, 1});
  Tensor x = mul(z, scale(add_const(u, -cam.u_c), 1.0 / cam.f_u));
  Tensor y = mul(z, scale(add_const(v, -cam.v_c), 1.0 / cam.f_v));
  return concat({x, y, z}, 1);
}

inline Tensor mesh_to_tensor(const MeshGrid3D& m) {
  std::vector<double> d;
  d.reserve(m.v.size() * 3);
  for (const Vec3& p : m.v) {
    d.push_back(p.x);
    d.push_back(p.y);
    d.push_back(p.z);
  }
  return Tensor::from_data({static_cast<int64_t>(m.v.size()), 3}, std::move(d));
}

inline MeshGrid3D tensor_to_mesh(const Tensor& t, int n) {
  if (t.rank() != 2 || t.dim(1) != 3 || t.dim(0) != static_cast<int64_t>(n) * n)
    throw ShapeError("tensor_to_mesh: expected [" + std::to_string(n * n) + ",3], got " +
                     shape_str(t.shape()));
  MeshGrid3D m;
  m.n = n;
  m.v.resize(static_cast<size_t>(n) * n);
  for (size_t i = 0; i < m.v.size(); ++i)
    m.v[i] = {t.data()[3 * i], t.data()[3 * i + 1], t.data()[3 * i + 2]};
  return m;
}

inline Tensor mesh2d_to_tensor(const MeshGrid2D& m) {
  std::vector<double> d;
  d.reserve(m.v.size() * 2);
  for (const Vec2& p : m.v) {
    d.push_back(p.u);
    d.push_back(p.v);
  }
  return Tensor::from_data({static_cast<int64_t>(m.v.size()), 2}, std::move(d));
}

inline MeshGrid2D tensor_to_mesh2d(const Tensor& t, int n) {
  if (t.rank() != 2 || t.dim(1) != 2 || t.dim(0) != static_cast<int64_t>(n) * n)
    throw ShapeError("tensor_to_mesh2d: bad shape " + shape_str(t.shape()));
  MeshGrid2D m;
  m.n = n;
  m.v.resize(static_cast<size_t>(n) * n);
  for (size_t i = 0; i < m.v.size(); ++i) m.v[i] = {t.data()[2 * i], t.data()[2 * i + 1]};
  return m;
}

}  // namespace deform
