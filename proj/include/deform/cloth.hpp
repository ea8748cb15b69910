#pragma once

#include "deform/geometry.hpp"
#include "deform/rng.hpp"

namespace deform {

// Stiffness triple: structural (grid neighbors), shear (diagonals), bend
// (two-apart). Four materials of increasing floppiness.
struct ClothMaterial {
  double k_struct, k_shear, k_bend;
};

inline const std::array<ClothMaterial, 4>& cloth_materials() {
  static const std::array<ClothMaterial, 4> mats = {{
      {4000.0, 2000.0, 1000.0},  // stiff sheet
      {2500.0, 1200.0, 500.0},
      {1500.0, 700.0, 250.0},
      {900.0, 400.0, 100.0},  // floppy fabric
  }};
  return mats;
}

struct Spring {
  int a, b;
  double rest, k;
};

struct WindParams {
  double amplitude = 0.0;  // force magnitude
  double frequency = 1.0;  // Hz of the sinusoidal component
  double noise = 0.0;      // per-step random force magnitude
  Vec3 direction{0, 0, 1};
};

// Hanging mass-spring sheet. Local frame: x right, y down (gravity +y),
// z out of the rest plane. Pinned vertices never move.
struct ClothState {
  int n = 0;
  double width = 1.0, height = 1.0;
  std::vector<Vec3> pos, vel;
  std::vector<int> pins;  // vertex indices, up to 4
  std::vector<Spring> springs;
  ClothMaterial material{};
  WindParams wind;
  double damping = 2.0;
  double gravity = 9.8;
  double mass = 0.0;  // per vertex

  bool pinned(int i) const {
    for (int p : pins)
      if (p == i) return true;
    return false;
  }
};

inline ClothState make_cloth(int n, double width, double height, const ClothMaterial& mat,
                             std::vector<int> pins) {
  if (n < 2) throw ShapeError("make_cloth: N must be >= 2");
  if (pins.size() > 4) throw ShapeError("make_cloth: at most 4 pins");
  ClothState st;
  st.n = n;
  st.width = width;
  st.height = height;
  st.material = mat;
  st.pins = std::move(pins);
  st.mass = 1.0 / static_cast<double>(n * n);
  st.pos.resize(static_cast<size_t>(n) * n);
  st.vel.assign(static_cast<size_t>(n) * n, Vec3{});
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      st.pos[static_cast<size_t>(j) * n + k] = {width * k / (n - 1.0), height * j / (n - 1.0), 0};

  auto idx = [n](int j, int k) { return j * n + k; };
  auto link = [&](int a, int b, double k_spring) {
    st.springs.push_back({a, b, norm(st.pos[a] - st.pos[b]), k_spring});
  };
  for (int j = 0; j < n; ++j) {
    for (int k = 0; k < n; ++k) {
      if (k + 1 < n) link(idx(j, k), idx(j, k + 1), mat.k_struct);
      if (j + 1 < n) link(idx(j, k), idx(j + 1, k), mat.k_struct);
      if (j + 1 < n && k + 1 < n) {
        link(idx(j, k), idx(j + 1, k + 1), mat.k_shear);
        link(idx(j, k + 1), idx(j + 1, k), mat.k_shear);
      }
      if (k + 2 < n) link(idx(j, k), idx(j, k + 2), mat.k_bend);
      if (j + 2 < n) link(idx(j, k), idx(j + 2, k), mat.k_bend);
    }
  }
  return st;
}

inline double kinetic_energy(const ClothState& st) {
  double e = 0;
  for (const Vec3& v : st.vel) e += 0.5 * st.mass * dot(v, v);
  return e;
}

// Semi-implicit Euler integration with gravity, springs, damping and a
// sinusoidal-plus-noise wind force. Throws on divergence and on per-step
// displacements large enough to indicate an unstable dt.
inline void simulate_cloth(ClothState& st, int steps, double dt, Rng& rng) {
  const double edge = st.width / (st.n - 1.0);
  const double size = std::max(st.width, st.height);
  std::vector<Vec3> force(st.pos.size());
  for (int step = 0; step < steps; ++step) {
    const double t = step * dt;
    const double wind_s =
        st.wind.amplitude * std::sin(2.0 * M_PI * st.wind.frequency * t);
    for (size_t i = 0; i < force.size(); ++i) {
      const double wn = st.wind.noise > 0 ? st.wind.noise * rng.gaussian() : 0.0;
      force[i] = st.mass * Vec3{0, st.gravity, 0} + (st.mass * (wind_s + wn)) * st.wind.direction -
                 st.damping * st.mass * st.vel[i];
    }
    for (const Spring& sp : st.springs) {
      const Vec3 d = st.pos[sp.b] - st.pos[sp.a];
      const double len = norm(d);
      if (len < 1e-12) continue;
      const Vec3 f = (sp.k * st.mass * (len - sp.rest) / len) * d;
      force[sp.a] = force[sp.a] + f;
      force[sp.b] = force[sp.b] - f;
    }
    for (size_t i = 0; i < st.pos.size(); ++i) {
      if (st.pinned(static_cast<int>(i))) {
        st.vel[i] = {};
        continue;
      }
      st.vel[i] = st.vel[i] + (dt / st.mass) * force[i];
      const Vec3 dx = dt * st.vel[i];
      if (norm(dx) > 0.05 * edge)
        throw NumericError("simulate_cloth: step displacement exceeds 5% of edge length "
                           "(dt too large for this stiffness)");
      st.pos[i] = st.pos[i] + dx;
      if (std::abs(st.pos[i].x) > 100 * size || std::abs(st.pos[i].y) > 100 * size ||
          std::abs(st.pos[i].z) > 100 * size)
        throw NumericError("simulate_cloth: diverged at step " + std::to_string(step));
    }
  }
}

// Mean relative edge-length distortion against rest lengths (structural
// springs only), a quasi-isometry measure.
inline double edge_distortion(const ClothState& st) {
  double total = 0;
  int count = 0;
  for (const Spring& sp : st.springs) {
    if (sp.k != st.material.k_struct) continue;
    total += std::abs(norm(st.pos[sp.b] - st.pos[sp.a]) / sp.rest - 1.0);
    ++count;
  }
  return count ? total / count : 0.0;
}

inline MeshGrid3D cloth_mesh(const ClothState& st) {
  MeshGrid3D m;
  m.n = st.n;
  m.v = st.pos;
  return m;
}

}  // namespace deform
