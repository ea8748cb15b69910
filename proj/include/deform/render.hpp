#pragma once

#include "deform/geometry.hpp"
#include "deform/image.hpp"
#include "deform/rng.hpp"

namespace deform {

enum class TextureKind { Checker, Stripes, NoiseRich, Plain };

inline const char* texture_kind_name(TextureKind k) {
  switch (k) {
    case TextureKind::Checker: return "checker";
    case TextureKind::Stripes: return "stripes";
    case TextureKind::NoiseRich: return "noise";
    default: return "plain";
  }
}

inline TextureKind texture_kind_from_name(const std::string& s) {
  if (s == "checker") return TextureKind::Checker;
  if (s == "stripes") return TextureKind::Stripes;
  if (s == "noise") return TextureKind::NoiseRich;
  if (s == "plain") return TextureKind::Plain;
  throw NumericError("unknown texture kind: " + s);
}

// Procedural textures, deterministic per (kind, seed).
inline Image make_texture(TextureKind kind, uint64_t seed, int size = 64) {
  Rng rng(seed * 2654435761u + 17);
  Image tex(size, size);
  switch (kind) {
    case TextureKind::Plain: {
      const double r = rng.uniform(0.3, 0.9), g = rng.uniform(0.3, 0.9), b = rng.uniform(0.3, 0.9);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          tex.at(y, x, 0) = r;
          tex.at(y, x, 1) = g;
          tex.at(y, x, 2) = b;
        }
      break;
    }
    case TextureKind::Checker: {
      const int period = static_cast<int>(rng.uniform_int(4, 12));
      const int phase = static_cast<int>(rng.uniform_int(0, period - 1));
      double c1[3], c2[3];
      for (int c = 0; c < 3; ++c) {
        c1[c] = rng.uniform(0.0, 0.5);
        c2[c] = rng.uniform(0.5, 1.0);
      }
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const bool odd = (((x + phase) / period) + ((y + phase) / period)) % 2;
          for (int c = 0; c < 3; ++c) tex.at(y, x, c) = odd ? c1[c] : c2[c];
        }
      break;
    }
    case TextureKind::Stripes: {
      const int period = static_cast<int>(rng.uniform_int(3, 10));
      const bool vertical = rng.uniform() < 0.5;
      double c1[3], c2[3];
      for (int c = 0; c < 3; ++c) {
        c1[c] = rng.uniform(0.0, 0.5);
        c2[c] = rng.uniform(0.5, 1.0);
      }
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const bool odd = ((vertical ? x : y) / period) % 2;
          for (int c = 0; c < 3; ++c) tex.at(y, x, c) = odd ? c1[c] : c2[c];
        }
      break;
    }
    case TextureKind::NoiseRich: {
      // multi-octave value noise
      const int grid0 = 4;
      std::vector<std::vector<double>> octaves;
      for (int oct = 0; oct < 4; ++oct) {
        const int g = grid0 << oct;
        std::vector<double> vals(static_cast<size_t>(g + 1) * (g + 1) * 3);
        for (auto& v : vals) v = rng.uniform();
        octaves.push_back(std::move(vals));
      }
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          for (int c = 0; c < 3; ++c) {
            double v = 0, amp = 0.55;
            for (int oct = 0; oct < 4; ++oct) {
              const int g = grid0 << oct;
              const double fx = static_cast<double>(x) / size * g;
              const double fy = static_cast<double>(y) / size * g;
              const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
              const double tx = fx - x0, ty = fy - y0;
              auto val = [&](int yy, int xx) {
                return octaves[oct][(static_cast<size_t>(yy) * (g + 1) + xx) * 3 + c];
              };
              const double top = val(y0, x0) * (1 - tx) + val(y0, x0 + 1) * tx;
              const double bot = val(y0 + 1, x0) * (1 - tx) + val(y0 + 1, x0 + 1) * tx;
              v += amp * (top * (1 - ty) + bot * ty);
              amp *= 0.55;
            }
            tex.at(y, x, c) = std::min(1.0, v);
          }
      break;
    }
  }
  return tex;
}

struct PointLight {
  Vec3 position{0, 0, 0};  // camera frame
  double ambient = 0.3;    // k_a
  double diffuse = 1.5;    // k_d, divided by squared distance (clamped)
};

// Perspective-correct textured rasterizer with z-buffer, two-sided Lambertian
// shading, dark gray background.
inline Image render(const MeshGrid3D& mesh, const Camera& cam, const Image& texture,
                    const PointLight& light, double albedo = 1.0,
                    double background = 0.15, std::vector<uint8_t>* coverage = nullptr) {
  Image img(cam.width, cam.height, background);
  std::vector<double> zbuf(static_cast<size_t>(cam.width) * cam.height, 1e30);
  if (coverage) coverage->assign(zbuf.size(), 0);
  const MeshGrid2D uv = project(cam, mesh);
  const int n = mesh.n;
  auto vid = [n](int j, int k) { return j * n + k; };

  auto sample_tex = [&](double s, double t) {
    const int tx = std::min(texture.w - 1, std::max(0, static_cast<int>(s * texture.w)));
    const int ty = std::min(texture.h - 1, std::max(0, static_cast<int>(t * texture.h)));
    return std::array<double, 3>{texture.at(ty, tx, 0), texture.at(ty, tx, 1),
                                 texture.at(ty, tx, 2)};
  };

  auto draw_triangle = [&](int i0, int i1, int i2) {
    const Vec3 p0 = mesh.v[i0], p1 = mesh.v[i1], p2 = mesh.v[i2];
    const Vec2 a = uv.v[i0], b = uv.v[i1], c = uv.v[i2];
    const double area = (b.u - a.u) * (c.v - a.v) - (b.v - a.v) * (c.u - a.u);
    if (std::abs(area) < 1e-12) return;
    // face normal, flipped toward the camera (two-sided surface)
    Vec3 nrm = normalized(cross(p1 - p0, p2 - p0));
    const Vec3 centroid = (1.0 / 3.0) * (p0 + p1 + p2);
    if (dot(nrm, centroid) > 0) nrm = -1.0 * nrm;

    auto tex_coord = [n](int i) {
      return Vec2{(i % n) / (n - 1.0), (i / n) / (n - 1.0)};
    };
    const Vec2 t0 = tex_coord(i0), t1 = tex_coord(i1), t2 = tex_coord(i2);

    const int xmin = std::max(0, static_cast<int>(std::floor(std::min({a.u, b.u, c.u}))));
    const int xmax = std::min(cam.width - 1, static_cast<int>(std::ceil(std::max({a.u, b.u, c.u}))));
    const int ymin = std::max(0, static_cast<int>(std::floor(std::min({a.v, b.v, c.v}))));
    const int ymax = std::min(cam.height - 1, static_cast<int>(std::ceil(std::max({a.v, b.v, c.v}))));
    for (int y = ymin; y <= ymax; ++y) {
      for (int x = xmin; x <= xmax; ++x) {
        const double px = x, py = y;
        const double w0 = ((b.u - px) * (c.v - py) - (b.v - py) * (c.u - px)) / area;
        const double w1 = ((c.u - px) * (a.v - py) - (c.v - py) * (a.u - px)) / area;
        const double w2 = 1.0 - w0 - w1;
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        // perspective-correct interpolation via 1/z
        const double inv_z = w0 / p0.z + w1 / p1.z + w2 / p2.z;
        const double z = 1.0 / inv_z;
        if (z >= zbuf[static_cast<size_t>(y) * cam.width + x]) continue;
        zbuf[static_cast<size_t>(y) * cam.width + x] = z;
        if (coverage) (*coverage)[static_cast<size_t>(y) * cam.width + x] = 1;
        const double s = z * (w0 * t0.u / p0.z + w1 * t1.u / p1.z + w2 * t2.u / p2.z);
        const double t = z * (w0 * t0.v / p0.z + w1 * t1.v / p1.z + w2 * t2.v / p2.z);
        const Vec3 pos = z * Vec3{w0 * (1.0 / p0.z) * p0.x + w1 * (1.0 / p1.z) * p1.x +
                                      w2 * (1.0 / p2.z) * p2.x,
                                  w0 * (1.0 / p0.z) * p0.y + w1 * (1.0 / p1.z) * p1.y +
                                      w2 * (1.0 / p2.z) * p2.y,
                                  inv_z};
        const Vec3 world{pos.x, pos.y, z};
        const Vec3 to_light = light.position - world;
        const double d2 = std::max(0.25, dot(to_light, to_light));
        // two-sided: either face of the sheet catches the light
        const double lambert = std::abs(dot(nrm, normalized(to_light)));
        const double shade = light.ambient + light.diffuse * lambert / d2;
        const auto texel = sample_tex(s, t);
        for (int ch = 0; ch < 3; ++ch)
          img.at(y, x, ch) = std::min(1.0, albedo * texel[ch] * shade);
      }
    }
  };

  for (int j = 0; j + 1 < n; ++j) {
    for (int k = 0; k + 1 < n; ++k) {
      draw_triangle(vid(j, k), vid(j, k + 1), vid(j + 1, k));
      draw_triangle(vid(j + 1, k), vid(j, k + 1), vid(j + 1, k + 1));
    }
  }
  return img;
}

}  // namespace deform
