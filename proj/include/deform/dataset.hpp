#pragma once

#include <json.hpp>

#include <set>

#include "deform/cloth.hpp"
#include "deform/config.hpp"
#include "deform/image.hpp"
#include "deform/render.hpp"

namespace deform {

// One dataset record. mesh2d is always project(camera, mesh3d); the image may
// additionally carry occluders or contour corruption, but ground truth does not.
struct SampleMeta {
  int texture_id = -1;  // -1 for the plain (non-textured) condition
  TextureKind texture_kind = TextureKind::Plain;
  uint64_t texture_seed = 0;
  int material_id = 0;
  bool occluded = false;
  uint64_t seed = 0;
  std::string condition;  // known | new | plain
  Vec3 light_pos;
  double light_ambient = 0.3, light_diffuse = 1.5;
  double albedo = 1.0;
};

struct Sample {
  Image image;
  MeshGrid3D mesh3d;
  MeshGrid2D mesh2d;
  Camera camera;
  SampleMeta meta;
};

inline void validate_sample(const Sample& s, double tol = 1e-9) {
  for (const Vec3& p : s.mesh3d.v)
    if (p.z <= 0) throw NumericError("sample: vertex behind camera");
  const MeshGrid2D re = project(s.camera, s.mesh3d);
  for (size_t i = 0; i < re.v.size(); ++i)
    if (std::abs(re.v[i].u - s.mesh2d.v[i].u) > tol || std::abs(re.v[i].v - s.mesh2d.v[i].v) > tol)
      throw NumericError("sample: mesh2d does not match project(camera, mesh3d)");
}

// --- binary sample format ---------------------------------------------------
// magic, camera (4 f64 + 2 u32), N, X* f64, U* f64, metadata, image dims +
// 8-bit RGB payload. Little-endian throughout.
inline constexpr char kSampleMagic[9] = "DFSMP001";

inline void save_sample(const std::string& path, const Sample& s) {
  atomic_write(path, [&](std::ostream& os) {
    os.write(kSampleMagic, 8);
    write_f64(os, s.camera.f_u);
    write_f64(os, s.camera.f_v);
    write_f64(os, s.camera.u_c);
    write_f64(os, s.camera.v_c);
    write_u32(os, static_cast<uint32_t>(s.camera.width));
    write_u32(os, static_cast<uint32_t>(s.camera.height));
    write_u32(os, static_cast<uint32_t>(s.mesh3d.n));
    for (const Vec3& p : s.mesh3d.v) {
      write_f64(os, p.x);
      write_f64(os, p.y);
      write_f64(os, p.z);
    }
    for (const Vec2& p : s.mesh2d.v) {
      write_f64(os, p.u);
      write_f64(os, p.v);
    }
    write_i64(os, s.meta.texture_id);
    write_string(os, texture_kind_name(s.meta.texture_kind));
    write_u64(os, s.meta.texture_seed);
    write_u32(os, static_cast<uint32_t>(s.meta.material_id));
    write_u32(os, s.meta.occluded ? 1 : 0);
    write_u64(os, s.meta.seed);
    write_string(os, s.meta.condition);
    write_f64(os, s.meta.light_pos.x);
    write_f64(os, s.meta.light_pos.y);
    write_f64(os, s.meta.light_pos.z);
    write_f64(os, s.meta.light_ambient);
    write_f64(os, s.meta.light_diffuse);
    write_f64(os, s.meta.albedo);
    write_u32(os, static_cast<uint32_t>(s.image.w));
    write_u32(os, static_cast<uint32_t>(s.image.h));
    const auto bytes = s.image.quantize();
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  });
}

inline Sample load_sample(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open sample " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != std::string(kSampleMagic, 8))
    throw IoError("bad sample magic in " + path);
  Sample s;
  s.camera.f_u = read_f64(is);
  s.camera.f_v = read_f64(is);
  s.camera.u_c = read_f64(is);
  s.camera.v_c = read_f64(is);
  s.camera.width = static_cast<int>(read_u32(is));
  s.camera.height = static_cast<int>(read_u32(is));
  const int n = static_cast<int>(read_u32(is));
  if (n < 2 || n > 1024) throw IoError(path + ": implausible mesh size");
  s.mesh3d.n = s.mesh2d.n = n;
  s.mesh3d.v.resize(static_cast<size_t>(n) * n);
  s.mesh2d.v.resize(static_cast<size_t>(n) * n);
  for (Vec3& p : s.mesh3d.v) {
    p.x = read_f64(is);
    p.y = read_f64(is);
    p.z = read_f64(is);
  }
  for (Vec2& p : s.mesh2d.v) {
    p.u = read_f64(is);
    p.v = read_f64(is);
  }
  s.meta.texture_id = static_cast<int>(read_i64(is));
  s.meta.texture_kind = texture_kind_from_name(read_string(is));
  s.meta.texture_seed = read_u64(is);
  s.meta.material_id = static_cast<int>(read_u32(is));
  s.meta.occluded = read_u32(is) != 0;
  s.meta.seed = read_u64(is);
  s.meta.condition = read_string(is);
  s.meta.light_pos.x = read_f64(is);
  s.meta.light_pos.y = read_f64(is);
  s.meta.light_pos.z = read_f64(is);
  s.meta.light_ambient = read_f64(is);
  s.meta.light_diffuse = read_f64(is);
  s.meta.albedo = read_f64(is);
  const int w = static_cast<int>(read_u32(is));
  const int h = static_cast<int>(read_u32(is));
  std::vector<uint8_t> bytes(static_cast<size_t>(w) * h * 3);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!is) throw IoError(path + ": truncated image payload");
  s.image = Image::from_bytes(w, h, bytes);
  return s;
}

// --- occluders ---------------------------------------------------------------
// Gray axis-aligned rectangles over the mesh bounding box. Rectangle sizes are
// rescaled until the covered fraction of the bounding box lands in [5%, 40%].
inline Image add_occluders(const Image& img, const MeshGrid2D& mesh2d, int count, Rng rng,
                           double gray = 0.5) {
  if (count < 0) throw ShapeError("add_occluders: count must be >= 0");
  if (count == 0) return img;
  double bu0 = 1e30, bv0 = 1e30, bu1 = -1e30, bv1 = -1e30;
  for (const Vec2& p : mesh2d.v) {
    bu0 = std::min(bu0, p.u);
    bu1 = std::max(bu1, p.u);
    bv0 = std::min(bv0, p.v);
    bv1 = std::max(bv1, p.v);
  }
  const int x0 = std::max(0, static_cast<int>(std::floor(bu0)));
  const int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(bu1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(bv0)));
  const int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(bv1)));
  if (x1 <= x0 || y1 <= y0) throw NumericError("add_occluders: degenerate mesh bounding box");
  const double bw = x1 - x0 + 1, bh = y1 - y0 + 1;

  struct Rect {
    int rx0, ry0, rx1, ry1;
  };
  double size_scale = 1.0;
  std::vector<Rect> rects;
  for (int attempt = 0; attempt < 500; ++attempt) {
    rects.clear();
    for (int i = 0; i < count; ++i) {
      const double cx = rng.uniform(bu0, bu1), cy = rng.uniform(bv0, bv1);
      const double hw = 0.5 * size_scale * rng.uniform(0.15, 0.40) * bw;
      const double hh = 0.5 * size_scale * rng.uniform(0.15, 0.40) * bh;
      rects.push_back({static_cast<int>(cx - hw), static_cast<int>(cy - hh),
                       static_cast<int>(cx + hw), static_cast<int>(cy + hh)});
    }
    // covered fraction of the bounding box, counting overlaps once
    int covered = 0;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        for (const Rect& r : rects)
          if (x >= r.rx0 && x <= r.rx1 && y >= r.ry0 && y <= r.ry1) {
            ++covered;
            break;
          }
    const double frac = covered / (bw * bh);
    if (frac >= 0.05 && frac <= 0.40) {
      Image out = img;
      for (const Rect& r : rects)
        for (int y = std::max(0, r.ry0); y <= std::min(img.h - 1, r.ry1); ++y)
          for (int x = std::max(0, r.rx0); x <= std::min(img.w - 1, r.rx1); ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = gray;
      return out;
    }
    size_scale *= frac > 0.40 ? 0.85 : 1.2;
  }
  throw NumericError("add_occluders: could not hit the coverage band");
}

// --- augmentations -----------------------------------------------------------

// Mirror about the image center. Ground truth 2D is recomputed by projecting
// the mirrored 3D mesh through the mirrored camera; that keeps the projection
// invariant bit-exact and makes double flips true involutions (the generator
// quantizes principal points to 1/256 so the reflection arithmetic is exact).
inline Sample flip_sample(const Sample& s, bool horizontal, bool vertical) {
  Sample out = s;
  if (horizontal) {
    for (int y = 0; y < s.image.h; ++y)
      for (int x = 0; x < s.image.w; ++x)
        for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = s.image.at(y, s.image.w - 1 - x, c);
    out.camera.u_c = (s.camera.width - 1) - s.camera.u_c;
    for (Vec3& p : out.mesh3d.v) p.x = -p.x;
  }
  if (vertical) {
    const Image src = out.image;
    for (int y = 0; y < s.image.h; ++y)
      for (int x = 0; x < s.image.w; ++x)
        for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = src.at(s.image.h - 1 - y, x, c);
    out.camera.v_c = (s.camera.height - 1) - s.camera.v_c;
    for (Vec3& p : out.mesh3d.v) p.y = -p.y;
  }
  out.mesh2d = project(out.camera, out.mesh3d);
  return out;
}

// Random rigid motion of the ground-truth mesh, then a fresh render with the
// sample's own texture, light and albedo. Resamples until the moved mesh stays
// in front of the camera and inside the frame.
inline Sample rigid_variant(const Sample& s, Rng& rng) {
  const Image texture = make_texture(s.meta.texture_kind, s.meta.texture_seed);
  const double margin = 0.02 * std::min(s.camera.width, s.camera.height);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const Vec3 axis = normalized(Vec3{rng.gaussian(), rng.gaussian(), rng.gaussian()});
    const double angle = rng.uniform(-0.3, 0.3);
    const double hs = std::sin(0.5 * angle);
    const auto R = rotation_from_quat(std::cos(0.5 * angle), hs * axis.x, hs * axis.y, hs * axis.z);
    const Vec3 t{rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.15, 0.15)};
    Vec3 centroid{};
    for (const Vec3& p : s.mesh3d.v) centroid = centroid + p;
    centroid = (1.0 / s.mesh3d.v.size()) * centroid;

    Sample out = s;
    bool ok = true;
    for (size_t i = 0; i < out.mesh3d.v.size(); ++i) {
      const Vec3 d = s.mesh3d.v[i] - centroid;
      Vec3 p{R[0] * d.x + R[1] * d.y + R[2] * d.z, R[3] * d.x + R[4] * d.y + R[5] * d.z,
             R[6] * d.x + R[7] * d.y + R[8] * d.z};
      p = p + centroid + t;
      if (p.z <= 0.2) {
        ok = false;
        break;
      }
      out.mesh3d.v[i] = p;
    }
    if (!ok) continue;
    out.mesh2d = project(out.camera, out.mesh3d);
    for (const Vec2& p : out.mesh2d.v)
      if (p.u < margin || p.u > s.camera.width - 1 - margin || p.v < margin ||
          p.v > s.camera.height - 1 - margin) {
        ok = false;
        break;
      }
    if (!ok) continue;
    PointLight light{s.meta.light_pos, s.meta.light_ambient, s.meta.light_diffuse};
    out.image = render(out.mesh3d, out.camera, texture, light, s.meta.albedo);
    if (s.meta.occluded) out.image = add_occluders(out.image, out.mesh2d, 3, rng.child(91));
    return out;
  }
  throw NumericError("rigid_variant: no in-frame rigid motion found");
}

// Pixel-level hue / saturation / contrast / brightness jitter; ground truth
// untouched. Hue is a rotation of RGB about the gray axis.
inline Image color_jitter(const Image& img, Rng& rng) {
  const double brightness = rng.uniform(0.8, 1.2);
  const double contrast = rng.uniform(0.8, 1.2);
  const double saturation = rng.uniform(0.7, 1.3);
  const double hue = rng.uniform(-0.25, 0.25);  // radians about (1,1,1)
  const double ch = std::cos(hue), sh = std::sin(hue);
  const double a = ch + (1 - ch) / 3.0;
  const double b = (1 - ch) / 3.0 + sh / std::sqrt(3.0);
  const double c = (1 - ch) / 3.0 - sh / std::sqrt(3.0);
  Image out = img;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      double r = img.at(y, x, 0), g = img.at(y, x, 1), bl = img.at(y, x, 2);
      double rr = a * r + b * g + c * bl;
      double gg = c * r + a * g + b * bl;
      double bb = b * r + c * g + a * bl;
      const double luma = (rr + gg + bb) / 3.0;
      rr = luma + saturation * (rr - luma);
      gg = luma + saturation * (gg - luma);
      bb = luma + saturation * (bb - luma);
      rr = (rr - 0.5) * contrast + 0.5;
      gg = (gg - 0.5) * contrast + 0.5;
      bb = (bb - 0.5) * contrast + 0.5;
      out.at(y, x, 0) = std::min(1.0, std::max(0.0, rr * brightness));
      out.at(y, x, 1) = std::min(1.0, std::max(0.0, gg * brightness));
      out.at(y, x, 2) = std::min(1.0, std::max(0.0, bb * brightness));
    }
  return out;
}

// The three flips, one re-rendered rigid-motion variant and one color-jittered
// copy, all preserving the projection invariant.
inline std::vector<Sample> augment(const Sample& s, uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> out;
  out.push_back(flip_sample(s, true, false));
  out.push_back(flip_sample(s, false, true));
  out.push_back(flip_sample(s, true, true));
  out.push_back(rigid_variant(s, rng));
  Sample jittered = s;
  jittered.image = color_jitter(s.image, rng);
  out.push_back(std::move(jittered));
  return out;
}

// --- contour corruption ------------------------------------------------------

// Gaussian blur restricted to a band around the rendered silhouette.
inline void blur_silhouette_band(Image& img, const std::vector<uint8_t>& coverage, double sigma,
                                 int band = 2) {
  const int w = img.w, h = img.h;
  std::vector<uint8_t> edge(coverage.size(), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const uint8_t c = coverage[static_cast<size_t>(y) * w + x];
      for (int dy = -1; dy <= 1 && !edge[static_cast<size_t>(y) * w + x]; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          if (coverage[static_cast<size_t>(yy) * w + xx] != c) {
            edge[static_cast<size_t>(y) * w + x] = 1;
            break;
          }
        }
    }
  std::vector<uint8_t> mask(coverage.size(), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      for (int dy = -band; dy <= band && !mask[static_cast<size_t>(y) * w + x]; ++dy)
        for (int dx = -band; dx <= band; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          if (edge[static_cast<size_t>(yy) * w + xx]) {
            mask[static_cast<size_t>(y) * w + x] = 1;
            break;
          }
        }
    }
  const int radius = std::max(1, static_cast<int>(std::ceil(2 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double ksum = 0;
  for (int i = -radius; i <= radius; ++i)
    ksum += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& k : kernel) k /= ksum;
  const Image src = img;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!mask[static_cast<size_t>(y) * w + x]) continue;
      for (int c = 0; c < 3; ++c) {
        double v = 0;
        for (int dy = -radius; dy <= radius; ++dy)
          for (int dx = -radius; dx <= radius; ++dx) {
            const int yy = std::min(h - 1, std::max(0, y + dy));
            const int xx = std::min(w - 1, std::max(0, x + dx));
            v += kernel[dy + radius] * kernel[dx + radius] * src.at(yy, xx, c);
          }
        img.at(y, x, c) = v;
      }
    }
}

// --- scene synthesis ---------------------------------------------------------

struct GenConfig {
  int grid_n = 5;
  int image_w = 64, image_h = 64;
  int n_train = 2000;
  int n_val = 100;
  int n_test = 200;  // per test condition
  uint64_t seed = 1;
  int train_textures = 24;  // texture pool sizes; pools are disjoint by id range
  int test_textures = 12;
  int occluder_count = 3;
  double occluder_gray = 0.5;
  bool blur_contours = false;
  double contour_jitter_px = 1.0;
  double blur_sigma = 1.0;
  bool dry_run = false;

  void validate() const {
    if (grid_n < 2) throw NumericError("gen: grid_n must be >= 2");
    if (image_w < 16 || image_h < 16) throw NumericError("gen: image size too small");
    if (n_train < 1 || n_val < 0 || n_test < 1) throw NumericError("gen: bad split counts");
    if (train_textures < 1 || test_textures < 1) throw NumericError("gen: bad texture counts");
    if (occluder_count < 1) throw NumericError("gen: occluder_count must be >= 1");
    if (occluder_gray < 0 || occluder_gray > 1) throw NumericError("gen: gray out of range");
  }

  static GenConfig from_config(const KeyValueConfig& kv) {
    GenConfig g;
    g.grid_n = static_cast<int>(kv.get_int("grid_n", g.grid_n));
    g.image_w = static_cast<int>(kv.get_int("image_w", g.image_w));
    g.image_h = static_cast<int>(kv.get_int("image_h", g.image_h));
    g.n_train = static_cast<int>(kv.get_int("n_train", g.n_train));
    g.n_val = static_cast<int>(kv.get_int("n_val", g.n_val));
    g.n_test = static_cast<int>(kv.get_int("n_test", g.n_test));
    g.seed = static_cast<uint64_t>(kv.get_int("seed", static_cast<int64_t>(g.seed)));
    g.train_textures = static_cast<int>(kv.get_int("train_textures", g.train_textures));
    g.test_textures = static_cast<int>(kv.get_int("test_textures", g.test_textures));
    g.occluder_count = static_cast<int>(kv.get_int("occluder_count", g.occluder_count));
    g.occluder_gray = kv.get_num("occluder_gray", g.occluder_gray);
    g.blur_contours = kv.get_bool("blur_contours", g.blur_contours);
    g.contour_jitter_px = kv.get_num("contour_jitter_px", g.contour_jitter_px);
    g.blur_sigma = kv.get_num("blur_sigma", g.blur_sigma);
    g.validate();
    return g;
  }
};

// Texture id -> (kind, seed). Kinds cycle so each pool mixes checker, stripes
// and rich noise; the seed keys the per-texture randomness.
inline std::pair<TextureKind, uint64_t> texture_from_id(int id) {
  static const TextureKind kinds[3] = {TextureKind::Checker, TextureKind::Stripes,
                                       TextureKind::NoiseRich};
  return {kinds[id % 3], 1000 + static_cast<uint64_t>(id)};
}

inline double quantize_256(double v) { return std::round(v * 256.0) / 256.0; }

// One full scene: simulated cloth, camera placement keeping the mesh in frame
// with a 5% margin, light, render. Deterministic per rng stream.
inline Sample generate_sample(const GenConfig& cfg, Rng rng, int texture_id,
                              const std::string& condition) {
  Sample s;
  s.meta.condition = condition;
  s.meta.texture_id = condition == "plain" ? -1 : texture_id;
  if (condition == "plain") {
    s.meta.texture_kind = TextureKind::Plain;
    s.meta.texture_seed = 5000 + rng.child(1).next_u64() % 1000;
  } else {
    std::tie(s.meta.texture_kind, s.meta.texture_seed) = texture_from_id(texture_id);
  }

  for (int scene_try = 0;; ++scene_try) {
    if (scene_try >= 20) throw NumericError("generate_sample: no stable in-frame scene found");
    Rng r = rng.child(100 + scene_try);

    // cloth geometry and dynamics
    const double aspect = r.uniform(0.5, 2.0);
    const double base = r.uniform(0.9, 1.1);
    const double width = base * std::sqrt(aspect), height = base / std::sqrt(aspect);
    const int n_pins = static_cast<int>(r.uniform_int(2, std::min(4, cfg.grid_n)));
    std::vector<int> pins;
    while (static_cast<int>(pins.size()) < n_pins) {
      const int k = static_cast<int>(r.uniform_int(0, cfg.grid_n - 1));
      if (std::find(pins.begin(), pins.end(), k) == pins.end()) pins.push_back(k);
    }
    s.meta.material_id = static_cast<int>(r.uniform_int(0, 3));
    ClothState cloth =
        make_cloth(cfg.grid_n, width, height, cloth_materials()[s.meta.material_id], pins);
    cloth.wind.amplitude = r.uniform(0.0, 3.0);
    cloth.wind.frequency = r.uniform(0.5, 2.0);
    cloth.wind.noise = r.uniform(0.0, 1.0);
    cloth.wind.direction = normalized(Vec3{r.uniform(-0.5, 0.5), r.uniform(-0.2, 0.2), 1.0});
    const int steps = static_cast<int>(r.uniform_int(400, 900));
    try {
      Rng sim_rng = r.child(7);
      simulate_cloth(cloth, steps, 1e-3, sim_rng);
    } catch (const NumericError&) {
      continue;  // unstable draw, resample the scene
    }
    MeshGrid3D mesh = cloth_mesh(cloth);

    // camera: fixed-ish intrinsics, random pose of the cloth in camera frame
    s.camera.width = cfg.image_w;
    s.camera.height = cfg.image_h;
    const double fscale = cfg.image_w / 64.0;
    s.camera.f_u = s.camera.f_v = quantize_256(r.uniform(50.0, 60.0) * fscale);
    s.camera.u_c = quantize_256((cfg.image_w - 1) / 2.0 + r.uniform(-2.0, 2.0) * fscale);
    s.camera.v_c = quantize_256((cfg.image_h - 1) / 2.0 + r.uniform(-2.0, 2.0) * fscale);
    s.camera.validate();

    Vec3 centroid{};
    for (const Vec3& p : mesh.v) centroid = centroid + p;
    centroid = (1.0 / mesh.v.size()) * centroid;

    bool placed = false;
    const double mu = 0.05 * (cfg.image_w - 1), mv = 0.05 * (cfg.image_h - 1);
    for (int place_try = 0; place_try < 100 && !placed; ++place_try) {
      const Vec3 axis = normalized(Vec3{r.gaussian(), r.gaussian(), r.gaussian()});
      const double angle = r.uniform(-0.4, 0.4);
      const double hs = std::sin(0.5 * angle);
      const auto R =
          rotation_from_quat(std::cos(0.5 * angle), hs * axis.x, hs * axis.y, hs * axis.z);
      const Vec3 t{r.uniform(-0.15, 0.15), r.uniform(-0.15, 0.15), r.uniform(1.7, 2.6)};
      MeshGrid3D posed = mesh;
      bool ok = true;
      for (size_t i = 0; i < mesh.v.size(); ++i) {
        const Vec3 d = mesh.v[i] - centroid;
        Vec3 p{R[0] * d.x + R[1] * d.y + R[2] * d.z, R[3] * d.x + R[4] * d.y + R[5] * d.z,
               R[6] * d.x + R[7] * d.y + R[8] * d.z};
        p = p + t;
        if (p.z <= 0.3) {
          ok = false;
          break;
        }
        posed.v[i] = p;
      }
      if (!ok) continue;
      const MeshGrid2D uv = project(s.camera, posed);
      for (const Vec2& p : uv.v)
        if (p.u < mu || p.u > cfg.image_w - 1 - mu || p.v < mv || p.v > cfg.image_h - 1 - mv) {
          ok = false;
          break;
        }
      if (!ok) continue;
      s.mesh3d = std::move(posed);
      s.mesh2d = uv;
      placed = true;
    }
    if (!placed) continue;

    // light, albedo, render
    s.meta.light_pos = {r.uniform(-1.5, 1.5), r.uniform(-1.5, 1.5), r.uniform(0.3, 1.3)};
    s.meta.light_ambient = r.uniform(0.2, 0.35);
    s.meta.light_diffuse = r.uniform(1.5, 4.0);
    s.meta.albedo = r.uniform(0.7, 1.0);
    const Image texture = make_texture(s.meta.texture_kind, s.meta.texture_seed);
    const PointLight light{s.meta.light_pos, s.meta.light_ambient, s.meta.light_diffuse};
    if (cfg.blur_contours) {
      // corrupt a copy of the boundary vertices before rendering; GT unchanged
      MeshGrid3D corrupted = s.mesh3d;
      Rng jr = r.child(11);
      for (size_t i = 0; i < corrupted.v.size(); ++i) {
        const auto [j, k] = grid_index(static_cast<int>(i), cfg.grid_n);
        if (j != 0 && j != cfg.grid_n - 1 && k != 0 && k != cfg.grid_n - 1) continue;
        Vec3& p = corrupted.v[i];
        p.x += cfg.contour_jitter_px * p.z / s.camera.f_u * jr.gaussian();
        p.y += cfg.contour_jitter_px * p.z / s.camera.f_v * jr.gaussian();
      }
      std::vector<uint8_t> coverage;
      s.image = render(corrupted, s.camera, texture, light, s.meta.albedo, 0.15, &coverage);
      blur_silhouette_band(s.image, coverage, cfg.blur_sigma);
    } else {
      s.image = render(s.mesh3d, s.camera, texture, light, s.meta.albedo);
    }
    break;
  }
  validate_sample(s);
  return s;
}

// --- dataset generation ------------------------------------------------------

struct SplitInfo {
  std::string condition;
  bool occluded = false;
  std::vector<std::string> files;  // relative to the dataset directory
};

struct Manifest {
  uint64_t seed = 0;
  int grid_n = 0, image_w = 0, image_h = 0;
  std::vector<int> train_texture_ids, test_texture_ids;
  std::map<std::string, SplitInfo> splits;
};

inline void check_disjoint_pools(const Manifest& m) {
  std::set<int> train(m.train_texture_ids.begin(), m.train_texture_ids.end());
  for (int id : m.test_texture_ids)
    if (train.count(id))
      throw NumericError("manifest: texture id " + std::to_string(id) +
                         " appears in both train and new-texture pools");
}

inline void save_manifest(const std::string& dir, const Manifest& m) {
  nlohmann::json j;
  j["format"] = "deform-dataset-v1";
  j["seed"] = m.seed;
  j["grid_n"] = m.grid_n;
  j["image_w"] = m.image_w;
  j["image_h"] = m.image_h;
  j["train_texture_ids"] = m.train_texture_ids;
  j["test_texture_ids"] = m.test_texture_ids;
  for (const auto& [name, info] : m.splits) {
    j["splits"][name] = {{"condition", info.condition},
                         {"occluded", info.occluded},
                         {"count", info.files.size()},
                         {"files", info.files}};
  }
  atomic_write(dir + "/manifest.json", [&](std::ostream& os) { os << j.dump(2) << "\n"; });
}

inline Manifest load_manifest(const std::string& dir) {
  std::ifstream is(dir + "/manifest.json");
  if (!is) throw IoError("cannot open " + dir + "/manifest.json");
  nlohmann::json j;
  is >> j;
  if (j.value("format", "") != std::string("deform-dataset-v1"))
    throw IoError(dir + ": unknown dataset format");
  Manifest m;
  m.seed = j["seed"].get<uint64_t>();
  m.grid_n = j["grid_n"].get<int>();
  m.image_w = j["image_w"].get<int>();
  m.image_h = j["image_h"].get<int>();
  m.train_texture_ids = j["train_texture_ids"].get<std::vector<int>>();
  m.test_texture_ids = j["test_texture_ids"].get<std::vector<int>>();
  for (const auto& [name, sj] : j["splits"].items()) {
    SplitInfo info;
    info.condition = sj["condition"].get<std::string>();
    info.occluded = sj["occluded"].get<bool>();
    info.files = sj["files"].get<std::vector<std::string>>();
    m.splits[name] = std::move(info);
  }
  check_disjoint_pools(m);
  return m;
}

inline std::vector<Sample> load_split(const std::string& dir, const Manifest& m,
                                      const std::string& split) {
  auto it = m.splits.find(split);
  if (it == m.splits.end()) throw IoError("dataset has no split '" + split + "'");
  std::vector<Sample> out;
  out.reserve(it->second.files.size());
  for (const std::string& f : it->second.files) out.push_back(load_sample(dir + "/" + f));
  return out;
}

// Writes all splits plus the manifest. Raw splits use the known / new / plain
// texture conditions; each also gets an occluded twin built from the same
// scenes with gray patches added to the image only. Deterministic per seed.
inline Manifest generate_dataset(const GenConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  Manifest m;
  m.seed = cfg.seed;
  m.grid_n = cfg.grid_n;
  m.image_w = cfg.image_w;
  m.image_h = cfg.image_h;
  for (int i = 0; i < cfg.train_textures; ++i) m.train_texture_ids.push_back(i);
  for (int i = 0; i < cfg.test_textures; ++i)
    m.test_texture_ids.push_back(cfg.train_textures + i);
  check_disjoint_pools(m);
  if (cfg.dry_run) return m;

  std::filesystem::create_directories(out_dir);
  const Rng root(cfg.seed);

  struct RawSplit {
    std::string name;
    std::string condition;
    int count;
    uint64_t key_base;
  };
  const std::vector<RawSplit> raw = {
      {"train", "known", cfg.n_train, 0},
      {"val", "known", cfg.n_val, 1000000},
      {"test_known", "known", cfg.n_test, 2000000},
      {"test_new", "new", cfg.n_test, 3000000},
      {"test_plain", "plain", cfg.n_test, 4000000},
  };
  char buf[32];
  for (const RawSplit& rs : raw) {
    if (rs.count == 0) continue;
    SplitInfo info{rs.condition, false, {}};
    SplitInfo occ_info{rs.condition, true, {}};
    const std::string occ_name = rs.name + "_occ";
    std::filesystem::create_directories(out_dir + "/" + rs.name);
    std::filesystem::create_directories(out_dir + "/" + occ_name);
    for (int i = 0; i < rs.count; ++i) {
      const Rng srng = root.child(rs.key_base + static_cast<uint64_t>(i));
      int texture_id = 0;
      if (rs.condition == "known")
        texture_id = m.train_texture_ids[srng.child(2).next_u64() % m.train_texture_ids.size()];
      else if (rs.condition == "new")
        texture_id = m.test_texture_ids[srng.child(2).next_u64() % m.test_texture_ids.size()];
      Sample s = generate_sample(cfg, srng, texture_id, rs.condition);
      s.meta.seed = rs.key_base + static_cast<uint64_t>(i);
      std::snprintf(buf, sizeof buf, "%05d.bin", i);
      const std::string rel = rs.name + "/" + buf;
      save_sample(out_dir + "/" + rel, s);
      info.files.push_back(rel);

      Sample occ = s;
      occ.meta.occluded = true;
      occ.image = add_occluders(s.image, s.mesh2d, cfg.occluder_count,
                                root.child(rs.key_base + 5000000 + static_cast<uint64_t>(i)),
                                cfg.occluder_gray);
      const std::string occ_rel = occ_name + "/" + buf;
      save_sample(out_dir + "/" + occ_rel, occ);
      occ_info.files.push_back(occ_rel);
    }
    m.splits[rs.name] = std::move(info);
    m.splits[occ_name] = std::move(occ_info);
  }
  save_manifest(out_dir, m);
  return m;
}

}  // namespace deform
