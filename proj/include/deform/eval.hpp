#pragma once

#include <chrono>
#include <numeric>

#include "deform/dataset.hpp"
#include "deform/model.hpp"

namespace deform {

// Procrustes-aligned mean per-vertex 3D error, measured in the ground-truth
// frame: both shapes are centered and scaled to unit Frobenius norm, the
// rotation comes from the SVD alignment, then the aligned prediction is mapped
// back through the ground truth's centroid and scale.
inline double aligned_3d_error(const MeshGrid3D& pred, const MeshGrid3D& gt) {
  if (pred.v.size() != gt.v.size()) throw ShapeError("aligned_3d_error: mesh size mismatch");
  const NormalizedShape a = normalize_shape(pred.v);
  const NormalizedShape b = normalize_shape(gt.v);
  const RigidAlignment rig = svd_align(b.points, a.points);  // rotates pred frame onto gt frame
  double total = 0;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    const Vec3 r = apply_rot(rig.rotation, a.points[i]);
    const Vec3 mapped = b.scale * r + b.centroid;
    total += norm(mapped - gt.v[i]);
  }
  return total / static_cast<double>(pred.v.size());
}

inline double mean_2d_error(const MeshGrid2D& pred, const MeshGrid2D& gt) {
  if (pred.v.size() != gt.v.size()) throw ShapeError("mean_2d_error: mesh size mismatch");
  double total = 0;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    const double du = pred.v[i].u - gt.v[i].u, dv = pred.v[i].v - gt.v[i].v;
    total += std::sqrt(du * du + dv * dv);
  }
  return total / static_cast<double>(pred.v.size());
}

struct SampleEval {
  int index = 0;
  double err3d = 0;     // aligned mean per-vertex distance
  double err2d_px = 0;  // soft-argmax vs ground-truth projections
  double ms = 0;        // forward wall time
};

struct EvalReport {
  std::string split;
  std::vector<SampleEval> rows;
  double mean3d = 0, median3d = 0, std3d = 0;
  double mean2d = 0;
  double mean_ms = 0;

  static EvalReport from_rows(std::string split, std::vector<SampleEval> rows) {
    EvalReport r;
    r.split = std::move(split);
    r.rows = std::move(rows);
    if (r.rows.empty()) return r;
    std::vector<double> e3;
    for (const auto& s : r.rows) {
      e3.push_back(s.err3d);
      r.mean3d += s.err3d;
      r.mean2d += s.err2d_px;
      r.mean_ms += s.ms;
    }
    const double n = static_cast<double>(r.rows.size());
    r.mean3d /= n;
    r.mean2d /= n;
    r.mean_ms /= n;
    std::sort(e3.begin(), e3.end());
    r.median3d = e3.size() % 2 ? e3[e3.size() / 2]
                               : 0.5 * (e3[e3.size() / 2 - 1] + e3[e3.size() / 2]);
    double var = 0;
    for (double e : e3) var += (e - r.mean3d) * (e - r.mean3d);
    r.std3d = std::sqrt(var / n);
    return r;
  }
};

inline constexpr const char* kEvalCsvHeader = "index,err3d,err2d_px,ms";

inline void write_eval_csv(std::ostream& os, const EvalReport& r) {
  os << kEvalCsvHeader << "\n";
  os.precision(17);
  for (const auto& s : r.rows)
    os << s.index << "," << s.err3d << "," << s.err2d_px << "," << s.ms << "\n";
}

inline EvalReport read_eval_csv(std::istream& is, const std::string& split) {
  std::string line;
  if (!std::getline(is, line) || line != kEvalCsvHeader)
    throw IoError("eval csv: bad header '" + line + "'");
  std::vector<SampleEval> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    SampleEval s;
    std::istringstream ss(line);
    char c;
    if (!(ss >> s.index >> c >> s.err3d >> c >> s.err2d_px >> c >> s.ms))
      throw IoError("eval csv: bad row '" + line + "'");
    rows.push_back(s);
  }
  return EvalReport::from_rows(split, std::move(rows));
}

inline SampleEval evaluate_sample(const DeformNet& model, const Sample& s, int index) {
  const Tensor image = Tensor::from_data({s.image.h, s.image.w, 3}, s.image.rgb);
  const auto t0 = std::chrono::steady_clock::now();
  const ForwardResult fr = model.forward(image, s.camera);
  const auto t1 = std::chrono::steady_clock::now();
  SampleEval ev;
  ev.index = index;
  ev.ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  ev.err3d = aligned_3d_error(tensor_to_mesh(fr.mesh3d, s.mesh3d.n), s.mesh3d);
  ev.err2d_px = mean_2d_error(tensor_to_mesh2d(fr.mesh2d, s.mesh2d.n), s.mesh2d);
  return ev;
}

inline EvalReport evaluate_split(const DeformNet& model, const std::vector<Sample>& samples,
                                 const std::string& split) {
  std::vector<SampleEval> rows;
  rows.reserve(samples.size());
  for (size_t i = 0; i < samples.size(); ++i)
    rows.push_back(evaluate_sample(model, samples[i], static_cast<int>(i)));
  return EvalReport::from_rows(split, std::move(rows));
}

// Baseline counterpart (no 2D branch: err2d computed from the projected mesh).
inline EvalReport evaluate_split_baseline(const BaselineNet& model,
                                          const std::vector<Sample>& samples,
                                          const std::string& split) {
  std::vector<SampleEval> rows;
  for (size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const Tensor image = Tensor::from_data({s.image.h, s.image.w, 3}, s.image.rgb);
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor mesh = model.forward(image);
    const auto t1 = std::chrono::steady_clock::now();
    SampleEval ev;
    ev.index = static_cast<int>(i);
    ev.ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    const MeshGrid3D pred = tensor_to_mesh(mesh, s.mesh3d.n);
    ev.err3d = aligned_3d_error(pred, s.mesh3d);
    ev.err2d_px = mean_2d_error(project(s.camera, pred), s.mesh2d);
    rows.push_back(ev);
  }
  return EvalReport::from_rows(split, std::move(rows));
}

}  // namespace deform
