#pragma once

#include "deform/geometry.hpp"
#include "deform/nn.hpp"

namespace deform {

// Feature-grid <-> pixel coordinate mapping. A feature cell covers `scale`
// input pixels; cell centers map to the center of their pixel block.
inline double grid_to_px(double g, double scale) { return (g + 0.5) * scale - 0.5; }
inline double px_to_grid(double px, double scale) { return (px + 0.5) / scale - 0.5; }

// Per-vertex belief maps over the feature grid, each slice a distribution
// summing to 1.
struct BeliefMapStack {
  int stage = 0;
  Tensor maps;  // [H,W,Nv]
};

// normalize: per-vertex spatial softmax, the normalization guaranteeing
// sum_{u,v} B_i[u,v] = 1 with strictly positive entries.
inline BeliefMapStack normalize(const Tensor& raw, int stage) {
  for (double v : raw.data())
    if (!std::isfinite(v)) throw NumericError("normalize: non-finite activation");
  return {stage, spatial_softmax(raw)};
}

// Iterative belief-map regressor for one refinement stage: two residual conv
// blocks then two conv layers down to Nv channels.
struct StageRegressor {
  int t = 1;       // stage index, 1-based
  int n_vert = 0;  // output channels
  ResBlock block1, block2;
  Conv2dLayer conv1, conv2;

  StageRegressor() = default;
  StageRegressor(ParamRegistry& reg, const std::string& name, int t_, int cin, int width,
                 int n_vert_, Rng& rng)
      : t(t_), n_vert(n_vert_) {
    block1 = ResBlock(reg, name + ".block1", cin, width, rng);
    block2 = ResBlock(reg, name + ".block2", width, width, rng);
    conv1 = Conv2dLayer(reg, name + ".conv1", 3, 3, width, width, 1, 1, rng);
    conv2 = Conv2dLayer(reg, name + ".conv2", 3, 3, width, n_vert_, 1, 1, rng);
  }
};

// Stage t > 1 sees [features, previous beliefs] concatenated along channels;
// stage 1 sees only the features.
inline BeliefMapStack run_stage(const StageRegressor& reg, const Tensor& features,
                                const BeliefMapStack* prev) {
  if ((prev == nullptr) != (reg.t == 1))
    throw ShapeError("run_stage: previous beliefs required iff stage > 1");
  Tensor input = features;
  if (prev) {
    if (prev->maps.dim(0) != features.dim(0) || prev->maps.dim(1) != features.dim(1))
      throw ShapeError("run_stage: spatial size mismatch between features " +
                       shape_str(features.shape()) + " and beliefs " +
                       shape_str(prev->maps.shape()));
    input = concat({features, prev->maps}, 2);
  }
  Tensor h = reg.block2(reg.block1(input));
  Tensor raw = reg.conv2(leaky_relu(reg.conv1(leaky_relu(h))));
  return normalize(raw, reg.t);
}

// soft_argmax: expectation of grid coordinates under each belief slice, then
// rescaled to input-image pixels. Output [Nv,2] = (u,v) per vertex,
// differentiable w.r.t. the beliefs.
inline Tensor soft_argmax_op(const BeliefMapStack& B, const Camera& cam) {
  const int64_t H = B.maps.dim(0), W = B.maps.dim(1), K = B.maps.dim(2);
  const double sx = static_cast<double>(cam.width) / static_cast<double>(W);
  const double sy = static_cast<double>(cam.height) / static_cast<double>(H);
  std::vector<double> coords(static_cast<size_t>(H * W * 2));
  for (int64_t h = 0; h < H; ++h)
    for (int64_t w = 0; w < W; ++w) {
      coords[(h * W + w) * 2 + 0] = grid_to_px(static_cast<double>(w), sx);
      coords[(h * W + w) * 2 + 1] = grid_to_px(static_cast<double>(h), sy);
    }
  Tensor coord_map = Tensor::from_data({H, W, 2}, std::move(coords));
  return belief_pool(B.maps, coord_map);  // [K,2] pixels
}

inline MeshGrid2D soft_argmax(const BeliefMapStack& B, const Camera& cam, int n) {
  return tensor_to_mesh2d(soft_argmax_op(B, cam), n);
}

// Ground-truth heatmaps: Gaussian peak per vertex at its 2D location mapped to
// the feature grid, clipped to the grid and normalized to sum 1.
inline BeliefMapStack gt_heatmap(const MeshGrid2D& U_star, int H, int W, double sigma,
                                 const Camera& cam) {
  if (sigma <= 0) throw NumericError("gt_heatmap: sigma must be positive");
  const double sx = static_cast<double>(cam.width) / static_cast<double>(W);
  const double sy = static_cast<double>(cam.height) / static_cast<double>(H);
  const int64_t K = static_cast<int64_t>(U_star.v.size());
  std::vector<double> maps(static_cast<size_t>(H) * W * K, 0.0);
  for (int64_t i = 0; i < K; ++i) {
    const double gu = px_to_grid(U_star.v[i].u, sx);
    const double gv = px_to_grid(U_star.v[i].v, sy);
    double total = 0;
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        const double du = w - gu, dv = h - gv;
        const double val = std::exp(-(du * du + dv * dv) / (2.0 * sigma * sigma));
        maps[(static_cast<int64_t>(h) * W + w) * K + i] = val;
        total += val;
      }
    if (total <= 0) total = 1;
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) maps[(static_cast<int64_t>(h) * W + w) * K + i] /= total;
  }
  BeliefMapStack out;
  out.stage = 0;
  out.maps = Tensor::from_data({H, W, K}, std::move(maps));
  return out;
}

}  // namespace deform
