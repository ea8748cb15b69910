#pragma once

#include "deform/detect2d.hpp"

namespace deform {

// Belief-weighted feature pooling: V[j(i),k(i),c] = sum_{u,v} B_i[u,v] F[u,v,c].
// Each row of the result is a convex combination of feature values.
inline Tensor condition(const BeliefMapStack& B, const Tensor& features, int n) {
  if (B.maps.dim(0) != features.dim(0) || B.maps.dim(1) != features.dim(1))
    throw ShapeError("condition: spatial mismatch between beliefs " + shape_str(B.maps.shape()) +
                     " and features " + shape_str(features.shape()));
  if (B.maps.dim(2) != static_cast<int64_t>(n) * n)
    throw ShapeError("condition: belief channel count != N^2");
  Tensor v = belief_pool(B.maps, features);             // [Nv,C]
  return reshape(v, {n, n, features.dim(2)});           // row-major matches grid_index
}

// Depth regressor over the conditioned N x N x C grid: two residual blocks,
// two conv layers down to one channel.
struct DepthRegressor {
  ResBlock block1, block2;
  Conv2dLayer conv1, conv2;

  DepthRegressor() = default;
  DepthRegressor(ParamRegistry& reg, const std::string& name, int cin, int width, Rng& rng) {
    block1 = ResBlock(reg, name + ".block1", cin, width, rng);
    block2 = ResBlock(reg, name + ".block2", width, width, rng);
    conv1 = Conv2dLayer(reg, name + ".conv1", 3, 3, width, width, 1, 1, rng);
    conv2 = Conv2dLayer(reg, name + ".conv2", 3, 3, width, 1, 1, 1, rng);
  }
};

// Per-vertex depths, ordered by vertex index via the row-major grid mapping.
// z = z_min + softplus(raw) keeps every depth strictly above z_min.
inline Tensor predict_depth(const DepthRegressor& reg, const Tensor& V, double z_min) {
  const int64_t n = V.dim(0);
  Tensor raw = reg.conv2(leaky_relu(reg.conv1(leaky_relu(reg.block2(reg.block1(V))))));
  Tensor flat = reshape(raw, {n * n, 1});
  return add_const(softplus(flat), z_min);  // [Nv,1]
}

}  // namespace deform
