#pragma once

#include <iostream>

#include "deform/grad_check.hpp"
#include "deform/model.hpp"

namespace deform {

namespace detail_gc {

// Sum of an elementwise product with a fixed random cotangent, so every output
// coordinate influences the scalar with a distinct weight.
inline Tensor weighted_sum(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

inline Tensor random_signed(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<double> d(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : d) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(d));
}

}  // namespace detail_gc

// Populates op_checks() with one randomized finite-difference check per
// differentiable op. Tolerances follow the documented gradient-suite contract:
// 1e-4 for elementwise / conv / reduction / matmul ops, 1e-5 for the geometry
// ops (shape normalization, lifting, conditioning, soft-argmax), 1e-4 for the
// alignment loss and 1e-3 for the full toy-model loss.
inline void register_op_checks() {
  auto& reg = op_checks();
  if (!reg.empty()) return;
  using detail_gc::weighted_sum;

  // `build` must be a pure function of (input, fixed cotangent weight)
  auto simple = [&](const std::string& name, double tol,
                    std::function<Tensor(const Tensor&, const Tensor&)> build, Shape shape,
                    Shape wshape, double lo, double hi, double eps = 1e-6) {
    reg.push_back({name, tol, [=](uint64_t seed) {
                     Rng rng(seed);
                     Tensor x = random_tensor(shape, rng, lo, hi);
                     Tensor w = random_tensor(wshape, rng);
                     return grad_check([&](const Tensor& t) { return build(t, w); }, x, eps);
                   }});
  };

  // elementwise binary, both argument positions
  for (const std::string name : {"add", "sub", "mul", "div"}) {
    reg.push_back({name, 1e-4, [name](uint64_t seed) {
                     Rng rng(seed);
                     const bool safe = name == "div";
                     Tensor x = safe ? random_tensor({3, 4}, rng, 0.6, 1.6)
                                     : random_tensor({3, 4}, rng, -1.0, 1.0);
                     Tensor c = safe ? random_tensor({3, 4}, rng, 0.6, 1.6)
                                     : random_tensor({3, 4}, rng, -1.0, 1.0);
                     Tensor w1 = random_tensor({3, 4}, rng), w2 = random_tensor({3, 4}, rng);
                     auto op = [&](const Tensor& a, const Tensor& b) {
                       if (name == "add") return add(a, b);
                       if (name == "sub") return sub(a, b);
                       if (name == "mul") return mul(a, b);
                       return div(a, b);
                     };
                     return grad_check(
                         [&](const Tensor& t) {
                           return add(weighted_sum(op(t, c), w1), weighted_sum(op(c, t), w2));
                         },
                         x, 1e-6);
                   }});
  }

  simple("neg", 1e-4,
         [](const Tensor& t, const Tensor& w) { return weighted_sum(neg(t), w); }, {3, 4}, {3, 4},
         -1, 1);
  simple("scale", 1e-4,
         [](const Tensor& t, const Tensor& w) { return weighted_sum(scale(t, -1.7), w); }, {3, 4},
         {3, 4}, -1, 1);
  simple("add_const", 1e-4,
         [](const Tensor& t, const Tensor& w) { return weighted_sum(add_const(t, 0.37), w); },
         {3, 4}, {3, 4}, -1, 1);
  simple("exp", 1e-4,
         [](const Tensor& t, const Tensor& w) { return weighted_sum(exp_op(t), w); }, {3, 4},
         {3, 4}, -1, 1);
  simple("log", 1e-4,
         [](const Tensor& t, const Tensor& w) { return weighted_sum(log_op(t), w); }, {3, 4},
         {3, 4}, 0.3, 1.5);
  simple("sqrt", 1e-4,
         [](const Tensor& t, const Tensor& w) { return weighted_sum(sqrt_op(t), w); }, {3, 4},
         {3, 4}, 0.3, 1.5);
  // keep activations away from the kink so central differences are valid
  reg.push_back({"leaky_relu", 1e-4, [](uint64_t seed) {
                   Rng rng(seed);
                   Tensor x = detail_gc::random_signed({3, 4}, rng, 0.2, 1.0);
                   Tensor w = random_tensor({3, 4}, rng);
                   return grad_check(
                       [&](const Tensor& t) { return weighted_sum(leaky_relu(t), w); }, x, 1e-6);
                 }});
  simple("softplus", 1e-4,
         [](const Tensor& t, const Tensor& w) { return weighted_sum(softplus(t), w); }, {3, 4},
         {3, 4}, -2, 2);

  simple("sum", 1e-4, [](const Tensor& t, const Tensor&) { return sum(t); }, {4, 3}, {1}, -1, 1);
  simple("mean", 1e-4, [](const Tensor& t, const Tensor&) { return mean(t); }, {4, 3}, {1}, -1, 1);
  simple("reshape", 1e-4,
         [](const Tensor& t, const Tensor& w) { return weighted_sum(reshape(t, {2, 6}), w); },
         {3, 4}, {2, 6}, -1, 1);
  simple("transpose", 1e-4,
         [](const Tensor& t, const Tensor& w) { return weighted_sum(transpose(t), w); }, {3, 4},
         {4, 3}, -1, 1);
  simple("slice", 1e-4,
         [](const Tensor& t, const Tensor& w) {
           return weighted_sum(slice(t, {1, 0, 1}, {2, 3, 2}), w);
         },
         {4, 3, 4}, {2, 3, 2}, -1, 1);
  reg.push_back({"concat", 1e-4, [](uint64_t seed) {
                   Rng rng(seed);
                   Tensor x = random_tensor({3, 2, 2}, rng);
                   Tensor c = random_tensor({3, 3, 2}, rng);
                   Tensor w = random_tensor({3, 5, 2}, rng);
                   Tensor w2 = random_tensor({3, 5, 2}, rng);
                   return grad_check(
                       [&](const Tensor& t) {
                         return add(weighted_sum(concat({t, c}, 1), w),
                                    weighted_sum(concat({c, t}, 1), w2));
                       },
                       x, 1e-6);
                 }});

  reg.push_back({"matmul", 1e-4, [](uint64_t seed) {
                   Rng rng(seed);
                   Tensor x = random_tensor({4, 5}, rng);
                   Tensor c = random_tensor({5, 3}, rng);
                   Tensor c2 = random_tensor({3, 4}, rng);
                   Tensor w1 = random_tensor({4, 3}, rng), w2 = random_tensor({3, 5}, rng);
                   return grad_check(
                       [&](const Tensor& t) {
                         return add(weighted_sum(matmul(t, c), w1),
                                    weighted_sum(matmul(c2, t), w2));
                       },
                       x, 1e-6);
                 }});

  auto conv_check = [](uint64_t seed, int arg, int stride) {
    Rng rng(seed);
    Tensor img = random_tensor({6, 6, 3}, rng);
    Tensor ker = random_tensor({3, 3, 3, 4}, rng, -0.5, 0.5);
    Tensor b = random_tensor({4}, rng);
    const int ho = (6 + 2 - 3) / stride + 1;
    Tensor w = random_tensor({ho, ho, 4}, rng);
    auto f = [&](const Tensor& t) {
      const Tensor& i = arg == 0 ? t : img;
      const Tensor& k = arg == 1 ? t : ker;
      const Tensor& bb = arg == 2 ? t : b;
      return detail_gc::weighted_sum(conv2d(i, k, bb, stride, 1), w);
    };
    return grad_check(f, arg == 0 ? img : arg == 1 ? ker : b, 1e-6);
  };
  reg.push_back({"conv2d.input", 1e-4, [=](uint64_t s) { return conv_check(s, 0, 1); }});
  reg.push_back({"conv2d.kernel", 1e-4, [=](uint64_t s) { return conv_check(s, 1, 1); }});
  reg.push_back({"conv2d.bias", 1e-4, [=](uint64_t s) { return conv_check(s, 2, 1); }});
  reg.push_back({"conv2d.stride2", 1e-4, [=](uint64_t s) { return conv_check(s, 0, 2); }});

  simple("spatial_softmax", 1e-4,
         [](const Tensor& t, const Tensor& w) { return weighted_sum(spatial_softmax(t), w); },
         {5, 5, 3}, {5, 5, 3}, -2, 2);

  reg.push_back({"belief_pool", 1e-4, [](uint64_t seed) {
                   Rng rng(seed);
                   Tensor B = random_tensor({4, 4, 3}, rng, 0.0, 1.0);
                   Tensor F = random_tensor({4, 4, 5}, rng);
                   Tensor w = random_tensor({3, 5}, rng);
                   const double eb = grad_check(
                       [&](const Tensor& t) { return weighted_sum(belief_pool(t, F), w); }, B,
                       1e-6);
                   const double ef = grad_check(
                       [&](const Tensor& t) { return weighted_sum(belief_pool(B, t), w); }, F,
                       1e-6);
                   return std::max(eb, ef);
                 }});

  reg.push_back({"normalize_shape", 1e-5, [](uint64_t seed) {
                   Rng rng(seed);
                   Tensor x = random_tensor({25, 3}, rng);
                   Tensor w = random_tensor({25, 3}, rng);
                   return grad_check(
                       [&](const Tensor& t) { return weighted_sum(normalize_shape_op(t), w); }, x,
                       1e-6);
                 }});

  reg.push_back({"lift", 1e-5, [](uint64_t seed) {
                   Rng rng(seed);
                   Camera cam{55, 55, 31.5, 31.5, 64, 64};
                   Tensor U = random_tensor({9, 2}, rng, 5.0, 58.0);
                   Tensor z = random_tensor({9, 1}, rng, 0.8, 2.5);
                   Tensor w = random_tensor({9, 3}, rng);
                   const double eu = grad_check(
                       [&](const Tensor& t) { return weighted_sum(lift_op(cam, t, z), w); }, U,
                       1e-6);
                   const double ez = grad_check(
                       [&](const Tensor& t) { return weighted_sum(lift_op(cam, U, t), w); }, z,
                       1e-6);
                   return std::max(eu, ez);
                 }});

  reg.push_back({"condition", 1e-5, [](uint64_t seed) {
                   Rng rng(seed);
                   Tensor Braw = random_tensor({4, 4, 4}, rng);
                   Tensor F = random_tensor({4, 4, 6}, rng);
                   Tensor w = random_tensor({2, 2, 6}, rng);
                   auto via_beliefs = [&](const Tensor& t) {
                     BeliefMapStack b = normalize(t, 1);
                     return weighted_sum(condition(b, F, 2), w);
                   };
                   auto via_features = [&](const Tensor& t) {
                     BeliefMapStack b = normalize(Braw, 1);
                     return weighted_sum(condition(b, t, 2), w);
                   };
                   return std::max(grad_check(via_beliefs, Braw, 1e-6),
                                   grad_check(via_features, F, 1e-6));
                 }});

  reg.push_back({"soft_argmax", 1e-5, [](uint64_t seed) {
                   Rng rng(seed);
                   Camera cam{55, 55, 31.5, 31.5, 64, 64};
                   Tensor raw = random_tensor({16, 16, 4}, rng, -1.0, 1.0);
                   Tensor w = random_tensor({4, 2}, rng);
                   return grad_check(
                       [&](const Tensor& t) {
                         return weighted_sum(soft_argmax_op(normalize(t, 1), cam), w);
                       },
                       raw, 1e-6);
                 }});

  reg.push_back({"err_align", 1e-4, [](uint64_t seed) {
                   Rng rng(seed);
                   Tensor x = random_tensor({25, 3}, rng);
                   Tensor x_star = random_tensor({25, 3}, rng);
                   return grad_check([&](const Tensor& t) { return err_align_op(t, x_star); }, x,
                                     1e-6);
                 }});

  // full loss through a 3x3-mesh, 16x16-image toy model, w.r.t. the image and
  // the ground-truth mesh
  reg.push_back({"model_loss", 1e-3, [](uint64_t seed) {
                   ModelConfig cfg;
                   cfg.grid_n = 3;
                   cfg.image_h = cfg.image_w = 16;
                   cfg.t_max = 2;
                   cfg.feat_channels = 8;
                   cfg.stage_width = 8;
                   cfg.depth_width = 8;
                   cfg.seed = seed;
                   DeformNet model(cfg);
                   Camera cam{14, 14, 7.5, 7.5, 16, 16};
                   Rng rng(seed + 1);
                   Tensor image = random_tensor({16, 16, 3}, rng, 0.0, 1.0);
                   Tensor x_star = random_tensor({9, 3}, rng, -0.4, 0.4);
                   for (int i = 0; i < 9; ++i) x_star.mutable_data()[3 * i + 2] += 2.0;
                   MeshGrid2D u_star;
                   u_star.n = 3;
                   for (const Vec3& p : tensor_to_mesh(x_star, 3).v)
                     u_star.v.push_back({cam.f_u * p.x / p.z + cam.u_c,
                                         cam.f_v * p.y / p.z + cam.v_c});
                   const BeliefMapStack target = gt_heatmap(u_star, 4, 4, 1.0, cam);
                   auto loss_from_image = [&](const Tensor& img) {
                     const ForwardResult fr = model.forward(img, cam);
                     return model.loss(fr.mesh3d, x_star, fr.beliefs, target);
                   };
                   auto loss_from_gt = [&](const Tensor& gt) {
                     const ForwardResult fr = model.forward(image, cam);
                     return model.loss(fr.mesh3d, gt, fr.beliefs, target);
                   };
                   return std::max(grad_check(loss_from_image, image, 1e-5),
                                   grad_check(loss_from_gt, x_star, 1e-5));
                 }});
}

// Runs every registered check, prints one line per op, returns failure count.
inline int run_op_checks(std::ostream& os, uint64_t seed) {
  register_op_checks();
  int failures = 0;
  for (const OpCheck& c : op_checks()) {
    double err = 0;
    bool threw = false;
    std::string what;
    try {
      err = c.run(seed);
    } catch (const std::exception& e) {
      threw = true;
      what = e.what();
    }
    const bool ok = !threw && err <= c.tol;
    os << (ok ? "PASS " : "FAIL ") << c.name << "  tol=" << c.tol;
    if (threw)
      os << "  error: " << what;
    else
      os << "  max_rel_err=" << err;
    os << "\n";
    if (!ok) ++failures;
  }
  return failures;
}

}  // namespace deform
