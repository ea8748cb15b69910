#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <deform/adam.hpp>
#include <deform/depthnet.hpp>
#include <deform/grad_check.hpp>

using namespace deform;

TEST_CASE("condition implements the belief-weighted feature sum") {
  Rng rng(3);
  const int H = 6, W = 6, n = 2, nv = n * n, C = 5;
  Tensor feat = random_tensor({H, W, C}, rng, -1.0, 1.0);

  SUBCASE("one-hot beliefs sample the feature vector at that cell") {
    Tensor maps = Tensor::zeros({H, W, nv});
    const int cells[nv] = {7, 0, 22, 35};
    for (int i = 0; i < nv; ++i) maps.mutable_data()[cells[i] * nv + i] = 1.0;
    Tensor V = condition({1, maps}, feat, n);
    CHECK(V.shape() == Shape{n, n, C});
    for (int i = 0; i < nv; ++i)
      for (int c = 0; c < C; ++c)
        CHECK(V.data()[i * C + c] == doctest::Approx(feat.data()[cells[i] * C + c]).epsilon(1e-12));
  }

  SUBCASE("uniform beliefs give the spatial mean per channel") {
    Tensor maps = Tensor::full({H, W, nv}, 1.0 / (H * W));
    Tensor V = condition({1, maps}, feat, n);
    for (int c = 0; c < C; ++c) {
      double mean_c = 0;
      for (int p = 0; p < H * W; ++p) mean_c += feat.data()[p * C + c];
      mean_c /= H * W;
      for (int i = 0; i < nv; ++i)
        CHECK(V.data()[i * C + c] == doctest::Approx(mean_c).epsilon(1e-12));
    }
  }

  SUBCASE("entries stay inside the per-channel value range (convexity)") {
    for (int trial = 0; trial < 10; ++trial) {
      BeliefMapStack b = normalize(random_tensor({H, W, nv}, rng, -2.0, 2.0), 1);
      Tensor V = condition(b, feat, n);
      for (int c = 0; c < C; ++c) {
        double lo = 1e30, hi = -1e30;
        for (int p = 0; p < H * W; ++p) {
          lo = std::min(lo, feat.data()[p * C + c]);
          hi = std::max(hi, feat.data()[p * C + c]);
        }
        for (int i = 0; i < nv; ++i) {
          CHECK(V.data()[i * C + c] >= lo - 1e-12);
          CHECK(V.data()[i * C + c] <= hi + 1e-12);
        }
      }
    }
  }

  SUBCASE("linear in features and in beliefs (superposition)") {
    BeliefMapStack b1 = normalize(random_tensor({H, W, nv}, rng), 1);
    BeliefMapStack b2 = normalize(random_tensor({H, W, nv}, rng), 1);
    Tensor f2 = random_tensor({H, W, C}, rng);
    // features: condition(B, a*F1 + b*F2) == a*condition(B,F1) + b*condition(B,F2)
    Tensor lhs = condition(b1, add(scale(feat, 0.3), scale(f2, 1.7)), n);
    Tensor rhs = add(scale(condition(b1, feat, n), 0.3), scale(condition(b1, f2, n), 1.7));
    for (int64_t i = 0; i < lhs.size(); ++i)
      CHECK(lhs.data()[i] == doctest::Approx(rhs.data()[i]).epsilon(1e-12));
    // beliefs: mixing two stacks mixes the outputs
    Tensor mixed = add(scale(b1.maps, 0.25), scale(b2.maps, 0.75));
    Tensor lhs2 = condition({1, mixed}, feat, n);
    Tensor rhs2 = add(scale(condition(b1, feat, n), 0.25), scale(condition(b2, feat, n), 0.75));
    for (int64_t i = 0; i < lhs2.size(); ++i)
      CHECK(lhs2.data()[i] == doctest::Approx(rhs2.data()[i]).epsilon(1e-12));
  }

  SUBCASE("shape errors") {
    Tensor small = random_tensor({H - 1, W, C}, rng);
    Tensor maps = Tensor::full({H, W, nv}, 1.0 / (H * W));
    CHECK_THROWS_AS(condition({1, maps}, small, n), ShapeError);
    Tensor wrong_k = Tensor::full({H, W, nv + 1}, 1.0 / (H * W));
    CHECK_THROWS_AS(condition({1, wrong_k}, feat, n), ShapeError);
  }

  SUBCASE("gradients w.r.t. beliefs and features") {
    Tensor braw = random_tensor({4, 4, 4}, rng);
    Tensor f = random_tensor({4, 4, 3}, rng);
    Tensor w = random_tensor({2, 2, 3}, rng);
    const double eb = grad_check(
        [&](const Tensor& t) { return sum(mul(condition(normalize(t, 1), f, 2), w)); }, braw,
        1e-6);
    const double ef = grad_check(
        [&](const Tensor& t) { return sum(mul(condition(normalize(braw, 1), t, 2), w)); }, f,
        1e-6);
    CHECK(eb < 1e-5);
    CHECK(ef < 1e-5);
  }
}

TEST_CASE("predict_depth parameterization") {
  Rng rng(5);
  const int n = 3, C = 6;
  ParamRegistry reg;
  DepthRegressor dr(reg, "depth", C, 8, rng);
  Tensor V = random_tensor({n, n, C}, rng, -1.0, 1.0);

  SUBCASE("output shape and strict positivity above z_min") {
    Tensor z = predict_depth(dr, V, 0.1);
    CHECK(z.shape() == Shape{n * n, 1});
    for (double v : z.data()) CHECK(v > 0.1);
  }

  SUBCASE("all-zero raw output gives z_min + ln 2") {
    // zero every parameter so the regressor is the zero function
    for (const auto& [name, p] : reg.named_all()) {
      Tensor t = p;
      std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
    }
    Tensor z = predict_depth(dr, V, 0.1);
    for (double v : z.data())
      CHECK(v == doctest::Approx(0.1 + std::log(2.0)).epsilon(1e-12));
  }
}

TEST_CASE("depth branch overfits one sample") {
  // condition + regressor trained against fixed target depths; after 500 Adam
  // steps every depth should be within 1% of the mean target depth
  Rng rng(11);
  const int n = 3, nv = n * n, C = 8, H = 8, W = 8;
  ParamRegistry reg;
  DepthRegressor dr(reg, "depth", C, 12, rng);
  Tensor feat = random_tensor({H, W, C}, rng, -1.0, 1.0);
  BeliefMapStack b = normalize(random_tensor({H, W, nv}, rng, -1.0, 1.0), 1);

  std::vector<double> target(nv);
  double mean_depth = 0;
  for (int i = 0; i < nv; ++i) mean_depth += target[i] = 1.0 + 0.5 * rng.uniform();
  mean_depth /= nv;
  Tensor z_star = Tensor::from_data({nv, 1}, std::vector<double>(target));

  Adam opt;
  const auto params = reg.named_all();
  for (int step = 0; step < 500; ++step) {
    Tensor V = condition(b, feat, n);
    Tensor z = predict_depth(dr, V, 0.1);
    Tensor d = sub(z, z_star);
    backward(sum(mul(d, d)));
    opt.step(params, 1e-2, 0.0);
  }
  Tensor z = predict_depth(dr, condition(b, feat, n), 0.1);
  double worst = 0;
  for (int i = 0; i < nv; ++i) worst = std::max(worst, std::abs(z.data()[i] - target[i]));
  CHECK(worst < 0.01 * mean_depth);
}
