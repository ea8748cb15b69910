#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <deform/detect2d.hpp>
#include <deform/grad_check.hpp>

using namespace deform;

namespace {

Camera test_cam() { return {55, 55, 31.5, 31.5, 64, 64}; }

}  // namespace

TEST_CASE("grid/pixel mapping round trip and the documented example") {
  // one-hot at cell 10 on a 16-wide grid with scale 4 -> 41.5 px
  CHECK(grid_to_px(10.0, 4.0) == doctest::Approx(41.5).epsilon(1e-12));
  for (double g : {0.0, 3.25, 7.5, 15.0}) {
    CHECK(px_to_grid(grid_to_px(g, 4.0), 4.0) == doctest::Approx(g).epsilon(1e-12));
    CHECK(px_to_grid(grid_to_px(g, 2.0), 2.0) == doctest::Approx(g).epsilon(1e-12));
  }
}

TEST_CASE("normalize turns raw activations into per-vertex distributions") {
  Rng rng(5);
  Tensor raw = random_tensor({4, 4, 3}, rng, -2.0, 2.0);
  BeliefMapStack b = normalize(raw, 1);
  CHECK(b.stage == 1);
  for (int k = 0; k < 3; ++k) {
    double s = 0;
    for (int p = 0; p < 16; ++p) {
      const double v = b.maps.data()[p * 3 + k];
      CHECK(v > 0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("uniform input gives 1/16 everywhere") {
    BeliefMapStack u = normalize(Tensor::full({4, 4, 1}, 0.7), 1);
    for (double v : u.maps.data()) CHECK(v == doctest::Approx(1.0 / 16).epsilon(1e-12));
  }

  SUBCASE("a +50 peak takes essentially all the mass") {
    Tensor raw2 = Tensor::zeros({4, 4, 1});
    raw2.mutable_data()[5] = 50.0;
    BeliefMapStack p = normalize(raw2, 2);
    CHECK(p.maps.data()[5] > 0.9999);
  }

  SUBCASE("non-finite activations are rejected") {
    Tensor bad = Tensor::zeros({2, 2, 1});
    bad.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(normalize(bad, 1), NumericError);
  }

  SUBCASE("gradient through normalize") {
    Tensor w = random_tensor({4, 4, 3}, rng);
    const double err = grad_check(
        [&](const Tensor& t) { return sum(mul(normalize(t, 1).maps, w)); }, raw, 1e-6);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("soft_argmax on constructed belief maps") {
  const Camera cam = test_cam();  // 64 px image over a 16-cell grid, scale 4

  SUBCASE("one-hot at cell (row 3, col 10) lands at the cell center in pixels") {
    Tensor maps = Tensor::zeros({16, 16, 1});
    maps.mutable_data()[(3 * 16 + 10) * 1] = 1.0;
    Tensor uv = soft_argmax_op({1, maps}, cam);
    CHECK(uv.data()[0] == doctest::Approx(41.5).epsilon(1e-12));  // u from col 10
    CHECK(uv.data()[1] == doctest::Approx(13.5).epsilon(1e-12));  // v from row 3
  }

  SUBCASE("uniform beliefs over a 56-cell grid give the center (27.5, 27.5)") {
    // image size = grid size, so pixel and grid coordinates coincide
    Camera c56{50, 50, 27.5, 27.5, 56, 56};
    Tensor maps = Tensor::full({56, 56, 4}, 1.0 / (56.0 * 56.0));
    MeshGrid2D uv = soft_argmax({1, maps}, c56, 2);
    for (const Vec2& p : uv.v) {
      CHECK(p.u == doctest::Approx(27.5).epsilon(1e-9));
      CHECK(p.v == doctest::Approx(27.5).epsilon(1e-9));
    }
  }

  SUBCASE("two equal peaks average their centers") {
    Tensor maps = Tensor::zeros({16, 16, 1});
    maps.mutable_data()[(0 * 16 + 0)] = 0.5;
    maps.mutable_data()[(0 * 16 + 8)] = 0.5;
    Tensor uv = soft_argmax_op({1, maps}, cam);
    CHECK(uv.data()[0] == doctest::Approx(0.5 * (1.5 + 33.5)).epsilon(1e-12));
    CHECK(uv.data()[1] == doctest::Approx(1.5).epsilon(1e-12));
  }

  SUBCASE("output lies in the convex hull of cell centers") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
      BeliefMapStack b = normalize(random_tensor({16, 16, 5}, rng, -3.0, 3.0), 1);
      Tensor uv = soft_argmax_op(b, cam);
      for (int i = 0; i < 5; ++i) {
        CHECK(uv.data()[2 * i] >= 1.5);
        CHECK(uv.data()[2 * i] <= 61.5);
        CHECK(uv.data()[2 * i + 1] >= 1.5);
        CHECK(uv.data()[2 * i + 1] <= 61.5);
      }
    }
  }

  SUBCASE("permutation equivariance across vertex channels") {
    Rng rng(11);
    Tensor raw = random_tensor({8, 8, 3}, rng, -2.0, 2.0);
    Tensor uv = soft_argmax_op(normalize(raw, 1), cam);
    // swap channels 0 and 2
    Tensor swapped = Tensor::zeros({8, 8, 3});
    for (int p = 0; p < 64; ++p) {
      swapped.mutable_data()[p * 3 + 0] = raw.data()[p * 3 + 2];
      swapped.mutable_data()[p * 3 + 1] = raw.data()[p * 3 + 1];
      swapped.mutable_data()[p * 3 + 2] = raw.data()[p * 3 + 0];
    }
    Tensor uv2 = soft_argmax_op(normalize(swapped, 1), cam);
    CHECK(uv2.data()[0] == doctest::Approx(uv.data()[4]).epsilon(1e-12));
    CHECK(uv2.data()[5] == doctest::Approx(uv.data()[1]).epsilon(1e-12));
  }

  SUBCASE("gradient through normalize + soft_argmax") {
    Rng rng(13);
    Tensor raw = random_tensor({8, 8, 2}, rng, -1.0, 1.0);
    Tensor w = random_tensor({2, 2}, rng);
    const double err = grad_check(
        [&](const Tensor& t) { return sum(mul(soft_argmax_op(normalize(t, 1), cam), w)); }, raw,
        1e-6);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("gt_heatmap peaks, mass and soft-argmax consistency") {
  const Camera cam = test_cam();
  MeshGrid2D u;
  u.n = 2;
  u.v = {{10.0, 8.0}, {41.5, 13.5}, {55.0, 50.0}, {30.0, 20.0}};

  BeliefMapStack b = gt_heatmap(u, 16, 16, 1.0, cam);
  CHECK(b.maps.shape() == Shape{16, 16, 4});

  SUBCASE("each slice sums to one") {
    for (int k = 0; k < 4; ++k) {
      double s = 0;
      for (int p = 0; p < 256; ++p) s += b.maps.data()[p * 4 + k];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  SUBCASE("argmax cell is the nearest grid cell to the vertex") {
    // vertex 1 sits exactly at cell (3,10)
    double best = -1;
    int best_p = -1;
    for (int p = 0; p < 256; ++p)
      if (b.maps.data()[p * 4 + 1] > best) {
        best = b.maps.data()[p * 4 + 1];
        best_p = p;
      }
    CHECK(best_p == 3 * 16 + 10);
  }

  SUBCASE("soft-argmax of the heatmap recovers the vertex to 0.1 grid cells") {
    Tensor uv = soft_argmax_op(b, cam);
    for (int i = 0; i < 4; ++i) {
      CHECK(std::abs(uv.data()[2 * i] - u.v[i].u) / 4.0 < 0.1);
      CHECK(std::abs(uv.data()[2 * i + 1] - u.v[i].v) / 4.0 < 0.1);
    }
  }

  SUBCASE("sigma 0.5 concentrates > 99% of mass in a 3x3 neighborhood") {
    BeliefMapStack tight = gt_heatmap(u, 16, 16, 0.5, cam);
    double s = 0;
    for (int h = 2; h <= 4; ++h)
      for (int w = 9; w <= 11; ++w) s += tight.maps.data()[(h * 16 + w) * 4 + 1];
    CHECK(s > 0.99);
  }

  CHECK_THROWS_AS(gt_heatmap(u, 16, 16, 0.0, cam), NumericError);
}

TEST_CASE("stage regressor contracts") {
  ParamRegistry reg;
  Rng rng(21);
  const int C = 6, nv = 4, H = 8;
  StageRegressor s1(reg, "stage1", 1, C, 8, nv, rng);
  StageRegressor s2(reg, "stage2", 2, C + nv, 8, nv, rng);
  Tensor feat = random_tensor({H, H, C}, rng, -1.0, 1.0);

  BeliefMapStack b1 = run_stage(s1, feat, nullptr);
  CHECK(b1.stage == 1);
  CHECK(b1.maps.shape() == Shape{H, H, nv});

  BeliefMapStack b2 = run_stage(s2, feat, &b1);
  CHECK(b2.stage == 2);
  CHECK(b2.maps.shape() == Shape{H, H, nv});

  SUBCASE("previous beliefs required iff stage > 1") {
    CHECK_THROWS_AS(run_stage(s2, feat, nullptr), ShapeError);
    CHECK_THROWS_AS(run_stage(s1, feat, &b1), ShapeError);
  }

  SUBCASE("spatial mismatch between features and beliefs is rejected") {
    Tensor small = random_tensor({4, 4, C}, rng);
    CHECK_THROWS_AS(run_stage(s2, small, &b1), ShapeError);
  }

  SUBCASE("three-stage chain is differentiable end to end") {
    ParamRegistry reg3;
    Rng r3(33);
    const int c3 = 4, n3 = 2;
    StageRegressor t1(reg3, "s1", 1, c3, 4, n3, r3);
    StageRegressor t2(reg3, "s2", 2, c3 + n3, 4, n3, r3);
    StageRegressor t3(reg3, "s3", 3, c3 + n3, 4, n3, r3);
    Tensor f = random_tensor({4, 4, c3}, r3, -0.5, 0.5);
    Tensor w = random_tensor({4, 4, n3}, r3);
    auto f3 = [&](const Tensor& t) {
      BeliefMapStack a = run_stage(t1, t, nullptr);
      BeliefMapStack b = run_stage(t2, t, &a);
      BeliefMapStack c = run_stage(t3, t, &b);
      return sum(mul(c.maps, w));
    };
    CHECK(grad_check(f3, f, 1e-6) < 1e-3);
  }
}

TEST_CASE("overfitting one map sharpens the peak across stages") {
  // tiny supervised problem: push stage outputs toward a one-hot target and
  // check that later stages end up at least as confident as stage 1
  ParamRegistry reg;
  Rng rng(77);
  const int C = 4, nv = 1, H = 6;
  StageRegressor s1(reg, "s1", 1, C, 6, nv, rng);
  StageRegressor s2(reg, "s2", 2, C + nv, 6, nv, rng);
  Tensor feat = random_tensor({H, H, C}, rng, -1.0, 1.0);
  Tensor target = Tensor::zeros({H, H, nv});
  target.mutable_data()[(2 * H + 3)] = 1.0;

  // plain gradient descent on all parameters
  for (int it = 0; it < 200; ++it) {
    BeliefMapStack b1 = run_stage(s1, feat, nullptr);
    BeliefMapStack b2 = run_stage(s2, feat, &b1);
    Tensor d1 = sub(b1.maps, target), d2 = sub(b2.maps, target);
    Tensor loss = add(sum(mul(d1, d1)), sum(mul(d2, d2)));
    backward(loss);
    for (const auto& [name, p] : reg.named_all()) {
      Tensor t = p;
      if (t.grad().empty()) continue;
      for (size_t i = 0; i < t.mutable_data().size(); ++i)
        t.mutable_data()[i] -= 0.5 * t.grad()[i];
    }
  }
  BeliefMapStack b1 = run_stage(s1, feat, nullptr);
  BeliefMapStack b2 = run_stage(s2, feat, &b1);
  const double p1 = b1.maps.data()[2 * H + 3];
  const double p2 = b2.maps.data()[2 * H + 3];
  CHECK(p2 > 0.5);
  CHECK(p2 >= p1 - 0.05);
}
