#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "deform/grad_check.hpp"
#include "deform/procrustes.hpp"

using namespace deform;

namespace {

std::vector<Vec3> random_points(int n, Rng& rng, double spread = 1.0) {
  std::vector<Vec3> p;
  for (int i = 0; i < n; ++i)
    p.push_back({rng.uniform(-spread, spread), rng.uniform(-spread, spread),
                 rng.uniform(-spread, spread)});
  return p;
}

std::array<double, 9> random_rotation(Rng& rng) {
  return rotation_from_quat(rng.gaussian(), rng.gaussian(), rng.gaussian(), rng.gaussian());
}

MeshGrid3D as_mesh(std::vector<Vec3> pts, int n) { return MeshGrid3D{n, std::move(pts)}; }

}  // namespace

TEST_CASE("eig_sym4 diagonal and identity") {
  EigSym<4> e = eig_sym4({4, 0, 0, 0, 0, 3, 0, 0, 0, 0, 2, 0, 0, 0, 0, 1});
  CHECK(e.values[0] == doctest::Approx(4));
  CHECK(e.values[3] == doctest::Approx(1));
  CHECK(std::abs(e.vec[0][0]) == doctest::Approx(1));

  EigSym<4> id = eig_sym4({1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  for (double v : id.values) CHECK(v == doctest::Approx(1));
}

TEST_CASE("eig_sym4 satisfies M v = lambda v on random symmetric input") {
  Rng rng(61);
  for (int trial = 0; trial < 50; ++trial) {
    std::array<double, 16> m{};
    for (int i = 0; i < 4; ++i)
      for (int j = i; j < 4; ++j) m[i * 4 + j] = m[j * 4 + i] = rng.uniform(-2, 2);
    EigSym<4> e = eig_sym<4>(m);
    for (int k = 0; k < 4; ++k) {
      for (int r = 0; r < 4; ++r) {
        double mv = 0;
        for (int c = 0; c < 4; ++c) mv += m[r * 4 + c] * e.vec[k][c];
        CHECK(std::abs(mv - e.values[k] * e.vec[k][r]) < 1e-10);
      }
    }
  }
}

TEST_CASE("lambda_max gradient vs finite differences (separated spectrum)") {
  Rng rng(67);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> m(16);
    for (int i = 0; i < 4; ++i)
      for (int j = i; j < 4; ++j) m[i * 4 + j] = m[j * 4 + i] = rng.uniform(-2, 2);
    for (int i = 0; i < 4; ++i) m[i * 4 + i] += 3.0 * i;  // spread the spectrum
    Tensor K = Tensor::from_data({4, 4}, m);
    auto f = [](const Tensor& t) {
      Tensor sym = scale(add(t, transpose(t)), 0.5);
      return lambda_max_sym4(sym);
    };
    CHECK(grad_check(f, K) < 1e-6);
  }
}

TEST_CASE("lambda_max degenerate gap gives zero gradient and counts the event") {
  Tensor K = Tensor::from_data({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1})
                 .set_requires_grad(true);
  const uint64_t before = degenerate_eig_events();
  backward(lambda_max_sym4(K));
  CHECK(degenerate_eig_events() == before + 1);
  for (double g : K.grad()) CHECK(g == 0.0);
}

TEST_CASE("normalize_shape invariants") {
  Rng rng(71);
  auto pts = random_points(8, rng);
  NormalizedShape ns = normalize_shape(pts);
  Vec3 c{};
  double ss = 0;
  for (const Vec3& p : ns.points) {
    c = c + p;
    ss += dot(p, p);
  }
  CHECK(std::abs(c.x) < 1e-10);
  CHECK(std::abs(c.y) < 1e-10);
  CHECK(std::abs(c.z) < 1e-10);
  CHECK(ss == doctest::Approx(1.0).epsilon(1e-10));

  // similarity invariance
  const double alpha = 2.7;
  const Vec3 t{1, -2, 3};
  std::vector<Vec3> moved;
  for (const Vec3& p : pts) moved.push_back(alpha * p + t);
  NormalizedShape ns2 = normalize_shape(moved);
  for (size_t i = 0; i < pts.size(); ++i) {
    CHECK(ns2.points[i].x == doctest::Approx(ns.points[i].x).epsilon(1e-10));
    CHECK(ns2.points[i].z == doctest::Approx(ns.points[i].z).epsilon(1e-10));
  }

  CHECK_THROWS_AS(normalize_shape(std::vector<Vec3>(5, Vec3{1, 1, 1})), NumericError);
}

TEST_CASE("normalize_shape_op gradient") {
  Rng rng(73);
  Tensor X = random_tensor({6, 3}, rng);
  auto f = [](const Tensor& t) {
    Tensor n = normalize_shape_op(t);
    Tensor w = Tensor::from_data({6, 3}, [] {
      std::vector<double> v(18);
      for (size_t i = 0; i < v.size(); ++i) v[i] = 0.1 * static_cast<double>(i) - 0.4;
      return v;
    }());
    return sum(mul(n, w));
  };
  CHECK(grad_check(f, X) < 1e-6);
}

TEST_CASE("quat matrix lambda_max examples") {
  Rng rng(79);
  auto pts = random_points(12, rng);
  NormalizedShape a = normalize_shape(pts);

  // self alignment: lambda_max = sum |a_i|^2 = 1
  CHECK(eig_sym4(quat_matrix(a, a)).values[0] == doctest::Approx(1.0).epsilon(1e-10));

  // rotation invariance of the optimum
  auto R = random_rotation(rng);
  std::vector<Vec3> rotated;
  for (const Vec3& p : pts) rotated.push_back(apply_rot(R, p));
  NormalizedShape b = normalize_shape(rotated);
  CHECK(eig_sym4(quat_matrix(a, b)).values[0] == doctest::Approx(1.0).epsilon(1e-10));

  // random pair: lambda_max matches the SVD oracle's max correlation
  auto q = random_points(12, rng);
  NormalizedShape c = normalize_shape(q);
  const double lam = eig_sym4(quat_matrix(a, c)).values[0];
  RigidAlignment al = svd_align(c.points, a.points);  // rotate a onto c
  double corr = 0;
  for (size_t i = 0; i < q.size(); ++i) corr += dot(c.points[i], apply_rot(al.rotation, a.points[i]));
  CHECK(lam == doctest::Approx(corr).epsilon(1e-9));
}

TEST_CASE("err_align examples") {
  Rng rng(83);
  auto pts = random_points(81, rng);
  MeshGrid3D X = as_mesh(pts, 9);

  // similarity transform of X has zero alignment error
  for (int trial = 0; trial < 5; ++trial) {
    auto R = random_rotation(rng);
    const double s = rng.uniform(0.3, 3.0);
    const Vec3 t{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    std::vector<Vec3> moved;
    for (const Vec3& p : pts) moved.push_back(s * apply_rot(R, p) + t);
    CHECK(err_align(X, as_mesh(moved, 9)) < 1e-8);
  }

  // symmetry
  auto q = random_points(81, rng);
  MeshGrid3D Y = as_mesh(q, 9);
  CHECK(err_align(X, Y) == doctest::Approx(err_align(Y, X)).epsilon(1e-12));

  // perturbation makes it strictly positive
  auto perturbed = pts;
  perturbed[0].x += 0.05;
  CHECK(err_align(X, as_mesh(perturbed, 9)) > 1e-5);
}

TEST_CASE("err_align matches SVD oracle on random meshes") {
  Rng rng(89);
  for (int trial = 0; trial < 50; ++trial) {
    auto a = random_points(81, rng);
    auto b = random_points(81, rng);
    const double ea = err_align(as_mesh(a, 9), as_mesh(b, 9));
    NormalizedShape na = normalize_shape(a), nb = normalize_shape(b);
    RigidAlignment al = svd_align(na.points, nb.points);
    double ss = 0;
    for (size_t i = 0; i < a.size(); ++i) {
      const Vec3 d = na.points[i] - apply_rot(al.rotation, nb.points[i]);
      ss += dot(d, d);
    }
    CHECK(std::abs(ea - std::sqrt(ss / 81.0)) < 1e-8);
    // upper bound from unit norms
    CHECK(ea <= std::sqrt(2.0 / 81.0) + 1e-12);
  }
}

TEST_CASE("err_align gradient vs finite differences") {
  Rng rng(97);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor X = random_tensor({9, 3}, rng);
    Tensor Y = random_tensor({9, 3}, rng);
    CHECK(grad_check([&](const Tensor& t) { return err_align_op(t, Y); }, X, 1e-6) < 1e-4);
    CHECK(grad_check([&](const Tensor& t) { return err_align_op(X, t); }, Y, 1e-6) < 1e-4);
  }
}

TEST_CASE("svd_align recovers a known rotation") {
  Rng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    auto b = random_points(10, rng);
    auto R = random_rotation(rng);
    std::vector<Vec3> a;
    for (const Vec3& p : b) a.push_back(apply_rot(R, p));
    RigidAlignment al = svd_align(a, b);
    double fro = 0;
    for (int i = 0; i < 9; ++i) fro += (al.rotation[i] - R[i]) * (al.rotation[i] - R[i]);
    CHECK(std::sqrt(fro) < 1e-10);
    CHECK(al.rmsd < 1e-10);
    // proper rotation
    const double det = al.rotation[0] * (al.rotation[4] * al.rotation[8] - al.rotation[5] * al.rotation[7]) -
                       al.rotation[1] * (al.rotation[3] * al.rotation[8] - al.rotation[5] * al.rotation[6]) +
                       al.rotation[2] * (al.rotation[3] * al.rotation[7] - al.rotation[4] * al.rotation[6]);
    CHECK(det == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("svd_align rejects collinear points") {
  std::vector<Vec3> line;
  for (int i = 0; i < 5; ++i) line.push_back({static_cast<double>(i), 0, 0});
  CHECK_THROWS_AS(svd_align(line, line), NumericError);
}

TEST_CASE("residual identity links the two formulations") {
  Rng rng(103);
  for (int trial = 0; trial < 30; ++trial) {
    auto a = random_points(25, rng);
    auto b = random_points(25, rng);
    NormalizedShape na = normalize_shape(a), nb = normalize_shape(b);
    RigidAlignment al = svd_align(na.points, nb.points);
    const double lam = eig_sym4(quat_matrix(na, nb)).values[0];
    double sa = 0, sb = 0;
    for (const Vec3& p : na.points) sa += dot(p, p);
    for (const Vec3& p : nb.points) sb += dot(p, p);
    CHECK(al.rmsd * al.rmsd ==
          doctest::Approx((sa + sb - 2.0 * lam) / 25.0).epsilon(1e-9));
  }
}
