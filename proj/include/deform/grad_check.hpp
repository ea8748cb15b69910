#pragma once

#include <functional>

#include "deform/rng.hpp"
#include "deform/tensor.hpp"

namespace deform {

// Central-difference gradient check. `f` must build a fresh graph from its
// argument and return a scalar. Returns the max over coordinates of
// |analytic - numeric| / max(1, |analytic|, |numeric|).
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double eps = 1e-5) {
  Tensor xg = x.detach().set_requires_grad(true);
  Tensor y = f(xg);
  if (y.size() != 1) throw ShapeError("grad_check: f must return a scalar");
  backward(y);
  const std::vector<double> analytic = xg.grad();

  double max_err = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) {
    Tensor xp = x.detach();
    Tensor xm = x.detach();
    xp.mutable_data()[i] += eps;
    xm.mutable_data()[i] -= eps;
    const double fp = f(xp).item();
    const double fm = f(xm).item();
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("grad_check: non-finite value at coordinate " + std::to_string(i));
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[i];
    if (!std::isfinite(a))
      throw NumericError("grad_check: non-finite analytic gradient at coordinate " +
                         std::to_string(i));
    const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
    max_err = std::max(max_err, std::abs(a - numeric) / denom);
  }
  return max_err;
}

// Registry entry for the gradcheck command: every differentiable op registers
// one randomized end-to-end check here.
struct OpCheck {
  std::string name;
  double tol;
  std::function<double(uint64_t seed)> run;  // returns max relative error
};

inline std::vector<OpCheck>& op_checks() {
  static std::vector<OpCheck> reg;
  return reg;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> d(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : d) v = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(d));
}

}  // namespace deform
