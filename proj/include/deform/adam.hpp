#pragma once

#include <cmath>
#include <map>

#include "deform/tensor.hpp"

namespace deform {

// Adam with decoupled multiplicative weight decay:
//   p <- p * (1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps)
// Moment state is keyed by parameter name so it can ride along in checkpoints.
class Adam {
 public:
  struct Slot {
    std::vector<double> m, v;
  };

  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<std::pair<std::string, Tensor>>& params, double lr, double wd) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (const auto& [name, p] : params) {
      Tensor param = p;
      auto& data = param.mutable_data();
      const auto& grad = param.grad();
      if (grad.empty()) continue;  // parameter did not participate in this loss
      if (grad.size() != data.size())
        throw ShapeError("adam: grad/param size mismatch for " + name);
      Slot& s = slots_[name];
      if (s.m.size() != data.size()) {
        s.m.assign(data.size(), 0.0);
        s.v.assign(data.size(), 0.0);
      }
      for (size_t i = 0; i < data.size(); ++i) {
        const double g = grad[i];
        s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g;
        s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g * g;
        const double mh = s.m[i] / bc1;
        const double vh = s.v[i] / bc2;
        data[i] = data[i] * (1.0 - lr * wd) - lr * mh / (std::sqrt(vh) + eps_);
      }
    }
  }

  uint64_t step_count() const { return step_count_; }
  void set_step_count(uint64_t c) { step_count_ = c; }
  std::map<std::string, Slot>& slots() { return slots_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }

 private:
  double beta1_, beta2_, eps_;
  uint64_t step_count_ = 0;
  std::map<std::string, Slot> slots_;
};

}  // namespace deform
