#pragma once

#include <map>

#include "deform/ops.hpp"
#include "deform/rng.hpp"

namespace deform {

// Named learnable parameters. Names are stable across runs so checkpoints can
// round-trip by name.
class ParamRegistry {
 public:
  Tensor create(const std::string& name, Shape shape, double init_std, Rng& rng) {
    std::vector<double> d(static_cast<size_t>(shape_numel(shape)));
    for (auto& v : d) v = init_std * rng.gaussian();
    Tensor t = Tensor::from_data(std::move(shape), std::move(d));
    t.set_requires_grad(true);
    if (by_name_.count(name)) throw ShapeError("duplicate parameter name: " + name);
    by_name_[name] = t;
    order_.push_back(name);
    return t;
  }

  const std::vector<std::string>& names() const { return order_; }
  Tensor get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ShapeError("unknown parameter: " + name);
    return it->second;
  }

  std::vector<Tensor> all() const {
    std::vector<Tensor> out;
    for (const auto& n : order_) out.push_back(by_name_.at(n));
    return out;
  }

  std::vector<Tensor> with_prefix(const std::string& prefix) const {
    std::vector<Tensor> out;
    for (const auto& n : order_)
      if (n.rfind(prefix, 0) == 0) out.push_back(by_name_.at(n));
    return out;
  }

  std::vector<std::pair<std::string, Tensor>> named_with_prefix(const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& n : order_)
      if (n.rfind(prefix, 0) == 0) out.emplace_back(n, by_name_.at(n));
    return out;
  }

  std::vector<std::pair<std::string, Tensor>> named_all() const { return named_with_prefix(""); }

 private:
  std::map<std::string, Tensor> by_name_;
  std::vector<std::string> order_;
};

struct Conv2dLayer {
  Tensor w, b;
  int stride = 1, pad = 1;

  Conv2dLayer() = default;
  Conv2dLayer(ParamRegistry& reg, const std::string& name, int kh, int kw, int cin, int cout,
              int stride_, int pad_, Rng& rng)
      : stride(stride_), pad(pad_) {
    const double std = std::sqrt(2.0 / (kh * kw * cin));
    w = reg.create(name + ".w", {kh, kw, cin, cout}, std, rng);
    b = reg.create(name + ".b", {cout}, 0.0, rng);
  }

  Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
};

// Pre-activation residual block. When cin != cout the skip path uses a 1x1
// projection.
struct ResBlock {
  Conv2dLayer conv1, conv2, proj;
  bool has_proj = false;

  ResBlock() = default;
  ResBlock(ParamRegistry& reg, const std::string& name, int cin, int cout, Rng& rng) {
    conv1 = Conv2dLayer(reg, name + ".conv1", 3, 3, cin, cout, 1, 1, rng);
    conv2 = Conv2dLayer(reg, name + ".conv2", 3, 3, cout, cout, 1, 1, rng);
    if (cin != cout) {
      proj = Conv2dLayer(reg, name + ".proj", 1, 1, cin, cout, 1, 0, rng);
      has_proj = true;
    }
  }

  Tensor operator()(const Tensor& x) const {
    Tensor h = conv2(leaky_relu(conv1(leaky_relu(x))));
    Tensor skip = has_proj ? proj(x) : x;
    return add(skip, h);
  }
};

}  // namespace deform
