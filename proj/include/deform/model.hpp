#pragma once

#include "deform/config.hpp"
#include "deform/depthnet.hpp"
#include "deform/detect2d.hpp"
#include "deform/procrustes.hpp"

namespace deform {

struct ModelConfig {
  int grid_n = 5;          // mesh side N
  int t_max = 3;           // belief refinement stages
  double gamma = 5e-3;     // heatmap loss weight
  double sigma_heatmap = 1.5;
  int feat_channels = 32;  // C
  int downscale = 4;       // H_o/H = W_o/W, 2 or 4
  int image_h = 64, image_w = 64;
  double z_min = 0.1;
  int stage_width = 32;    // conv width inside each belief regressor
  int depth_width = 64;    // conv width inside the depth regressor
  double lr = 2e-4;
  double lr_decay = 0.95;  // applied every lr_decay_epochs
  int lr_decay_epochs = 2;
  double weight_decay = 4e-5;
  int batch_size = 3;
  uint64_t seed = 1;
  int stage1_epochs = 10;  // detection-only phase
  int stage2_epochs = 20;  // joint phase
  bool train_features = true;  // false reproduces the frozen-extractor schedule
  bool use_align_loss = true;  // false: plain L2 on the 3D vertices
  int patience = 0;            // early stopping on val err3d; 0 disables
  bool color_jitter = false;   // train-time augmentation
  bool flip_augment = false;

  void validate() const {
    if (grid_n < 2 || t_max < 1 || gamma < 0 || sigma_heatmap <= 0 || feat_channels < 1 ||
        z_min <= 0 || lr <= 0 || batch_size < 1 || stage1_epochs < 0 || stage2_epochs < 0)
      throw NumericError("ModelConfig: invalid field");
    if (downscale != 2 && downscale != 4) throw NumericError("ModelConfig: downscale must be 2 or 4");
    if (image_h % downscale || image_w % downscale)
      throw NumericError("ModelConfig: image size not divisible by downscale");
  }

  static ModelConfig from_config(const KeyValueConfig& kv) {
    ModelConfig c;
    c.grid_n = static_cast<int>(kv.get_int("grid_n", c.grid_n));
    c.t_max = static_cast<int>(kv.get_int("t_max", c.t_max));
    c.gamma = kv.get_num("gamma", c.gamma);
    c.sigma_heatmap = kv.get_num("sigma_heatmap", c.sigma_heatmap);
    c.feat_channels = static_cast<int>(kv.get_int("feat_channels", c.feat_channels));
    c.downscale = static_cast<int>(kv.get_int("downscale", c.downscale));
    c.image_h = static_cast<int>(kv.get_int("image_h", c.image_h));
    c.image_w = static_cast<int>(kv.get_int("image_w", c.image_w));
    c.z_min = kv.get_num("z_min", c.z_min);
    c.stage_width = static_cast<int>(kv.get_int("stage_width", c.stage_width));
    c.depth_width = static_cast<int>(kv.get_int("depth_width", c.depth_width));
    c.lr = kv.get_num("lr", c.lr);
    c.lr_decay = kv.get_num("lr_decay", c.lr_decay);
    c.lr_decay_epochs = static_cast<int>(kv.get_int("lr_decay_epochs", c.lr_decay_epochs));
    c.weight_decay = kv.get_num("weight_decay", c.weight_decay);
    c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
    c.seed = static_cast<uint64_t>(kv.get_int("seed", static_cast<int64_t>(c.seed)));
    c.stage1_epochs = static_cast<int>(kv.get_int("stage1_epochs", c.stage1_epochs));
    c.stage2_epochs = static_cast<int>(kv.get_int("stage2_epochs", c.stage2_epochs));
    c.train_features = kv.get_bool("train_features", c.train_features);
    c.use_align_loss = kv.get_bool("use_align_loss", c.use_align_loss);
    c.patience = static_cast<int>(kv.get_int("patience", c.patience));
    c.color_jitter = kv.get_bool("color_jitter", c.color_jitter);
    c.flip_augment = kv.get_bool("flip_augment", c.flip_augment);
    c.validate();
    return c;
  }

  KeyValueConfig to_config() const {
    KeyValueConfig kv;
    auto num = [&](const std::string& k, double v) {
      std::ostringstream os;
      os.precision(17);
      os << v;
      kv.set(k, os.str());
    };
    num("grid_n", grid_n);
    num("t_max", t_max);
    num("gamma", gamma);
    num("sigma_heatmap", sigma_heatmap);
    num("feat_channels", feat_channels);
    num("downscale", downscale);
    num("image_h", image_h);
    num("image_w", image_w);
    num("z_min", z_min);
    num("stage_width", stage_width);
    num("depth_width", depth_width);
    num("lr", lr);
    num("lr_decay", lr_decay);
    num("lr_decay_epochs", lr_decay_epochs);
    num("weight_decay", weight_decay);
    num("batch_size", batch_size);
    num("seed", static_cast<double>(seed));
    num("stage1_epochs", stage1_epochs);
    num("stage2_epochs", stage2_epochs);
    kv.set("train_features", train_features ? "true" : "false");
    kv.set("use_align_loss", use_align_loss ? "true" : "false");
    num("patience", patience);
    kv.set("color_jitter", color_jitter ? "true" : "false");
    kv.set("flip_augment", flip_augment ? "true" : "false");
    return kv;
  }
};

// Small trainable conv stack standing in for a pretrained backbone:
// four conv layers, spatial downscale 2 or 4.
struct FeatureExtractor {
  Conv2dLayer c1, c2, c3, c4;

  FeatureExtractor() = default;
  FeatureExtractor(ParamRegistry& reg, int channels, int downscale, Rng& rng) {
    const int mid = std::max(8, channels / 2);
    c1 = Conv2dLayer(reg, "feat.c1", 3, 3, 3, mid, 2, 1, rng);
    c2 = Conv2dLayer(reg, "feat.c2", 3, 3, mid, channels, downscale == 4 ? 2 : 1, 1, rng);
    c3 = Conv2dLayer(reg, "feat.c3", 3, 3, channels, channels, 1, 1, rng);
    c4 = Conv2dLayer(reg, "feat.c4", 3, 3, channels, channels, 1, 1, rng);
  }

  Tensor operator()(const Tensor& image) const {
    return leaky_relu(c4(leaky_relu(c3(leaky_relu(c2(leaky_relu(c1(image))))))));
  }
};

struct ForwardResult {
  Tensor mesh3d;                        // X [Nv,3]
  Tensor mesh2d;                        // U [Nv,2] pixels
  Tensor depths;                        // z [Nv,1]
  std::vector<BeliefMapStack> beliefs;  // B^1..B^Tmax
  Tensor features;                      // Psi(I)
};

class DeformNet {
 public:
  DeformNet() = default;

  explicit DeformNet(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const int nv = cfg.grid_n * cfg.grid_n;
    feat_ = FeatureExtractor(params_, cfg.feat_channels, cfg.downscale, rng);
    for (int t = 1; t <= cfg.t_max; ++t) {
      const int cin = cfg.feat_channels + (t > 1 ? nv : 0);
      stages_.emplace_back(params_, "stage" + std::to_string(t), t, cin, cfg.stage_width, nv, rng);
    }
    depth_ = DepthRegressor(params_, "depth", cfg.feat_channels, cfg.depth_width, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }

  ForwardResult forward(const Tensor& image, const Camera& cam) const {
    if (image.rank() != 3 || image.dim(0) != cfg_.image_h || image.dim(1) != cfg_.image_w ||
        image.dim(2) != 3)
      throw ShapeError("forward: image shape " + shape_str(image.shape()) + " != configured [" +
                       std::to_string(cfg_.image_h) + "," + std::to_string(cfg_.image_w) + ",3]");
    ForwardResult out;
    out.features = feat_(image);
    const BeliefMapStack* prev = nullptr;
    for (const auto& st : stages_) {
      out.beliefs.push_back(run_stage(st, out.features, prev));
      prev = &out.beliefs.back();
    }
    const BeliefMapStack& last = out.beliefs.back();
    out.mesh2d = soft_argmax_op(last, cam);
    Tensor v = condition(last, out.features, cfg_.grid_n);
    out.depths = predict_depth(depth_, v, cfg_.z_min);
    out.mesh3d = lift_op(cam, out.mesh2d, out.depths);
    return out;
  }

  // Heatmap supervision term: sum over stages of squared L2 to the target.
  Tensor heatmap_loss(const std::vector<BeliefMapStack>& beliefs,
                      const BeliefMapStack& target) const {
    Tensor total = Tensor::scalar(0.0);
    for (const auto& b : beliefs) {
      Tensor d = sub(b.maps, target.maps);
      total = add(total, sum(mul(d, d)));
    }
    return total;
  }

  // Full loss: alignment error plus gamma * heatmap term. The alignment term
  // switches to plain squared L2 when configured.
  Tensor loss(const Tensor& mesh3d, const Tensor& mesh3d_star,
              const std::vector<BeliefMapStack>& beliefs, const BeliefMapStack& target) const {
    Tensor align = cfg_.use_align_loss
                       ? err_align_op(mesh3d, mesh3d_star)
                       : sum(mul(sub(mesh3d, mesh3d_star), sub(mesh3d, mesh3d_star)));
    return add(align, scale(heatmap_loss(beliefs, target), cfg_.gamma));
  }

  // Parameter subsets for the two-stage schedule.
  std::vector<std::pair<std::string, Tensor>> detection_params() const {
    auto out = params_.named_with_prefix("stage");
    if (cfg_.train_features)
      for (auto& p : params_.named_with_prefix("feat")) out.push_back(p);
    return out;
  }

  std::vector<std::pair<std::string, Tensor>> joint_params() const {
    auto out = detection_params();
    for (auto& p : params_.named_with_prefix("depth")) out.push_back(p);
    return out;
  }

 private:
  ModelConfig cfg_;
  ParamRegistry params_;
  FeatureExtractor feat_;
  std::vector<StageRegressor> stages_;
  DepthRegressor depth_;
};

// Direct-regression baseline with a comparable parameter budget: the same
// feature stack, then convs straight down to 3*Nv coordinates. No beliefs, no
// geometry; used to measure the texture-generalization gap.
class BaselineNet {
 public:
  BaselineNet() = default;

  explicit BaselineNet(const ModelConfig& cfg) : cfg_(cfg) {
    Rng rng(cfg.seed + 7777);
    feat_ = FeatureExtractor(params_, cfg.feat_channels, cfg.downscale, rng);
    const int c = cfg.feat_channels;
    r1_ = ResBlock(params_, "reg.r1", c, cfg.stage_width, rng);
    r2_ = ResBlock(params_, "reg.r2", cfg.stage_width, cfg.stage_width, rng);
    d1_ = Conv2dLayer(params_, "reg.d1", 3, 3, cfg.stage_width, cfg.stage_width, 2, 1, rng);
    d2_ = Conv2dLayer(params_, "reg.d2", 3, 3, cfg.stage_width, cfg.stage_width, 2, 1, rng);
    const int fh = cfg.image_h / cfg.downscale / 4, fw = cfg.image_w / cfg.downscale / 4;
    const int nv = cfg.grid_n * cfg.grid_n;
    const int flat = fh * fw * cfg.stage_width;
    head_w_ = params_.create("reg.head.w", {flat, 3 * nv}, std::sqrt(2.0 / flat), rng);
    head_b_ = params_.create("reg.head.b", {1, 3 * nv}, 0.0, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry& params() { return params_; }

  // Output [Nv,3]; z parameterized the same way as the main model so depths
  // stay positive.
  Tensor forward(const Tensor& image) const {
    Tensor h = leaky_relu(d2_(leaky_relu(d1_(r2_(r1_(feat_(image)))))));
    Tensor flat = reshape(h, {1, h.size()});
    Tensor coords = add(matmul(flat, head_w_), head_b_);
    const int nv = cfg_.grid_n * cfg_.grid_n;
    Tensor xy = slice(reshape(coords, {nv, 3}), {0, 0}, {nv, 2});
    Tensor zraw = slice(reshape(coords, {nv, 3}), {0, 2}, {nv, 1});
    Tensor z = add_const(softplus(zraw), cfg_.z_min);
    return concat({xy, z}, 1);
  }

  Tensor loss(const Tensor& mesh3d, const Tensor& mesh3d_star) const {
    return cfg_.use_align_loss ? err_align_op(mesh3d, mesh3d_star)
                               : sum(mul(sub(mesh3d, mesh3d_star), sub(mesh3d, mesh3d_star)));
  }

 private:
  ModelConfig cfg_;
  ParamRegistry params_;
  FeatureExtractor feat_;
  ResBlock r1_, r2_;
  Conv2dLayer d1_, d2_;
  Tensor head_w_, head_b_;
};

}  // namespace deform
