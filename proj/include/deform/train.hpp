#pragma once

#include "deform/checkpoint.hpp"
#include "deform/eval.hpp"

namespace deform {

inline constexpr const char* kMetricsCsvHeader =
    "epoch,stage,loss,loss_align,loss_heatmap,err2d_px,err3d_aligned";

struct TrainResult {
  int epochs_run = 0;
  bool diverged = false;
  double final_val_err3d = 0;
  std::string metrics_csv;  // header plus one row per epoch
};

namespace detail_train {

struct Prepared {
  Tensor image;
  Tensor mesh3d_star;
  BeliefMapStack target;
  Camera camera;
};

inline Prepared prepare(const Sample& s, const ModelConfig& cfg) {
  Prepared p;
  p.image = Tensor::from_data({s.image.h, s.image.w, 3}, s.image.rgb);
  p.mesh3d_star = mesh_to_tensor(s.mesh3d);
  p.target = gt_heatmap(s.mesh2d, cfg.image_h / cfg.downscale, cfg.image_w / cfg.downscale,
                        cfg.sigma_heatmap, s.camera);
  p.camera = s.camera;
  return p;
}

}  // namespace detail_train

// Two-phase schedule: first the belief regressors alone against the heatmap
// term, then belief and depth regressors jointly against the full loss. The
// feature extractor joins both phases unless train_features is off. Learning
// rate decays by lr_decay every lr_decay_epochs, counted over global epochs.
// A checkpoint is written after every healthy epoch; a non-finite loss aborts
// and leaves the last good checkpoint on disk.
inline TrainResult train(DeformNet& model, Adam& opt, const std::vector<Sample>& train_set,
                         const std::vector<Sample>& val_set, const std::string& ckpt_path,
                         std::ostream* log = nullptr) {
  if (train_set.empty()) throw NumericError("train: empty training set");
  const ModelConfig& cfg = model.config();
  Rng root(cfg.seed ^ 0x7261696e);

  std::vector<detail_train::Prepared> base;
  base.reserve(train_set.size());
  for (const Sample& s : train_set) base.push_back(detail_train::prepare(s, cfg));

  // validation subset used for the per-epoch error columns
  std::vector<Sample> val_fallback;
  if (val_set.empty())
    val_fallback.assign(train_set.begin(),
                        train_set.begin() + std::min<size_t>(32, train_set.size()));
  const std::vector<Sample>& val = val_set.empty() ? val_fallback : val_set;

  TrainResult result;
  std::ostringstream csv;
  csv.precision(17);
  csv << kMetricsCsvHeader << "\n";

  int global_epoch = 0;
  double best_val = 1e30;
  int since_best = 0;
  bool stop = false;

  for (int phase = 1; phase <= 2 && !stop; ++phase) {
    const int epochs = phase == 1 ? cfg.stage1_epochs : cfg.stage2_epochs;
    const auto params = phase == 1 ? model.detection_params() : model.joint_params();
    for (int e = 0; e < epochs && !stop; ++e, ++global_epoch) {
      const double lr =
          cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(global_epoch / cfg.lr_decay_epochs));

      // deterministic shuffle per epoch
      std::vector<size_t> order(base.size());
      std::iota(order.begin(), order.end(), 0);
      Rng erng = root.child(static_cast<uint64_t>(global_epoch));
      for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<size_t>(erng.uniform_int(0, static_cast<int64_t>(i) - 1))]);

      double sum_loss = 0, sum_align = 0, sum_heat = 0;
      int batches = 0;
      for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
        const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
        Tensor batch_loss = Tensor::scalar(0.0);
        double batch_align = 0, batch_heat = 0;
        for (size_t bi = start; bi < end; ++bi) {
          detail_train::Prepared p = base[order[bi]];
          if (cfg.flip_augment || cfg.color_jitter) {
            Rng arng = erng.child(1000 + bi);
            Sample s = train_set[order[bi]];
            bool changed = false;
            if (cfg.flip_augment && arng.uniform() < 0.5) {
              const int k = static_cast<int>(arng.uniform_int(1, 3));
              s = flip_sample(s, k & 1, k & 2);
              changed = true;
            }
            if (cfg.color_jitter && arng.uniform() < 0.5) {
              s.image = color_jitter(s.image, arng);
              changed = true;
            }
            if (changed) p = detail_train::prepare(s, cfg);
          }
          const ForwardResult fr = model.forward(p.image, p.camera);
          Tensor heat = model.heatmap_loss(fr.beliefs, p.target);
          Tensor sample_loss;
          if (phase == 1) {
            sample_loss = heat;
          } else {
            sample_loss = model.loss(fr.mesh3d, p.mesh3d_star, fr.beliefs, p.target);
            batch_align += cfg.use_align_loss
                               ? err_align(tensor_to_mesh(fr.mesh3d, cfg.grid_n),
                                           tensor_to_mesh(p.mesh3d_star, cfg.grid_n))
                               : 0.0;
          }
          batch_heat += heat.item();
          batch_loss = add(batch_loss, sample_loss);
        }
        const double inv = 1.0 / static_cast<double>(end - start);
        batch_loss = scale(batch_loss, inv);
        const double lv = batch_loss.item();
        if (!std::isfinite(lv)) {
          if (log) *log << "train: non-finite loss at epoch " << global_epoch << ", aborting\n";
          result.diverged = true;
          stop = true;
          break;
        }
        backward(batch_loss);
        opt.step(params, lr, cfg.weight_decay);
        sum_loss += lv;
        sum_align += batch_align * inv;
        sum_heat += batch_heat * inv;
        ++batches;
      }
      if (result.diverged) break;

      const EvalReport ev = evaluate_split(model, val, "val");
      csv << global_epoch << "," << phase << "," << sum_loss / batches << ","
          << sum_align / batches << "," << sum_heat / batches << "," << ev.mean2d << ","
          << ev.mean3d << "\n";
      if (log)
        *log << "epoch " << global_epoch << " phase " << phase << " loss " << sum_loss / batches
             << " err2d " << ev.mean2d << " err3d " << ev.mean3d << " lr " << lr << "\n";
      save_checkpoint(ckpt_path, cfg, model.params(), opt);
      result.epochs_run = global_epoch + 1;
      result.final_val_err3d = ev.mean3d;

      if (cfg.patience > 0 && phase == 2) {
        if (ev.mean3d < best_val - 1e-12) {
          best_val = ev.mean3d;
          since_best = 0;
        } else if (++since_best >= cfg.patience) {
          if (log) *log << "train: early stop after " << since_best << " stale epochs\n";
          stop = true;
        }
      }
    }
  }
  result.metrics_csv = csv.str();
  return result;
}

// Training loop for the direct-regression baseline: single phase, full loss,
// same optimizer settings. Used by the texture-generalization comparison.
inline TrainResult train_baseline(BaselineNet& model, Adam& opt,
                                  const std::vector<Sample>& train_set, int epochs,
                                  std::ostream* log = nullptr) {
  if (train_set.empty()) throw NumericError("train_baseline: empty training set");
  const ModelConfig& cfg = model.config();
  Rng root(cfg.seed ^ 0x62617365);
  std::vector<Tensor> images, targets;
  for (const Sample& s : train_set) {
    images.push_back(Tensor::from_data({s.image.h, s.image.w, 3}, s.image.rgb));
    targets.push_back(mesh_to_tensor(s.mesh3d));
  }
  const auto params = model.params().named_all();
  TrainResult result;
  std::ostringstream csv;
  csv.precision(17);
  csv << kMetricsCsvHeader << "\n";
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const double lr =
        cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.lr_decay_epochs));
    std::vector<size_t> order(images.size());
    std::iota(order.begin(), order.end(), 0);
    Rng erng = root.child(static_cast<uint64_t>(epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(erng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    double sum_loss = 0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      Tensor batch_loss = Tensor::scalar(0.0);
      for (size_t bi = start; bi < end; ++bi)
        batch_loss = add(batch_loss, model.loss(model.forward(images[order[bi]]), targets[order[bi]]));
      batch_loss = scale(batch_loss, 1.0 / static_cast<double>(end - start));
      const double lv = batch_loss.item();
      if (!std::isfinite(lv)) {
        result.diverged = true;
        result.metrics_csv = csv.str();
        return result;
      }
      backward(batch_loss);
      opt.step(params, lr, cfg.weight_decay);
      sum_loss += lv;
      ++batches;
    }
    csv << epoch << ",1," << sum_loss / batches << ",0,0,0,0\n";
    if (log) *log << "baseline epoch " << epoch << " loss " << sum_loss / batches << "\n";
    result.epochs_run = epoch + 1;
  }
  result.metrics_csv = csv.str();
  return result;
}

}  // namespace deform
