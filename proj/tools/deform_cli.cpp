// Command-line front end: dataset generation, training, evaluation,
// single-image inference and gradient checking.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>

#include <deform/checkpoint.hpp>
#include <deform/gradcheck_suite.hpp>
#include <deform/train.hpp>

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace deform;

namespace {

KeyValueConfig load_config(const std::string& path) {
  if (path.empty()) return KeyValueConfig{};
  return KeyValueConfig::parse_file(path);
}

void write_text(const std::string& path, const std::string& text) {
  atomic_write(path, [&](std::ostream& os) { os << text; });
}

void print_report(std::ostream& os, const EvalReport& r) {
  os.precision(6);
  os << "split " << r.split << ": " << r.rows.size() << " samples\n"
     << "  err3d mean " << r.mean3d << " median " << r.median3d << " std " << r.std3d << "\n"
     << "  err2d mean " << r.mean2d << " px\n"
     << "  time  mean " << r.mean_ms << " ms/sample\n";
}

int cmd_gen(const std::string& config, const std::string& out, int64_t seed, bool dry_run) {
  KeyValueConfig kv = load_config(config);
  GenConfig cfg = GenConfig::from_config(kv);
  if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
  cfg.dry_run = cfg.dry_run || dry_run;
  const Manifest m = generate_dataset(cfg, out);
  std::cout << (cfg.dry_run ? "validated (dry run), nothing written\n" : "wrote " + out + "\n");
  std::cout << "grid_n " << m.grid_n << ", images " << m.image_w << "x" << m.image_h
            << ", train textures " << m.train_texture_ids.size() << ", test textures "
            << m.test_texture_ids.size() << "\n";
  for (const auto& [name, info] : m.splits)
    std::cout << "  " << name << ": " << info.files.size() << " samples (" << info.condition
              << (info.occluded ? ", occluded" : "") << ")\n";
  return 0;
}

int cmd_train(const std::string& config, const std::string& data, const std::string& out,
              int64_t seed) {
  KeyValueConfig kv = load_config(config);
  ModelConfig cfg = ModelConfig::from_config(kv);
  if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
  const std::string train_split = kv.get_str("train_split", "train");
  const std::string val_split = kv.get_str("val_split", "val");

  const Manifest m = load_manifest(data);
  if (m.grid_n != cfg.grid_n)
    throw NumericError("dataset grid_n " + std::to_string(m.grid_n) + " != model grid_n " +
                       std::to_string(cfg.grid_n));
  const auto train_set = load_split(data, m, train_split);
  std::vector<Sample> val_set;
  if (m.splits.count(val_split)) val_set = load_split(data, m, val_split);

  fs::create_directories(out);
  DeformNet model(cfg);
  Adam opt;
  const TrainResult res =
      train(model, opt, train_set, val_set, out + "/checkpoint.bin", &std::cout);
  write_text(out + "/metrics.csv", res.metrics_csv);
  std::cout << "trained " << res.epochs_run << " epochs, final val err3d " << res.final_val_err3d
            << (res.diverged ? " (diverged, last good checkpoint kept)" : "") << "\n";
  return res.diverged ? 2 : 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& split,
             const std::string& out) {
  LoadedCheckpoint lc = load_checkpoint(ckpt);
  const Manifest m = load_manifest(data);
  if (m.grid_n != lc.config.grid_n)
    throw NumericError("dataset grid_n does not match the checkpoint's model");
  const auto samples = load_split(data, m, split);
  const EvalReport report = evaluate_split(lc.model, samples, split);
  if (!out.empty()) {
    fs::create_directories(out);
    atomic_write(out + "/eval_" + split + ".csv",
                 [&](std::ostream& os) { write_eval_csv(os, report); });
  }
  print_report(std::cout, report);
  return 0;
}

Camera infer_camera(const ModelConfig& cfg, const std::string& camera_file, double f, double cx,
                    double cy) {
  Camera cam;
  cam.width = cfg.image_w;
  cam.height = cfg.image_h;
  cam.f_u = cam.f_v = 55.0 * cfg.image_w / 64.0;
  cam.u_c = (cfg.image_w - 1) / 2.0;
  cam.v_c = (cfg.image_h - 1) / 2.0;
  if (!camera_file.empty()) {
    const KeyValueConfig kv = KeyValueConfig::parse_file(camera_file);
    cam.f_u = kv.get_num("f_u", cam.f_u);
    cam.f_v = kv.get_num("f_v", cam.f_u);
    cam.u_c = kv.get_num("u_c", cam.u_c);
    cam.v_c = kv.get_num("v_c", cam.v_c);
  }
  if (f > 0) cam.f_u = cam.f_v = f;
  if (cx >= 0) cam.u_c = cx;
  if (cy >= 0) cam.v_c = cy;
  cam.validate();
  return cam;
}

Image draw_overlay(const Image& base, const MeshGrid2D& mesh) {
  Image img = base;
  auto put = [&](int y, int x) {
    if (y < 0 || y >= img.h || x < 0 || x >= img.w) return;
    img.at(y, x, 0) = 0.1;
    img.at(y, x, 1) = 1.0;
    img.at(y, x, 2) = 0.1;
  };
  auto line = [&](const Vec2& a, const Vec2& b) {
    const int steps = static_cast<int>(std::ceil(std::max(std::abs(b.u - a.u),
                                                          std::abs(b.v - a.v)))) + 1;
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      put(static_cast<int>(std::lround(a.v + t * (b.v - a.v))),
          static_cast<int>(std::lround(a.u + t * (b.u - a.u))));
    }
  };
  const int n = mesh.n;
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k) {
      if (k + 1 < n) line(mesh.v[j * n + k], mesh.v[j * n + k + 1]);
      if (j + 1 < n) line(mesh.v[j * n + k], mesh.v[(j + 1) * n + k]);
    }
  // vertices in red so they read over the green wireframe
  for (const Vec2& p : mesh.v) {
    const int y = static_cast<int>(std::lround(p.v)), x = static_cast<int>(std::lround(p.u));
    if (y >= 0 && y < img.h && x >= 0 && x < img.w) {
      img.at(y, x, 0) = 1.0;
      img.at(y, x, 1) = 0.1;
      img.at(y, x, 2) = 0.1;
    }
  }
  return img;
}

int cmd_infer(const std::string& ckpt, const std::string& image_path, const std::string& out,
              const std::string& camera_file, double f, double cx, double cy,
              const std::string& overlay) {
  LoadedCheckpoint lc = load_checkpoint(ckpt);
  const ModelConfig& cfg = lc.config;
  const Image img = read_ppm(image_path);
  if (img.w != cfg.image_w || img.h != cfg.image_h)
    throw NumericError("image is " + std::to_string(img.w) + "x" + std::to_string(img.h) +
                       " but the model expects " + std::to_string(cfg.image_w) + "x" +
                       std::to_string(cfg.image_h));
  const Camera cam = infer_camera(cfg, camera_file, f, cx, cy);
  const Tensor input = Tensor::from_data({img.h, img.w, 3}, img.rgb);
  const ForwardResult fr = lc.model.forward(input, cam);
  const MeshGrid3D mesh = tensor_to_mesh(fr.mesh3d, cfg.grid_n);
  const MeshGrid2D mesh2d = tensor_to_mesh2d(fr.mesh2d, cfg.grid_n);

  std::ostringstream txt;
  txt.precision(17);
  txt << "n " << cfg.grid_n << "\n";
  for (const Vec3& p : mesh.v) txt << p.x << " " << p.y << " " << p.z << "\n";
  write_text(out, txt.str());
  std::cout << "wrote " << out << " (" << mesh.v.size() << " vertices)\n";

  if (!overlay.empty()) {
    write_png(overlay, draw_overlay(img, mesh2d));
    std::cout << "wrote " << overlay << "\n";
  }
  return 0;
}

int cmd_gradcheck(int64_t seed, bool corrupt) {
  if (corrupt) vjp_corruption() = 1e-3;  // negative control: must report failures
  const int failures = run_op_checks(std::cout, seed >= 0 ? static_cast<uint64_t>(seed) : 12345);
  std::cout << (failures == 0 ? "all checks passed\n"
                              : std::to_string(failures) + " check(s) failed\n");
  return failures == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geometry-aware non-rigid shape reconstruction toolkit"};
  app.require_subcommand(1);

  std::string config, data, out, ckpt, split = "test_known", image_path, camera_file, overlay;
  int64_t seed = -1;
  double f = -1, cx = -1, cy = -1;
  bool dry_run = false, corrupt = false;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--config", config, "key = value generator config");
  gen->add_option("--out", out, "output dataset directory")->required();
  gen->add_option("--seed", seed, "override the config seed");
  gen->add_flag("--dry-run", dry_run, "validate the config without writing files");

  auto* train = app.add_subcommand("train", "train a model on a generated dataset");
  train->add_option("--config", config, "key = value model config");
  train->add_option("--data", data, "dataset directory")->required();
  train->add_option("--out", out, "output directory (checkpoint + metrics)")->required();
  train->add_option("--seed", seed, "override the config seed");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  eval->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--split", split, "split name (default test_known)");
  eval->add_option("--out", out, "directory for the per-sample CSV");

  auto* infer = app.add_subcommand("infer", "reconstruct a mesh from one image");
  infer->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  infer->add_option("--image", image_path, "input image (binary PPM)")->required();
  infer->add_option("--out", out, "output mesh text file")->required();
  infer->add_option("--camera", camera_file, "camera intrinsics as key = value text");
  infer->add_option("--f", f, "focal length in pixels (overrides --camera)");
  infer->add_option("--cx", cx, "principal point x (overrides --camera)");
  infer->add_option("--cy", cy, "principal point y (overrides --camera)");
  infer->add_option("--overlay", overlay, "also write a wireframe overlay PNG here");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every op");
  gradcheck->add_option("--seed", seed, "random seed for the probe tensors");
  gradcheck->add_flag("--corrupt", corrupt, "perturb one VJP to prove failures are caught");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen(config, out, seed, dry_run);
    if (train->parsed()) return cmd_train(config, data, out, seed);
    if (eval->parsed()) return cmd_eval(ckpt, data, split, out);
    if (infer->parsed()) return cmd_infer(ckpt, image_path, out, camera_file, f, cx, cy, overlay);
    if (gradcheck->parsed()) return cmd_gradcheck(seed, corrupt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
