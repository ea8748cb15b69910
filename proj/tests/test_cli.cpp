#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <deform/checkpoint.hpp>
#include <deform/eval.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace deform;
namespace fs = std::filesystem;

namespace {

// run the real binary; stdout/stderr go to a file so tests can inspect them
int run(const std::string& args, const std::string& log = "/dev/null") {
  const std::string cmd = std::string(CLI_BINARY) + " " + args + " > " + log + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct TmpDir {
  fs::path path;
  explicit TmpDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TmpDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

void write_gen_config(const std::string& path) {
  std::ofstream os(path);
  os << "grid_n = 4\nimage_w = 32\nimage_h = 32\n"
     << "n_train = 3\nn_val = 2\nn_test = 2\n"
     << "train_textures = 4\ntest_textures = 2\nseed = 11\n";
}

void write_model_config(const std::string& path) {
  std::ofstream os(path);
  os << "grid_n = 4\nimage_w = 32\nimage_h = 32\nt_max = 2\n"
     << "feat_channels = 8\nstage_width = 8\ndepth_width = 8\n"
     << "stage1_epochs = 2\nstage2_epochs = 1\nlr = 1e-3\nseed = 5\n";
}

}  // namespace

TEST_CASE("usage contract") {
  CHECK(run("--help") == 0);
  CHECK(run("gen --help") == 0);
  CHECK(run("--no-such-flag") == 1);
  CHECK(run("") == 1);                 // a subcommand is required
  CHECK(run("gen") == 1);              // missing required --out
  CHECK(run("eval --checkpoint /nonexistent --data /nonexistent") == 2);  // runtime error
}

TEST_CASE("gen is deterministic per seed and supports dry runs") {
  TmpDir tmp("cli_gen_test");
  const std::string cfg = tmp.str() + "/gen.cfg";
  write_gen_config(cfg);

  const std::string d1 = tmp.str() + "/ds1", d2 = tmp.str() + "/ds2";
  REQUIRE(run("gen --config " + cfg + " --out " + d1) == 0);
  REQUIRE(run("gen --config " + cfg + " --out " + d2) == 0);
  CHECK(slurp(d1 + "/manifest.json") == slurp(d2 + "/manifest.json"));
  CHECK(slurp(d1 + "/train/00000.bin") == slurp(d2 + "/train/00000.bin"));
  CHECK(slurp(d1 + "/test_new_occ/00001.bin") == slurp(d2 + "/test_new_occ/00001.bin"));

  // a different seed changes the data
  REQUIRE(run("gen --config " + cfg + " --seed 99 --out " + tmp.str() + "/ds3") == 0);
  CHECK(slurp(d1 + "/train/00000.bin") != slurp(tmp.str() + "/ds3/train/00000.bin"));

  // dry run validates without touching the disk
  CHECK(run("gen --config " + cfg + " --dry-run --out " + tmp.str() + "/ds4") == 0);
  CHECK_FALSE(fs::exists(tmp.str() + "/ds4"));
}

TEST_CASE("train, eval, infer and the CSV round trip") {
  TmpDir tmp("cli_pipe_test");
  const std::string gen_cfg = tmp.str() + "/gen.cfg", model_cfg = tmp.str() + "/model.cfg";
  write_gen_config(gen_cfg);
  write_model_config(model_cfg);
  const std::string ds = tmp.str() + "/ds", runa = tmp.str() + "/runa", runb = tmp.str() + "/runb";
  REQUIRE(run("gen --config " + gen_cfg + " --out " + ds) == 0);

  SUBCASE("training is deterministic and evaluation round-trips its CSV") {
    REQUIRE(run("train --config " + model_cfg + " --data " + ds + " --out " + runa) == 0);
    REQUIRE(run("train --config " + model_cfg + " --data " + ds + " --out " + runb) == 0);
    CHECK(slurp(runa + "/metrics.csv") == slurp(runb + "/metrics.csv"));
    CHECK(slurp(runa + "/checkpoint.bin") == slurp(runb + "/checkpoint.bin"));

    REQUIRE(run("eval --checkpoint " + runa + "/checkpoint.bin --data " + ds +
                " --split test_known --out " + runa) == 0);
    const std::string csv_path = runa + "/eval_test_known.csv";
    REQUIRE(fs::exists(csv_path));

    // aggregates recomputed from the per-sample rows must match a direct
    // in-process evaluation of the same checkpoint and split
    std::ifstream is(csv_path);
    const EvalReport from_csv = read_eval_csv(is, "test_known");
    LoadedCheckpoint lc = load_checkpoint(runa + "/checkpoint.bin");
    const Manifest m = load_manifest(ds);
    const EvalReport direct =
        evaluate_split(lc.model, load_split(ds, m, "test_known"), "test_known");
    REQUIRE(from_csv.rows.size() == direct.rows.size());
    CHECK(from_csv.mean3d == doctest::Approx(direct.mean3d).epsilon(1e-12));
    CHECK(from_csv.median3d == doctest::Approx(direct.median3d).epsilon(1e-12));
    CHECK(from_csv.std3d == doctest::Approx(direct.std3d).epsilon(1e-12));
    CHECK(from_csv.mean2d == doctest::Approx(direct.mean2d).epsilon(1e-12));
  }

  SUBCASE("infer matches eval on the same sample and writes a well-formed mesh") {
    REQUIRE(run("train --config " + model_cfg + " --data " + ds + " --out " + runa) == 0);
    const Manifest m = load_manifest(ds);
    const Sample s = load_split(ds, m, "test_known")[0];
    const std::string ppm = tmp.str() + "/sample.ppm";
    write_ppm(ppm, s.image);
    std::ostringstream cam;
    cam.precision(17);
    cam << " --f " << s.camera.f_u << " --cx " << s.camera.u_c << " --cy " << s.camera.v_c;
    const std::string mesh_path = tmp.str() + "/mesh.txt";
    REQUIRE(run("infer --checkpoint " + runa + "/checkpoint.bin --image " + ppm + " --out " +
                mesh_path + cam.str() + " --overlay " + tmp.str() + "/overlay.png") == 0);
    REQUIRE(fs::exists(tmp.str() + "/overlay.png"));

    std::ifstream mesh_is(mesh_path);
    std::string header;
    REQUIRE(std::getline(mesh_is, header));
    CHECK(header == "n 4");
    MeshGrid3D pred;
    pred.n = 4;
    double x, y, z;
    while (mesh_is >> x >> y >> z) pred.v.push_back({x, y, z});
    REQUIRE(pred.v.size() == 16);  // N^2 vertex lines after the header

    // the PPM round trip quantizes the image to 8 bits, so compare against an
    // in-process forward of the same quantized image
    LoadedCheckpoint lc = load_checkpoint(runa + "/checkpoint.bin");
    const Image qimg = Image::from_bytes(s.image.w, s.image.h, s.image.quantize());
    const Tensor input = Tensor::from_data({qimg.h, qimg.w, 3}, qimg.rgb);
    const ForwardResult fr = lc.model.forward(input, s.camera);
    const MeshGrid3D direct = tensor_to_mesh(fr.mesh3d, 4);
    for (size_t i = 0; i < direct.v.size(); ++i)
      CHECK(norm(pred.v[i] - direct.v[i]) < 1e-12);

    CHECK(run("infer --checkpoint " + runa + "/checkpoint.bin --image /nonexistent --out " +
              mesh_path) == 2);
  }
}

TEST_CASE("gradcheck coverage and negative control") {
  TmpDir tmp("cli_gc_test");
  const std::string log = tmp.str() + "/gc.txt";
  REQUIRE(run("gradcheck --seed 7", log) == 0);
  const std::string out = slurp(log);
  CHECK(out.find("FAIL") == std::string::npos);
  // spot-check that the table covers the op families
  for (const char* op : {"matmul", "conv2d", "soft_argmax", "err_align", "lift", "condition",
                         "spatial_softmax", "model_loss"})
    CHECK(out.find(op) != std::string::npos);
  // corrupting a VJP must surface as a reported failure and a nonzero exit
  REQUIRE(run("gradcheck --seed 7 --corrupt", log) == 2);
  CHECK(slurp(log).find("FAIL") != std::string::npos);
}
