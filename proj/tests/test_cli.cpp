#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "lrm/image.hpp"
#include "lrm/synthetic.hpp"

// Drives the installed `lrm` binary (path in $LRM_BIN) as a subprocess and
// checks exit codes, artifacts, and error text.

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string bin() {
  const char* p = std::getenv("LRM_BIN");
  REQUIRE_MESSAGE(p != nullptr, "LRM_BIN must point at the lrm binary");
  return p;
}

const fs::path& work() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "lrm_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct RunResult {
  int code = -1;
  std::string out, err;
};

RunResult run(const std::string& args) {
  static int counter = 0;
  const std::string base = (work() / ("io_" + std::to_string(counter++))).string();
  const std::string cmd = bin() + " " + args + " > " + base + ".out 2> " + base + ".err";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(base + ".out");
  r.err = slurp(base + ".err");
  return r;
}

json micro_config(int total_iters) {
  return {{"model",
           {{"encoder",
             {{"image_size", 16}, {"patch_size", 4}, {"d_e", 8}, {"layers", 1}, {"heads", 2}}},
            {"decoder",
             {{"d_d", 16},
              {"layers", 1},
              {"heads", 2},
              {"tri_low", 2},
              {"tri_res", 4},
              {"d_t", 4}}},
            {"field", {{"layers", 2}, {"hidden", 8}}},
            {"render", {{"resolution", 16}, {"samples", 8}}}}},
          {"train",
           {{"total_iters", total_iters}, {"warmup_iters", 1}, {"views", 2}, {"seed", 11}}}};
}

std::string write_config(const char* name, int total_iters) {
  const std::string path = (work() / name).string();
  std::ofstream(path) << micro_config(total_iters).dump(2);
  return path;
}

// One dataset and one 3-step training run shared by the slower cases.
struct Workspace {
  std::string data, run_dir, ckpt, input_image, train_stdout;
};

const Workspace& shared() {
  static const Workspace w = [] {
    Workspace ws;
    ws.data = (work() / "data").string();
    RunResult r = run("datagen --out " + ws.data + " --shapes 2 --views 4 --res 16 --seed 7");
    REQUIRE(r.code == 0);

    const auto manifest = lrm::load_manifest(ws.data);
    ws.input_image = (fs::path(ws.data) / manifest.shapes[0].views[0].image).string();

    ws.run_dir = (work() / "run").string();
    r = run("train --dataset " + ws.data + " --out " + ws.run_dir + " --config " +
            write_config("micro.json", 3) + " --log-every 0");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    ws.train_stdout = r.out;
    ws.ckpt = (fs::path(ws.run_dir) / "checkpoint").string();
    return ws;
  }();
  return w;
}

}  // namespace

TEST_CASE("help exits zero, usage errors exit two") {
  CHECK(run("--help").code == 0);
  CHECK(run("").code == 2);                       // a subcommand is required
  CHECK(run("frobnicate").code == 2);             // unknown subcommand
  CHECK(run("datagen").code == 2);                // missing required --out
  CHECK(run("datagen --out x --bogus 1").code == 2);
  CHECK(run("gradcheck --scope bogus").code == 2);
}

TEST_CASE("datagen writes a loadable, deterministic dataset") {
  const Workspace& ws = shared();
  const auto manifest = lrm::load_manifest(ws.data);
  CHECK(manifest.resolution == 16);
  REQUIRE(manifest.shapes.size() == 2);
  for (const auto& shape : manifest.shapes) {
    CHECK(shape.views.size() == 4);
    for (const auto& view : shape.views)
      CHECK(fs::exists(fs::path(ws.data) / view.image));
  }

  const std::string again = (work() / "data_again").string();
  REQUIRE(run("datagen --out " + again + " --shapes 2 --views 4 --res 16 --seed 7").code == 0);
  CHECK(slurp(again + "/meta.json") == slurp(ws.data + "/meta.json"));
  const std::string rel = manifest.shapes[0].views[0].image;
  CHECK(slurp((fs::path(again) / rel).string()) == slurp(ws.input_image));
}

TEST_CASE("train emits a checkpoint and a parseable jsonl log") {
  const Workspace& ws = shared();
  CHECK(fs::exists(fs::path(ws.ckpt) / "manifest.json"));
  CHECK(fs::exists(fs::path(ws.ckpt) / "params.bin"));

  std::ifstream log(fs::path(ws.run_dir) / "log.jsonl");
  REQUIRE(log.good());
  std::string line;
  int64_t steps = 0;
  while (std::getline(log, line)) {
    const json entry = json::parse(line);
    ++steps;
    CHECK(entry.at("step").get<int64_t>() == steps);
    CHECK(std::isfinite(entry.at("total").get<double>()));
    CHECK(entry.contains("lr"));
    CHECK(entry.contains("mse"));
    CHECK(entry.contains("perceptual"));
  }
  CHECK(steps == 3);

  const json summary = json::parse(ws.train_stdout);
  CHECK(summary.at("steps").get<int>() == 3);
  CHECK(summary.at("checkpoint").get<std::string>() == ws.ckpt);
}

TEST_CASE("train resumes from a checkpoint to a longer horizon") {
  const Workspace& ws = shared();
  const std::string out2 = (work() / "run_resumed").string();
  const RunResult r = run("train --dataset " + ws.data + " --out " + out2 + " --config " +
                          write_config("micro5.json", 5) + " --log-every 0 --resume " + ws.ckpt);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(json::parse(r.out).at("steps").get<int>() == 5);

  std::ifstream log(fs::path(out2) / "log.jsonl");
  std::string line;
  REQUIRE(std::getline(log, line));
  CHECK(json::parse(line).at("step").get<int64_t>() == 4);  // continues after step 3
}

TEST_CASE("reconstruct writes renders, depth maps, and a mesh") {
  const Workspace& ws = shared();
  const std::string out = (work() / "rec").string();
  const RunResult r = run("reconstruct --image " + ws.input_image + " --checkpoint " + ws.ckpt +
                          " --out " + out + " --views 2 --mesh-res 8 --res 16 --spp 4");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* name : {"input_view.png", "render_000.png", "render_001.png", "depth_000.png",
                           "depth_001.png", "mesh.obj"})
    CHECK_MESSAGE(fs::exists(fs::path(out) / name), name);
  const lrm::ImageF img = lrm::load_png((fs::path(out) / "render_000.png").string());
  CHECK(img.width == 16);
  CHECK(img.height == 16);

  // views 0 skips all rendering and still extracts the mesh
  const std::string mesh_only = (work() / "rec_mesh_only").string();
  REQUIRE(run("reconstruct --image " + ws.input_image + " --checkpoint " + ws.ckpt + " --out " +
              mesh_only + " --views 0 --mesh-res 8")
              .code == 0);
  CHECK(fs::exists(fs::path(mesh_only) / "mesh.obj"));
  CHECK_FALSE(fs::exists(fs::path(mesh_only) / "input_view.png"));
}

TEST_CASE("reconstruct rejects a non-square image with crop advice") {
  const Workspace& ws = shared();
  lrm::ImageF wide(3, 6, 8);
  wide.data.assign(wide.data.size(), 0.5f);
  const std::string path = (work() / "wide.png").string();
  lrm::save_png(wide, path);

  const RunResult r = run("reconstruct --image " + path + " --checkpoint " + ws.ckpt + " --out " +
                          (work() / "rec_bad").string());
  CHECK(r.code == 1);
  CHECK(r.err.find("square") != std::string::npos);
  CHECK(r.err.find("center-crop") != std::string::npos);
}

TEST_CASE("corrupted checkpoint manifest names the missing tensor") {
  const Workspace& ws = shared();
  const std::string bad = (work() / "ckpt_bad").string();
  fs::remove_all(bad);
  fs::copy(ws.ckpt, bad, fs::copy_options::recursive);

  json manifest = json::parse(slurp(bad + "/manifest.json"));
  auto& tensors = manifest.at("tensors");
  REQUIRE(tensors.size() > 1);
  // Drop one model tensor; optimizer moments are keyed "optim." and optional.
  std::string removed;
  for (auto it = tensors.begin(); it != tensors.end(); ++it)
    if (it.key().rfind("optim.", 0) != 0) {
      removed = it.key();
      break;
    }
  REQUIRE(!removed.empty());
  tensors.erase(removed);
  std::ofstream(bad + "/manifest.json") << manifest.dump(2);

  const RunResult r = run("reconstruct --image " + ws.input_image + " --checkpoint " + bad +
                          " --out " + (work() / "rec_corrupt").string());
  CHECK(r.code == 1);
  CHECK(r.err.find("missing parameter tensor") != std::string::npos);
  CHECK(r.err.find("'" + removed + "'") != std::string::npos);
}

TEST_CASE("missing checkpoint directory fails cleanly") {
  const Workspace& ws = shared();
  const RunResult r = run("reconstruct --image " + ws.input_image + " --checkpoint " +
                          (work() / "no_such_ckpt").string() + " --out " +
                          (work() / "rec_missing").string());
  CHECK(r.code == 1);
  CHECK(r.err.find("missing checkpoint") != std::string::npos);
}

TEST_CASE("gradcheck passes clean and fails under an injected fault") {
  const RunResult ok = run("gradcheck --scope primitive");
  CHECK(ok.code == 0);
  CHECK(ok.out.find("gradcheck PASS") != std::string::npos);

  const RunResult bad = run("gradcheck --scope primitive --inject-fault");
  CHECK(bad.code == 1);
  CHECK(bad.out.find("gradcheck FAIL") != std::string::npos);
}

TEST_CASE("eval writes a psnr/ssim report over held-out views") {
  const Workspace& ws = shared();
  const std::string report_path = (work() / "report.json").string();
  const RunResult r = run("eval --checkpoint " + ws.ckpt + " --dataset " + ws.data + " --out " +
                          report_path + " --spp 2");
  REQUIRE_MESSAGE(r.code == 0, r.err);

  const json report = json::parse(slurp(report_path));
  CHECK(std::isfinite(report.at("psnr_mean").get<double>()));
  CHECK(std::isfinite(report.at("ssim_mean").get<double>()));
  REQUIRE(report.at("per_shape").size() == 2);
  for (const auto& shape : report.at("per_shape")) {
    CHECK(shape.contains("id"));
    CHECK(shape.at("views").size() == 3);  // 4 views, view 0 is the input
  }
}

TEST_CASE("render reproduces the stored dataset view byte for byte") {
  const Workspace& ws = shared();
  const auto manifest = lrm::load_manifest(ws.data);
  const std::string out = (work() / "rerender.png").string();
  const RunResult r =
      run("render --dataset " + ws.data + " --shape " + manifest.shapes[0].id + " --view 1 --out " +
          out);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(slurp(out) == slurp((fs::path(ws.data) / manifest.shapes[0].views[1].image).string()));

  CHECK(run("render --dataset " + ws.data + " --shape nope --view 0 --out " + out).code == 1);
  CHECK(run("render --dataset " + ws.data + " --shape " + manifest.shapes[0].id +
            " --view 9 --out " + out)
            .code == 1);
}

TEST_CASE("mesh command writes an obj") {
  const Workspace& ws = shared();
  const std::string out = (work() / "direct.obj").string();
  const RunResult r =
      run("mesh --image " + ws.input_image + " --checkpoint " + ws.ckpt + " --out " + out +
          " --res 8");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(out));
  const json summary = json::parse(r.out);
  CHECK(summary.contains("vertices"));
  CHECK(summary.contains("triangles"));
}
