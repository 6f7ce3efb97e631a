#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "lrm/eval.hpp"
#include "lrm/gradsuite.hpp"
#include "lrm/mesh.hpp"
#include "lrm/metrics.hpp"
#include "lrm/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ConfigFile {
  json model = json::object();
  json train = json::object();
};

ConfigFile load_config_file(const std::string& path) {
  ConfigFile cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path);
  LRM_REQUIRE(in.good(), "cannot open config file ", path);
  json j = json::parse(in);
  for (const auto& [key, value] : j.items()) {
    if (key == "model")
      cfg.model = value;
    else if (key == "train")
      cfg.train = value;
    else
      LRM_REQUIRE(false, "unknown config section '", key, "' (expected model/train)");
  }
  return cfg;
}

lrm::CameraExtrinsic canonical_camera() {
  lrm::CameraExtrinsic e;
  e.m[7] = -2.0;  // position [0,-2,0], identity rotation, looking +y
  return e;
}

lrm::CameraExtrinsic turntable_camera(double azimuth) {
  const double r = 2.0, height = 0.75;
  return lrm::CameraExtrinsic::look_at({r * std::cos(azimuth), r * std::sin(azimuth), height},
                                       {0, 0, 0});
}

lrm::ImageF load_square_image(const std::string& path) {
  const lrm::ImageF img = lrm::load_png(path);
  LRM_REQUIRE(img.width == img.height, "input image is ", img.width, "x", img.height,
              "; reconstruct expects a square image, center-crop or resize it first");
  return img;
}

lrm::ImageF depth_image(const lrm::RenderResult<float>& r) {
  lrm::ImageF img(1, r.height, r.width);
  const float inv = static_cast<float>(1.0 / std::max(r.depth_scale, 1e-9));
  for (int i = 0; i < r.width * r.height; ++i)
    img.data[static_cast<size_t>(i)] = r.depth.value()[static_cast<size_t>(i)] * inv;
  return img;
}

// ---- commands ----

struct DatagenOpts {
  std::string out;
  int shapes = 8, views = 8, res = 64;
  uint64_t seed = 0;
};

int cmd_datagen(const DatagenOpts& o) {
  const auto manifest = lrm::generate_dataset(o.shapes, o.views, o.out, o.seed, o.res);
  json summary = {{"dir", manifest.dir},
                  {"shapes", manifest.shapes.size()},
                  {"views_per_shape", o.views},
                  {"resolution", manifest.resolution}};
  std::cout << summary.dump() << "\n";
  return 0;
}

struct TrainOpts {
  std::string dataset, out, config, resume;
  uint64_t seed = 0;
  bool seed_set = false;
  int save_every = 0, log_every = 50;
};

int cmd_train(const TrainOpts& o) {
  const ConfigFile cfg = load_config_file(o.config);
  const lrm::ModelConfig mcfg = lrm::model_config_from_json(cfg.model);
  lrm::TrainConfig tcfg = lrm::train_config_from_json(cfg.train);
  if (o.seed_set) tcfg.seed = o.seed;

  lrm::Trainer trainer(mcfg, tcfg, lrm::load_manifest(o.dataset));
  if (!o.resume.empty()) trainer.load(o.resume);

  fs::create_directories(o.out);
  const std::string ckpt_dir = (fs::path(o.out) / "checkpoint").string();
  std::ofstream log(fs::path(o.out) / "log.jsonl",
                    o.resume.empty() ? std::ios::trunc : std::ios::app);
  LRM_REQUIRE(log.good(), "cannot write training log under ", o.out);

  while (!trainer.done()) {
    const lrm::StepInfo si = trainer.step();
    log << lrm::step_info_to_json(si).dump() << "\n";
    if (o.log_every > 0 && (si.step % o.log_every == 0 || trainer.done()))
      std::printf("step %6lld  lr %.3e  loss %.5f  mse %.5f  perc %.5f\n",
                  static_cast<long long>(si.step), si.lr, si.total, si.mse, si.perceptual);
    if (o.save_every > 0 && si.step % o.save_every == 0) trainer.save(ckpt_dir);
  }
  trainer.save(ckpt_dir);
  std::cout << json({{"checkpoint", ckpt_dir}, {"steps", trainer.current_step()}}).dump() << "\n";
  return 0;
}

struct ReconstructOpts {
  std::string image, checkpoint, out, config;
  int views = 8, mesh_res = 64, res = 64, spp = 64;
};

int cmd_reconstruct(const ReconstructOpts& o) {
  load_config_file(o.config);
  lrm::LoadedCheckpoint lm = lrm::load_model_checkpoint(o.checkpoint);
  const lrm::ImageF input = load_square_image(o.image);

  const auto params = lrm::bind_params<float>(lm.store);
  const auto model = lrm::LRM<float>::bind(params, lm.cfg);
  const lrm::CameraExtrinsic cam = canonical_camera();
  const lrm::CameraIntrinsic kin = lrm::synthetic_intrinsics();
  const lrm::Triplane<float> tri = model.reconstruct(
      lrm::image_to_tensor<float>(lrm::fit_resolution(input, lm.cfg.encoder.image_size)),
      lrm::build_camera_feature(cam, kin));
  const lrm::FieldFn<float> field = lrm::triplane_field(tri, model.nerf);

  fs::create_directories(o.out);
  json files = json::array();
  if (o.views > 0) {
    const auto rin = lrm::render_field(field, cam, kin, o.res, o.res, o.spp,
                                       lrm::SampleMode::midpoint, 0);
    const std::string in_path = (fs::path(o.out) / "input_view.png").string();
    lrm::save_png(lrm::tensor_to_image(rin.rgb, o.res, o.res), in_path);
    files.push_back(in_path);
    for (int v = 0; v < o.views; ++v) {
      const double az = -M_PI / 2 + 2.0 * M_PI * v / o.views;  // start at the input side
      const auto r = lrm::render_field(field, turntable_camera(az), kin, o.res, o.res, o.spp,
                                       lrm::SampleMode::midpoint, 0);
      char name[64];
      std::snprintf(name, sizeof(name), "render_%03d.png", v);
      lrm::save_png(lrm::tensor_to_image(r.rgb, o.res, o.res), (fs::path(o.out) / name).string());
      std::snprintf(name, sizeof(name), "depth_%03d.png", v);
      lrm::save_png16_gray(depth_image(r), (fs::path(o.out) / name).string());
    }
  }
  if (o.mesh_res > 0) {
    const lrm::DensityGrid grid = lrm::sample_density_grid(tri, model.nerf, o.mesh_res);
    lrm::TriangleMesh mesh =
        lrm::marching_cubes(grid, static_cast<float>(lrm::default_iso(o.mesh_res)));
    lrm::color_vertices(mesh, tri, model.nerf);
    lrm::write_obj(mesh, (fs::path(o.out) / "mesh.obj").string());
  }
  std::cout << json({{"out", o.out}, {"views", o.views}, {"mesh_res", o.mesh_res}}).dump() << "\n";
  return 0;
}

struct RenderOpts {
  std::string dataset, shape, out;
  int view = 0, res = 0;
};

int cmd_render(const RenderOpts& o) {
  const auto manifest = lrm::load_manifest(o.dataset);
  const lrm::ShapeRef* shape = nullptr;
  for (const auto& s : manifest.shapes)
    if (s.id == o.shape) shape = &s;
  LRM_REQUIRE(shape != nullptr, "shape '", o.shape, "' not in dataset ", o.dataset);
  LRM_REQUIRE(o.view >= 0 && o.view < static_cast<int>(shape->views.size()), "view ", o.view,
              " out of range; shape has ", shape->views.size(), " views");
  const int res = o.res > 0 ? o.res : manifest.resolution;
  const auto& view = shape->views[static_cast<size_t>(o.view)];
  const lrm::ImageF img = lrm::render_view(shape->scene, view.E, view.K, res, res);
  if (const fs::path parent = fs::path(o.out).parent_path(); !parent.empty())
    fs::create_directories(parent);
  lrm::save_png(img, o.out);
  std::cout << json({{"out", o.out}, {"resolution", res}}).dump() << "\n";
  return 0;
}

struct MeshOpts {
  std::string image, checkpoint, out, config;
  int res = 64;
};

int cmd_mesh(const MeshOpts& o) {
  load_config_file(o.config);
  lrm::LoadedCheckpoint lm = lrm::load_model_checkpoint(o.checkpoint);
  const lrm::ImageF input = load_square_image(o.image);
  const auto params = lrm::bind_params<float>(lm.store);
  const auto model = lrm::LRM<float>::bind(params, lm.cfg);
  const lrm::Triplane<float> tri = model.reconstruct(
      lrm::image_to_tensor<float>(lrm::fit_resolution(input, lm.cfg.encoder.image_size)),
      lrm::build_camera_feature(canonical_camera(), lrm::synthetic_intrinsics()));
  const lrm::DensityGrid grid = lrm::sample_density_grid(tri, model.nerf, o.res);
  lrm::TriangleMesh mesh = lrm::marching_cubes(grid, static_cast<float>(lrm::default_iso(o.res)));
  lrm::color_vertices(mesh, tri, model.nerf);
  if (const fs::path parent = fs::path(o.out).parent_path(); !parent.empty())
    fs::create_directories(parent);
  lrm::write_obj(mesh, o.out);
  std::cout << json({{"out", o.out},
                     {"vertices", mesh.vertices.size()},
                     {"triangles", mesh.triangles.size()}})
                   .dump()
            << "\n";
  return 0;
}

struct EvalOpts {
  std::string checkpoint, dataset, out, config;
  int spp = 0;
};

int cmd_eval(const EvalOpts& o) {
  load_config_file(o.config);
  lrm::LoadedCheckpoint lm = lrm::load_model_checkpoint(o.checkpoint);
  const auto manifest = lrm::load_manifest(o.dataset);
  const int spp = o.spp > 0 ? o.spp : lm.cfg.render.samples;
  const auto report =
      lrm::evaluate_dataset(manifest, lrm::model_reconstructor(lm.store, lm.cfg, spp));
  if (const fs::path parent = fs::path(o.out).parent_path(); !parent.empty())
    fs::create_directories(parent);
  std::ofstream out(o.out);
  LRM_REQUIRE(out.good(), "cannot write report to ", o.out);
  out << report.to_json().dump(2) << "\n";
  std::printf("psnr_mean %.3f  ssim_mean %.4f  (%zu shapes)\n", report.psnr_mean,
              report.ssim_mean, report.shapes.size());
  return 0;
}

struct GradcheckOpts {
  std::string scope = "primitive";
  bool inject_fault = false;
};

int cmd_gradcheck(const GradcheckOpts& o) {
  const lrm::SuiteResult r = lrm::run_gradcheck_suite(o.scope, o.inject_fault);
  std::cout << r.table();
  std::cout << (r.pass() ? "gradcheck PASS" : "gradcheck FAIL") << "\n";
  return r.pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lrm: single-image-to-3D reconstruction (triplane NeRF)"};
  app.require_subcommand(1);

  uint64_t seed = 0;
  std::string config;

  DatagenOpts dg;
  auto* datagen = app.add_subcommand("datagen", "Generate a synthetic SDF dataset");
  datagen->add_option("--out", dg.out, "output dataset directory")->required();
  datagen->add_option("--shapes", dg.shapes, "number of shapes");
  datagen->add_option("--views", dg.views, "views per shape");
  datagen->add_option("--res", dg.res, "image resolution");
  datagen->add_option("--seed", dg.seed, "dataset seed");
  datagen->add_option("--config", config, "config file (unused sections ignored)");

  TrainOpts tr;
  auto* train = app.add_subcommand("train", "Train on a synthetic dataset");
  train->add_option("--dataset", tr.dataset, "dataset directory")->required();
  train->add_option("--out", tr.out, "run directory (checkpoint + log)")->required();
  train->add_option("--config", tr.config, "json config with model/train sections");
  auto* seed_opt = train->add_option("--seed", tr.seed, "overrides train.seed");
  train->add_option("--resume", tr.resume, "checkpoint directory to resume from");
  train->add_option("--save-every", tr.save_every, "checkpoint every N steps (0: end only)");
  train->add_option("--log-every", tr.log_every, "stdout progress every N steps");

  ReconstructOpts rc;
  auto* reconstruct = app.add_subcommand("reconstruct", "Image -> renders + depth + mesh");
  reconstruct->add_option("--image", rc.image, "square input image (png)")->required();
  reconstruct->add_option("--checkpoint", rc.checkpoint, "trained checkpoint dir")->required();
  reconstruct->add_option("--out", rc.out, "output directory")->required();
  reconstruct->add_option("--views", rc.views, "turntable render count (0: mesh only)");
  reconstruct->add_option("--mesh-res", rc.mesh_res, "marching-cubes grid (0: skip mesh)");
  reconstruct->add_option("--res", rc.res, "render resolution");
  reconstruct->add_option("--spp", rc.spp, "samples per ray");
  reconstruct->add_option("--seed", seed, "unused; renders are deterministic");
  reconstruct->add_option("--config", rc.config, "config file (validated)");

  RenderOpts rd;
  auto* render = app.add_subcommand("render", "Reference render of a dataset view");
  render->add_option("--dataset", rd.dataset, "dataset directory")->required();
  render->add_option("--shape", rd.shape, "shape id")->required();
  render->add_option("--view", rd.view, "view index");
  render->add_option("--res", rd.res, "resolution override (0: dataset resolution)");
  render->add_option("--out", rd.out, "output png path")->required();
  render->add_option("--seed", seed, "unused; renders are deterministic");
  render->add_option("--config", config, "config file (unused sections ignored)");

  MeshOpts me;
  auto* mesh = app.add_subcommand("mesh", "Image -> OBJ mesh");
  mesh->add_option("--image", me.image, "square input image (png)")->required();
  mesh->add_option("--checkpoint", me.checkpoint, "trained checkpoint dir")->required();
  mesh->add_option("--out", me.out, "output .obj path")->required();
  mesh->add_option("--res", me.res, "marching-cubes grid resolution");
  mesh->add_option("--seed", seed, "unused; extraction is deterministic");
  mesh->add_option("--config", me.config, "config file (validated)");

  EvalOpts ev;
  auto* eval = app.add_subcommand("eval", "Held-out view PSNR/SSIM over a dataset");
  eval->add_option("--checkpoint", ev.checkpoint, "trained checkpoint dir")->required();
  eval->add_option("--dataset", ev.dataset, "dataset directory")->required();
  eval->add_option("--out", ev.out, "report json path")->required();
  eval->add_option("--spp", ev.spp, "samples per ray (0: checkpoint setting)");
  eval->add_option("--seed", seed, "unused; evaluation is deterministic");
  eval->add_option("--config", ev.config, "config file (validated)");

  GradcheckOpts gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  gradcheck->add_option("--scope", gc.scope, "primitive | module | endtoend")
      ->check(CLI::IsMember({"primitive", "module", "endtoend"}));
  gradcheck->add_flag("--inject-fault", gc.inject_fault,
                      "add a known-bad gradient case (harness self-test; run must fail)");
  gradcheck->add_option("--seed", seed, "unused; checks are deterministic");
  gradcheck->add_option("--config", config, "config file (unused sections ignored)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*datagen) return cmd_datagen(dg);
    if (*train) {
      tr.seed_set = seed_opt->count() > 0;
      return cmd_train(tr);
    }
    if (*reconstruct) return cmd_reconstruct(rc);
    if (*render) return cmd_render(rd);
    if (*mesh) return cmd_mesh(me);
    if (*eval) return cmd_eval(ev);
    if (*gradcheck) return cmd_gradcheck(gc);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
