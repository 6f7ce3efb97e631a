#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <fstream>
#include <optional>

#include "lrm/eval.hpp"
#include "lrm/gradsuite.hpp"
#include "lrm/mesh.hpp"
#include "lrm/metrics.hpp"
#include "lrm/trainer.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json parse_config(const std::string& text) {
  if (text.empty()) return json::object();
  return json::parse(text);
}

py::dict datagen(const std::string& out, int shapes, int views, int res, uint64_t seed) {
  const auto manifest = lrm::generate_dataset(shapes, views, out, seed, res);
  py::dict d;
  d["dir"] = manifest.dir;
  d["shapes"] = manifest.shapes.size();
  d["resolution"] = manifest.resolution;
  return d;
}

py::dict train(const std::string& dataset, const std::string& out, const std::string& config,
               std::optional<uint64_t> seed, const std::string& resume) {
  const json cfg = parse_config(config);
  lrm::ModelConfig mcfg = lrm::model_config_from_json(cfg.value("model", json::object()));
  lrm::TrainConfig tcfg = lrm::train_config_from_json(cfg.value("train", json::object()));
  if (seed) tcfg.seed = *seed;
  lrm::Trainer trainer(mcfg, tcfg, lrm::load_manifest(dataset));
  if (!resume.empty()) trainer.load(resume);

  fs::create_directories(out);
  std::ofstream log(fs::path(out) / "log.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
  lrm::StepInfo last;
  while (!trainer.done()) {
    last = trainer.step();
    log << lrm::step_info_to_json(last).dump() << "\n";
  }
  const std::string ckpt = (fs::path(out) / "checkpoint").string();
  trainer.save(ckpt);
  py::dict d;
  d["checkpoint"] = ckpt;
  d["steps"] = trainer.current_step();
  d["final_loss"] = last.total;
  return d;
}

py::dict reconstruct(const std::string& image_path, const std::string& checkpoint,
                     const std::string& out, int views, int mesh_res, int res, int spp) {
  lrm::LoadedCheckpoint lm = lrm::load_model_checkpoint(checkpoint);
  const lrm::ImageF input = lrm::load_png(image_path);
  LRM_REQUIRE(input.width == input.height, "input image is ", input.width, "x", input.height,
              "; reconstruct expects a square image, center-crop or resize it first");

  const auto params = lrm::bind_params<float>(lm.store);
  const auto model = lrm::LRM<float>::bind(params, lm.cfg);
  lrm::CameraExtrinsic cam;
  cam.m[7] = -2.0;  // canonical normalized camera
  const lrm::CameraIntrinsic kin = lrm::synthetic_intrinsics();
  const lrm::Triplane<float> tri = model.reconstruct(
      lrm::image_to_tensor<float>(lrm::fit_resolution(input, lm.cfg.encoder.image_size)),
      lrm::build_camera_feature(cam, kin));
  const lrm::FieldFn<float> field = lrm::triplane_field(tri, model.nerf);

  fs::create_directories(out);
  py::list renders;
  for (int v = 0; v < views; ++v) {
    const double az = -M_PI / 2 + 2.0 * M_PI * v / std::max(views, 1);
    const auto e = lrm::CameraExtrinsic::look_at(
        {2.0 * std::cos(az), 2.0 * std::sin(az), 0.75}, {0, 0, 0});
    const auto r = lrm::render_field(field, e, kin, res, res, spp, lrm::SampleMode::midpoint, 0);
    char name[64];
    std::snprintf(name, sizeof(name), "render_%03d.png", v);
    const std::string path = (fs::path(out) / name).string();
    lrm::save_png(lrm::tensor_to_image(r.rgb, res, res), path);
    renders.append(path);
  }
  py::dict d;
  d["renders"] = renders;
  if (mesh_res > 0) {
    const lrm::DensityGrid grid = lrm::sample_density_grid(tri, model.nerf, mesh_res);
    lrm::TriangleMesh mesh =
        lrm::marching_cubes(grid, static_cast<float>(lrm::default_iso(mesh_res)));
    lrm::color_vertices(mesh, tri, model.nerf);
    const std::string obj = (fs::path(out) / "mesh.obj").string();
    lrm::write_obj(mesh, obj);
    d["mesh"] = obj;
    d["vertices"] = mesh.vertices.size();
  }
  return d;
}

py::object evaluate(const std::string& checkpoint, const std::string& dataset,
                    const std::string& out, int spp) {
  lrm::LoadedCheckpoint lm = lrm::load_model_checkpoint(checkpoint);
  const auto manifest = lrm::load_manifest(dataset);
  const int eff_spp = spp > 0 ? spp : lm.cfg.render.samples;
  const auto report =
      lrm::evaluate_dataset(manifest, lrm::model_reconstructor(lm.store, lm.cfg, eff_spp));
  const json j = report.to_json();
  if (!out.empty()) {
    std::ofstream f(out);
    LRM_REQUIRE(f.good(), "cannot write report to ", out);
    f << j.dump(2) << "\n";
  }
  return to_py(j);
}

py::dict gradcheck(const std::string& scope, bool inject_fault) {
  const lrm::SuiteResult r = lrm::run_gradcheck_suite(scope, inject_fault);
  py::dict d;
  d["pass"] = r.pass();
  d["table"] = r.table();
  py::list cases;
  for (const auto& c : r.cases) {
    py::dict e;
    e["name"] = c.name;
    e["max_rel_err"] = c.report.max_rel_err;
    e["tol"] = c.tol;
    e["pass"] = c.pass();
    cases.append(e);
  }
  d["cases"] = cases;
  return d;
}

double psnr_files(const std::string& a, const std::string& b) {
  return lrm::psnr(lrm::load_png(a), lrm::load_png(b));
}

double ssim_files(const std::string& a, const std::string& b) {
  return lrm::ssim(lrm::load_png(a), lrm::load_png(b));
}

}  // namespace

PYBIND11_MODULE(lrm3d, m) {
  m.doc() = "Single-image-to-3D reconstruction (triplane NeRF): file-based pipeline bindings";

  m.def("datagen", &datagen, py::arg("out"), py::arg("shapes") = 8, py::arg("views") = 8,
        py::arg("res") = 64, py::arg("seed") = 0,
        "Generate a synthetic SDF dataset; returns a summary dict.");
  m.def("train", &train, py::arg("dataset"), py::arg("out"), py::arg("config") = "",
        py::arg("seed") = std::nullopt, py::arg("resume") = "",
        "Train from a JSON config string with model/train sections; writes <out>/checkpoint.");
  m.def("reconstruct", &reconstruct, py::arg("image"), py::arg("checkpoint"), py::arg("out"),
        py::arg("views") = 8, py::arg("mesh_res") = 64, py::arg("res") = 64, py::arg("spp") = 64,
        "Reconstruct a square input image into turntable renders and an OBJ mesh.");
  m.def("evaluate", &evaluate, py::arg("checkpoint"), py::arg("dataset"), py::arg("out") = "",
        py::arg("spp") = 0, "Held-out view PSNR/SSIM over a dataset; returns the report dict.");
  m.def("gradcheck", &gradcheck, py::arg("scope") = "primitive", py::arg("inject_fault") = false,
        "Run the finite-difference gradient suite at the given scope.");
  m.def("psnr", &psnr_files, py::arg("a"), py::arg("b"), "PSNR between two PNG files.");
  m.def("ssim", &ssim_files, py::arg("a"), py::arg("b"), "SSIM between two PNG files.");
}
