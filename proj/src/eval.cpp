#include "lrm/eval.hpp"

#include "lrm/metrics.hpp"
#include "lrm/renderer.hpp"

namespace lrm {

nlohmann::json EvalReport::to_json() const {
  nlohmann::json per_shape = nlohmann::json::array();
  for (const auto& s : shapes) {
    nlohmann::json views = nlohmann::json::array();
    for (const auto& v : s.views)
      views.push_back({{"view", v.view}, {"psnr", v.psnr}, {"ssim", v.ssim}});
    per_shape.push_back(
        {{"id", s.id}, {"psnr", s.psnr}, {"ssim", s.ssim}, {"views", std::move(views)}});
  }
  return {{"psnr_mean", psnr_mean},
          {"ssim_mean", ssim_mean},
          {"clip_similarity", "out-of-scope"},
          {"per_shape", std::move(per_shape)}};
}

EvalReport evaluate_dataset(const DatasetManifest& data, const ShapeReconstructor& reconstructor) {
  LRM_REQUIRE(!data.shapes.empty(), "evaluate_dataset: empty dataset");
  EvalReport report;
  for (const auto& shape : data.shapes) {
    LRM_REQUIRE(shape.views.size() >= 2, "shape '", shape.id, "' has ", shape.views.size(),
                " views; evaluation needs an input view plus held-out views");
    const ViewRef& input_view = shape.views[0];
    const ImageF input = load_view_image(data, input_view);
    const auto [e_norm, world_tf] = normalize_camera(input_view.E, NormalizeMode::synthetic);
    const ViewRenderer render = reconstructor(input, e_norm, input_view.K, world_tf);

    EvalShapeResult sr;
    sr.id = shape.id;
    for (size_t v = 1; v < shape.views.size(); ++v) {
      const ViewRef& view = shape.views[v];
      const ImageF gt = load_view_image(data, view);
      const ImageF pred =
          render(world_tf.apply_camera(view.E), view.K, data.resolution, data.resolution);
      EvalViewResult vr;
      vr.view = static_cast<int>(v);
      vr.psnr = psnr(pred, gt);
      vr.ssim = ssim(pred, gt);
      sr.psnr += vr.psnr;
      sr.ssim += vr.ssim;
      sr.views.push_back(vr);
    }
    sr.psnr /= static_cast<double>(sr.views.size());
    sr.ssim /= static_cast<double>(sr.views.size());
    report.psnr_mean += sr.psnr;
    report.ssim_mean += sr.ssim;
    report.shapes.push_back(std::move(sr));
  }
  report.psnr_mean /= static_cast<double>(report.shapes.size());
  report.ssim_mean /= static_cast<double>(report.shapes.size());
  return report;
}

ShapeReconstructor model_reconstructor(const ParamStore& store, const ModelConfig& cfg, int spp) {
  return [&store, cfg, spp](const ImageF& input, const CameraExtrinsic& e_norm,
                            const CameraIntrinsic& k, const SimilarityTransform&) {
    const auto params = bind_params<float>(store);
    const auto model = LRM<float>::bind(params, cfg);
    const Tensor<float> image =
        image_to_tensor<float>(fit_resolution(input, cfg.encoder.image_size));
    const Triplane<float> tri = model.reconstruct(image, build_camera_feature(e_norm, k));
    const FieldFn<float> field = triplane_field(tri, model.nerf);
    return [field, spp](const CameraExtrinsic& e, const CameraIntrinsic& ki, int w, int h) {
      const auto r = render_field(field, e, ki, w, h, spp, SampleMode::midpoint, 0);
      return tensor_to_image(r.rgb, w, h);
    };
  };
}

}  // namespace lrm
