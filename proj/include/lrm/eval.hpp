#pragma once

#include <functional>

#include "json.hpp"
#include "lrm/model.hpp"
#include "lrm/synthetic.hpp"

namespace lrm {

// Renders a reconstructed shape from a camera given in the normalized world
// frame (the frame the input camera was moved to canonical pose in).
using ViewRenderer =
    std::function<ImageF(const CameraExtrinsic& e, const CameraIntrinsic& k, int width, int height)>;

// Builds a ViewRenderer from one posed input view. world_tf carries held-out
// cameras (and, for oracle fields, scene geometry) into the normalized frame.
using ShapeReconstructor = std::function<ViewRenderer(
    const ImageF& input, const CameraExtrinsic& e_norm, const CameraIntrinsic& k,
    const SimilarityTransform& world_tf)>;

struct EvalViewResult {
  int view = 0;
  double psnr = 0, ssim = 0;
};

struct EvalShapeResult {
  std::string id;
  double psnr = 0, ssim = 0;  // means over held-out views
  std::vector<EvalViewResult> views;
};

struct EvalReport {
  double psnr_mean = 0, ssim_mean = 0;
  std::vector<EvalShapeResult> shapes;
  nlohmann::json to_json() const;
};

// Reconstructs every shape from its view 0 and scores renders of all other
// views at the dataset resolution. Each shape needs at least two views.
EvalReport evaluate_dataset(const DatasetManifest& data, const ShapeReconstructor& reconstructor);

// Model-backed reconstructor; spp samples per ray, deterministic midpoint
// sampling. The store must outlive the returned reconstructor.
ShapeReconstructor model_reconstructor(const ParamStore& store, const ModelConfig& cfg, int spp);

}  // namespace lrm
