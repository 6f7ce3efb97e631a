#pragma once

#include "json.hpp"
#include "lrm/decoder.hpp"
#include "lrm/encoder.hpp"
#include "lrm/renderer.hpp"

namespace lrm {

// Supervision-render geometry used during training and eval.
struct RenderConfig {
  int resolution = 32;  // paper renders 128x128 for supervision
  int samples = 32;     // paper samples 128 points per ray
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  FieldConfig field;
  RenderConfig render;
  void validate() const;
};

// Partial override of desk defaults; unknown keys rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json model_config_to_json(const ModelConfig& cfg);

// Full single-image-to-triplane model: ViT encoder, camera-modulated
// transformer decoder, shared NeRF MLP heads.
template <typename S>
struct LRM {
  ModelConfig cfg;
  ViTEncoder<S> encoder;
  TriplaneDecoder<S> decoder;
  NerfMlp<S> nerf;

  static void define_params(ParamStore& store, const ModelConfig& cfg, Rng& rng);
  static LRM bind(const BoundParams<S>& p, const ModelConfig& cfg);

  // image: [3,H,W] in [0,1]; feature: normalized-camera feature (20 floats).
  Triplane<S> reconstruct(const Tensor<S>& image, const std::array<float, 20>& feature) const;
};

// A checkpoint rebuilt into a live store: config from the manifest's
// "extra.model", parameter values from the blob.
struct LoadedCheckpoint {
  ModelConfig cfg;
  ParamStore store;
  nlohmann::json extra;
};

LoadedCheckpoint load_model_checkpoint(const std::string& dir);

}  // namespace lrm
