#include "lrm/model.hpp"

#include "lrm/checkpoint.hpp"

namespace lrm {

using nlohmann::json;

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  LRM_REQUIRE(decoder.d_t == field.d_t, "decoder d_T ", decoder.d_t,
              " must match field d_t ", field.d_t);
  LRM_REQUIRE(render.resolution >= 1 && render.samples >= 1, "invalid render config");
}

namespace {

void apply_int(const json& j, const char* key, int& out) {
  if (j.contains(key)) out = j.at(key).get<int>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> known,
                    const char* section) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    LRM_REQUIRE(ok, "unknown config key '", key, "' in section '", section, "'");
  }
}

}  // namespace

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  if (j.contains("encoder")) {
    const json& e = j.at("encoder");
    reject_unknown(e, {"image_size", "patch_size", "d_e", "layers", "heads"}, "encoder");
    apply_int(e, "image_size", cfg.encoder.image_size);
    apply_int(e, "patch_size", cfg.encoder.patch_size);
    apply_int(e, "d_e", cfg.encoder.d_e);
    apply_int(e, "layers", cfg.encoder.layers);
    apply_int(e, "heads", cfg.encoder.heads);
  }
  if (j.contains("decoder")) {
    const json& d = j.at("decoder");
    reject_unknown(d, {"d_d", "layers", "heads", "tri_low", "tri_res", "d_t"}, "decoder");
    apply_int(d, "d_d", cfg.decoder.d_d);
    apply_int(d, "layers", cfg.decoder.layers);
    apply_int(d, "heads", cfg.decoder.heads);
    apply_int(d, "tri_low", cfg.decoder.tri_low);
    apply_int(d, "tri_res", cfg.decoder.tri_res);
    apply_int(d, "d_t", cfg.decoder.d_t);
  }
  if (j.contains("field")) {
    const json& f = j.at("field");
    reject_unknown(f, {"layers", "hidden"}, "field");
    apply_int(f, "layers", cfg.field.layers);
    apply_int(f, "hidden", cfg.field.hidden);
  }
  cfg.field.d_t = cfg.decoder.d_t;
  if (j.contains("render")) {
    const json& r = j.at("render");
    reject_unknown(r, {"resolution", "samples"}, "render");
    apply_int(r, "resolution", cfg.render.resolution);
    apply_int(r, "samples", cfg.render.samples);
  }
  cfg.validate();
  return cfg;
}

json model_config_to_json(const ModelConfig& cfg) {
  return {
      {"encoder",
       {{"image_size", cfg.encoder.image_size},
        {"patch_size", cfg.encoder.patch_size},
        {"d_e", cfg.encoder.d_e},
        {"layers", cfg.encoder.layers},
        {"heads", cfg.encoder.heads}}},
      {"decoder",
       {{"d_d", cfg.decoder.d_d},
        {"layers", cfg.decoder.layers},
        {"heads", cfg.decoder.heads},
        {"tri_low", cfg.decoder.tri_low},
        {"tri_res", cfg.decoder.tri_res},
        {"d_t", cfg.decoder.d_t}}},
      {"field", {{"layers", cfg.field.layers}, {"hidden", cfg.field.hidden}}},
      {"render", {{"resolution", cfg.render.resolution}, {"samples", cfg.render.samples}}},
  };
}

template <typename S>
void LRM<S>::define_params(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ViTEncoder<S>::define_params(store, cfg.encoder, rng);
  TriplaneDecoder<S>::define_params(store, cfg.decoder, cfg.encoder.d_e, rng);
  NerfMlp<S>::define_params(store, cfg.field, rng);
}

template <typename S>
LRM<S> LRM<S>::bind(const BoundParams<S>& p, const ModelConfig& cfg) {
  LRM<S> model;
  model.cfg = cfg;
  model.encoder = ViTEncoder<S>::bind(p, cfg.encoder);
  model.decoder = TriplaneDecoder<S>::bind(p, cfg.decoder);
  model.nerf = NerfMlp<S>::bind(p, cfg.field);
  return model;
}

template <typename S>
Triplane<S> LRM<S>::reconstruct(const Tensor<S>& image,
                                const std::array<float, 20>& feature) const {
  const Tensor<S> tokens = encoder.encode(image);
  const Tensor<S> c_tilde = decoder.embed_camera(feature);
  return decoder.decode(tokens, c_tilde);
}

template struct LRM<float>;
template struct LRM<double>;

LoadedCheckpoint load_model_checkpoint(const std::string& dir) {
  LoadedCheckpoint lc;
  lc.extra = read_checkpoint_extra(dir);
  LRM_REQUIRE(lc.extra.contains("model"), "checkpoint at ", dir, " carries no model config");
  lc.cfg = model_config_from_json(lc.extra.at("model"));
  Rng rng(0);  // values are overwritten by the checkpoint
  LRM<float>::define_params(lc.store, lc.cfg, rng);
  load_checkpoint(dir, lc.store);
  return lc;
}

}  // namespace lrm
