#include "lrm/decoder.hpp"

namespace lrm {

void DecoderConfig::validate() const {
  LRM_REQUIRE(d_d > 0 && layers >= 1 && tri_low >= 2 && d_t > 0, "invalid decoder config");
  LRM_REQUIRE(tri_res == 2 * tri_low, "tri_res ", tri_res, " must equal 2*tri_low ", 2 * tri_low);
  LRM_REQUIRE(heads > 0 && d_d % heads == 0, "d_D ", d_d, " not divisible by heads ", heads);
}

template <typename S>
Tensor<S> ModLN<S>::operator()(const Tensor<S>& f, const Tensor<S>& c_tilde) const {
  const int64_t d = f.dim(1);
  const Tensor<S> gb = mlp(c_tilde);  // [1, 2d]
  LRM_REQUIRE(gb.dim(1) == 2 * d, "ModLN width mismatch: f has ", d, ", MLP^mod gives ", gb.dim(1));
  const Tensor<S> gamma = reshape(select_cols(gb, col_range(0, d)), {d});
  const Tensor<S> beta = reshape(select_cols(gb, col_range(d, 2 * d)), {d});
  return add(mul(ln(f), add_scalar(gamma, S(1))), beta);
}

template <typename S>
Tensor<S> DecoderLayer<S>::operator()(const Tensor<S>& f, const Tensor<S>& image_tokens,
                                      const Tensor<S>& c_tilde) const {
  const Tensor<S> f_cross = add(cross(mod_cross(f, c_tilde), image_tokens), f);
  const Tensor<S> m = mod_self(f_cross, c_tilde);
  const Tensor<S> f_self = add(self_attn(m, m), f_cross);
  return add(ffn(mod_ffn(f_self, c_tilde)), f_self);
}

namespace {

void define_modln(ParamStore& store, const std::string& prefix, int64_t d, Rng& rng) {
  define_ln(store, prefix + ".ln", d);
  define_linear(store, prefix + ".mlp.fc1", d, d, rng);
  // Zero final layer: gamma = beta = 0 at init, so ModLN starts as plain LN.
  store.define_const(prefix + ".mlp.fc2.weight", {d, 2 * d}, 0.0f);
  store.define_const(prefix + ".mlp.fc2.bias", {2 * d}, 0.0f, /*no_decay=*/true);
}

template <typename S>
ModLN<S> bind_modln(const BoundParams<S>& p, const std::string& prefix) {
  return {bind_ln(p, prefix + ".ln"), bind_gelu_mlp(p, prefix + ".mlp")};
}

}  // namespace

template <typename S>
void TriplaneDecoder<S>::define_params(ParamStore& store, const DecoderConfig& cfg, int64_t d_e,
                                       Rng& rng) {
  cfg.validate();
  LRM_REQUIRE(d_e > 0, "decoder needs the encoder token width");
  const int64_t d = cfg.d_d;
  define_linear(store, "decoder.camera_mlp.fc1", 20, d, rng);
  define_linear(store, "decoder.camera_mlp.fc2", d, d, rng);
  store.define_trunc_normal("f_init", {cfg.tokens(), d}, 0.02f, rng);
  for (int i = 0; i < cfg.layers; ++i) {
    const std::string pre = "decoder.layers." + std::to_string(i);
    define_modln(store, pre + ".cross.modln", d, rng);
    define_attention(store, pre + ".cross.attn", d, d_e, rng);
    define_modln(store, pre + ".self.modln", d, rng);
    define_attention(store, pre + ".self.attn", d, d, rng);
    define_modln(store, pre + ".ffn.modln", d, rng);
    define_linear(store, pre + ".ffn.fc1", d, 4 * d, rng);
    define_linear(store, pre + ".ffn.fc2", 4 * d, d, rng);
  }
  define_ln(store, "decoder.final_ln", d);
  define_linear(store, "deconv.plane_fc.xy", d, d, rng);
  define_linear(store, "deconv.plane_fc.yz", d, d, rng);
  define_linear(store, "deconv.plane_fc.xz", d, d, rng);
  store.define_trunc_normal("deconv.kernel", {d, cfg.d_t, 2, 2}, 0.02f, rng);
}

template <typename S>
TriplaneDecoder<S> TriplaneDecoder<S>::bind(const BoundParams<S>& p, const DecoderConfig& cfg) {
  cfg.validate();
  TriplaneDecoder<S> dec;
  dec.cfg = cfg;
  dec.camera_mlp = {bind_linear(p, "decoder.camera_mlp.fc1"),
                    bind_linear(p, "decoder.camera_mlp.fc2")};
  dec.f_init = p.at("f_init");
  for (int i = 0; i < cfg.layers; ++i) {
    const std::string pre = "decoder.layers." + std::to_string(i);
    DecoderLayer<S> layer;
    layer.mod_cross = bind_modln(p, pre + ".cross.modln");
    layer.cross = bind_attention(p, pre + ".cross.attn", cfg.heads);
    layer.mod_self = bind_modln(p, pre + ".self.modln");
    layer.self_attn = bind_attention(p, pre + ".self.attn", cfg.heads);
    layer.mod_ffn = bind_modln(p, pre + ".ffn.modln");
    layer.ffn = bind_gelu_mlp(p, pre + ".ffn");
    dec.layers.push_back(std::move(layer));
  }
  dec.final_ln = bind_ln(p, "decoder.final_ln");
  dec.plane_fc_xy = bind_linear(p, "deconv.plane_fc.xy");
  dec.plane_fc_yz = bind_linear(p, "deconv.plane_fc.yz");
  dec.plane_fc_xz = bind_linear(p, "deconv.plane_fc.xz");
  dec.deconv_kernel = p.at("deconv.kernel");
  return dec;
}

template <typename S>
Tensor<S> TriplaneDecoder<S>::embed_camera(const std::array<float, 20>& feature) const {
  std::vector<S> v(20);
  for (int i = 0; i < 20; ++i) v[static_cast<size_t>(i)] = static_cast<S>(feature[static_cast<size_t>(i)]);
  return camera_mlp(Tensor<S>::from_data({1, 20}, std::move(v)));
}

template <typename S>
Triplane<S> TriplaneDecoder<S>::decode(const Tensor<S>& image_tokens,
                                       const Tensor<S>& c_tilde) const {
  LRM_REQUIRE(image_tokens.ndim() == 2, "image tokens must be [n+1, d_E]");
  Tensor<S> f = f_init;
  for (const DecoderLayer<S>& layer : layers) f = layer(f, image_tokens, c_tilde);
  f = final_ln(f);

  const int64_t L = cfg.tri_low;
  const int64_t n = L * L;
  const auto upsample = [&](const Tensor<S>& rows, const Linear<S>& fc) {
    // [L^2, d_D] -> channel-major [d_D, L, L] -> deconv -> [R, R, d_T]
    const Tensor<S> x = reshape(transpose2d(fc(rows)), {cfg.d_d, L, L});
    const Tensor<S> y = transposed_conv2d(x, deconv_kernel, 2);
    const int64_t r = y.dim(1);
    return reshape(transpose2d(reshape(y, {cfg.d_t, r * r})), {r, r, cfg.d_t});
  };
  Triplane<S> tri;
  tri.xy = upsample(slice_rows(f, 0, n), plane_fc_xy);
  tri.yz = upsample(slice_rows(f, n, 2 * n), plane_fc_yz);
  tri.xz = upsample(slice_rows(f, 2 * n, 3 * n), plane_fc_xz);
  return tri;
}

template struct ModLN<float>;
template struct ModLN<double>;
template struct DecoderLayer<float>;
template struct DecoderLayer<double>;
template struct TriplaneDecoder<float>;
template struct TriplaneDecoder<double>;

}  // namespace lrm
