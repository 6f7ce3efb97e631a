#include "lrm/encoder.hpp"

namespace lrm {

void define_linear(ParamStore& store, const std::string& prefix, int64_t in, int64_t out,
                   Rng& rng, bool with_bias, float std) {
  store.define_trunc_normal(prefix + ".weight", {in, out}, std, rng);
  if (with_bias) store.define_const(prefix + ".bias", {out}, 0.0f, /*no_decay=*/true);
}

void define_ln(ParamStore& store, const std::string& prefix, int64_t d) {
  store.define_const(prefix + ".weight", {d}, 1.0f, /*no_decay=*/true);
  store.define_const(prefix + ".bias", {d}, 0.0f, /*no_decay=*/true);
}

void define_attention(ParamStore& store, const std::string& prefix, int64_t d_q, int64_t d_kv,
                      Rng& rng) {
  define_linear(store, prefix + ".wq", d_q, d_q, rng, false);
  define_linear(store, prefix + ".wk", d_kv, d_q, rng, false);
  define_linear(store, prefix + ".wv", d_kv, d_q, rng, false);
  define_linear(store, prefix + ".wo", d_q, d_q, rng, false);
}

void EncoderConfig::validate() const {
  LRM_REQUIRE(image_size > 0 && patch_size > 0, "encoder sizes must be positive");
  LRM_REQUIRE(image_size % patch_size == 0, "image_size ", image_size,
              " not divisible by patch_size ", patch_size);
  LRM_REQUIRE(heads > 0 && d_e % heads == 0, "d_E ", d_e, " not divisible by heads ", heads);
  LRM_REQUIRE(layers >= 1, "encoder needs at least 1 layer");
}

template <typename S>
Tensor<S> upsample_positional_embedding(const Tensor<S>& pe, int64_t new_g) {
  LRM_REQUIRE(pe.ndim() == 3 && pe.dim(0) == pe.dim(1), "positional grid must be [g,g,d]");
  LRM_REQUIRE(new_g >= 1, "new grid side must be >= 1, got ", new_g);
  const int64_t g = pe.dim(0);
  const int64_t d = pe.dim(2);
  if (new_g == g) return pe;
  // Align-corners sample grid; new_g == 1 samples the center.
  std::vector<S> uv(static_cast<size_t>(new_g * new_g * 2));
  for (int64_t i = 0; i < new_g; ++i) {
    for (int64_t j = 0; j < new_g; ++j) {
      const S u = (new_g == 1) ? S(0) : S(-1) + S(2) * S(j) / S(new_g - 1);
      const S v = (new_g == 1) ? S(0) : S(-1) + S(2) * S(i) / S(new_g - 1);
      uv[static_cast<size_t>((i * new_g + j) * 2) + 0] = u;
      uv[static_cast<size_t>((i * new_g + j) * 2) + 1] = v;
    }
  }
  const Tensor<S> grid_uv = Tensor<S>::from_data({new_g * new_g, 2}, std::move(uv));
  return reshape(bilinear_grid_sample(pe, grid_uv), {new_g, new_g, d});
}

template <typename S>
void ViTEncoder<S>::define_params(ParamStore& store, const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const int64_t d = cfg.d_e;
  const int64_t g = cfg.grid();
  const int64_t patch_dim = 3LL * cfg.patch_size * cfg.patch_size;
  define_linear(store, "encoder.patch_embed", patch_dim, d, rng);
  store.define_trunc_normal("encoder.pos_grid", {g, g, d}, 0.02f, rng);
  store.define_trunc_normal("encoder.pos_cls", {1, d}, 0.02f, rng);
  store.define_trunc_normal("encoder.cls_token", {1, d}, 0.02f, rng);
  for (int i = 0; i < cfg.layers; ++i) {
    const std::string p = "encoder.layers." + std::to_string(i);
    define_ln(store, p + ".ln1", d);
    define_attention(store, p + ".attn", d, d, rng);
    define_ln(store, p + ".ln2", d);
    define_linear(store, p + ".mlp.fc1", d, 4 * d, rng);
    define_linear(store, p + ".mlp.fc2", 4 * d, d, rng);
  }
  define_ln(store, "encoder.final_ln", d);
}

template <typename S>
ViTEncoder<S> ViTEncoder<S>::bind(const BoundParams<S>& p, const EncoderConfig& cfg) {
  cfg.validate();
  ViTEncoder<S> enc;
  enc.cfg = cfg;
  enc.patch_embed = bind_linear(p, "encoder.patch_embed");
  enc.pos_grid = p.at("encoder.pos_grid");
  enc.pos_cls = p.at("encoder.pos_cls");
  enc.cls_token = p.at("encoder.cls_token");
  for (int i = 0; i < cfg.layers; ++i) {
    const std::string pre = "encoder.layers." + std::to_string(i);
    EncoderBlock<S> blk;
    blk.ln1 = bind_ln(p, pre + ".ln1");
    blk.attn = bind_attention(p, pre + ".attn", cfg.heads);
    blk.ln2 = bind_ln(p, pre + ".ln2");
    blk.mlp = bind_gelu_mlp(p, pre + ".mlp");
    enc.blocks.push_back(std::move(blk));
  }
  enc.final_ln = bind_ln(p, "encoder.final_ln");
  return enc;
}

template <typename S>
Tensor<S> ViTEncoder<S>::encode(const Tensor<S>& image) const {
  LRM_REQUIRE(image.ndim() == 3 && image.dim(0) == 3, "encode expects [3,H,W] image, got ",
              shape_str(image.shape()));
  LRM_REQUIRE(image.dim(1) == image.dim(2), "encode expects a square image");
  const int64_t h = image.dim(1);
  LRM_REQUIRE(h % cfg.patch_size == 0, "image side ", h, " not divisible by patch size ",
              cfg.patch_size);
  const int64_t g = h / cfg.patch_size;
  const int64_t n = g * g;
  const int64_t d = cfg.d_e;

  Tensor<S> tok = patch_embed(patchify(image, cfg.patch_size));
  const Tensor<S> pos = reshape(upsample_positional_embedding(pos_grid, g), {n, d});
  tok = add(tok, pos);
  Tensor<S> x = concat_rows<S>({add(cls_token, pos_cls), tok});
  for (const EncoderBlock<S>& blk : blocks) {
    const Tensor<S> a = blk.ln1(x);
    x = add(x, blk.attn(a, a));
    x = add(x, blk.mlp(blk.ln2(x)));
  }
  return final_ln(x);
}

template <typename S>
Tensor<S> image_to_tensor(const ImageF& img) {
  std::vector<S> data(img.data.size());
  for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<S>(img.data[i]);
  return Tensor<S>::from_data({img.channels, img.height, img.width}, std::move(data));
}

template Tensor<float> upsample_positional_embedding(const Tensor<float>&, int64_t);
template Tensor<double> upsample_positional_embedding(const Tensor<double>&, int64_t);
template struct ViTEncoder<float>;
template struct ViTEncoder<double>;
template Tensor<float> image_to_tensor<float>(const ImageF&);
template Tensor<double> image_to_tensor<double>(const ImageF&);

}  // namespace lrm
