#pragma once

#include "lrm/camera.hpp"
#include "lrm/field.hpp"

namespace lrm {

struct DecoderConfig {
  int d_d = 64;     // decoder hidden width (paper 1024)
  int layers = 2;   // decoder layers (paper 16)
  int heads = 4;
  int tri_low = 8;  // pre-deconv plane side (paper 32)
  int tri_res = 16; // final plane side (paper 64)
  int d_t = 16;     // triplane channels (paper 80)

  int64_t tokens() const { return 3LL * tri_low * tri_low; }
  void validate() const;
};

// ModLN(f) = LN(f) * (1 + gamma) + beta where (gamma, beta) = MLP^mod(c_tilde),
// broadcast over tokens. MLP^mod: hidden d_D with GELU, output 2*d_D split in
// half; its final layer starts zero so training begins at plain LayerNorm.
template <typename S>
struct ModLN {
  LayerNormP<S> ln;
  GeluMlp<S> mlp;
  Tensor<S> operator()(const Tensor<S>& f, const Tensor<S>& c_tilde) const;
};

// One decoder layer, Eqs. 3-5: camera-modulated cross-attention to the image
// tokens, then self-attention, then the transformer MLP, each residual.
template <typename S>
struct DecoderLayer {
  ModLN<S> mod_cross, mod_self, mod_ffn;
  MultiHeadAttention<S> cross, self_attn;
  GeluMlp<S> ffn;
  Tensor<S> operator()(const Tensor<S>& f, const Tensor<S>& image_tokens,
                       const Tensor<S>& c_tilde) const;
};

template <typename S>
struct TriplaneDecoder {
  DecoderConfig cfg;
  GeluMlp<S> camera_mlp;
  Tensor<S> f_init;  // [3*tri_low^2, d_D], plane-major: XY rows, then YZ, then XZ
  std::vector<DecoderLayer<S>> layers;
  LayerNormP<S> final_ln;
  Linear<S> plane_fc_xy, plane_fc_yz, plane_fc_xz;
  Tensor<S> deconv_kernel;  // [d_D, d_T, 2, 2], shared across planes

  // d_e is the image-token width the cross-attention keys/values project from.
  static void define_params(ParamStore& store, const DecoderConfig& cfg, int64_t d_e, Rng& rng);
  static TriplaneDecoder bind(const BoundParams<S>& p, const DecoderConfig& cfg);

  // 20-dim camera feature -> [1, d_D] camera embedding.
  Tensor<S> embed_camera(const std::array<float, 20>& feature) const;

  Triplane<S> decode(const Tensor<S>& image_tokens, const Tensor<S>& c_tilde) const;
};

}  // namespace lrm
