#pragma once

#include "lrm/image.hpp"
#include "lrm/nn.hpp"

namespace lrm {

struct EncoderConfig {
  int image_size = 64;
  int patch_size = 8;
  int d_e = 96;
  int layers = 3;
  int heads = 4;

  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  void validate() const;
};

// Bilinear upsample of the learned patch-position grid; the [CLS] positional
// entry is kept separate and passes through unchanged.
template <typename S>
Tensor<S> upsample_positional_embedding(const Tensor<S>& pe, int64_t new_g);

template <typename S>
struct EncoderBlock {
  LayerNormP<S> ln1, ln2;
  MultiHeadAttention<S> attn;
  GeluMlp<S> mlp;
};

// Pre-LN ViT trained from scratch. encode() returns [CLS] + patch tokens,
// [(n+1), d_e], after a final LayerNorm.
template <typename S>
struct ViTEncoder {
  EncoderConfig cfg;
  Linear<S> patch_embed;
  Tensor<S> pos_grid;   // [g, g, d_e]
  Tensor<S> pos_cls;    // [1, d_e]
  Tensor<S> cls_token;  // [1, d_e]
  std::vector<EncoderBlock<S>> blocks;
  LayerNormP<S> final_ln;

  static void define_params(ParamStore& store, const EncoderConfig& cfg, Rng& rng);
  static ViTEncoder bind(const BoundParams<S>& p, const EncoderConfig& cfg);

  // image: [3, H, W] with H = W = cfg.image_size, values in [0,1].
  Tensor<S> encode(const Tensor<S>& image) const;
};

template <typename S>
Tensor<S> image_to_tensor(const ImageF& img);

}  // namespace lrm
