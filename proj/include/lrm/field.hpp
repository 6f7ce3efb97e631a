#pragma once

#include "lrm/nn.hpp"

namespace lrm {

struct FieldConfig {
  int d_t = 16;      // triplane channel count (must match DecoderConfig::d_t)
  int layers = 4;    // linear layers in MLP^nerf (paper 10)
  int hidden = 32;   // hidden width (paper 64)
};

// Three axis-aligned feature planes, each [R, R, d_t].
template <typename S>
struct Triplane {
  Tensor<S> xy, yz, xz;
  int64_t resolution() const { return xy.dim(0); }
  int64_t channels() const { return xy.dim(2); }
};

// Per point (x,y,z): bilinear samples of T_XY at (x,y), T_YZ at (y,z),
// T_XZ at (x,z), concatenated in that order -> [N, 3*d_t].
// u indexes plane width, v plane height; out-of-box points clamp.
template <typename S>
Tensor<S> query_points(const Triplane<S>& tri, const Tensor<S>& points);

template <typename S>
struct FieldSamples {
  Tensor<S> rgb;    // [N, 3], sigmoid-bounded
  Tensor<S> sigma;  // [N, 1], softplus-bounded
};

// MLP^nerf: `layers` linear layers with ReLU between; last layer outputs 4
// channels split into sigmoid rgb and softplus sigma.
template <typename S>
struct NerfMlp {
  std::vector<Linear<S>> layers;

  static void define_params(ParamStore& store, const FieldConfig& cfg, Rng& rng);
  static NerfMlp bind(const BoundParams<S>& p, const FieldConfig& cfg);

  FieldSamples<S> operator()(const Tensor<S>& features) const;
};

}  // namespace lrm
