#include "lrm/field.hpp"

namespace lrm {

template <typename S>
Tensor<S> query_points(const Triplane<S>& tri, const Tensor<S>& points) {
  LRM_REQUIRE(points.ndim() == 2 && points.dim(1) == 3,
              "query_points expects [N,3] points, got ", shape_str(points.shape()));
  LRM_REQUIRE(tri.xy.ndim() == 3 && tri.yz.ndim() == 3 && tri.xz.ndim() == 3,
              "triplane tensors must be rank 3");
  const Tensor<S> f_xy = bilinear_grid_sample(tri.xy, select_cols(points, {0, 1}));
  const Tensor<S> f_yz = bilinear_grid_sample(tri.yz, select_cols(points, {1, 2}));
  const Tensor<S> f_xz = bilinear_grid_sample(tri.xz, select_cols(points, {0, 2}));
  return concat_cols<S>({f_xy, f_yz, f_xz});
}

template <typename S>
void NerfMlp<S>::define_params(ParamStore& store, const FieldConfig& cfg, Rng& rng) {
  LRM_REQUIRE(cfg.layers >= 2, "nerf mlp needs at least 2 layers, got ", cfg.layers);
  const int64_t in0 = 3 * static_cast<int64_t>(cfg.d_t);
  for (int i = 0; i < cfg.layers; ++i) {
    const int64_t in = (i == 0) ? in0 : cfg.hidden;
    const int64_t out = (i == cfg.layers - 1) ? 4 : cfg.hidden;
    define_linear(store, "nerf_mlp.layers." + std::to_string(i), in, out, rng);
  }
}

template <typename S>
NerfMlp<S> NerfMlp<S>::bind(const BoundParams<S>& p, const FieldConfig& cfg) {
  NerfMlp<S> mlp;
  for (int i = 0; i < cfg.layers; ++i) {
    mlp.layers.push_back(bind_linear<S>(p, "nerf_mlp.layers." + std::to_string(i)));
  }
  return mlp;
}

template <typename S>
FieldSamples<S> NerfMlp<S>::operator()(const Tensor<S>& features) const {
  LRM_REQUIRE(!layers.empty(), "nerf mlp is unbound");
  Tensor<S> h = features;
  for (size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = relu(h);
  }
  FieldSamples<S> out;
  out.rgb = sigmoid(select_cols(h, {0, 1, 2}));
  out.sigma = softplus(select_cols(h, {3}));
  return out;
}

template Tensor<float> query_points(const Triplane<float>&, const Tensor<float>&);
template Tensor<double> query_points(const Triplane<double>&, const Tensor<double>&);
template struct NerfMlp<float>;
template struct NerfMlp<double>;

}  // namespace lrm
