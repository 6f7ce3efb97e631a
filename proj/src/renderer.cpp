#include "lrm/renderer.hpp"

#include <algorithm>
#include <cmath>

namespace lrm {

template <typename S>
RaySamples<S> sample_rays(const RayBatch& rays, int spp, SampleMode mode, uint64_t seed) {
  LRM_REQUIRE(spp >= 1, "samples per ray must be >= 1, got ", spp);
  RaySamples<S> rs;
  rs.width = rays.width;
  rs.height = rays.height;
  rs.spp = spp;
  const size_t n_pixels = rays.rays.size();
  for (size_t p = 0; p < n_pixels; ++p) {
    const Ray& ray = rays.rays[p];
    if (!ray.hit) continue;
    rs.pixel_index.push_back(static_cast<int64_t>(p));
    rs.t_far_max = std::max(rs.t_far_max, ray.t_far);
    const double t0 = ray.t_near, t1 = ray.t_far;
    const bool degenerate = !(t1 > t0);
    Rng prng = Rng::derive(seed, static_cast<uint64_t>(p));
    const size_t base = rs.t.size();
    for (int i = 0; i < spp; ++i) {
      const double u = (mode == SampleMode::stratified) ? prng.uniform() : 0.5;
      const double tt = degenerate ? t0 : t0 + (i + u) * (t1 - t0) / spp;
      rs.t.push_back(static_cast<S>(tt));
      const Vec3 pos = ray.origin + ray.dir * tt;
      rs.positions.push_back(static_cast<S>(pos.x));
      rs.positions.push_back(static_cast<S>(pos.y));
      rs.positions.push_back(static_cast<S>(pos.z));
    }
    for (int i = 0; i + 1 < spp; ++i)
      rs.delta.push_back(std::max(S(0), rs.t[base + i + 1] - rs.t[base + i]));
    rs.delta.push_back(degenerate ? S(0) : static_cast<S>(kFarCap));
  }
  return rs;
}

template <typename S>
Tensor<S> positions_tensor(const RaySamples<S>& rs) {
  return Tensor<S>::from_data({rs.n_samples(), 3}, rs.positions);
}

template <typename S>
Tensor<S> composite_rays(const RaySamples<S>& rs, const Tensor<S>& rgb, const Tensor<S>& sigma) {
  const int64_t n = rs.n_samples();
  const int64_t n_rays = rs.n_rays();
  const int spp = rs.spp;
  LRM_REQUIRE(rgb.ndim() == 2 && rgb.dim(0) == n && rgb.dim(1) == 3,
              "composite: rgb must be [", n, ",3], got ", shape_str(rgb.shape()));
  LRM_REQUIRE(sigma.ndim() == 2 && sigma.dim(0) == n && sigma.dim(1) == 1,
              "composite: sigma must be [", n, ",1], got ", shape_str(sigma.shape()));
  constexpr S kEps = S(1e-6);

  const std::vector<S>& sv = sigma.value();
  const std::vector<S>& uv = rgb.value();
  for (int64_t i = 0; i < n; ++i) {
    LRM_REQUIRE(sv[static_cast<size_t>(i)] >= S(0), "composite: negative sigma at sample ", i);
    LRM_REQUIRE(rs.delta[static_cast<size_t>(i)] >= S(0), "composite: negative delta at sample ", i);
  }

  std::vector<S> out(static_cast<size_t>(n_rays) * 5);
  for (int64_t r = 0; r < n_rays; ++r) {
    S transmit = S(1), opa = S(0), num_d = S(0);
    S c[3] = {S(0), S(0), S(0)};
    for (int i = 0; i < spp; ++i) {
      const size_t k = static_cast<size_t>(r * spp + i);
      const S a = sv[k] * rs.delta[k];
      const S alpha = static_cast<S>(-std::expm1(-static_cast<double>(a)));
      const S w = transmit * alpha;
      for (int ch = 0; ch < 3; ++ch) c[ch] += w * uv[k * 3 + ch];
      opa += w;
      num_d += w * rs.t[k];
      transmit *= std::exp(-a);
    }
    S* row = &out[static_cast<size_t>(r) * 5];
    for (int ch = 0; ch < 3; ++ch) row[ch] = c[ch] + (S(1) - opa);
    row[3] = opa;
    row[4] = num_d / std::max(opa, kEps);
  }

  auto backward = [rs_t = rs.t, rs_delta = rs.delta, spp, n_rays](detail::Node<S>& node) {
    auto& rgb_node = *node.parents[0];
    auto& sigma_node = *node.parents[1];
    const std::vector<S>& su = sigma_node.value;
    const std::vector<S>& uu = rgb_node.value;
    std::vector<S>* grgb = rgb_node.requires_grad ? &rgb_node.grad_buffer() : nullptr;
    std::vector<S>* gsigma = sigma_node.requires_grad ? &sigma_node.grad_buffer() : nullptr;
    constexpr S eps = S(1e-6);

    std::vector<S> trans(static_cast<size_t>(spp) + 1);
    std::vector<S> wgt(static_cast<size_t>(spp));
    for (int64_t r = 0; r < n_rays; ++r) {
      // recompute weights and transmittances for this ray
      trans[0] = S(1);
      S opa = S(0), num_d = S(0);
      for (int i = 0; i < spp; ++i) {
        const size_t k = static_cast<size_t>(r * spp + i);
        const S a = su[k] * rs_delta[k];
        trans[static_cast<size_t>(i) + 1] = trans[static_cast<size_t>(i)] * std::exp(-a);
        wgt[static_cast<size_t>(i)] =
            trans[static_cast<size_t>(i)] * static_cast<S>(-std::expm1(-static_cast<double>(a)));
        opa += wgt[static_cast<size_t>(i)];
        num_d += wgt[static_cast<size_t>(i)] * rs_t[k];
      }
      const S denom = std::max(opa, eps);
      const S depth = num_d / denom;
      const S* g = &node.grad[static_cast<size_t>(r) * 5];
      // dL/dw_i, then a suffix scan for dL/da_i (a_i = sigma_i * delta_i):
      // dL/da_i = gw_i T_{i+1} - sum_{j>i} gw_j w_j.
      S suffix = S(0);
      for (int i = spp - 1; i >= 0; --i) {
        const size_t k = static_cast<size_t>(r * spp + i);
        S gw = g[3];
        for (int ch = 0; ch < 3; ++ch) gw += g[ch] * (uu[k * 3 + ch] - S(1));
        gw += g[4] * (rs_t[k] - (opa > eps ? depth : S(0))) / denom;
        if (gsigma) {
          const S da = gw * trans[static_cast<size_t>(i) + 1] - suffix;
          (*gsigma)[k] += da * rs_delta[k];
        }
        suffix += gw * wgt[static_cast<size_t>(i)];
        if (grgb)
          for (int ch = 0; ch < 3; ++ch) (*grgb)[k * 3 + ch] += g[ch] * wgt[static_cast<size_t>(i)];
      }
    }
  };

  return make_op<S>("composite_rays", {n_rays, 5}, std::move(out), {rgb, sigma},
                    std::move(backward));
}

template <typename S>
FieldFn<S> triplane_field(const Triplane<S>& tri, const NerfMlp<S>& nerf) {
  return [tri, nerf](const Tensor<S>& positions) { return nerf(query_points(tri, positions)); };
}

template <typename S>
FieldFn<S> analytic_field(std::function<void(S, S, S, S*, S&)> fn) {
  return [fn](const Tensor<S>& positions) {
    const int64_t n = positions.dim(0);
    const std::vector<S>& p = positions.value();
    std::vector<S> rgb(static_cast<size_t>(n) * 3), sigma(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      const size_t k = static_cast<size_t>(i);
      fn(p[k * 3], p[k * 3 + 1], p[k * 3 + 2], &rgb[k * 3], sigma[k]);
    }
    FieldSamples<S> fs;
    fs.rgb = Tensor<S>::from_data({n, 3}, std::move(rgb));
    fs.sigma = Tensor<S>::from_data({n, 1}, std::move(sigma));
    return fs;
  };
}

template <typename S>
RenderResult<S> render_field(const FieldFn<S>& field, const CameraExtrinsic& e,
                             const CameraIntrinsic& k, int width, int height, int spp,
                             SampleMode mode, uint64_t seed) {
  const RayBatch rays = generate_rays(e, k, width, height);
  const RaySamples<S> rs = sample_rays<S>(rays, spp, mode, seed);
  RenderResult<S> res;
  res.width = width;
  res.height = height;
  const int64_t pixels = static_cast<int64_t>(width) * height;
  if (rs.n_rays() == 0) {
    res.rgb = Tensor<S>::full({pixels, 3}, S(1));
    res.opacity = Tensor<S>::zeros({pixels, 1});
    res.depth = Tensor<S>::zeros({pixels, 1});
    return res;
  }
  res.depth_scale = rs.t_far_max;
  const FieldSamples<S> fs = field(positions_tensor(rs));
  LRM_REQUIRE(fs.rgb.defined() && fs.sigma.defined(), "field returned undefined tensors");
  const Tensor<S> packed = composite_rays(rs, fs.rgb, fs.sigma);
  res.rgb = scatter_rows(select_cols(packed, {0, 1, 2}), rs.pixel_index, pixels, S(1));
  res.opacity = scatter_rows(select_cols(packed, {3}), rs.pixel_index, pixels, S(0));
  res.depth = scatter_rows(select_cols(packed, {4}), rs.pixel_index, pixels, S(0));
  return res;
}

template <typename S>
ImageF tensor_to_image(const Tensor<S>& t, int width, int height) {
  LRM_REQUIRE(t.ndim() == 2 && t.dim(0) == static_cast<int64_t>(width) * height,
              "tensor_to_image: expected [", static_cast<int64_t>(width) * height,
              ",C], got ", shape_str(t.shape()));
  const int chans = static_cast<int>(t.dim(1));
  ImageF img(chans, height, width);
  const std::vector<S>& v = t.value();
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < chans; ++c)
        img.at(c, y, x) = static_cast<float>(v[(static_cast<size_t>(y) * width + x) * chans + c]);
  return img;
}

#define LRM_RENDER_INSTANTIATE(S)                                                            \
  template RaySamples<S> sample_rays<S>(const RayBatch&, int, SampleMode, uint64_t);         \
  template Tensor<S> positions_tensor<S>(const RaySamples<S>&);                              \
  template Tensor<S> composite_rays<S>(const RaySamples<S>&, const Tensor<S>&,               \
                                       const Tensor<S>&);                                    \
  template FieldFn<S> triplane_field<S>(const Triplane<S>&, const NerfMlp<S>&);              \
  template FieldFn<S> analytic_field<S>(std::function<void(S, S, S, S*, S&)>);               \
  template RenderResult<S> render_field<S>(const FieldFn<S>&, const CameraExtrinsic&,        \
                                           const CameraIntrinsic&, int, int, int,            \
                                           SampleMode, uint64_t);                            \
  template ImageF tensor_to_image<S>(const Tensor<S>&, int, int);

LRM_RENDER_INSTANTIATE(float)
LRM_RENDER_INSTANTIATE(double)
#undef LRM_RENDER_INSTANTIATE

}  // namespace lrm
