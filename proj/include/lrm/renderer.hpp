#pragma once

#include <functional>

#include "lrm/camera.hpp"
#include "lrm/field.hpp"
#include "lrm/image.hpp"

namespace lrm {

// Effective termination: the last sample of a non-degenerate ray absorbs all
// remaining transmittance once sigma > 0.
constexpr double kFarCap = 1e10;

// stratified: one uniform draw per bin from a per-pixel stream derived as
// Rng::derive(seed, pixel), so results do not depend on ray order.
// midpoint: deterministic bin centers (inference).
enum class SampleMode { stratified, midpoint };

// Samples for the subset of rays that hit the [-1,1]^3 box, spp per ray,
// ray-major. Degenerate rays (t_near == t_far) carry all-zero deltas.
template <typename S>
struct RaySamples {
  int width = 0, height = 0, spp = 0;
  std::vector<int64_t> pixel_index;  // per hit ray
  std::vector<S> t;                  // [rays*spp], nondecreasing per ray
  std::vector<S> delta;              // [rays*spp], last = kFarCap unless degenerate
  std::vector<S> positions;          // [rays*spp*3]
  double t_far_max = 0;              // over hit rays; depth-map normalizer

  int64_t n_rays() const { return static_cast<int64_t>(pixel_index.size()); }
  int64_t n_samples() const { return n_rays() * spp; }
};

template <typename S>
RaySamples<S> sample_rays(const RayBatch& rays, int spp, SampleMode mode, uint64_t seed);

template <typename S>
Tensor<S> positions_tensor(const RaySamples<S>& rs);

// Volume rendering integral per ray: w_i = T_i (1 - exp(-sigma_i delta_i)),
// T_i = exp(-sum_{j<i} sigma_j delta_j). Output row per ray:
// [rgb + (1-O)*white (3), opacity O, depth sum(w t)/max(O,1e-6)].
// Differentiable w.r.t. rgb and sigma; negative sigma is a contract error.
template <typename S>
Tensor<S> composite_rays(const RaySamples<S>& rs, const Tensor<S>& rgb, const Tensor<S>& sigma);

// Any density/color field: positions [N,3] -> FieldSamples. The triplane
// path and analytic test fields share the rendering code through this hook.
template <typename S>
using FieldFn = std::function<FieldSamples<S>(const Tensor<S>& positions)>;

template <typename S>
FieldFn<S> triplane_field(const Triplane<S>& tri, const NerfMlp<S>& nerf);

// Wraps plain per-point functions (no gradient) as a FieldFn.
template <typename S>
FieldFn<S> analytic_field(
    std::function<void(S x, S y, S z, S rgb[3], S& sigma)> fn);

template <typename S>
struct RenderResult {
  int width = 0, height = 0;
  Tensor<S> rgb;      // [W*H, 3], row-major pixels; misses are white
  Tensor<S> opacity;  // [W*H, 1]
  Tensor<S> depth;    // [W*H, 1]
  double depth_scale = 1;  // max t_far over hit rays (1 if none)
};

template <typename S>
RenderResult<S> render_field(const FieldFn<S>& field, const CameraExtrinsic& e,
                             const CameraIntrinsic& k, int width, int height, int spp,
                             SampleMode mode, uint64_t seed);

// [W*H, C] row-major pixel tensor -> ImageF(C, H, W).
template <typename S>
ImageF tensor_to_image(const Tensor<S>& t, int width, int height);

}  // namespace lrm
