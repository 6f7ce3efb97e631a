#pragma once

#include "lrm/tensor.hpp"

namespace lrm {

// Frozen random-feature stack standing in for LPIPS: three stride-2 3x3
// convolutions (3->8->16->32) with GELU, weights drawn once from a fixed
// seed and never trained. Channel-unit-normalized stage features feed a
// mean squared difference, averaged over stages.
template <typename S>
struct PerceptualNet {
  std::vector<Tensor<S>> kernels;  // [Cout,Cin,3,3] each
  std::vector<Tensor<S>> biases;   // zero, kept for the conv interface

  static PerceptualNet create(uint64_t seed);

  // x: [W*H, 3] row-major pixels -> per-stage normalized features [Hs*Ws, Cs].
  std::vector<Tensor<S>> features(const Tensor<S>& x, int width, int height) const;
};

// Published seed for the shipped surrogate weights; tests and training share it.
constexpr uint64_t kPerceptualSeed = 1337;

// Mean over pixels and channels of squared difference. Both [N, C].
template <typename S>
Tensor<S> mse_loss(const Tensor<S>& pred, const Tensor<S>& gt);

template <typename S>
Tensor<S> perceptual_loss(const Tensor<S>& pred, const Tensor<S>& gt, int width, int height,
                          const PerceptualNet<S>& net);

template <typename S>
struct LossReport {
  Tensor<S> total;                     // (1/V) sum_v (mse_v + lambda * perceptual_v)
  S mse = S(0), perceptual = S(0);     // means over views, for logging
  std::vector<std::pair<S, S>> per_view;
};

// Eq. 6. pred/gt images as [W*H, 3] tensors; net may be null when lambda == 0.
template <typename S>
LossReport<S> recon_loss(const std::vector<Tensor<S>>& preds, const std::vector<Tensor<S>>& gts,
                         int width, int height, S lambda, const PerceptualNet<S>* net);

}  // namespace lrm
