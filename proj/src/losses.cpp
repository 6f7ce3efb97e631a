#include "lrm/losses.hpp"

#include "lrm/rng.hpp"

namespace lrm {

template <typename S>
PerceptualNet<S> PerceptualNet<S>::create(uint64_t seed) {
  Rng rng(seed);
  PerceptualNet<S> net;
  const int chans[4] = {3, 8, 16, 32};
  for (int l = 0; l < 3; ++l) {
    const int64_t cin = chans[l], cout = chans[l + 1];
    const double std = 1.0 / std::sqrt(static_cast<double>(cin) * 9);
    std::vector<S> k(static_cast<size_t>(cout * cin * 9));
    for (S& v : k) v = static_cast<S>(rng.normal() * std);
    net.kernels.push_back(Tensor<S>::from_data({cout, cin, 3, 3}, std::move(k)));
    net.biases.push_back(Tensor<S>::zeros({cout}));
  }
  return net;
}

template <typename S>
std::vector<Tensor<S>> PerceptualNet<S>::features(const Tensor<S>& x, int width,
                                                  int height) const {
  LRM_REQUIRE(x.ndim() == 2 && x.dim(1) == 3 && x.dim(0) == static_cast<int64_t>(width) * height,
              "perceptual features expect [W*H,3] pixels, got ", shape_str(x.shape()));
  LRM_REQUIRE(width >= 8 && height >= 8, "perceptual net needs at least 8x8 input, got ",
              width, "x", height);
  // [W*H,3] -> [3,H,W]
  Tensor<S> fmap = reshape(transpose2d(x), {3, height, width});
  int h = height, w = width;
  std::vector<Tensor<S>> out;
  for (size_t l = 0; l < kernels.size(); ++l) {
    fmap = gelu(conv2d(fmap, kernels[l], biases[l], /*stride=*/2, /*pad=*/1));
    h = (h + 1) / 2;
    w = (w + 1) / 2;
    const int64_t c = fmap.dim(0);
    const Tensor<S> rows = transpose2d(reshape(fmap, {c, static_cast<int64_t>(h) * w}));
    out.push_back(row_l2_normalize(rows, S(1e-10)));
  }
  return out;
}

template <typename S>
Tensor<S> mse_loss(const Tensor<S>& pred, const Tensor<S>& gt) {
  LRM_REQUIRE(pred.shape() == gt.shape(), "mse_loss shape mismatch: ", shape_str(pred.shape()),
              " vs ", shape_str(gt.shape()));
  return mean(square(sub(pred, gt)));
}

template <typename S>
Tensor<S> perceptual_loss(const Tensor<S>& pred, const Tensor<S>& gt, int width, int height,
                          const PerceptualNet<S>& net) {
  const std::vector<Tensor<S>> fa = net.features(pred, width, height);
  const std::vector<Tensor<S>> fb = net.features(gt, width, height);
  Tensor<S> acc;
  for (size_t l = 0; l < fa.size(); ++l) {
    const Tensor<S> stage = mean(square(sub(fa[l], fb[l])));
    acc = acc.defined() ? add(acc, stage) : stage;
  }
  return scale(acc, S(1) / static_cast<S>(fa.size()));
}

template <typename S>
LossReport<S> recon_loss(const std::vector<Tensor<S>>& preds, const std::vector<Tensor<S>>& gts,
                         int width, int height, S lambda, const PerceptualNet<S>* net) {
  LRM_REQUIRE(!preds.empty(), "recon_loss needs at least one view");
  LRM_REQUIRE(preds.size() == gts.size(), "recon_loss view count mismatch: ", preds.size(),
              " vs ", gts.size());
  LRM_REQUIRE(lambda == S(0) || net != nullptr, "recon_loss needs a perceptual net when lambda > 0");
  LossReport<S> report;
  Tensor<S> total;
  for (size_t v = 0; v < preds.size(); ++v) {
    const Tensor<S> m = mse_loss(preds[v], gts[v]);
    Tensor<S> view_term = m;
    S p_val = S(0);
    if (lambda != S(0)) {
      const Tensor<S> p = perceptual_loss(preds[v], gts[v], width, height, *net);
      p_val = p.item();
      view_term = add(view_term, scale(p, lambda));
    }
    report.per_view.emplace_back(m.item(), p_val);
    report.mse += m.item();
    report.perceptual += p_val;
    total = total.defined() ? add(total, view_term) : view_term;
  }
  const S inv_v = S(1) / static_cast<S>(preds.size());
  report.total = scale(total, inv_v);
  report.mse *= inv_v;
  report.perceptual *= inv_v;
  return report;
}

#define LRM_LOSS_INSTANTIATE(S)                                                              \
  template struct PerceptualNet<S>;                                                         \
  template Tensor<S> mse_loss<S>(const Tensor<S>&, const Tensor<S>&);                       \
  template Tensor<S> perceptual_loss<S>(const Tensor<S>&, const Tensor<S>&, int, int,       \
                                        const PerceptualNet<S>&);                           \
  template LossReport<S> recon_loss<S>(const std::vector<Tensor<S>>&,                       \
                                       const std::vector<Tensor<S>>&, int, int, S,          \
                                       const PerceptualNet<S>*);

LRM_LOSS_INSTANTIATE(float)
LRM_LOSS_INSTANTIATE(double)
#undef LRM_LOSS_INSTANTIATE

}  // namespace lrm
