#include "lrm/metrics.hpp"

#include <cmath>

namespace lrm {

namespace {

void require_same_shape(const ImageF& a, const ImageF& b, const char* what) {
  LRM_REQUIRE(a.channels == b.channels && a.height == b.height && a.width == b.width,
              what, ": image shapes differ (", a.channels, "x", a.height, "x", a.width, " vs ",
              b.channels, "x", b.height, "x", b.width, ")");
}

}  // namespace

double psnr(const ImageF& a, const ImageF& b) {
  require_same_shape(a, b, "psnr");
  double mse = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse < 1e-10) return 99.0;
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const ImageF& a, const ImageF& b) {
  require_same_shape(a, b, "ssim");
  constexpr int kWin = 11;
  LRM_REQUIRE(a.height >= kWin && a.width >= kWin, "ssim needs at least 11x11 images, got ",
              a.height, "x", a.width);
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;

  double g[kWin];
  double gsum = 0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - (kWin - 1) / 2.0;
    g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    gsum += g[i];
  }
  for (double& v : g) v /= gsum;

  double total = 0;
  int64_t count = 0;
  for (int c = 0; c < a.channels; ++c) {
    for (int y = 0; y + kWin <= a.height; ++y) {
      for (int x = 0; x + kWin <= a.width; ++x) {
        double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
        for (int dy = 0; dy < kWin; ++dy)
          for (int dx = 0; dx < kWin; ++dx) {
            const double w = g[dy] * g[dx];
            const double va = a.at(c, y + dy, x + dx);
            const double vb = b.at(c, y + dy, x + dx);
            mu_a += w * va;
            mu_b += w * vb;
            aa += w * va * va;
            bb += w * vb * vb;
            ab += w * va * vb;
          }
        const double var_a = aa - mu_a * mu_a;
        const double var_b = bb - mu_b * mu_b;
        const double cov = ab - mu_a * mu_b;
        const double s = ((2 * mu_a * mu_b + kC1) * (2 * cov + kC2)) /
                         ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
        total += s;
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace lrm
