#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "lrm/field.hpp"
#include "lrm/params.hpp"
#include "lrm/rng.hpp"

using namespace lrm;

namespace {

constexpr int kRes = 5;
constexpr int kDt = 4;

Triplane<float> random_triplane(uint64_t seed) {
  Rng rng(seed);
  auto plane = [&] {
    std::vector<float> v(kRes * kRes * kDt);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
    return Tensor<float>::from_data({kRes, kRes, kDt}, std::move(v));
  };
  Triplane<float> tri;
  tri.xy = plane();
  tri.yz = plane();
  tri.xz = plane();
  return tri;
}

// Scalar bilinear lookup with align-corners and border clamp.
float sample_plane(const Tensor<float>& plane, double u, double v, int c) {
  const int R = kRes;
  double gx = (std::clamp(u, -1.0, 1.0) + 1.0) * 0.5 * (R - 1);
  double gy = (std::clamp(v, -1.0, 1.0) + 1.0) * 0.5 * (R - 1);
  int x0 = std::clamp(static_cast<int>(std::floor(gx)), 0, R - 2);
  int y0 = std::clamp(static_cast<int>(std::floor(gy)), 0, R - 2);
  double fx = gx - x0, fy = gy - y0;
  auto at = [&](int y, int x) { return static_cast<double>(plane.value()[(y * R + x) * kDt + c]); };
  return static_cast<float>((1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                            fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1)));
}

double texel(int i) { return -1.0 + 2.0 * i / (kRes - 1); }

FieldConfig tiny_field() {
  FieldConfig cfg;
  cfg.d_t = kDt;
  cfg.layers = 2;
  cfg.hidden = 8;
  return cfg;
}

}  // namespace

TEST_CASE("texel centers return stored features in XY,YZ,XZ order") {
  auto tri = random_triplane(3);
  const int ix = 1, iy = 3, iz = 2;
  auto pts = Tensor<float>::from_data(
      {1, 3}, {static_cast<float>(texel(ix)), static_cast<float>(texel(iy)), static_cast<float>(texel(iz))});
  auto feat = query_points(tri, pts);
  CHECK(feat.shape() == Shape{1, 3 * kDt});
  for (int c = 0; c < kDt; ++c) {
    CHECK(feat.value()[c] == doctest::Approx(tri.xy.value()[(iy * kRes + ix) * kDt + c]).epsilon(1e-6));
    CHECK(feat.value()[kDt + c] ==
          doctest::Approx(tri.yz.value()[(iz * kRes + iy) * kDt + c]).epsilon(1e-6));
    CHECK(feat.value()[2 * kDt + c] ==
          doctest::Approx(tri.xz.value()[(iz * kRes + ix) * kDt + c]).epsilon(1e-6));
  }
}

TEST_CASE("XY contribution ignores z") {
  auto tri = random_triplane(5);
  auto pts = Tensor<float>::from_data({2, 3}, {0.3f, -0.2f, 0.7f, 0.3f, -0.2f, -0.4f});
  auto feat = query_points(tri, pts);
  for (int c = 0; c < kDt; ++c) CHECK(feat.value()[c] == feat.value()[3 * kDt + c]);
  // YZ and XZ do depend on z here.
  bool differs = false;
  for (int c = kDt; c < 3 * kDt; ++c) differs |= (feat.value()[c] != feat.value()[3 * kDt + c]);
  CHECK(differs);
}

TEST_CASE("random points match the scalar oracle") {
  auto tri = random_triplane(7);
  Rng rng(11);
  std::vector<float> pv(64 * 3);
  for (auto& v : pv) v = static_cast<float>(rng.uniform(-1.2, 1.2));  // include clamped queries
  auto pts = Tensor<float>::from_data({64, 3}, pv);
  auto feat = query_points(tri, pts);
  for (int n = 0; n < 64; ++n) {
    double x = pv[3 * n], y = pv[3 * n + 1], z = pv[3 * n + 2];
    for (int c = 0; c < kDt; ++c) {
      CHECK(std::abs(feat.value()[n * 3 * kDt + c] - sample_plane(tri.xy, x, y, c)) < 1e-6f);
      CHECK(std::abs(feat.value()[n * 3 * kDt + kDt + c] - sample_plane(tri.yz, y, z, c)) < 1e-6f);
      CHECK(std::abs(feat.value()[n * 3 * kDt + 2 * kDt + c] - sample_plane(tri.xz, x, z, c)) < 1e-6f);
    }
  }
}

TEST_CASE("queries outside the box clamp to the border") {
  auto tri = random_triplane(9);
  auto outside = Tensor<float>::from_data({1, 3}, {1.5f, -2.0f, 0.25f});
  auto clamped = Tensor<float>::from_data({1, 3}, {1.0f, -1.0f, 0.25f});
  auto fa = query_points(tri, outside);
  auto fb = query_points(tri, clamped);
  for (int64_t i = 0; i < fa.size(); ++i) CHECK(fa.value()[i] == fb.value()[i]);
}

TEST_CASE("queried features are Lipschitz in the point") {
  auto tri = random_triplane(13);
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    float x = static_cast<float>(rng.uniform(-0.95, 0.95));
    float y = static_cast<float>(rng.uniform(-0.95, 0.95));
    float z = static_cast<float>(rng.uniform(-0.95, 0.95));
    const float eps = 1e-4f;
    auto fa = query_points(tri, Tensor<float>::from_data({1, 3}, {x, y, z}));
    auto fb = query_points(tri, Tensor<float>::from_data({1, 3}, {x + eps, y + eps, z + eps}));
    // Slope bound: features in [-1,1] on a (kRes-1)-cell grid, so the bilinear
    // gradient magnitude is at most 2*(kRes-1) per axis.
    const float bound = 3 * 2 * (kRes - 1) * eps * 1.5f;
    for (int64_t i = 0; i < fa.size(); ++i) CHECK(std::abs(fa.value()[i] - fb.value()[i]) < bound);
  }
}

TEST_CASE("zero final layer gives gray rgb and ln2 density") {
  auto cfg = tiny_field();
  ParamStore store;
  Rng rng(19);
  NerfMlp<float>::define_params(store, cfg, rng);
  const std::string last = "nerf_mlp.layers." + std::to_string(cfg.layers - 1);
  for (float& v : store.at(last + ".weight").value) v = 0.f;
  for (float& v : store.at(last + ".bias").value) v = 0.f;
  auto nerf = NerfMlp<float>::bind(bind_params<float>(store), cfg);

  auto tri = random_triplane(21);
  Rng rp(23);
  std::vector<float> pv(9 * 3);
  for (auto& v : pv) v = static_cast<float>(rp.uniform(-1, 1));
  auto feats = query_points(tri, Tensor<float>::from_data({9, 3}, pv));
  auto out = nerf(feats);
  CHECK(out.rgb.shape() == Shape{9, 3});
  CHECK(out.sigma.shape() == Shape{9, 1});
  for (float v : out.rgb.value()) CHECK(v == doctest::Approx(0.5f).epsilon(1e-7));
  for (float v : out.sigma.value()) CHECK(v == doctest::Approx(std::log(2.f)).epsilon(1e-6));
}

TEST_CASE("nerf outputs stay in range") {
  auto cfg = tiny_field();
  cfg.layers = 3;
  ParamStore store;
  Rng rng(29);
  NerfMlp<float>::define_params(store, cfg, rng);
  // Exaggerate weights so pre-activations are far from zero.
  for (const auto& name : store.names())
    for (float& v : store.at(name).value) v *= 40.f;
  auto nerf = NerfMlp<float>::bind(bind_params<float>(store), cfg);

  auto tri = random_triplane(31);
  Rng rp(37);
  std::vector<float> pv(50 * 3);
  for (auto& v : pv) v = static_cast<float>(rp.uniform(-1, 1));
  auto out = nerf(query_points(tri, Tensor<float>::from_data({50, 3}, pv)));
  for (float v : out.rgb.value()) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }
  for (float v : out.sigma.value()) CHECK(v >= 0.f);
}

TEST_CASE("nerf config needs at least two layers") {
  FieldConfig cfg = tiny_field();
  cfg.layers = 1;
  ParamStore store;
  Rng rng(41);
  CHECK_THROWS_AS(NerfMlp<float>::define_params(store, cfg, rng), Error);
}
