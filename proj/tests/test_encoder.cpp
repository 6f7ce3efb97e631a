#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "lrm/encoder.hpp"
#include "lrm/params.hpp"
#include "lrm/rng.hpp"

using namespace lrm;

namespace {

EncoderConfig tiny_cfg() {
  EncoderConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.d_e = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  return cfg;
}

ImageF random_image(int res, uint64_t seed) {
  ImageF img(3, res, res);
  Rng rng(seed);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("config validation and patch counts") {
  auto cfg = tiny_cfg();
  cfg.validate();
  CHECK(cfg.num_patches() == 4);
  EncoderConfig paper;
  paper.image_size = 512;
  paper.patch_size = 16;
  paper.d_e = 768;
  paper.layers = 12;
  paper.heads = 12;
  CHECK(paper.num_patches() == 1024);

  EncoderConfig bad = tiny_cfg();
  bad.image_size = 9;  // not divisible by patch
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("upsample_positional_embedding identity and oracle") {
  Rng rng(3);
  std::vector<float> pe(2 * 2 * 5);
  for (auto& v : pe) v = static_cast<float>(rng.uniform(-1, 1));
  auto grid = Tensor<float>::from_data({2, 2, 5}, pe);

  auto same = upsample_positional_embedding(grid, 2);
  for (int64_t i = 0; i < same.size(); ++i) CHECK(same.value()[i] == pe[static_cast<size_t>(i)]);

  auto constant = Tensor<float>::full({2, 2, 5}, 0.75f);
  auto up_const = upsample_positional_embedding(constant, 4);
  CHECK(up_const.shape() == Shape{4, 4, 5});
  for (float v : up_const.value()) CHECK(v == doctest::Approx(0.75f).epsilon(1e-6));

  // 2x2 -> 4x4 bilinear with align-corners against a scalar loop.
  auto up = upsample_positional_embedding(grid, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      double gy = y / 3.0, gx = x / 3.0;  // in [0,1] across the old grid
      for (int c = 0; c < 5; ++c) {
        double v00 = pe[(0 * 2 + 0) * 5 + c], v01 = pe[(0 * 2 + 1) * 5 + c];
        double v10 = pe[(1 * 2 + 0) * 5 + c], v11 = pe[(1 * 2 + 1) * 5 + c];
        double want = (1 - gy) * ((1 - gx) * v00 + gx * v01) + gy * ((1 - gx) * v10 + gx * v11);
        CHECK(std::abs(up.value()[(y * 4 + x) * 5 + c] - want) < 1e-6);
      }
    }
}

TEST_CASE("encode emits cls plus patch tokens") {
  auto cfg = tiny_cfg();
  ParamStore store;
  Rng rng(5);
  ViTEncoder<float>::define_params(store, cfg, rng);
  auto bound = bind_params<float>(store);
  auto enc = ViTEncoder<float>::bind(bound, cfg);

  auto img = image_to_tensor<float>(random_image(8, 7));
  auto tokens = enc.encode(img);
  CHECK(tokens.shape() == Shape{5, 16});  // 4 patches + cls

  EncoderConfig desk;  // desk defaults: 64/8 grid -> 64 patches + cls
  CHECK(desk.num_patches() + 1 == 65);
}

TEST_CASE("encode is deterministic") {
  auto cfg = tiny_cfg();
  ParamStore store;
  Rng rng(11);
  ViTEncoder<float>::define_params(store, cfg, rng);
  auto bound = bind_params<float>(store);
  auto enc = ViTEncoder<float>::bind(bound, cfg);
  auto img = image_to_tensor<float>(random_image(8, 3));
  auto a = enc.encode(img);
  auto b = enc.encode(img);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a.value()[i] == b.value()[i]);
}

TEST_CASE("token permutation equivariance with zeroed positions") {
  auto cfg = tiny_cfg();
  ParamStore store;
  Rng rng(13);
  ViTEncoder<float>::define_params(store, cfg, rng);
  // Kill positional information so patch identity comes only from content.
  for (float& v : store.at("encoder.pos_grid").value) v = 0.f;
  for (float& v : store.at("encoder.pos_cls").value) v = 0.f;
  auto bound = bind_params<float>(store);
  auto enc = ViTEncoder<float>::bind(bound, cfg);

  auto img = random_image(8, 21);
  // Swap patch (0,0) and patch (1,1) pixel blocks: patches 0 and 3.
  auto swapped = img;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x)
        std::swap(swapped.at(c, y, x), swapped.at(c, 4 + y, 4 + x));

  auto t0 = enc.encode(image_to_tensor<float>(img));
  auto t1 = enc.encode(image_to_tensor<float>(swapped));
  const int64_t d = cfg.d_e;
  auto row = [&](const Tensor<float>& t, int64_t r, int64_t c) { return t.value()[r * d + c]; };
  for (int64_t c = 0; c < d; ++c) {
    CHECK(std::abs(row(t1, 0, c) - row(t0, 0, c)) < 1e-4f);  // cls invariant
    CHECK(std::abs(row(t1, 1, c) - row(t0, 4, c)) < 1e-4f);  // patch 0 <-> 3
    CHECK(std::abs(row(t1, 4, c) - row(t0, 1, c)) < 1e-4f);
    CHECK(std::abs(row(t1, 2, c) - row(t0, 2, c)) < 1e-4f);  // others fixed
    CHECK(std::abs(row(t1, 3, c) - row(t0, 3, c)) < 1e-4f);
  }
}

TEST_CASE("image_to_tensor layout") {
  ImageF img(3, 2, 2);
  for (int i = 0; i < 12; ++i) img.data[static_cast<size_t>(i)] = static_cast<float>(i) / 12.f;
  auto t = image_to_tensor<float>(img);
  CHECK(t.shape() == Shape{3, 2, 2});
  for (int i = 0; i < 12; ++i) CHECK(t.value()[static_cast<size_t>(i)] == img.data[static_cast<size_t>(i)]);
  CHECK_FALSE(t.requires_grad());
}

TEST_CASE("parameter set covers blocks, embeddings, final norm") {
  auto cfg = tiny_cfg();
  ParamStore store;
  Rng rng(17);
  ViTEncoder<float>::define_params(store, cfg, rng);
  CHECK(store.has("encoder.patch_embed.weight"));
  CHECK(store.has("encoder.pos_grid"));
  CHECK(store.has("encoder.pos_cls"));
  CHECK(store.has("encoder.cls_token"));
  CHECK(store.has("encoder.layers.0.attn.wq.weight"));
  CHECK(store.has("encoder.layers.0.mlp.fc1.weight"));
  CHECK(store.has("encoder.final_ln.weight"));
  // Embeddings carry weight decay; biases and layer norms do not.
  CHECK_FALSE(store.at("encoder.pos_grid").no_decay);
  CHECK(store.at("encoder.final_ln.weight").no_decay);
  CHECK(store.at("encoder.patch_embed.bias").no_decay);
}
