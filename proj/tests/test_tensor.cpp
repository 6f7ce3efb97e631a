#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lrm/checkpoint.hpp"
#include "lrm/gradcheck.hpp"
#include "lrm/gradsuite.hpp"
#include "lrm/params.hpp"
#include "lrm/rng.hpp"
#include "lrm/tensor.hpp"

using namespace lrm;

namespace {

Tensor<double> t2(Shape shape, std::vector<double> v, bool rg = false) {
  return Tensor<double>::from_data(std::move(shape), std::move(v), rg);
}

std::string temp_dir(const char* tag) {
  auto d = std::filesystem::temp_directory_path() / (std::string("lrm_tensor_") + tag);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d.string();
}

}  // namespace

TEST_CASE("matmul identity and hand case") {
  auto a = t2({2, 2}, {1, 2, 3, 4});
  auto eye = t2({2, 2}, {1, 0, 0, 1});
  auto ai = matmul(a, eye);
  for (int i = 0; i < 4; ++i) CHECK(ai.value()[i] == a.value()[i]);

  auto ones = t2({2, 1}, {1, 1});
  auto prod = matmul(a, ones);
  CHECK(prod.shape() == Shape{2, 1});
  CHECK(prod.value()[0] == doctest::Approx(3).epsilon(1e-12));
  CHECK(prod.value()[1] == doctest::Approx(7).epsilon(1e-12));
}

TEST_CASE("matmul transposes agree with explicit transpose") {
  Rng rng(1);
  std::vector<double> av(6), bv(6);
  for (auto& v : av) v = rng.uniform(-1, 1);
  for (auto& v : bv) v = rng.uniform(-1, 1);
  auto a = t2({2, 3}, av);
  auto b = t2({3, 2}, bv);
  auto ref = matmul(a, b);
  auto at = transpose2d(a);
  auto bt = transpose2d(b);
  auto via_ta = matmul(at, b, true, false);
  auto via_tb = matmul(a, bt, false, true);
  auto via_tt = matmul(at, bt, true, true);
  for (int i = 0; i < 4; ++i) {
    CHECK(via_ta.value()[i] == doctest::Approx(ref.value()[i]).epsilon(1e-12));
    CHECK(via_tb.value()[i] == doctest::Approx(ref.value()[i]).epsilon(1e-12));
    CHECK(via_tt.value()[i] == doctest::Approx(ref.value()[i]).epsilon(1e-12));
  }
}

TEST_CASE("matmul rejects shape mismatch") {
  auto a = t2({2, 3}, std::vector<double>(6, 1.0));
  auto b = t2({2, 3}, std::vector<double>(6, 1.0));
  CHECK_THROWS_AS((void)matmul(a, b), Error);
}

TEST_CASE("layer_norm constant row maps to zero") {
  auto x = t2({2, 4}, {3, 3, 3, 3, -1, -1, -1, -1});
  auto w = t2({4}, {1, 1, 1, 1});
  auto b = t2({4}, {0, 0, 0, 0});
  auto y = layer_norm(x, w, b);
  for (double v : y.value()) CHECK(std::abs(v) < 1e-6);
}

TEST_CASE("layer_norm output has zero mean unit variance per row") {
  Rng rng(7);
  std::vector<double> xv(5 * 16);
  for (auto& v : xv) v = rng.uniform(-3, 3);
  auto x = t2({5, 16}, xv);
  auto w = t2({16}, std::vector<double>(16, 1.0));
  auto b = t2({16}, std::vector<double>(16, 0.0));
  auto y = layer_norm(x, w, b);
  for (int r = 0; r < 5; ++r) {
    double m = 0, s = 0;
    for (int c = 0; c < 16; ++c) m += y.value()[r * 16 + c];
    m /= 16;
    for (int c = 0; c < 16; ++c) {
      double d = y.value()[r * 16 + c] - m;
      s += d * d;
    }
    s /= 16;
    CHECK(std::abs(m) < 1e-5);
    CHECK(std::abs(s - 1.0) < 1e-5);  // eps pulls variance slightly under 1
  }
}

TEST_CASE("softmax uniform and overflow guard") {
  auto y = softmax(t2({1, 3}, {0, 0, 0}));
  for (double v : y.value()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  auto z = softmax(t2({1, 2}, {1000, 0}));
  CHECK(std::isfinite(z.value()[0]));
  CHECK(z.value()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(z.value()[1] == doctest::Approx(0.0).epsilon(1e-12));

  Rng rng(3);
  std::vector<double> xv(4 * 7);
  for (auto& v : xv) v = rng.uniform(-5, 5);
  auto rows = softmax(t2({4, 7}, xv));
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int c = 0; c < 7; ++c) s += rows.value()[r * 7 + c];
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("activation fixed points") {
  CHECK(relu(t2({1}, {-1})).value()[0] == 0.0);
  CHECK(relu(t2({1}, {2})).value()[0] == 2.0);
  CHECK(sigmoid(t2({1}, {0})).value()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(softplus(t2({1}, {0})).value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // gelu tanh approximation at x=1: 0.5*(1+tanh(sqrt(2/pi)*(1+0.044715)))
  double c = std::sqrt(2.0 / M_PI);
  double want = 0.5 * (1.0 + std::tanh(c * (1.0 + 0.044715)));
  CHECK(gelu(t2({1}, {1})).value()[0] == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("bilinear_grid_sample matches scalar oracle") {
  const int H = 8, W = 8, C = 3;
  Rng rng(11);
  std::vector<double> pv(H * W * C);
  for (auto& v : pv) v = rng.uniform(-1, 1);
  auto plane = t2({H, W, C}, pv);

  // Texel center: uv hitting grid point (align-corners) returns the stored value.
  auto texel_uv = [&](int ix, int iy) {
    return std::pair<double, double>{-1.0 + 2.0 * ix / (W - 1), -1.0 + 2.0 * iy / (H - 1)};
  };
  auto [u0, v0] = texel_uv(3, 5);
  auto at_texel = bilinear_grid_sample(plane, t2({1, 2}, {u0, v0}));
  for (int c = 0; c < C; ++c)
    CHECK(at_texel.value()[c] == doctest::Approx(pv[(5 * W + 3) * C + c]).epsilon(1e-9));

  // Midpoint of four texels: average of the corners.
  auto [ua, va] = texel_uv(2, 2);
  auto mid = bilinear_grid_sample(plane, t2({1, 2}, {ua + 1.0 / (W - 1), va + 1.0 / (H - 1)}));
  for (int c = 0; c < C; ++c) {
    double avg = (pv[(2 * W + 2) * C + c] + pv[(2 * W + 3) * C + c] + pv[(3 * W + 2) * C + c] +
                  pv[(3 * W + 3) * C + c]) /
                 4.0;
    CHECK(mid.value()[c] == doctest::Approx(avg).epsilon(1e-9));
  }

  // 32 random uvs against an independent scalar loop, including out-of-range clamps.
  std::vector<double> uv(32 * 2);
  for (auto& v : uv) v = rng.uniform(-1.3, 1.3);
  auto got = bilinear_grid_sample(plane, t2({32, 2}, uv));
  for (int n = 0; n < 32; ++n) {
    double gx = (std::clamp(uv[2 * n], -1.0, 1.0) + 1.0) * 0.5 * (W - 1);
    double gy = (std::clamp(uv[2 * n + 1], -1.0, 1.0) + 1.0) * 0.5 * (H - 1);
    int x0 = std::clamp(static_cast<int>(std::floor(gx)), 0, W - 2);
    int y0 = std::clamp(static_cast<int>(std::floor(gy)), 0, H - 2);
    double fx = gx - x0, fy = gy - y0;
    for (int c = 0; c < C; ++c) {
      double v00 = pv[(y0 * W + x0) * C + c], v01 = pv[(y0 * W + x0 + 1) * C + c];
      double v10 = pv[((y0 + 1) * W + x0) * C + c], v11 = pv[((y0 + 1) * W + x0 + 1) * C + c];
      double want = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
      CHECK(std::abs(got.value()[n * C + c] - want) < 1e-6);
    }
  }
}

TEST_CASE("transposed_conv2d broadcast and shape") {
  auto x = t2({1, 1, 1}, {3.0});
  auto ker = t2({1, 1, 2, 2}, {1, 1, 1, 1});
  auto y = transposed_conv2d(x, ker, 2);
  CHECK(y.shape() == Shape{1, 2, 2});
  for (double v : y.value()) CHECK(v == doctest::Approx(3.0).epsilon(1e-12));

  auto big = Tensor<double>::full({4, 32, 32}, 0.1);
  auto kb = Tensor<double>::full({4, 2, 2, 2}, 0.01);
  auto yb = transposed_conv2d(big, kb, 2);
  CHECK(yb.shape() == Shape{2, 64, 64});
}

TEST_CASE("backward of sum and quadratic") {
  auto x = t2({2, 3}, {1, -2, 3, 0.5, -0.5, 2}, true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == doctest::Approx(1.0).epsilon(1e-12));

  x.zero_grad();
  backward(scale(sum(mul(x, x)), 0.5));
  for (int i = 0; i < 6; ++i) CHECK(x.grad()[i] == doctest::Approx(x.value()[i]).epsilon(1e-12));
}

TEST_CASE("leaf gradients accumulate across backward calls") {
  auto x = t2({3}, {1, 2, 3}, true);
  backward(sum(x));
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == doctest::Approx(2.0).epsilon(1e-12));
  x.zero_grad();
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward requires scalar loss") {
  auto x = t2({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(add(x, x)), Error);
}

TEST_CASE("ops guard against non-finite values") {
  auto big = t2({1}, {1e308});
  CHECK_THROWS_AS((void)mul(big, big), Error);
}

TEST_CASE("inference builds no graph when inputs are constant") {
  auto a = t2({2, 2}, {1, 2, 3, 4}, false);
  auto y = matmul(a, a);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("node ids ascend in creation order") {
  auto a = t2({2}, {1, 2}, true);
  auto b = add(a, a);
  auto c = mul(b, b);
  CHECK(a.id() < b.id());
  CHECK(b.id() < c.id());
}

TEST_CASE("select_cols supports duplicates, scatter_rows fills") {
  auto x = t2({2, 4}, {0, 1, 2, 3, 4, 5, 6, 7}, true);
  auto y = select_cols(x, {0, 2, 2});
  CHECK(y.shape() == Shape{2, 3});
  CHECK(y.value()[1] == 2.0);
  CHECK(y.value()[2] == 2.0);
  backward(sum(y));
  CHECK(x.grad()[2] == 2.0);  // duplicated column accumulates
  CHECK(x.grad()[1] == 0.0);

  auto vals = t2({2, 2}, {1, 2, 3, 4});
  auto s = scatter_rows(vals, {2, 0}, 4, -1.0);
  CHECK(s.shape() == Shape{4, 2});
  CHECK(s.value()[0] == 3.0);
  CHECK(s.value()[2] == -1.0);
  CHECK(s.value()[4] == 1.0);
}

TEST_CASE("patchify is a bijection on pixels") {
  // [3,4,4] with patch 2: four patches of 12 values, row-major over the grid.
  std::vector<double> img(3 * 4 * 4);
  for (size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i);
  auto x = t2({3, 4, 4}, img);
  auto p = patchify(x, 2);
  CHECK(p.shape() == Shape{4, 12});
  std::vector<double> seen(p.value().begin(), p.value().end());
  std::sort(seen.begin(), seen.end());
  for (size_t i = 0; i < seen.size(); ++i) CHECK(seen[i] == static_cast<double>(i));
  // Patch 0 holds channels-major values of the top-left 2x2 block.
  CHECK(p.value()[0] == 0.0);   // c0,(0,0)
  CHECK(p.value()[1] == 1.0);   // c0,(0,1)
  CHECK(p.value()[2] == 4.0);   // c0,(1,0)
  CHECK(p.value()[4] == 16.0);  // c1,(0,0)

  auto constant = Tensor<double>::full({3, 4, 4}, 0.25);
  auto pc = patchify(constant, 2);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 12; ++c) CHECK(pc.value()[r * 12 + c] == 0.25);
}

TEST_CASE("finite_difference_check validates a linear map tightly") {
  auto x = t2({4}, {0.3, -0.7, 1.1, 0.2}, true);
  auto report = finite_difference_check([&] { return scale(sum(x), 3.0); }, {{"x", x}});
  CHECK(report.max_rel_err < 1e-9);
}

TEST_CASE("finite_difference_check flags a corrupted backward") {
  auto x = t2({3}, {0.4, 0.9, -0.6}, true);
  auto bad_square_sum = [&] {
    auto sq = mul(x, x);
    // Forward correct, backward dropped the factor 2.
    return make_op<double>("bad_square_sum", {1},
                           {sq.value()[0] + sq.value()[1] + sq.value()[2]}, {x},
                           [](detail::Node<double>& n) {
                             auto& p = *n.parents[0];
                             auto& g = p.grad_buffer();
                             for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0] * p.value[i];
                           });
  };
  auto report = finite_difference_check(bad_square_sum, {{"x", x}});
  CHECK(report.max_rel_err > 1e-2);
}

TEST_CASE("finite_difference_check rejects non-deterministic functions") {
  auto x = t2({2}, {0.5, 0.25}, true);
  int calls = 0;
  auto f = [&] {
    ++calls;
    return scale(sum(x), 1.0 + 0.001 * calls);
  };
  CHECK_THROWS_AS((void)finite_difference_check(f, {{"x", x}}), Error);
}

TEST_CASE("gradcheck suite passes for every primitive") {
  auto result = run_gradcheck_suite("primitive");
  INFO(result.table());
  CHECK(result.pass());
  CHECK(result.cases.size() >= 30);
}

TEST_CASE("gradcheck suite catches an injected backward fault") {
  auto result = run_gradcheck_suite("primitive", /*inject_fault=*/true);
  CHECK_FALSE(result.pass());
}

TEST_CASE("graph rebuild is bit-identical") {
  Rng rng(17);
  std::vector<double> xv(12);
  for (auto& v : xv) v = rng.uniform(-1, 1);
  auto build = [&] {
    auto x = t2({3, 4}, xv, true);
    auto w = t2({4, 4}, std::vector<double>(16, 0.125));
    return softmax(matmul(gelu(x), w));
  };
  auto a = build();
  auto b = build();
  REQUIRE(a.size() == b.size());
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a.value()[i] == b.value()[i]);
}

TEST_CASE("checkpoint round trip restores exact bytes") {
  ParamStore store;
  Rng rng(23);
  store.define_trunc_normal("layer.weight", {6, 5}, 0.02f, rng);
  store.define_const("layer.bias", {5}, 0.0f, /*no_decay=*/true);
  store.at("layer.bias").value[2] = 1.25f;

  auto dir = temp_dir("ckpt");
  nlohmann::json extra{{"note", "round-trip"}};
  save_checkpoint(dir, store, extra);

  ParamStore restored;
  Rng rng2(99);
  restored.define_trunc_normal("layer.weight", {6, 5}, 0.02f, rng2);
  restored.define_const("layer.bias", {5}, 0.0f, /*no_decay=*/true);
  auto loaded_extra = load_checkpoint(dir, restored);
  CHECK(loaded_extra.at("note") == "round-trip");
  for (const auto& name : store.names()) {
    const auto& a = store.at(name).value;
    const auto& b = restored.at(name).value;
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }
}

TEST_CASE("checkpoint load rejects missing tensor") {
  ParamStore store;
  store.define_const("a", {2}, 1.0f);
  auto dir = temp_dir("ckpt_missing");
  save_checkpoint(dir, store, {});

  ParamStore bigger;
  bigger.define_const("a", {2}, 1.0f);
  bigger.define_const("b", {2}, 1.0f);
  try {
    (void)load_checkpoint(dir, bigger);
    FAIL("expected missing-tensor error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("b") != std::string::npos);
  }
}

TEST_CASE("checkpoint load rejects shape mismatch") {
  ParamStore store;
  store.define_const("w", {2, 3}, 0.5f);
  auto dir = temp_dir("ckpt_shape");
  save_checkpoint(dir, store, {});

  ParamStore other;
  other.define_const("w", {3, 2}, 0.5f);
  CHECK_THROWS_AS((void)load_checkpoint(dir, other), Error);
}

TEST_CASE("rng streams are deterministic and state round-trips") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  auto hex = a.state_hex();
  uint64_t next = a.next_u64();
  Rng c;
  c.set_state_hex(hex);
  CHECK(c.next_u64() == next);
  // Derived streams differ from the parent and from other keys.
  auto d1 = Rng::derive(42, 1), d2 = Rng::derive(42, 2);
  CHECK(d1.next_u64() != d2.next_u64());
}
