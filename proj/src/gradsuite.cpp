#include "lrm/gradsuite.hpp"

#include <cmath>
#include <sstream>

#include "lrm/losses.hpp"
#include "lrm/model.hpp"
#include "lrm/renderer.hpp"
#include "lrm/synthetic.hpp"

namespace lrm {
namespace {

using T = Tensor<double>;
using NamedParams = std::vector<std::pair<std::string, T>>;

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

T leaf(Rng& rng, Shape shape, double lo, double hi) {
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return T::from_data(std::move(shape), std::move(v), /*requires_grad=*/true);
}

// Fixed random projection to a scalar; breaks the symmetry a plain sum has.
// Weights depend only on (tag, shape) so rebuilding the loss is deterministic.
T wsum(uint64_t tag, const T& x) {
  Rng rng = Rng::derive(0x7753756d, tag * 1000003 + static_cast<uint64_t>(x.size()));
  std::vector<double> w(static_cast<size_t>(x.size()));
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return sum(mul(x, T::from_data(x.shape(), std::move(w))));
}

// Values sampled away from a kink at 0 (for relu) by at least `margin`.
T leaf_away_from_zero(Rng& rng, Shape shape, double margin) {
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (auto& x : v) {
    const double mag = rng.uniform(margin, 1.0);
    x = rng.uniform() < 0.5 ? -mag : mag;
  }
  return T::from_data(std::move(shape), std::move(v), /*requires_grad=*/true);
}

// Coordinates kept at least `margin` away from bilinear cell boundaries so
// central differences stay inside one cell.
T interior_uv_leaf(Rng& rng, Shape shape, int64_t cells, double margin) {
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  const double cell = 2.0 / static_cast<double>(cells);
  for (auto& x : v) {
    double u = rng.uniform(-0.9, 0.9);
    const double k = std::round((u + 1.0) / cell);
    const double nearest = -1.0 + k * cell;
    if (std::abs(u - nearest) < margin) u = nearest + (u >= nearest ? margin : -margin);
    x = u;
  }
  return T::from_data(std::move(shape), std::move(v), /*requires_grad=*/true);
}

struct CaseBuilder {
  std::vector<SuiteCase> cases;
  Rng coord_rng{0x5eedc0de};

  void run(const std::string& name, const std::function<T()>& f, const NamedParams& params,
           double tol = 1e-4, int64_t max_coords = 0) {
    SuiteCase c;
    c.name = name;
    c.tol = tol;
    c.report = finite_difference_check(f, params, max_coords, &coord_rng);
    cases.push_back(std::move(c));
  }
};

// ---- primitive scope: every differentiable tensor op ----

void add_primitive_cases(CaseBuilder& cb) {
  Rng rng(11);

  {
    const T a = leaf(rng, {3, 4}, -1, 1), b = leaf(rng, {3, 4}, -1, 1);
    const T w = leaf(rng, {4}, -1, 1);
    cb.run("add", [&] { return wsum(1, add(a, b)); }, {{"a", a}, {"b", b}});
    cb.run("add_broadcast", [&] { return wsum(2, add(a, w)); }, {{"a", a}, {"w", w}});
    cb.run("sub", [&] { return wsum(3, sub(a, b)); }, {{"a", a}, {"b", b}});
    cb.run("mul", [&] { return wsum(4, mul(a, b)); }, {{"a", a}, {"b", b}});
    cb.run("mul_broadcast", [&] { return wsum(5, mul(a, w)); }, {{"a", a}, {"w", w}});
    cb.run("scale", [&] { return wsum(6, scale(a, 1.7)); }, {{"a", a}});
    cb.run("add_scalar", [&] { return wsum(7, add_scalar(a, 0.3)); }, {{"a", a}});
    cb.run("square", [&] { return wsum(8, square(a)); }, {{"a", a}});
  }
  {
    const T a = leaf(rng, {3, 4}, -1, 1), b = leaf(rng, {4, 5}, -1, 1);
    const T at = leaf(rng, {4, 3}, -1, 1), bt = leaf(rng, {5, 4}, -1, 1);
    cb.run("matmul_nn", [&] { return wsum(9, matmul(a, b)); }, {{"a", a}, {"b", b}});
    cb.run("matmul_tn", [&] { return wsum(10, matmul(at, b, true, false)); },
           {{"a", at}, {"b", b}});
    cb.run("matmul_nt", [&] { return wsum(11, matmul(a, bt, false, true)); },
           {{"a", a}, {"b", bt}});
    cb.run("matmul_tt", [&] { return wsum(12, matmul(at, bt, true, true)); },
           {{"a", at}, {"b", bt}});
  }
  {
    const T x = leaf_away_from_zero(rng, {4, 5}, 0.05);
    const T y = leaf(rng, {4, 5}, -2, 2);
    cb.run("relu", [&] { return wsum(13, relu(x)); }, {{"x", x}});
    cb.run("gelu", [&] { return wsum(14, gelu(y)); }, {{"y", y}});
    cb.run("sigmoid", [&] { return wsum(15, sigmoid(y)); }, {{"y", y}});
    cb.run("softplus", [&] { return wsum(16, softplus(y)); }, {{"y", y}});
    cb.run("softmax", [&] { return wsum(17, softmax(y)); }, {{"y", y}});
    cb.run("sum", [&] { return sum(y); }, {{"y", y}});
    cb.run("mean", [&] { return mean(y); }, {{"y", y}});
  }
  {
    const T x = leaf(rng, {4, 6}, -1, 1);
    const T w = leaf(rng, {6}, 0.5, 1.5), b = leaf(rng, {6}, -0.5, 0.5);
    cb.run("layer_norm", [&] { return wsum(18, layer_norm(x, w, b, 1e-5)); },
           {{"x", x}, {"w", w}, {"b", b}});
  }
  {
    const T x = leaf(rng, {6, 4}, -1, 1);
    const T y = leaf(rng, {6, 4}, -1, 1);
    const T r = leaf(rng, {4}, 0.2, 1.5);
    cb.run("reshape_transpose", [&] { return wsum(19, transpose2d(reshape(x, {8, 3}))); },
           {{"x", x}});
    cb.run("concat_rows", [&] { return wsum(20, concat_rows<double>({x, y})); },
           {{"x", x}, {"y", y}});
    cb.run("concat_cols", [&] { return wsum(21, concat_cols<double>({x, y})); },
           {{"x", x}, {"y", y}});
    cb.run("slice_rows", [&] { return wsum(22, slice_rows(x, 1, 4)); }, {{"x", x}});
    cb.run("select_cols", [&] { return wsum(23, select_cols(x, {0, 2, 2, 3})); }, {{"x", x}});
    cb.run("scale_rows", [&] { return wsum(24, scale_rows(transpose2d(x), r)); },
           {{"x", x}, {"r", r}});
  }
  {
    const T x = leaf_away_from_zero(rng, {5, 3}, 0.3);
    cb.run("row_l2_normalize", [&] { return wsum(25, row_l2_normalize(x, 1e-10)); }, {{"x", x}});
  }
  {
    const T plane = leaf(rng, {4, 5, 3}, -1, 1);
    const T uv = interior_uv_leaf(rng, {6, 2}, /*cells=*/3, 5e-3);
    cb.run("bilinear_grid_sample",
           [&] { return wsum(26, bilinear_grid_sample(plane, uv)); },
           {{"plane", plane}, {"uv", uv}});
  }
  {
    const T x = leaf(rng, {2, 5, 5}, -1, 1);
    const T k = leaf(rng, {4, 2, 3, 3}, -0.5, 0.5);
    const T b = leaf(rng, {4}, -0.2, 0.2);
    cb.run("conv2d", [&] { return wsum(27, conv2d(x, k, b, 2, 1)); },
           {{"x", x}, {"k", k}, {"b", b}});
  }
  {
    const T x = leaf(rng, {3, 2, 2}, -1, 1);
    const T k = leaf(rng, {3, 2, 2, 2}, -0.5, 0.5);
    cb.run("transposed_conv2d", [&] { return wsum(28, transposed_conv2d(x, k, 2)); },
           {{"x", x}, {"k", k}});
  }
  {
    const T img = leaf(rng, {3, 4, 4}, 0, 1);
    cb.run("patchify", [&] { return wsum(29, patchify(img, 2)); }, {{"img", img}});
  }
  {
    const T v = leaf(rng, {3, 2}, -1, 1);
    cb.run("scatter_rows",
           [&] { return wsum(30, scatter_rows(v, {3, 0, 2}, 5, 0.5)); }, {{"v", v}});
  }
  {
    // Hand-built two-ray batch; one far-capped tail delta per ray.
    RaySamples<double> rs;
    rs.width = 2;
    rs.height = 1;
    rs.spp = 3;
    rs.pixel_index = {0, 1};
    rs.t = {0.5, 1.0, 1.5, 0.2, 0.4, 0.6};
    rs.delta = {0.5, 0.5, kFarCap, 0.2, 0.2, kFarCap};
    rs.positions.assign(18, 0.0);
    rs.t_far_max = 1.5;
    Rng lr(12);
    const T rgb = leaf(lr, {6, 3}, 0.05, 0.95);
    const T sigma = leaf(lr, {6, 1}, 0.05, 1.5);
    cb.run("composite_rays",
           [&] { return wsum(31, composite_rays(rs, rgb, sigma)); },
           {{"rgb", rgb}, {"sigma", sigma}});
  }
}

// ---- module scope ----

DecoderConfig small_decoder_cfg() {
  DecoderConfig cfg;
  cfg.d_d = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.tri_low = 2;
  cfg.tri_res = 4;
  cfg.d_t = 4;
  return cfg;
}

// The ModLN output projections start at zero, which would leave their input
// paths with 0 == 0 gradient checks; give them small random values instead.
void randomize_zero_init(ParamStore& store, Rng& rng) {
  for (const auto& name : store.names()) {
    if (name.find(".modln.mlp.fc2.") == std::string::npos) continue;
    for (auto& v : store.at(name).value) v = static_cast<float>(rng.uniform(-0.05, 0.05));
  }
}

// ReLU kinks in MLP^nerf sit at preactivation 0; shifting hidden biases keeps
// central differences away from them.
void shift_nerf_biases(ParamStore& store, const FieldConfig& cfg) {
  for (int i = 0; i + 1 < cfg.layers; ++i) {
    auto& info = store.at("nerf_mlp.layers." + std::to_string(i) + ".bias");
    for (auto& v : info.value) v = 0.3f;
  }
}

NamedParams bound_param_list(const ParamStore& store, const BoundParams<double>& p,
                             const std::string& prefix = "") {
  NamedParams out;
  for (const auto& name : store.names()) {
    if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
    out.emplace_back(name, p.at(name));
  }
  return out;
}

void add_module_cases(CaseBuilder& cb) {
  const CameraIntrinsic kin = synthetic_intrinsics();

  {
    ParamStore store;
    Rng rng(21);
    const DecoderConfig cfg = small_decoder_cfg();
    TriplaneDecoder<double>::define_params(store, cfg, /*d_e=*/12, rng);
    randomize_zero_init(store, rng);
    const auto p = bind_params<double>(store);
    const auto dec = TriplaneDecoder<double>::bind(p, cfg);

    Rng pose_rng(3);
    const CameraExtrinsic e = sample_training_pose(pose_rng);
    const auto feature = build_camera_feature(normalize_camera(e, NormalizeMode::synthetic).first,
                                              kin);
    cb.run("embed_camera", [&] { return wsum(32, dec.embed_camera(feature)); },
           bound_param_list(store, p, "decoder.camera_mlp"));

    Rng lr(22);
    const T f = leaf(lr, {cfg.tokens(), cfg.d_d}, -1, 1);
    const T tokens = leaf(lr, {6, 12}, -1, 1);
    const T c_tilde = leaf(lr, {1, cfg.d_d}, -1, 1);

    NamedParams modln_params = bound_param_list(store, p, "decoder.layers.0.cross.modln");
    modln_params.emplace_back("f", f);
    modln_params.emplace_back("c_tilde", c_tilde);
    cb.run("mod_ln", [&] { return wsum(33, dec.layers[0].mod_cross(f, c_tilde)); },
           modln_params);

    NamedParams layer_params = bound_param_list(store, p, "decoder.layers.0");
    layer_params.emplace_back("f", f);
    layer_params.emplace_back("tokens", tokens);
    layer_params.emplace_back("c_tilde", c_tilde);
    cb.run("decoder_layer",
           [&] { return wsum(34, dec.layers[0](f, tokens, c_tilde)); }, layer_params, 1e-4,
           /*max_coords=*/12);

    NamedParams decode_params = bound_param_list(store, p);
    decode_params.emplace_back("tokens", tokens);
    decode_params.emplace_back("c_tilde", c_tilde);
    cb.run("decoder_decode",
           [&] {
             const auto tri = dec.decode(tokens, c_tilde);
             return add(wsum(35, tri.xy), add(wsum(36, tri.yz), wsum(37, tri.xz)));
           },
           decode_params, 1e-4, /*max_coords=*/6);
  }
  {
    ParamStore store;
    Rng rng(23);
    EncoderConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.d_e = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    ViTEncoder<double>::define_params(store, cfg, rng);
    const auto p = bind_params<double>(store);
    const auto enc = ViTEncoder<double>::bind(p, cfg);
    Rng lr(24);
    const T img = leaf(lr, {3, 8, 8}, 0, 1);
    NamedParams params = bound_param_list(store, p);
    params.emplace_back("image", img);
    cb.run("encoder_encode", [&] { return wsum(38, enc.encode(img)); }, params, 1e-4,
           /*max_coords=*/12);
  }
  {
    ParamStore store;
    Rng rng(25);
    FieldConfig cfg;
    cfg.d_t = 4;
    cfg.layers = 2;
    cfg.hidden = 8;
    NerfMlp<double>::define_params(store, cfg, rng);
    shift_nerf_biases(store, cfg);
    const auto p = bind_params<double>(store);
    const auto nerf = NerfMlp<double>::bind(p, cfg);
    Rng lr(26);
    Triplane<double> tri{leaf(lr, {5, 5, 4}, -0.5, 0.5), leaf(lr, {5, 5, 4}, -0.5, 0.5),
                         leaf(lr, {5, 5, 4}, -0.5, 0.5)};
    const T points = interior_uv_leaf(lr, {7, 3}, /*cells=*/4, 5e-3);
    NamedParams params = bound_param_list(store, p);
    params.emplace_back("tri.xy", tri.xy);
    params.emplace_back("tri.yz", tri.yz);
    params.emplace_back("tri.xz", tri.xz);
    params.emplace_back("points", points);
    cb.run("triplane_nerf_field",
           [&] {
             const auto fs = nerf(query_points(tri, points));
             return add(wsum(39, fs.rgb), wsum(40, fs.sigma));
           },
           params);

    // Same field rendered through ray sampling and compositing.
    CameraExtrinsic cam;
    cam.m[7] = -2.0;
    cb.run("render_field",
           [&] {
             const auto field = triplane_field(tri, nerf);
             const auto res = render_field(field, cam, kin, 4, 4, 8, SampleMode::midpoint, 0);
             return add(wsum(41, res.rgb), add(wsum(42, res.opacity), wsum(43, res.depth)));
           },
           params, 1e-3, /*max_coords=*/10);
  }
  {
    const auto net = PerceptualNet<double>::create(kPerceptualSeed);
    Rng lr(27);
    const T pred = leaf(lr, {64, 3}, 0, 1);
    const T pred2 = leaf(lr, {64, 3}, 0, 1);
    const T gt = leaf(lr, {64, 3}, 0, 1);
    const T gt2 = leaf(lr, {64, 3}, 0, 1);
    cb.run("perceptual_loss", [&] { return perceptual_loss(pred, gt, 8, 8, net); },
           {{"pred", pred}}, 1e-4, /*max_coords=*/24);
    cb.run("recon_loss_eq6",
           [&] {
             return recon_loss<double>({pred, pred2}, {gt, gt2}, 8, 8, 2.0, &net).total;
           },
           {{"pred0", pred}, {"pred1", pred2}}, 1e-4, /*max_coords=*/24);
  }
}

// ---- endtoend scope ----

ModelConfig small_model_cfg() {
  ModelConfig cfg;
  cfg.encoder.image_size = 16;
  cfg.encoder.patch_size = 4;
  cfg.encoder.d_e = 8;
  cfg.encoder.layers = 1;
  cfg.encoder.heads = 2;
  cfg.decoder = small_decoder_cfg();
  cfg.decoder.d_t = 4;
  cfg.field.d_t = 4;
  cfg.field.layers = 2;
  cfg.field.hidden = 8;
  cfg.render.resolution = 8;
  cfg.render.samples = 8;
  cfg.validate();
  return cfg;
}

void add_endtoend_case(CaseBuilder& cb) {
  const ModelConfig cfg = small_model_cfg();
  ParamStore store;
  Rng rng(31);
  LRM<double>::define_params(store, cfg, rng);
  randomize_zero_init(store, rng);
  shift_nerf_biases(store, cfg.field);
  const auto p = bind_params<double>(store);
  const auto model = LRM<double>::bind(p, cfg);

  Rng data_rng(32);
  const SceneSpec scene = random_scene(data_rng);
  const CameraIntrinsic kin = synthetic_intrinsics();
  const CameraExtrinsic e_in = sample_training_pose(data_rng);
  const auto [e_norm, tf] = normalize_camera(e_in, NormalizeMode::synthetic);
  const auto feature = build_camera_feature(e_norm, kin);

  const ImageF input = render_view(scene, e_in, kin, 16, 16);
  const T input_t = image_to_tensor<double>(input);

  std::vector<CameraExtrinsic> side_cams;
  std::vector<T> gts;
  const int res = cfg.render.resolution;
  for (int v = 0; v < 2; ++v) {
    const CameraExtrinsic ev = sample_training_pose(data_rng);
    side_cams.push_back(tf.apply_camera(ev));
    const ImageF gt = render_view(scene, ev, kin, res, res);
    std::vector<double> rows(static_cast<size_t>(res) * res * 3);
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x)
        for (int c = 0; c < 3; ++c)
          rows[(static_cast<size_t>(y) * res + x) * 3 + c] = gt.at(c, y, x);
    gts.push_back(T::from_data({static_cast<int64_t>(res) * res, 3}, std::move(rows)));
  }
  const auto net = PerceptualNet<double>::create(kPerceptualSeed);

  const auto f = [&, feature] {
    const auto tri = model.reconstruct(input_t, feature);
    const auto field = triplane_field(tri, model.nerf);
    std::vector<T> preds;
    for (size_t v = 0; v < side_cams.size(); ++v) {
      const auto r = render_field(field, side_cams[v], kin, res, res, cfg.render.samples,
                                  SampleMode::midpoint, 0);
      preds.push_back(r.rgb);
    }
    return recon_loss<double>(preds, gts, res, res, 2.0, &net).total;
  };

  cb.run("endtoend_image_to_loss", f, bound_param_list(store, p), 1e-3, /*max_coords=*/2);
}

// ---- fault injection (negative control) ----

// Forward matches softmax exactly; backward flips the sign. A correct checker
// must flag this.
T faulty_softmax(const T& x) {
  const int64_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> y(x.value().size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* in = x.value().data() + r * cols;
    double* out = y.data() + r * cols;
    double mx = in[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    double z = 0;
    for (int64_t c = 0; c < cols; ++c) z += (out[c] = std::exp(in[c] - mx));
    for (int64_t c = 0; c < cols; ++c) out[c] /= z;
  }
  const std::vector<double> yv = y;
  return make_op<double>(
      "faulty_softmax", x.shape(), std::move(y), {x},
      [rows, cols, yv](detail::Node<double>& n) {
        if (!n.parents[0]->requires_grad) return;
        auto& gx = n.parents[0]->grad_buffer();
        for (int64_t r = 0; r < rows; ++r) {
          const double* yr = yv.data() + r * cols;
          const double* gr = n.grad.data() + r * cols;
          double dot = 0;
          for (int64_t c = 0; c < cols; ++c) dot += yr[c] * gr[c];
          for (int64_t c = 0; c < cols; ++c) gx[r * cols + c] -= yr[c] * (gr[c] - dot);
        }
      });
}

void add_fault_case(CaseBuilder& cb) {
  Rng rng(41);
  const T x = leaf(rng, {3, 5}, -1, 1);
  cb.run("injected_softmax_signflip", [&] { return wsum(44, faulty_softmax(x)); }, {{"x", x}});
}

}  // namespace

std::string SuiteResult::table() const {
  std::ostringstream os;
  for (const auto& c : cases) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-32s %-4s max_rel_err=%.3e tol=%.0e\n", c.name.c_str(),
                  c.pass() ? "ok" : "FAIL", c.report.max_rel_err, c.tol);
    os << buf;
  }
  return os.str();
}

SuiteResult run_gradcheck_suite(const std::string& scope, bool inject_fault) {
  LRM_REQUIRE(scope == "primitive" || scope == "module" || scope == "endtoend",
              "unknown gradcheck scope '", scope, "'");
  CaseBuilder cb;
  if (scope == "primitive") add_primitive_cases(cb);
  if (scope == "module") add_module_cases(cb);
  if (scope == "endtoend") add_endtoend_case(cb);
  if (inject_fault) add_fault_case(cb);
  return SuiteResult{std::move(cb.cases)};
}

}  // namespace lrm
