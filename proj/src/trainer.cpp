#include "lrm/trainer.hpp"

#include <cmath>

namespace lrm {

using nlohmann::json;

void TrainConfig::validate() const {
  LRM_REQUIRE(lr_peak > 0, "lr_peak must be > 0");
  LRM_REQUIRE(warmup_iters >= 1 && warmup_iters < total_iters,
              "warmup_iters ", warmup_iters, " must be in [1, total_iters ", total_iters, ")");
  LRM_REQUIRE(views >= 2, "V must be >= 2 (input view plus at least one side view), got ", views);
  LRM_REQUIRE(batch_size >= 1, "batch_size must be >= 1");
  LRM_REQUIRE(clip_norm > 0 && weight_decay >= 0 && lambda >= 0, "invalid optimizer settings");
  LRM_REQUIRE(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "betas must lie in [0,1)");
  LRM_REQUIRE(crop_size >= 1 && crop_min >= crop_size && crop_max >= crop_min,
              "crop range [", crop_min, ",", crop_max, "] must contain sides >= crop_size ",
              crop_size);
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  for (const auto& [key, v] : j.items()) {
    if (key == "lr_peak") cfg.lr_peak = v.get<float>();
    else if (key == "warmup_iters") cfg.warmup_iters = v.get<int>();
    else if (key == "total_iters") cfg.total_iters = v.get<int>();
    else if (key == "beta1") cfg.beta1 = v.get<float>();
    else if (key == "beta2") cfg.beta2 = v.get<float>();
    else if (key == "weight_decay") cfg.weight_decay = v.get<float>();
    else if (key == "clip_norm") cfg.clip_norm = v.get<float>();
    else if (key == "lambda") cfg.lambda = v.get<float>();
    else if (key == "views") cfg.views = v.get<int>();
    else if (key == "batch_size") cfg.batch_size = v.get<int>();
    else if (key == "seed") cfg.seed = v.get<uint64_t>();
    else if (key == "random_crop") cfg.random_crop = v.get<bool>();
    else if (key == "crop_min") cfg.crop_min = v.get<int>();
    else if (key == "crop_max") cfg.crop_max = v.get<int>();
    else if (key == "crop_size") cfg.crop_size = v.get<int>();
    else throw Error(format_msg("unknown config key '", key, "' in section 'train'"));
  }
  cfg.validate();
  return cfg;
}

json train_config_to_json(const TrainConfig& cfg) {
  return {{"lr_peak", cfg.lr_peak},
          {"warmup_iters", cfg.warmup_iters},
          {"total_iters", cfg.total_iters},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"weight_decay", cfg.weight_decay},
          {"clip_norm", cfg.clip_norm},
          {"lambda", cfg.lambda},
          {"views", cfg.views},
          {"batch_size", cfg.batch_size},
          {"seed", cfg.seed},
          {"random_crop", cfg.random_crop},
          {"crop_min", cfg.crop_min},
          {"crop_max", cfg.crop_max},
          {"crop_size", cfg.crop_size}};
}

float lr_schedule(int64_t step, const TrainConfig& cfg) {
  LRM_REQUIRE(step >= 0, "lr_schedule: negative step");
  if (step <= cfg.warmup_iters)
    return cfg.lr_peak * static_cast<float>(step) / static_cast<float>(cfg.warmup_iters);
  if (step >= cfg.total_iters) return 0.0f;
  const double progress = static_cast<double>(step - cfg.warmup_iters) /
                          static_cast<double>(cfg.total_iters - cfg.warmup_iters);
  return static_cast<float>(cfg.lr_peak * 0.5 * (1.0 + std::cos(M_PI * progress)));
}

double global_grad_norm(const BoundParams<float>& params) {
  double sq = 0;
  for (const auto& name : params.names()) {
    for (float g : params.at(name).grad()) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

double clip_gradients(const BoundParams<float>& params, double max_norm) {
  LRM_REQUIRE(max_norm > 0, "clip norm must be > 0");
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const float scale = static_cast<float>(max_norm / norm);
    for (const auto& name : params.names()) {
      std::vector<float>& g = params.at(name).node()->grad_buffer();
      for (float& v : g) v *= scale;
    }
  }
  return norm;
}

void adamw_update(ParamStore& store, const BoundParams<float>& bound, int64_t step, float lr,
                  const TrainConfig& cfg) {
  LRM_REQUIRE(step >= 1, "adamw_update: step is 1-based");
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(step));
  constexpr double kEps = 1e-8;
  for (const auto& name : store.names()) {
    ParamInfo& info = store.at(name);
    const std::vector<float>& g = bound.at(name).grad();
    for (float gv : g)
      LRM_REQUIRE(std::isfinite(gv), "non-finite gradient for parameter '", name, "'");
    if (info.m.empty()) {
      info.m.assign(info.value.size(), 0.f);
      info.v.assign(info.value.size(), 0.f);
    }
    const bool decay = !info.no_decay && cfg.weight_decay > 0;
    for (size_t i = 0; i < info.value.size(); ++i) {
      info.m[i] = cfg.beta1 * info.m[i] + (1.f - cfg.beta1) * g[i];
      info.v[i] = cfg.beta2 * info.v[i] + (1.f - cfg.beta2) * g[i] * g[i];
      const double m_hat = info.m[i] / bc1;
      const double v_hat = info.v[i] / bc2;
      double upd = m_hat / (std::sqrt(v_hat) + kEps);
      if (decay) upd += static_cast<double>(cfg.weight_decay) * info.value[i];
      info.value[i] -= static_cast<float>(lr * upd);
    }
  }
}

CropResult random_view_crop(const ImageF& gt, const CameraIntrinsic& k, Rng& rng,
                            const TrainConfig& cfg) {
  const int side = static_cast<int>(rng.uniform_int(cfg.crop_min, cfg.crop_max));
  const ImageF resized =
      (side == gt.width && side == gt.height) ? gt : resize_bilinear(gt, side, side);
  const int dx = static_cast<int>(rng.uniform_int(0, side - cfg.crop_size));
  const int dy = static_cast<int>(rng.uniform_int(0, side - cfg.crop_size));
  CropResult out;
  out.image = crop(resized, dy, dx, cfg.crop_size, cfg.crop_size);
  // Rendering crop_size px with these intrinsics traces exactly the rays of
  // the crop window inside the side x side full render.
  const double cw = cfg.crop_size;
  out.k.foc_x = k.foc_x * side / cw;
  out.k.foc_y = k.foc_y * side / cw;
  out.k.pp_x = (k.pp_x * side - dx) / cw;
  out.k.pp_y = (k.pp_y * side - dy) / cw;
  return out;
}

json step_info_to_json(const StepInfo& info) {
  return {{"step", info.step},
          {"lr", info.lr},
          {"total", info.total},
          {"mse", info.mse},
          {"perceptual", info.perceptual}};
}

namespace {

// [C,H,W] float image -> [H*W, C] tensor rows (pixel-major), constant.
Tensor<float> image_rows(const ImageF& img) {
  std::vector<float> rows(img.data.size());
  const int c_n = img.channels;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < c_n; ++c)
        rows[(static_cast<size_t>(y) * img.width + x) * c_n + c] = img.at(c, y, x);
  return Tensor<float>::from_data({static_cast<int64_t>(img.height) * img.width, c_n},
                                  std::move(rows));
}

}  // namespace

Trainer::Trainer(ModelConfig mcfg, TrainConfig tcfg, DatasetManifest data)
    : mcfg_(std::move(mcfg)),
      tcfg_(tcfg),
      data_(std::move(data)),
      pnet_(PerceptualNet<float>::create(kPerceptualSeed)),
      rng_(tcfg.seed) {
  mcfg_.validate();
  tcfg_.validate();
  LRM_REQUIRE(!data_.shapes.empty(), "training dataset has no shapes");
  for (const ShapeRef& s : data_.shapes)
    LRM_REQUIRE(static_cast<int>(s.views.size()) >= tcfg_.views, "shape '", s.id, "' has ",
                s.views.size(), " views, need at least V=", tcfg_.views);
  Rng init_rng = Rng::derive(tcfg_.seed, 0x696e6974);  // init stream, separate from data stream
  LRM<float>::define_params(store_, mcfg_, init_rng);
}

StepInfo Trainer::step() {
  LRM_REQUIRE(!done(), "training already reached total_iters = ", tcfg_.total_iters);
  const BoundParams<float> bound = bind_params<float>(store_);
  const LRM<float> model = LRM<float>::bind(bound, mcfg_);

  StepInfo info;
  const float inv_batch = 1.f / static_cast<float>(tcfg_.batch_size);
  for (int b = 0; b < tcfg_.batch_size; ++b) {
    const ShapeRef& shape =
        data_.shapes[static_cast<size_t>(
            rng_.uniform_int(0, static_cast<int64_t>(data_.shapes.size()) - 1))];
    const int n_views = static_cast<int>(shape.views.size());
    const int input_idx = static_cast<int>(rng_.uniform_int(0, n_views - 1));

    // V-1 side views drawn without replacement from the remaining views.
    std::vector<int> pool;
    for (int i = 0; i < n_views; ++i)
      if (i != input_idx) pool.push_back(i);
    std::vector<int> picked{input_idx};
    for (int v = 1; v < tcfg_.views; ++v) {
      const size_t j = static_cast<size_t>(
          rng_.uniform_int(0, static_cast<int64_t>(pool.size()) - 1));
      picked.push_back(pool[j]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
    }

    const ViewRef& input_view = shape.views[static_cast<size_t>(input_idx)];
    const ImageF input_full = load_view_image(data_, input_view);
    const Tensor<float> input_tensor =
        image_to_tensor<float>(fit_resolution(input_full, mcfg_.encoder.image_size));
    const auto [e_norm, world_tf] = normalize_camera(input_view.E, NormalizeMode::synthetic);
    const Triplane<float> tri =
        model.reconstruct(input_tensor, build_camera_feature(e_norm, input_view.K));
    const FieldFn<float> field = triplane_field(tri, model.nerf);

    std::vector<Tensor<float>> preds, gts;
    const int res = tcfg_.random_crop ? tcfg_.crop_size : mcfg_.render.resolution;
    for (int v = 0; v < tcfg_.views; ++v) {
      const ViewRef& view = shape.views[static_cast<size_t>(picked[static_cast<size_t>(v)])];
      const CameraExtrinsic e_v = (v == 0) ? e_norm : world_tf.apply_camera(view.E);
      const ImageF full = (v == 0) ? input_full : load_view_image(data_, view);
      CameraIntrinsic k_v = view.K;
      ImageF gt;
      if (tcfg_.random_crop) {
        CropResult cr = random_view_crop(full, view.K, rng_, tcfg_);
        gt = std::move(cr.image);
        k_v = cr.k;
      } else {
        gt = fit_resolution(full, res);
      }
      const uint64_t ray_seed = rng_.next_u64();
      const RenderResult<float> r = render_field(field, e_v, k_v, res, res, mcfg_.render.samples,
                                                 SampleMode::stratified, ray_seed);
      preds.push_back(r.rgb);
      gts.push_back(image_rows(gt));
    }

    const LossReport<float> report =
        recon_loss(preds, gts, res, res, tcfg_.lambda, tcfg_.lambda > 0 ? &pnet_ : nullptr);
    backward(scale(report.total, inv_batch));
    info.total += report.total.item() * inv_batch;
    info.mse += report.mse * inv_batch;
    info.perceptual += report.perceptual * inv_batch;
  }

  clip_gradients(bound, tcfg_.clip_norm);
  const int64_t next = step_ + 1;
  info.step = next;
  info.lr = lr_schedule(next, tcfg_);
  adamw_update(store_, bound, next, info.lr, tcfg_);
  step_ = next;
  return info;
}

void Trainer::save(const std::string& dir) const {
  const json extra = {{"step", step_},
                      {"rng", rng_.state_hex()},
                      {"model", model_config_to_json(mcfg_)},
                      {"train", train_config_to_json(tcfg_)}};
  save_checkpoint(dir, store_, extra);
}

void Trainer::load(const std::string& dir) {
  const json extra = load_checkpoint(dir, store_);
  LRM_REQUIRE(extra.contains("step") && extra.contains("rng"),
              "checkpoint '", dir, "' lacks trainer state (step, rng)");
  if (extra.contains("model"))
    LRM_REQUIRE(extra["model"] == model_config_to_json(mcfg_),
                "checkpoint '", dir, "' was written with a different model config");
  step_ = extra["step"].get<int64_t>();
  rng_.set_state_hex(extra["rng"].get<std::string>());
}

}  // namespace lrm
