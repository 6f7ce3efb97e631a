#pragma once

#include "lrm/checkpoint.hpp"
#include "lrm/losses.hpp"
#include "lrm/model.hpp"
#include "lrm/synthetic.hpp"

namespace lrm {

struct TrainConfig {
  float lr_peak = 4e-4f;
  int warmup_iters = 100;  // paper 3000
  int total_iters = 1000;
  float beta1 = 0.9f, beta2 = 0.95f;
  float weight_decay = 0.05f;
  float clip_norm = 1.0f;
  float lambda = 2.0f;  // perceptual weight, Eq. 6
  int views = 4;        // V: input view + V-1 side views
  int batch_size = 1;   // shapes accumulated per optimizer step
  uint64_t seed = 0;
  bool random_crop = false;
  int crop_min = 32, crop_max = 96, crop_size = 32;  // paper: 128 of 512

  void validate() const;
};

TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);

// Linear warm-up 0 -> lr_peak over warmup_iters, cosine decay to 0 at
// total_iters.
float lr_schedule(int64_t step, const TrainConfig& cfg);

// Global gradient norm over every parameter leaf, accumulated in f64.
double global_grad_norm(const BoundParams<float>& params);

// Scales all gradients so the global norm is at most max_norm; returns the
// pre-clip norm.
double clip_gradients(const BoundParams<float>& params, double max_norm);

// One AdamW update (decoupled decay, bias correction, eps 1e-8) from the
// gradients held by `bound` into the store values. step is 1-based. Throws on
// non-finite gradients, naming the parameter.
void adamw_update(ParamStore& store, const BoundParams<float>& bound, int64_t step, float lr,
                  const TrainConfig& cfg);

struct CropResult {
  ImageF image;
  CameraIntrinsic k;
};

// Resizes gt to a random side in [crop_min, crop_max], crops a crop_size
// window, and adjusts the intrinsics so rendering crop_size x crop_size with
// the returned k reproduces exactly that window of the resized view.
CropResult random_view_crop(const ImageF& gt, const CameraIntrinsic& k, Rng& rng,
                            const TrainConfig& cfg);

struct StepInfo {
  int64_t step = 0;  // 1-based, the step just completed
  float lr = 0;
  float total = 0, mse = 0, perceptual = 0;
};

nlohmann::json step_info_to_json(const StepInfo& info);

class Trainer {
 public:
  // Defines and randomly initializes parameters from cfg.seed.
  Trainer(ModelConfig mcfg, TrainConfig tcfg, DatasetManifest data);

  StepInfo step();
  int64_t current_step() const { return step_; }
  bool done() const { return step_ >= tcfg_.total_iters; }

  void save(const std::string& dir) const;
  // Restores parameters, optimizer moments, step counter and rng state; the
  // checkpoint must come from an identical model/train config.
  void load(const std::string& dir);

  ParamStore& store() { return store_; }
  const ModelConfig& model_config() const { return mcfg_; }
  const TrainConfig& train_config() const { return tcfg_; }
  const PerceptualNet<float>& perceptual_net() const { return pnet_; }

 private:
  ModelConfig mcfg_;
  TrainConfig tcfg_;
  DatasetManifest data_;
  ParamStore store_;
  PerceptualNet<float> pnet_;
  Rng rng_;
  int64_t step_ = 0;
};

}  // namespace lrm
