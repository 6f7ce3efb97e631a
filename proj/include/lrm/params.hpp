#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "lrm/rng.hpp"
#include "lrm/tensor.hpp"

namespace lrm {

// Named parameter registry. Values live here as f32; each training step binds
// them to fresh graph leaves, and the optimizer writes updates back. no_decay
// tags the AdamW weight-decay exclusion set (biases and LayerNorm params).
struct ParamInfo {
  Shape shape;
  std::vector<float> value;
  std::vector<float> m, v;  // AdamW moments, sized on first optimizer step
  bool no_decay = false;
};

class ParamStore {
 public:
  void define(const std::string& name, Shape shape, std::vector<float> init, bool no_decay);
  bool has(const std::string& name) const { return params_.count(name) > 0; }
  ParamInfo& at(const std::string& name);
  const ParamInfo& at(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }  // insertion order
  int64_t total_elements() const;

  // init helpers (draw from rng in a fixed element order)
  void define_trunc_normal(const std::string& name, Shape shape, float std, Rng& rng,
                           bool no_decay = false);
  void define_const(const std::string& name, Shape shape, float v, bool no_decay = false);

 private:
  std::unordered_map<std::string, ParamInfo> params_;
  std::vector<std::string> order_;
};

// Leaf tensors bound from a store for one graph build. at() names the missing
// tensor on lookup failure, which checkpoint loading relies on for diagnostics.
template <typename S>
class BoundParams {
 public:
  void insert(const std::string& name, Tensor<S> t) {
    order_.push_back(name);
    map_.emplace(name, std::move(t));
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = map_.find(name);
    LRM_REQUIRE(it != map_.end(), "missing parameter tensor '", name, "'");
    return it->second;
  }
  bool has(const std::string& name) const { return map_.count(name) > 0; }
  const std::vector<std::string>& names() const { return order_; }

 private:
  std::unordered_map<std::string, Tensor<S>> map_;
  std::vector<std::string> order_;
};

// requires_grad=true leaves carrying the store's current values (converted to S).
template <typename S>
BoundParams<S> bind_params(const ParamStore& store);

// Normal draws rejected outside ±2σ, matching the usual truncated-normal init.
double trunc_normal(Rng& rng, double std);

}  // namespace lrm
