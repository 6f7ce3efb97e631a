#include "lrm/params.hpp"

namespace lrm {

void ParamStore::define(const std::string& name, Shape shape, std::vector<float> init,
                        bool no_decay) {
  LRM_REQUIRE(!has(name), "parameter '", name, "' defined twice");
  LRM_REQUIRE(numel(shape) == static_cast<int64_t>(init.size()), "parameter '", name,
              "': shape ", shape_str(shape), " vs ", init.size(), " values");
  check_finite(name.c_str(), init);
  ParamInfo info;
  info.shape = std::move(shape);
  info.value = std::move(init);
  info.no_decay = no_decay;
  params_.emplace(name, std::move(info));
  order_.push_back(name);
}

ParamInfo& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  LRM_REQUIRE(it != params_.end(), "missing parameter tensor '", name, "'");
  return it->second;
}

const ParamInfo& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  LRM_REQUIRE(it != params_.end(), "missing parameter tensor '", name, "'");
  return it->second;
}

int64_t ParamStore::total_elements() const {
  int64_t n = 0;
  for (const auto& name : order_) n += numel(at(name).shape);
  return n;
}

double trunc_normal(Rng& rng, double std) {
  double z;
  do {
    z = rng.normal();
  } while (std::abs(z) > 2.0);
  return z * std;
}

void ParamStore::define_trunc_normal(const std::string& name, Shape shape, float std, Rng& rng,
                                     bool no_decay) {
  std::vector<float> init(static_cast<size_t>(numel(shape)));
  for (auto& v : init) v = static_cast<float>(trunc_normal(rng, std));
  define(name, std::move(shape), std::move(init), no_decay);
}

void ParamStore::define_const(const std::string& name, Shape shape, float v, bool no_decay) {
  define(name, std::move(shape), std::vector<float>(static_cast<size_t>(numel(shape)), v),
         no_decay);
}

template <typename S>
BoundParams<S> bind_params(const ParamStore& store) {
  BoundParams<S> bound;
  for (const auto& name : store.names()) {
    const ParamInfo& info = store.at(name);
    std::vector<S> data(info.value.begin(), info.value.end());
    bound.insert(name, Tensor<S>::from_data(info.shape, std::move(data), true));
  }
  return bound;
}

template BoundParams<float> bind_params<float>(const ParamStore&);
template BoundParams<double> bind_params<double>(const ParamStore&);

}  // namespace lrm
