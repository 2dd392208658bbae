#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "langtyp/autograd.hpp"

namespace langtyp {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moments are created lazily per parameter name.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Increments the step counter, then updates every parameter from its
  // gradient. Throws RuntimeFailure naming the parameter if any gradient is
  // not finite; no parameter is modified in that case.
  void step(ParameterSet& params);

  std::int64_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }
  const Tensor& first_moment(const std::string& name) const { return state_.at(name).m; }
  const Tensor& second_moment(const std::string& name) const { return state_.at(name).v; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };
  AdamConfig config_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace langtyp
