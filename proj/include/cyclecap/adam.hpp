#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "cyclecap/tensor.hpp"

namespace cyclecap {

struct AdamConfig {
  double learning_rate = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Moments are keyed by parameter name, so one
// optimizer may serve a subset of a store (e.g. everything but Part1).
class Adam {
 public:
  explicit Adam(AdamConfig config = {});

  // Applies one update using p->grad. Throws NumericError naming the first
  // parameter whose gradient holds a NaN/Inf; no parameter is modified then.
  void step(std::span<Parameter* const> params);

  std::int64_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }

 private:
  struct Moments {
    Matrix first;
    Matrix second;
  };

  AdamConfig config_;
  std::int64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace cyclecap
