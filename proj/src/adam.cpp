#include "cyclecap/adam.hpp"

#include <cmath>

namespace cyclecap {

Adam::Adam(AdamConfig config) : config_(config) {
  if (!(config_.learning_rate > 0.0)) throw ConfigError("adam: learning rate must be positive");
  if (!(config_.beta1 >= 0.0 && config_.beta1 < 1.0 && config_.beta2 >= 0.0 &&
        config_.beta2 < 1.0))
    throw ConfigError("adam: betas must lie in [0, 1)");
}

void Adam::step(std::span<Parameter* const> params) {
  for (const Parameter* p : params) {
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols())
      throw DimensionError("adam: gradient of '" + p->name + "' is " + shape_str(p->grad) +
                           ", parameter is " + shape_str(p->value));
    if (!p->grad.allFinite()) throw NumericError("adam: non-finite gradient in '" + p->name + "'");
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (Parameter* p : params) {
    auto [it, inserted] = moments_.try_emplace(p->name);
    Moments& m = it->second;
    if (inserted) {
      m.first.setZero(p->value.rows(), p->value.cols());
      m.second.setZero(p->value.rows(), p->value.cols());
    } else if (m.first.rows() != p->value.rows() || m.first.cols() != p->value.cols()) {
      throw DimensionError("adam: moment shape changed for '" + p->name + "'");
    }
    m.first = config_.beta1 * m.first + (1.0 - config_.beta1) * p->grad;
    m.second = config_.beta2 * m.second + (1.0 - config_.beta2) * p->grad.cwiseAbs2();
    p->value.array() -= config_.learning_rate * (m.first.array() / c1) /
                        ((m.second.array() / c2).sqrt() + config_.epsilon);
  }
}

}  // namespace cyclecap
