#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cyclecap/autodiff.hpp"

namespace cyclecap {

struct GradCheckOptions {
  double step = 1e-5;    // central difference half-width
  double fraction = 1.0;  // share of entries checked per parameter (at least one)
  double floor = 1e-6;    // denominator floor for the relative error
  std::uint64_t seed = 0;  // entry sampling when fraction < 1
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

// relative error = |analytic - numeric| / max(|analytic|, |numeric|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-6);

// Compares reverse-mode gradients of loss(graph) w.r.t. the given parameters
// against central finite differences. The loss builder must be a pure
// function of the parameter values.
std::vector<GradCheckEntry> check_gradients(const std::vector<Parameter*>& params,
                                            const std::function<Var(Graph&)>& loss,
                                            const GradCheckOptions& options = {});

// Same, for free leaves: loss receives one differentiable Var per input.
std::vector<GradCheckEntry> check_input_gradients(
    const std::vector<Matrix>& inputs, const std::function<Var(Graph&, const std::vector<Var>&)>& loss,
    const GradCheckOptions& options = {});

double max_rel_error(const std::vector<GradCheckEntry>& entries);

}  // namespace cyclecap
