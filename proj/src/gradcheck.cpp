#include "cyclecap/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cyclecap {

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

namespace {

std::vector<Eigen::Index> sample_entries(Eigen::Index size, const GradCheckOptions& o, Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(size));
  std::iota(idx.begin(), idx.end(), 0);
  if (o.fraction >= 1.0) return idx;
  const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(o.fraction * static_cast<double>(size))));
  for (std::size_t i = 0; i < keep; ++i) std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double eval_loss(const std::function<Var(Graph&)>& loss) {
  Graph g(false);
  return loss(g).scalar();
}

}  // namespace

std::vector<GradCheckEntry> check_gradients(const std::vector<Parameter*>& params,
                                            const std::function<Var(Graph&)>& loss,
                                            const GradCheckOptions& options) {
  for (Parameter* p : params) p->zero_grad();
  {
    Graph g;
    g.backward(loss(g));
  }
  Rng rng(options.seed);
  std::vector<GradCheckEntry> out;
  for (Parameter* p : params) {
    GradCheckEntry e;
    e.name = p->name;
    for (Eigen::Index i : sample_entries(p->value.size(), options, rng)) {
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + options.step;
      const double up = eval_loss(loss);
      x = saved - options.step;
      const double down = eval_loss(loss);
      x = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = p->grad.data()[i];
      e.max_rel_error = std::max(e.max_rel_error, relative_error(analytic, numeric, options.floor));
      e.max_abs_error = std::max(e.max_abs_error, std::abs(analytic - numeric));
      ++e.checked;
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<GradCheckEntry> check_input_gradients(
    const std::vector<Matrix>& inputs, const std::function<Var(Graph&, const std::vector<Var>&)>& loss,
    const GradCheckOptions& options) {
  std::vector<Matrix> values = inputs;
  auto build = [&](Graph& g) {
    std::vector<Var> vars;
    for (const Matrix& m : values) vars.push_back(g.leaf(m));
    return std::make_pair(vars, loss(g, vars));
  };
  std::vector<Matrix> grads;
  {
    Graph g;
    auto [vars, l] = build(g);
    g.backward(l);
    for (const Var& v : vars) grads.push_back(g.grad(v));
  }
  Rng rng(options.seed);
  std::vector<GradCheckEntry> out;
  for (std::size_t k = 0; k < values.size(); ++k) {
    GradCheckEntry e;
    e.name = "input" + std::to_string(k);
    for (Eigen::Index i : sample_entries(values[k].size(), options, rng)) {
      double& x = values[k].data()[i];
      const double saved = x;
      auto at = [&](double v) {
        x = v;
        Graph g(false);
        return build(g).second.scalar();
      };
      const double up = at(saved + options.step);
      const double down = at(saved - options.step);
      x = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = grads[k].data()[i];
      e.max_rel_error = std::max(e.max_rel_error, relative_error(analytic, numeric, options.floor));
      e.max_abs_error = std::max(e.max_abs_error, std::abs(analytic - numeric));
      ++e.checked;
    }
    out.push_back(std::move(e));
  }
  return out;
}

double max_rel_error(const std::vector<GradCheckEntry>& entries) {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

}  // namespace cyclecap
