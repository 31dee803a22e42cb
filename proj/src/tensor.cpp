#include "cyclecap/tensor.hpp"

#include <cmath>
#include <numbers>

namespace cyclecap {

double Rng::normal() {
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Parameter& ParameterStore::add(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                               Rng& rng, double scale) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  if (rows <= 0 || cols <= 0)
    throw DimensionError("parameter '" + name + "' has empty shape " + shape_str(rows, cols));
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value.resize(rows, cols);
  for (Eigen::Index i = 0; i < p->value.size(); ++i)
    p->value.data()[i] = scale == 0.0 ? 0.0 : rng.uniform(-scale, scale);
  p->zero_grad();
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::add_zeros(const std::string& name, Eigen::Index rows,
                                     Eigen::Index cols) {
  Rng unused(0);
  return add(name, rows, cols, unused, 0.0);
}

Parameter& ParameterStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InputError("unknown parameter '" + name + "'");
  return *params_[it->second];
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InputError("unknown parameter '" + name + "'");
  return *params_[it->second];
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  for (auto& p : params_) {
    const Parameter& src = other.at(p->name);
    if (src.value.rows() != p->value.rows() || src.value.cols() != p->value.cols())
      throw DimensionError("parameter '" + p->name + "': " + shape_str(p->value) + " vs " +
                           shape_str(src.value));
    p->value = src.value;
  }
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParameterStore::with_prefix(const std::string& prefix) {
  std::vector<Parameter*> out;
  for (auto& p : params_)
    if (p->name.compare(0, prefix.size(), prefix) == 0) out.push_back(p.get());
  return out;
}

}  // namespace cyclecap
