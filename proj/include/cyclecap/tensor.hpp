#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cyclecap/errors.hpp"

namespace cyclecap {

using Scalar = double;

template <typename T>
using MatrixT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using VectorT = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Row-major storage so data() is the contiguous layout written to checkpoints.
using Matrix = MatrixT<Scalar>;
using Vector = VectorT<Scalar>;

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename Derived>
std::string shape_str(const Eigen::MatrixBase<Derived>& m) {
  return shape_str(m.rows(), m.cols());
}

// Deterministic generator. Distributions are derived from raw 64-bit draws
// so streams are identical across standard-library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  // splitmix64
  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  // [0, n)
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(next() % n); }

  // Independent child stream; the parent advances by one draw.
  Rng split() { return Rng(next() ^ 0xD1B54A32D192ED03ULL); }

 private:
  std::uint64_t state_;
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

// A trainable array with a hierarchical name ("en.lstm.W") and its gradient.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Owns parameters with stable addresses; iteration order is insertion order.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  // Uniform(-scale, scale) init; scale 0 gives zeros.
  Parameter& add(const std::string& name, Eigen::Index rows, Eigen::Index cols, Rng& rng,
                 double scale);
  Parameter& add_zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols);

  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();

  // Copies values from another store with identical names and shapes.
  void copy_values_from(const ParameterStore& other);

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  // Parameters whose name starts with prefix.
  std::vector<Parameter*> with_prefix(const std::string& prefix);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace cyclecap
