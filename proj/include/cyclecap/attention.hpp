#pragma once

#include <string>

#include "cyclecap/autodiff.hpp"

namespace cyclecap {

// Additive (single hidden layer, tanh) attention scorer:
//   e_i = combine . tanh(key_proj^T key_i + query_proj query)
struct AttentionLayer {
  Parameter* key_proj = nullptr;    // D x A
  Parameter* query_proj = nullptr;  // A x Q
  Parameter* combine = nullptr;     // A x 1
  Eigen::Index key_dim = 0;
  Eigen::Index query_dim = 0;
  Eigen::Index hidden_dim = 0;

  static AttentionLayer create(ParameterStore& store, const std::string& prefix,
                               Eigen::Index key_dim, Eigen::Index query_dim,
                               Eigen::Index hidden_dim, Rng& rng);
};

struct AttentionOutput {
  Var weights;  // K x 1, stochastic
  Var context;  // D x 1, sum_i weights_i key_i
};

// Keys with their projection computed once per source sequence.
struct ProjectedKeys {
  Var keys;       // K x D
  Var projected;  // K x A
};

ProjectedKeys project_keys(Graph& g, const AttentionLayer& layer, Var keys);
AttentionOutput attend(Graph& g, const AttentionLayer& layer, const ProjectedKeys& keys,
                       Var query);
AttentionOutput attend(Graph& g, const AttentionLayer& layer, Var keys, Var query);

}  // namespace cyclecap
