#include "cyclecap/attention.hpp"

#include "cyclecap/cells.hpp"

namespace cyclecap {

AttentionLayer AttentionLayer::create(ParameterStore& store, const std::string& prefix,
                                      Eigen::Index key_dim, Eigen::Index query_dim,
                                      Eigen::Index hidden_dim, Rng& rng) {
  AttentionLayer a;
  a.key_dim = key_dim;
  a.query_dim = query_dim;
  a.hidden_dim = hidden_dim;
  a.key_proj = &store.add(prefix + ".Wk", key_dim, hidden_dim, rng, kInitScale);
  a.query_proj = &store.add(prefix + ".Wq", hidden_dim, query_dim, rng, kInitScale);
  a.combine = &store.add(prefix + ".v", hidden_dim, 1, rng, kInitScale);
  return a;
}

ProjectedKeys project_keys(Graph& g, const AttentionLayer& layer, Var keys) {
  if (keys.rows() == 0) throw InputError("attend: no keys (K = 0)");
  if (keys.cols() != layer.key_dim)
    throw DimensionError("attend: keys " + shape_str(keys.value()) + " vs key dim " +
                         std::to_string(layer.key_dim));
  return {keys, matmul(keys, g.param(*layer.key_proj))};
}

AttentionOutput attend(Graph& g, const AttentionLayer& layer, const ProjectedKeys& keys,
                       Var query) {
  if (query.cols() != 1 || query.rows() != layer.query_dim)
    throw DimensionError("attend: query " + shape_str(query.value()) + " vs query dim " +
                         std::to_string(layer.query_dim));
  Var q = transpose(matmul(g.param(*layer.query_proj), query));  // 1 x A
  Var hidden = tanh(add(keys.projected, q));                     // K x A
  Var scores = matmul(hidden, g.param(*layer.combine));          // K x 1
  Var weights = softmax(scores, 0);
  Var context = matmul(transpose(keys.keys), weights);  // D x 1
  return {weights, context};
}

AttentionOutput attend(Graph& g, const AttentionLayer& layer, Var keys, Var query) {
  return attend(g, layer, project_keys(g, layer, keys), query);
}

}  // namespace cyclecap
