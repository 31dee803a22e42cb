#pragma once

#include <string>

#include "cyclecap/autodiff.hpp"

namespace cyclecap {

// Initialization half-width for weight matrices; biases start at zero.
inline constexpr double kInitScale = 0.08;

// Gate rows are stacked as [input; forget; candidate; output].
struct LstmParams {
  Parameter* input_weights = nullptr;   // 4H x X
  Parameter* hidden_weights = nullptr;  // 4H x H
  Parameter* bias = nullptr;            // 4H x 1
  Eigen::Index input_size = 0;
  Eigen::Index hidden_size = 0;

  static LstmParams create(ParameterStore& store, const std::string& prefix,
                           Eigen::Index input_size, Eigen::Index hidden_size, Rng& rng);
};

struct LstmState {
  Var h;
  Var c;
};

LstmState lstm_cell(Graph& g, const LstmParams& p, Var x, Var h_prev, Var c_prev);

// Gate rows are stacked as [update; reset; candidate]. h = (1 - z) n + z h_prev,
// so a saturated update gate keeps the previous state.
struct GruParams {
  Parameter* input_weights = nullptr;   // 3H x X
  Parameter* hidden_weights = nullptr;  // 3H x H
  Parameter* bias = nullptr;            // 3H x 1
  Eigen::Index input_size = 0;
  Eigen::Index hidden_size = 0;

  static GruParams create(ParameterStore& store, const std::string& prefix,
                          Eigen::Index input_size, Eigen::Index hidden_size, Rng& rng);
};

Var gru_cell(Graph& g, const GruParams& p, Var x, Var h_prev);

// tanh(W mean(rows) + b): initial recurrent state from a set of vectors.
struct StateInit {
  Parameter* weights = nullptr;  // H x D
  Parameter* bias = nullptr;     // H x 1

  static StateInit create(ParameterStore& store, const std::string& prefix,
                          Eigen::Index source_dim, Eigen::Index hidden_size, Rng& rng);
};

Var init_state(Graph& g, const StateInit& p, Var rows);

// W x + b
struct Linear {
  Parameter* weights = nullptr;  // O x I
  Parameter* bias = nullptr;     // O x 1

  static Linear create(ParameterStore& store, const std::string& prefix, Eigen::Index in,
                       Eigen::Index out, Rng& rng);
};

Var linear(Graph& g, const Linear& p, Var x);

}  // namespace cyclecap
