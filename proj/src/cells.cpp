#include "cyclecap/cells.hpp"

namespace cyclecap {

namespace {

void expect_column(const char* op, Var v, Eigen::Index rows) {
  if (v.cols() != 1 || v.rows() != rows)
    throw DimensionError(std::string(op) + ": expected " + shape_str(rows, 1) + ", got " +
                         shape_str(v.value()));
}

}  // namespace

LstmParams LstmParams::create(ParameterStore& store, const std::string& prefix,
                              Eigen::Index input_size, Eigen::Index hidden_size, Rng& rng) {
  LstmParams p;
  p.input_size = input_size;
  p.hidden_size = hidden_size;
  p.input_weights = &store.add(prefix + ".W", 4 * hidden_size, input_size, rng, kInitScale);
  p.hidden_weights = &store.add(prefix + ".U", 4 * hidden_size, hidden_size, rng, kInitScale);
  p.bias = &store.add_zeros(prefix + ".b", 4 * hidden_size, 1);
  return p;
}

LstmState lstm_cell(Graph& g, const LstmParams& p, Var x, Var h_prev, Var c_prev) {
  expect_column("lstm_cell input", x, p.input_size);
  expect_column("lstm_cell hidden", h_prev, p.hidden_size);
  expect_column("lstm_cell cell", c_prev, p.hidden_size);
  const Eigen::Index h = p.hidden_size;
  Var pre = add(add(matmul(g.param(*p.input_weights), x), matmul(g.param(*p.hidden_weights), h_prev)),
                g.param(*p.bias));
  Var in_gate = sigmoid(slice_rows(pre, 0, h));
  Var forget_gate = sigmoid(slice_rows(pre, h, h));
  Var candidate = tanh(slice_rows(pre, 2 * h, h));
  Var out_gate = sigmoid(slice_rows(pre, 3 * h, h));
  Var c = add(mul(forget_gate, c_prev), mul(in_gate, candidate));
  Var hidden = mul(out_gate, tanh(c));
  return {hidden, c};
}

GruParams GruParams::create(ParameterStore& store, const std::string& prefix,
                            Eigen::Index input_size, Eigen::Index hidden_size, Rng& rng) {
  GruParams p;
  p.input_size = input_size;
  p.hidden_size = hidden_size;
  p.input_weights = &store.add(prefix + ".W", 3 * hidden_size, input_size, rng, kInitScale);
  p.hidden_weights = &store.add(prefix + ".U", 3 * hidden_size, hidden_size, rng, kInitScale);
  p.bias = &store.add_zeros(prefix + ".b", 3 * hidden_size, 1);
  return p;
}

Var gru_cell(Graph& g, const GruParams& p, Var x, Var h_prev) {
  expect_column("gru_cell input", x, p.input_size);
  expect_column("gru_cell hidden", h_prev, p.hidden_size);
  const Eigen::Index h = p.hidden_size;
  Var from_input = add(matmul(g.param(*p.input_weights), x), g.param(*p.bias));
  Var from_hidden = matmul(g.param(*p.hidden_weights), h_prev);
  Var update = sigmoid(add(slice_rows(from_input, 0, h), slice_rows(from_hidden, 0, h)));
  Var reset = sigmoid(add(slice_rows(from_input, h, h), slice_rows(from_hidden, h, h)));
  Var candidate =
      tanh(add(slice_rows(from_input, 2 * h, h), mul(reset, slice_rows(from_hidden, 2 * h, h))));
  return add(mul(one_minus(update), candidate), mul(update, h_prev));
}

StateInit StateInit::create(ParameterStore& store, const std::string& prefix,
                            Eigen::Index source_dim, Eigen::Index hidden_size, Rng& rng) {
  StateInit p;
  p.weights = &store.add(prefix + ".W", hidden_size, source_dim, rng, kInitScale);
  p.bias = &store.add_zeros(prefix + ".b", hidden_size, 1);
  return p;
}

Var init_state(Graph& g, const StateInit& p, Var rows) {
  if (rows.rows() == 0) throw InputError("init_state: empty source");
  if (rows.cols() != p.weights->value.cols())
    throw DimensionError("init_state: source " + shape_str(rows.value()) + " vs weights " +
                         shape_str(p.weights->value));
  return tanh(add(matmul(g.param(*p.weights), mean_rows(rows)), g.param(*p.bias)));
}

Linear Linear::create(ParameterStore& store, const std::string& prefix, Eigen::Index in,
                      Eigen::Index out, Rng& rng) {
  Linear p;
  p.weights = &store.add(prefix + ".W", out, in, rng, kInitScale);
  p.bias = &store.add_zeros(prefix + ".b", out, 1);
  return p;
}

Var linear(Graph& g, const Linear& p, Var x) {
  return add(matmul(g.param(*p.weights), x), g.param(*p.bias));
}

}  // namespace cyclecap
