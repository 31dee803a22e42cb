#include <doctest.h>

#include "cyclecap/cells.hpp"
#include "cyclecap/gradcheck.hpp"
#include "oracles.hpp"

using namespace cyclecap;

namespace {

Matrix random(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  return m;
}

void randomize(ParameterStore& s, Rng& rng, double scale = 0.5) {
  for (Parameter* p : s.all())
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = rng.uniform(-scale, scale);
}

void zero_all(ParameterStore& s) {
  for (Parameter* p : s.all()) p->value.setZero();
}

}  // namespace

TEST_CASE("lstm: zero weights, biases and inputs give zero state") {
  Rng rng(1);
  ParameterStore s;
  LstmParams p = LstmParams::create(s, "l", 3, 4, rng);
  zero_all(s);
  Graph g(false);
  LstmState out = lstm_cell(g, p, g.constant(Matrix::Zero(3, 1)), g.constant(Matrix::Zero(4, 1)),
                            g.constant(Matrix::Zero(4, 1)));
  CHECK(out.h.value().isZero());
  CHECK(out.c.value().isZero());
}

TEST_CASE("lstm: saturated forget and closed input gate keep the cell") {
  Rng rng(2);
  ParameterStore s;
  LstmParams p = LstmParams::create(s, "l", 3, 4, rng);
  const Eigen::Index H = 4;
  p.bias->value.block(0, 0, H, 1).setConstant(-40.0);  // input gate closed
  p.bias->value.block(H, 0, H, 1).setConstant(40.0);   // forget gate open
  Graph g(false);
  const Matrix c_prev = random(4, 1, rng);
  LstmState out = lstm_cell(g, p, g.constant(random(3, 1, rng)), g.constant(random(4, 1, rng)),
                            g.constant(c_prev));
  CHECK((out.c.value() - c_prev).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("lstm: matches the loop oracle") {
  Rng rng(3);
  ParameterStore s;
  LstmParams p = LstmParams::create(s, "l", 5, 3, rng);
  randomize(s, rng);
  const Matrix x = random(5, 1, rng), h = random(3, 1, rng), c = random(3, 1, rng);
  Graph g(false);
  LstmState out = lstm_cell(g, p, g.constant(x), g.constant(h), g.constant(c));
  const auto ref = oracle::lstm(p, oracle::to_vec(x), oracle::to_vec(h), oracle::to_vec(c));
  for (int k = 0; k < 3; ++k) {
    CHECK(out.h.value()(k, 0) == doctest::Approx(ref.h[k]).epsilon(1e-13));
    CHECK(out.c.value()(k, 0) == doctest::Approx(ref.c[k]).epsilon(1e-13));
  }
}

TEST_CASE("lstm: gradients match finite differences") {
  Rng rng(4);
  ParameterStore s;
  LstmParams p = LstmParams::create(s, "l", 3, 4, rng);
  randomize(s, rng);
  const Matrix x = random(3, 1, rng), h = random(4, 1, rng), c = random(4, 1, rng), w = random(4, 1, rng);
  const auto loss = [&](Graph& g) {
    LstmState out = lstm_cell(g, p, g.constant(x), g.constant(h), g.constant(c));
    return sum(mul(add(out.h, scale(out.c, 0.5)), g.constant(w)));
  };
  CHECK(max_rel_error(check_gradients(s.all(), loss)) < 1e-3);
  CHECK(max_rel_error(check_input_gradients({x, h, c}, [&](Graph& g, const std::vector<Var>& v) {
          LstmState out = lstm_cell(g, p, v[0], v[1], v[2]);
          return sum(mul(add(out.h, out.c), g.constant(w)));
        })) < 1e-3);
}

TEST_CASE("gru: zero weights and inputs give zero state") {
  Rng rng(5);
  ParameterStore s;
  GruParams p = GruParams::create(s, "r", 3, 4, rng);
  zero_all(s);
  Graph g(false);
  Var h = gru_cell(g, p, g.constant(Matrix::Zero(3, 1)), g.constant(Matrix::Zero(4, 1)));
  CHECK(h.value().isZero());
}

TEST_CASE("gru: saturated update gate keeps the previous state") {
  Rng rng(6);
  ParameterStore s;
  GruParams p = GruParams::create(s, "r", 3, 4, rng);
  p.bias->value.block(0, 0, 4, 1).setConstant(40.0);
  Graph g(false);
  const Matrix h_prev = random(4, 1, rng);
  Var h = gru_cell(g, p, g.constant(random(3, 1, rng)), g.constant(h_prev));
  CHECK((h.value() - h_prev).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gru: matches the loop oracle and finite differences") {
  Rng rng(7);
  ParameterStore s;
  GruParams p = GruParams::create(s, "r", 5, 3, rng);
  randomize(s, rng);
  const Matrix x = random(5, 1, rng), h = random(3, 1, rng), w = random(3, 1, rng);
  Graph g(false);
  const Matrix out = gru_cell(g, p, g.constant(x), g.constant(h)).value();
  const auto ref = oracle::gru(p, oracle::to_vec(x), oracle::to_vec(h));
  for (int k = 0; k < 3; ++k) CHECK(out(k, 0) == doctest::Approx(ref[k]).epsilon(1e-13));

  const auto loss = [&](Graph& gr) {
    return sum(mul(gru_cell(gr, p, gr.constant(x), gr.constant(h)), gr.constant(w)));
  };
  CHECK(max_rel_error(check_gradients(s.all(), loss)) < 1e-3);
  CHECK(max_rel_error(check_input_gradients({x, h}, [&](Graph& gr, const std::vector<Var>& v) {
          return sum(mul(gru_cell(gr, p, v[0], v[1]), gr.constant(w)));
        })) < 1e-3);
}

TEST_CASE("state init: zero features give tanh(b)") {
  Rng rng(8);
  ParameterStore s;
  StateInit p = StateInit::create(s, "i", 4, 3, rng);
  p.bias->value << 0.3, -1.2, 2.0;
  Graph g(false);
  const Matrix out = init_state(g, p, g.constant(Matrix::Zero(5, 4))).value();
  for (int k = 0; k < 3; ++k) CHECK(out(k, 0) == doctest::Approx(std::tanh(p.bias->value(k, 0))));
}

TEST_CASE("state init: invariant to row permutations and matches the oracle") {
  Rng rng(9);
  ParameterStore s;
  StateInit p = StateInit::create(s, "i", 4, 3, rng);
  randomize(s, rng);
  const Matrix rows = random(6, 4, rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(6);
  perm.indices() << 3, 0, 5, 1, 4, 2;
  Graph g(false);
  const Matrix a = init_state(g, p, g.constant(rows)).value();
  const Matrix b = init_state(g, p, g.constant(perm * rows)).value();
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-14);
  const auto ref = oracle::state_init(p, oracle::to_mat(rows));
  for (int k = 0; k < 3; ++k) CHECK(a(k, 0) == doctest::Approx(ref[k]).epsilon(1e-13));
}

TEST_CASE("state init: gradient check on W and b") {
  Rng rng(10);
  ParameterStore s;
  StateInit p = StateInit::create(s, "i", 4, 3, rng);
  randomize(s, rng);
  const Matrix rows = random(5, 4, rng), w = random(3, 1, rng);
  CHECK(max_rel_error(check_gradients(s.all(), [&](Graph& g) {
          return sum(mul(init_state(g, p, g.constant(rows)), g.constant(w)));
        })) < 1e-3);
}

TEST_CASE("state init: empty source is rejected") {
  Rng rng(11);
  ParameterStore s;
  StateInit p = StateInit::create(s, "i", 4, 3, rng);
  Graph g(false);
  CHECK_THROWS_AS(init_state(g, p, g.constant(Matrix::Zero(0, 4))), InputError);
}

TEST_CASE("cells reject wrongly shaped inputs") {
  Rng rng(12);
  ParameterStore s;
  LstmParams l = LstmParams::create(s, "l", 3, 4, rng);
  GruParams r = GruParams::create(s, "r", 3, 4, rng);
  Graph g(false);
  CHECK_THROWS_AS(lstm_cell(g, l, g.constant(Matrix::Zero(2, 1)), g.constant(Matrix::Zero(4, 1)),
                            g.constant(Matrix::Zero(4, 1))),
                  DimensionError);
  CHECK_THROWS_AS(gru_cell(g, r, g.constant(Matrix::Zero(3, 1)), g.constant(Matrix::Zero(3, 1))), DimensionError);
}
