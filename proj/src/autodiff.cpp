#include "cyclecap/autodiff.hpp"

#include <cmath>

namespace cyclecap {

const Matrix& Var::value() const { return graph_->value(id_); }

Scalar Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw DimensionError("scalar(): expected 1x1, got " + shape_str(v));
  return v(0, 0);
}

Var Graph::constant(Matrix value) {
  if (!value.allFinite()) throw NumericError("constant: non-finite value");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::constant_scalar(Scalar v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Var Graph::leaf(Matrix value) {
  if (!value.allFinite()) throw NumericError("leaf: non-finite value");
  Node n;
  n.value = std::move(value);
  n.needs_grad = recording_;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var(this, it->second);
  if (!p.value.allFinite()) throw NumericError("parameter '" + p.name + "' is non-finite");
  Node n;
  n.value = p.value;
  n.param = &p;
  n.needs_grad = recording_;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_[&p] = id;
  return Var(this, id);
}

Var Graph::push(Matrix value, std::vector<int> inputs, BackwardFn backward, const char* op) {
  if (!value.allFinite()) throw NumericError(std::string(op) + ": non-finite result");
  Node n;
  n.value = std::move(value);
  if (recording_) {
    for (int in : inputs)
      if (nodes_[in].needs_grad) n.needs_grad = true;
    if (n.needs_grad) {
      n.inputs = std::move(inputs);
      n.backward = std::move(backward);
    }
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Graph::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix Graph::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Graph::backward(Var loss, Scalar seed) {
  if (!recording_) throw StateError("backward on a graph built without recording");
  if (backward_done_) throw StateError("backward called twice on the same tape");
  if (loss.graph() != this) throw StateError("backward: loss belongs to another tape");
  if (loss.value().size() != 1)
    throw DimensionError("backward: loss must be 1x1, got " + shape_str(loss.value()));
  backward_done_ = true;
  if (!nodes_[loss.id()].needs_grad) return;
  grad_ref(loss.id())(0, 0) = seed;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param) {
      if (n.param->grad.size() == 0) n.param->zero_grad();
      n.param->grad += n.grad;
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

Graph& same_graph(Var a, Var b, const char* op) {
  if (a.graph() == nullptr || a.graph() != b.graph())
    throw StateError(std::string(op) + ": operands live on different tapes");
  return *a.graph();
}

[[noreturn]] void shape_fail(const char* op, const Matrix& a, const Matrix& b) {
  throw DimensionError(std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
}

enum class Broadcast { none, row, col };

Broadcast broadcast_kind(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::none;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::col;
  shape_fail(op, a, b);
}

Matrix reduce_to(const Matrix& g, Broadcast kind) {
  switch (kind) {
    case Broadcast::row: return g.colwise().sum();
    case Broadcast::col: return g.rowwise().sum();
    default: return g;
  }
}

Var add_sub(Var a, Var b, Scalar sign, const char* op) {
  Graph& g = same_graph(a, b, op);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Broadcast kind = broadcast_kind(op, av, bv);
  Matrix out;
  switch (kind) {
    case Broadcast::none: out = av + sign * bv; break;
    case Broadcast::row: out = av.rowwise() + sign * bv.row(0); break;
    case Broadcast::col: out = av.colwise() + sign * bv.col(0); break;
  }
  const int ia = a.id(), ib = b.id();
  return g.push(std::move(out), {ia, ib},
                [ia, ib, kind, sign](Graph& gr, int self) {
                  const Matrix& go = gr.out_grad(self);
                  if (gr.needs_grad(ia)) gr.grad_ref(ia) += go;
                  if (gr.needs_grad(ib)) gr.grad_ref(ib) += sign * reduce_to(go, kind);
                },
                op);
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b, "matmul");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) shape_fail("matmul", av, bv);
  const int ia = a.id(), ib = b.id();
  return g.push(av * bv, {ia, ib},
                [ia, ib](Graph& gr, int self) {
                  const Matrix& go = gr.out_grad(self);
                  if (gr.needs_grad(ia)) gr.grad_ref(ia).noalias() += go * gr.value(ib).transpose();
                  if (gr.needs_grad(ib)) gr.grad_ref(ib).noalias() += gr.value(ia).transpose() * go;
                },
                "matmul");
}

Var transpose(Var a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  return g.push(a.value().transpose(), {ia},
                [ia](Graph& gr, int self) { gr.grad_ref(ia) += gr.out_grad(self).transpose(); },
                "transpose");
}

Var add(Var a, Var b) { return add_sub(a, b, 1.0, "add"); }
Var sub(Var a, Var b) { return add_sub(a, b, -1.0, "sub"); }

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b, "mul");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_fail("mul", av, bv);
  const int ia = a.id(), ib = b.id();
  return g.push(av.cwiseProduct(bv), {ia, ib},
                [ia, ib](Graph& gr, int self) {
                  const Matrix& go = gr.out_grad(self);
                  if (gr.needs_grad(ia)) gr.grad_ref(ia) += go.cwiseProduct(gr.value(ib));
                  if (gr.needs_grad(ib)) gr.grad_ref(ib) += go.cwiseProduct(gr.value(ia));
                },
                "mul");
}

Var scale(Var a, Scalar s) {
  Graph& g = *a.graph();
  const int ia = a.id();
  return g.push(s * a.value(), {ia},
                [ia, s](Graph& gr, int self) { gr.grad_ref(ia) += s * gr.out_grad(self); },
                "scale");
}

Var one_minus(Var a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  return g.push((1.0 - a.value().array()).matrix(), {ia},
                [ia](Graph& gr, int self) { gr.grad_ref(ia) -= gr.out_grad(self); },
                "one_minus");
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw InputError("concat: no operands");
  if (axis != 0 && axis != 1) throw InputError("concat: axis must be 0 or 1");
  Graph& g = *parts.front().graph();
  const Matrix& first = parts.front().value();
  Eigen::Index total = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> extents;
  for (const Var& p : parts) {
    if (p.graph() != &g) throw StateError("concat: operands live on different tapes");
    const Matrix& v = p.value();
    if (axis == 0 ? v.cols() != first.cols() : v.rows() != first.rows())
      shape_fail("concat", first, v);
    const Eigen::Index extent = axis == 0 ? v.rows() : v.cols();
    extents.push_back(extent);
    total += extent;
    ids.push_back(p.id());
  }
  Matrix out = axis == 0 ? Matrix(total, first.cols()) : Matrix(first.rows(), total);
  Eigen::Index offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (axis == 0)
      out.middleRows(offset, extents[k]) = parts[k].value();
    else
      out.middleCols(offset, extents[k]) = parts[k].value();
    offset += extents[k];
  }
  return g.push(std::move(out), ids,
                [ids, extents, axis](Graph& gr, int self) {
                  const Matrix& go = gr.out_grad(self);
                  Eigen::Index off = 0;
                  for (std::size_t k = 0; k < ids.size(); ++k) {
                    if (gr.needs_grad(ids[k])) {
                      if (axis == 0)
                        gr.grad_ref(ids[k]) += go.middleRows(off, extents[k]);
                      else
                        gr.grad_ref(ids[k]) += go.middleCols(off, extents[k]);
                    }
                    off += extents[k];
                  }
                },
                "concat");
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  const Matrix& av = a.value();
  if (start < 0 || count <= 0 || start + count > av.rows())
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") of " + shape_str(av));
  Graph& g = *a.graph();
  const int ia = a.id();
  return g.push(av.middleRows(start, count), {ia},
                [ia, start, count](Graph& gr, int self) {
                  gr.grad_ref(ia).middleRows(start, count) += gr.out_grad(self);
                },
                "slice_rows");
}

namespace {

// Softmax along axis 1 (per row) on a row-major matrix.
Matrix softmax_rows(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

Matrix log_softmax_rows(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.row(r).maxCoeff();
    const Scalar lse = m + std::log((x.row(r).array() - m).exp().sum());
    y.row(r) = (x.row(r).array() - lse).matrix();
  }
  return y;
}

}  // namespace

Var softmax(Var a, int axis) {
  if (axis != 0 && axis != 1) throw InputError("softmax: axis must be 0 or 1");
  const Matrix& av = a.value();
  if (av.size() == 0) throw DimensionError("softmax: empty operand");
  Matrix y = axis == 1 ? softmax_rows(av) : Matrix(softmax_rows(av.transpose()).transpose());
  Graph& g = *a.graph();
  const int ia = a.id();
  return g.push(std::move(y), {ia},
                [ia, axis](Graph& gr, int self) {
                  const Matrix& yv = gr.value(self);
                  const Matrix& go = gr.out_grad(self);
                  const Matrix gy = go.cwiseProduct(yv);
                  if (axis == 1) {
                    const Vector dots = gy.rowwise().sum();
                    gr.grad_ref(ia) += gy - (yv.array().colwise() * dots.array()).matrix();
                  } else {
                    const Eigen::RowVectorXd dots = gy.colwise().sum();
                    gr.grad_ref(ia) += gy - (yv.array().rowwise() * dots.array()).matrix();
                  }
                },
                "softmax");
}

Var log_softmax(Var a, int axis) {
  if (axis != 0 && axis != 1) throw InputError("log_softmax: axis must be 0 or 1");
  const Matrix& av = a.value();
  if (av.size() == 0) throw DimensionError("log_softmax: empty operand");
  Matrix y =
      axis == 1 ? log_softmax_rows(av) : Matrix(log_softmax_rows(av.transpose()).transpose());
  Graph& g = *a.graph();
  const int ia = a.id();
  return g.push(std::move(y), {ia},
                [ia, axis](Graph& gr, int self) {
                  const Matrix p = gr.value(self).array().exp().matrix();
                  const Matrix& go = gr.out_grad(self);
                  if (axis == 1) {
                    const Vector s = go.rowwise().sum();
                    gr.grad_ref(ia) += go - (p.array().colwise() * s.array()).matrix();
                  } else {
                    const Eigen::RowVectorXd s = go.colwise().sum();
                    gr.grad_ref(ia) += go - (p.array().rowwise() * s.array()).matrix();
                  }
                },
                "log_softmax");
}

Var tanh(Var a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  return g.push(a.value().array().tanh().matrix(), {ia},
                [ia](Graph& gr, int self) {
                  const Matrix& y = gr.value(self);
                  gr.grad_ref(ia) +=
                      (gr.out_grad(self).array() * (1.0 - y.array().square())).matrix();
                },
                "tanh");
}

Var sigmoid(Var a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  Matrix y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return g.push(std::move(y), {ia},
                [ia](Graph& gr, int self) {
                  const Matrix& yv = gr.value(self);
                  gr.grad_ref(ia) +=
                      (gr.out_grad(self).array() * yv.array() * (1.0 - yv.array())).matrix();
                },
                "sigmoid");
}

Var embedding(Var table, Eigen::Index index) {
  const Matrix& t = table.value();
  if (index < 0 || index >= t.rows())
    throw DimensionError("embedding: index " + std::to_string(index) + " outside table " +
                         shape_str(t));
  Graph& g = *table.graph();
  const int it = table.id();
  return g.push(t.row(index).transpose(), {it},
                [it, index](Graph& gr, int self) {
                  gr.grad_ref(it).row(index) += gr.out_grad(self).transpose();
                },
                "embedding");
}

Var dropout(Var a, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InputError("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return a;
  const Matrix& av = a.value();
  Matrix mask(av.rows(), av.cols());
  const Scalar keep = 1.0 - rate;
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    mask.data()[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
  Graph& g = *a.graph();
  const int ia = a.id();
  Matrix out = av.cwiseProduct(mask);
  return g.push(std::move(out), {ia},
                [ia, mask = std::move(mask)](Graph& gr, int self) {
                  gr.grad_ref(ia) += gr.out_grad(self).cwiseProduct(mask);
                },
                "dropout");
}

Var sum(Var a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return g.push(std::move(out), {ia},
                [ia](Graph& gr, int self) {
                  gr.grad_ref(ia).array() += gr.out_grad(self)(0, 0);
                },
                "sum");
}

Var mean_rows(Var a) {
  const Matrix& av = a.value();
  if (av.rows() == 0) throw InputError("mean_rows: no rows");
  Graph& g = *a.graph();
  const int ia = a.id();
  const Eigen::Index k = av.rows();
  return g.push(av.colwise().mean().transpose(), {ia},
                [ia, k](Graph& gr, int self) {
                  const Matrix row = gr.out_grad(self).transpose() / static_cast<Scalar>(k);
                  gr.grad_ref(ia).rowwise() += row.row(0);
                },
                "mean_rows");
}

Var pick(Var a, Eigen::Index row, Eigen::Index col) {
  const Matrix& av = a.value();
  if (row < 0 || row >= av.rows() || col < 0 || col >= av.cols())
    throw DimensionError("pick: (" + std::to_string(row) + ", " + std::to_string(col) +
                         ") outside " + shape_str(av));
  Graph& g = *a.graph();
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = av(row, col);
  return g.push(std::move(out), {ia},
                [ia, row, col](Graph& gr, int self) {
                  gr.grad_ref(ia)(row, col) += gr.out_grad(self)(0, 0);
                },
                "pick");
}

Var stack_rows(const std::vector<Var>& columns) {
  if (columns.empty()) throw InputError("stack_rows: no operands");
  Graph& g = *columns.front().graph();
  const Eigen::Index n = columns.front().rows();
  Matrix out(static_cast<Eigen::Index>(columns.size()), n);
  std::vector<int> ids;
  for (std::size_t t = 0; t < columns.size(); ++t) {
    const Matrix& v = columns[t].value();
    if (columns[t].graph() != &g) throw StateError("stack_rows: operands live on different tapes");
    if (v.cols() != 1 || v.rows() != n) shape_fail("stack_rows", columns.front().value(), v);
    out.row(static_cast<Eigen::Index>(t)) = v.transpose();
    ids.push_back(columns[t].id());
  }
  return g.push(std::move(out), ids,
                [ids](Graph& gr, int self) {
                  const Matrix& go = gr.out_grad(self);
                  for (std::size_t t = 0; t < ids.size(); ++t)
                    if (gr.needs_grad(ids[t]))
                      gr.grad_ref(ids[t]) += go.row(static_cast<Eigen::Index>(t)).transpose();
                },
                "stack_rows");
}

Var frobenius_norm(Var a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().norm();
  return g.push(std::move(out), {ia},
                [ia](Graph& gr, int self) {
                  const Scalar norm = gr.value(self)(0, 0);
                  if (norm == 0.0) return;
                  gr.grad_ref(ia) += (gr.out_grad(self)(0, 0) / norm) * gr.value(ia);
                },
                "frobenius_norm");
}

Var squared_norm(Var a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return g.push(std::move(out), {ia},
                [ia](Graph& gr, int self) {
                  gr.grad_ref(ia) += (2.0 * gr.out_grad(self)(0, 0)) * gr.value(ia);
                },
                "squared_norm");
}

}  // namespace cyclecap
