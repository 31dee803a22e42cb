#pragma once

#include <string>
#include <vector>

#include "cyclecap/autodiff.hpp"

namespace cyclecap {

// The three attention matrices of one Image-English-German triple.
//   a_en: N x L, English word -> region
//   a_de: M x L, German word -> region (direct attention)
//   b:    M x N, German word -> English word
// Every row is a probability distribution.
struct AttentionRecord {
  Matrix a_en;
  Matrix a_de;
  Matrix b;

  Eigen::Index regions() const { return a_de.cols(); }
  Eigen::Index en_length() const { return a_en.rows(); }
  Eigen::Index de_length() const { return a_de.rows(); }
};

// Throws DimensionError on inconsistent shapes, InputError on a row that is
// negative or does not sum to 1 within tol.
void validate(const AttentionRecord& rec, double tol = 1e-6);

template <typename Derived>
bool is_row_stochastic(const Eigen::MatrixBase<Derived>& m, double tol = 1e-6) {
  if (m.size() == 0) return false;
  if ((m.array() < 0.0).any()) return false;
  return ((m.rowwise().sum().array() - 1.0).abs() <= tol).all();
}

// Indirect attention B * A_en: German word m routed through the English words
// to the regions. Row-stochastic whenever both factors are.
template <typename DerivedB, typename DerivedA>
MatrixT<typename DerivedB::Scalar> indirect_attention(const Eigen::MatrixBase<DerivedB>& b,
                                                      const Eigen::MatrixBase<DerivedA>& a_en) {
  if (b.cols() != a_en.rows())
    throw DimensionError("indirect_attention: B " + shape_str(b) + " vs A_en " + shape_str(a_en));
  return b * a_en;
}

Matrix indirect_attention(const AttentionRecord& rec);

enum class CycleNorm {
  frobenius,  // ||A_de - B A_en||_F
  squared,    // ||A_de - B A_en||_F^2
};

CycleNorm parse_cycle_norm(const std::string& name);
const char* cycle_norm_name(CycleNorm norm);

template <typename DerivedD, typename DerivedB, typename DerivedA>
typename DerivedD::Scalar cycle_distance(const Eigen::MatrixBase<DerivedD>& a_de,
                                         const Eigen::MatrixBase<DerivedB>& b,
                                         const Eigen::MatrixBase<DerivedA>& a_en,
                                         CycleNorm norm = CycleNorm::frobenius) {
  if (a_de.rows() != b.rows() || a_de.cols() != a_en.cols())
    throw DimensionError("cycle_loss: A_de " + shape_str(a_de) + ", B " + shape_str(b) +
                         ", A_en " + shape_str(a_en));
  const auto diff = (a_de - indirect_attention(b, a_en)).eval();
  return norm == CycleNorm::squared ? diff.squaredNorm() : diff.norm();
}

double cycle_loss(const AttentionRecord& rec, CycleNorm norm = CycleNorm::frobenius);

// Differentiable version on the tape; gradient flows into all three inputs.
Var cycle_loss(Var a_de, Var b, Var a_en, CycleNorm norm = CycleNorm::frobenius);

// Record with one German word attending English words (0.1, 0.9, 0, 0) and
// regions (0, 0.9, 0, 0.1); the English words put (0.3, 0.8, 0.4, 0.5) on
// region 2, so the indirect attention there is 0.75.
AttentionRecord toy_cycle_record();

// ---- conditional-independence check ---------------------------------------

// Explicit joint P(X, Y, Z); X = regions, Y = English words, Z = German words.
class JointTable {
 public:
  JointTable(int nx, int ny, int nz);

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  int nz() const { return nz_; }
  double& operator()(int x, int y, int z) { return p_[index(x, y, z)]; }
  double operator()(int x, int y, int z) const { return p_[index(x, y, z)]; }

 private:
  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(x) * static_cast<std::size_t>(ny_) + static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(nz_) +
           static_cast<std::size_t>(z);
  }
  int nx_, ny_, nz_;
  std::vector<double> p_;
};

// P(y) P(x|y) P(z|y) with random positive factors, so X and Z are
// conditionally independent given Y.
JointTable random_factorized_joint(int nx, int ny, int nz, Rng& rng);

// Moves eps of mass between two X values under (y0, z0) and back under
// (y0, z1). Marginals over (Y, Z) are unchanged but X now depends on Z
// given Y. Requires nx >= 2, nz >= 2 and enough mass at the touched cells.
JointTable perturb_joint(const JointTable& joint, double eps);

struct IndependenceReport {
  Matrix x_given_z;  // |Z| x |X|, rows are P(X | z)
  Matrix x_given_y;  // |Y| x |X|
  Matrix y_given_z;  // |Z| x |Y|
  double max_discrepancy = 0.0;
  bool holds = false;
  std::vector<int> skipped_z;  // P(z) = 0
  std::vector<int> skipped_y;  // P(y) = 0
};

// Marginalizes the joint exactly and compares P(x|z) with
// sum_j P(x|y_j) P(y_j|z) entrywise. holds = max discrepancy <= tol.
// Throws InputError if the table is negative or does not sum to 1.
IndependenceReport check_conditional_independence(const JointTable& joint, double tol = 1e-9);

// A_de = P(X|Z), B = P(Y|Z), A_en = P(X|Y); rows of skipped events are dropped.
AttentionRecord record_from_report(const IndependenceReport& report);

}  // namespace cyclecap
