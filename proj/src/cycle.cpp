#include "cyclecap/cycle.hpp"

#include <cmath>

namespace cyclecap {

void validate(const AttentionRecord& rec, double tol) {
  if (rec.a_de.rows() != rec.b.rows() || rec.b.cols() != rec.a_en.rows() ||
      rec.a_de.cols() != rec.a_en.cols())
    throw DimensionError("attention record: A_en " + shape_str(rec.a_en) + ", A_de " +
                         shape_str(rec.a_de) + ", B " + shape_str(rec.b));
  if (rec.a_de.size() == 0 || rec.a_en.size() == 0)
    throw DimensionError("attention record: empty matrix");
  if (!is_row_stochastic(rec.a_en, tol)) throw InputError("attention record: A_en is not row-stochastic");
  if (!is_row_stochastic(rec.a_de, tol)) throw InputError("attention record: A_de is not row-stochastic");
  if (!is_row_stochastic(rec.b, tol)) throw InputError("attention record: B is not row-stochastic");
}

Matrix indirect_attention(const AttentionRecord& rec) {
  return indirect_attention(rec.b, rec.a_en);
}

CycleNorm parse_cycle_norm(const std::string& name) {
  if (name == "frobenius") return CycleNorm::frobenius;
  if (name == "squared") return CycleNorm::squared;
  throw ConfigError("unknown cycle norm '" + name + "' (expected frobenius or squared)");
}

const char* cycle_norm_name(CycleNorm norm) {
  return norm == CycleNorm::squared ? "squared" : "frobenius";
}

double cycle_loss(const AttentionRecord& rec, CycleNorm norm) {
  return cycle_distance(rec.a_de, rec.b, rec.a_en, norm);
}

Var cycle_loss(Var a_de, Var b, Var a_en, CycleNorm norm) {
  if (a_de.rows() != b.rows() || b.cols() != a_en.rows() || a_de.cols() != a_en.cols())
    throw DimensionError("cycle_loss: A_de " + shape_str(a_de.value()) + ", B " +
                         shape_str(b.value()) + ", A_en " + shape_str(a_en.value()));
  Var diff = sub(a_de, matmul(b, a_en));
  return norm == CycleNorm::squared ? squared_norm(diff) : frobenius_norm(diff);
}

AttentionRecord toy_cycle_record() {
  AttentionRecord rec;
  rec.b.resize(1, 4);
  rec.b << 0.1, 0.9, 0.0, 0.0;
  rec.a_de.resize(1, 4);
  rec.a_de << 0.0, 0.9, 0.0, 0.1;
  rec.a_en.resize(4, 4);
  // Column 1 (region R2) is (0.3, 0.8, 0.4, 0.5).
  rec.a_en << 0.5, 0.3, 0.1, 0.1,
              0.1, 0.8, 0.05, 0.05,
              0.2, 0.4, 0.2, 0.2,
              0.1, 0.5, 0.3, 0.1;
  return rec;
}

// ---------------------------------------------------------------------------

JointTable::JointTable(int nx, int ny, int nz) : nx_(nx), ny_(ny), nz_(nz) {
  if (nx < 1 || ny < 1 || nz < 1) throw InputError("joint table needs positive cardinalities");
  p_.assign(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz), 0.0);
}

namespace {

std::vector<double> random_distribution(int n, Rng& rng) {
  std::vector<double> p(static_cast<std::size_t>(n));
  double total = 0.0;
  for (double& v : p) total += (v = 0.05 + rng.uniform());
  for (double& v : p) v /= total;
  return p;
}

}  // namespace

JointTable random_factorized_joint(int nx, int ny, int nz, Rng& rng) {
  JointTable joint(nx, ny, nz);
  const auto py = random_distribution(ny, rng);
  for (int y = 0; y < ny; ++y) {
    const auto px = random_distribution(nx, rng);
    const auto pz = random_distribution(nz, rng);
    for (int x = 0; x < nx; ++x)
      for (int z = 0; z < nz; ++z)
        joint(x, y, z) = py[static_cast<std::size_t>(y)] * px[static_cast<std::size_t>(x)] *
                         pz[static_cast<std::size_t>(z)];
  }
  return joint;
}

JointTable perturb_joint(const JointTable& joint, double eps) {
  if (joint.nx() < 2 || joint.nz() < 2) throw InputError("perturb_joint needs |X| >= 2 and |Z| >= 2");
  JointTable out = joint;
  if (out(1, 0, 0) < eps || out(0, 0, 1) < eps)
    throw InputError("perturb_joint: eps exceeds available mass");
  out(0, 0, 0) += eps;
  out(1, 0, 0) -= eps;
  out(0, 0, 1) -= eps;
  out(1, 0, 1) += eps;
  return out;
}

IndependenceReport check_conditional_independence(const JointTable& joint, double tol) {
  const int nx = joint.nx(), ny = joint.ny(), nz = joint.nz();
  double total = 0.0;
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y)
      for (int z = 0; z < nz; ++z) {
        const double p = joint(x, y, z);
        if (!(p >= 0.0) || !std::isfinite(p)) throw InputError("joint table has a negative or non-finite entry");
        total += p;
      }
  if (std::abs(total - 1.0) > 1e-9)
    throw InputError("joint table is not normalized (sum = " + std::to_string(total) + ")");

  Matrix xz = Matrix::Zero(nz, nx);
  Matrix xy = Matrix::Zero(ny, nx);
  Matrix yz = Matrix::Zero(nz, ny);
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y)
      for (int z = 0; z < nz; ++z) {
        const double p = joint(x, y, z);
        xz(z, x) += p;
        xy(y, x) += p;
        yz(z, y) += p;
      }
  const Vector pz = xz.rowwise().sum();
  const Vector py = xy.rowwise().sum();

  IndependenceReport r;
  r.x_given_z = Matrix::Zero(nz, nx);
  r.x_given_y = Matrix::Zero(ny, nx);
  r.y_given_z = Matrix::Zero(nz, ny);
  for (int y = 0; y < ny; ++y) {
    if (py(y) == 0.0) {
      r.skipped_y.push_back(y);
      continue;
    }
    r.x_given_y.row(y) = xy.row(y) / py(y);
  }
  for (int z = 0; z < nz; ++z) {
    if (pz(z) == 0.0) {
      r.skipped_z.push_back(z);
      continue;
    }
    r.x_given_z.row(z) = xz.row(z) / pz(z);
    r.y_given_z.row(z) = yz.row(z) / pz(z);
  }

  const Matrix routed = r.y_given_z * r.x_given_y;
  for (int z = 0; z < nz; ++z) {
    if (pz(z) == 0.0) continue;
    r.max_discrepancy =
        std::max(r.max_discrepancy, (r.x_given_z.row(z) - routed.row(z)).cwiseAbs().maxCoeff());
  }
  r.holds = r.max_discrepancy <= tol;
  return r;
}

AttentionRecord record_from_report(const IndependenceReport& report) {
  auto skipped = [](const std::vector<int>& list, int i) {
    return std::find(list.begin(), list.end(), i) != list.end();
  };
  std::vector<int> zs, ys;
  for (int z = 0; z < report.x_given_z.rows(); ++z)
    if (!skipped(report.skipped_z, z)) zs.push_back(z);
  for (int y = 0; y < report.x_given_y.rows(); ++y)
    if (!skipped(report.skipped_y, y)) ys.push_back(y);
  AttentionRecord rec;
  const auto nx = report.x_given_z.cols();
  rec.a_de.resize(static_cast<Eigen::Index>(zs.size()), nx);
  rec.b.resize(static_cast<Eigen::Index>(zs.size()), static_cast<Eigen::Index>(ys.size()));
  rec.a_en.resize(static_cast<Eigen::Index>(ys.size()), nx);
  for (std::size_t i = 0; i < zs.size(); ++i) {
    rec.a_de.row(static_cast<Eigen::Index>(i)) = report.x_given_z.row(zs[i]);
    for (std::size_t j = 0; j < ys.size(); ++j)
      rec.b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = report.y_given_z(zs[i], ys[j]);
  }
  for (std::size_t j = 0; j < ys.size(); ++j)
    rec.a_en.row(static_cast<Eigen::Index>(j)) = report.x_given_y.row(ys[j]);
  return rec;
}

}  // namespace cyclecap
