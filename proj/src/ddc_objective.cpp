#include "dtkc/ddc_objective.hpp"

#include <cmath>

namespace dtkc {

void validate_assignments(const AssignmentMatrix& a, double tol) {
  if (!a.allFinite()) throw Error(Errc::NonFinite, "assignment matrix is not finite");
  if ((a.array() < -tol).any() || (a.array() > 1.0 + tol).any()) {
    throw Error(Errc::DimensionMismatch, "assignment entries must lie in [0, 1]");
  }
  if (((a.rowwise().sum().array() - 1.0).abs() > tol).any()) {
    throw Error(Errc::DimensionMismatch, "assignment rows must sum to 1");
  }
}

namespace {

void check_dims(const Matrix& columns, const Matrix& kernel) {
  if (kernel.rows() != columns.rows() || kernel.cols() != columns.rows()) {
    throw Error(Errc::DimensionMismatch, "kernel size must match the number of rows");
  }
  if (columns.cols() < 2) throw Error(Errc::DimensionMismatch, "need at least two columns");
}

}  // namespace

CsRatio cs_pairwise_ratio(const Matrix& columns, const Matrix& kernel) {
  check_dims(columns, kernel);
  const Eigen::Index p = columns.cols();
  const Eigen::MatrixXd quad = columns.transpose() * kernel * columns;
  CsRatio out;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < p; ++i) {
    if (quad(i, i) < kCsEpsilon) ++out.empty_columns;
    for (Eigen::Index j = i + 1; j < p; ++j) {
      sum += quad(i, j) / std::sqrt(quad(i, i) * quad(j, j) + kCsEpsilon * kCsEpsilon);
    }
  }
  out.value = 2.0 * sum / static_cast<double>(p * (p - 1));
  return out;
}

CsRatioGrad cs_pairwise_ratio_grad(const Matrix& columns, const Matrix& kernel) {
  check_dims(columns, kernel);
  const Eigen::Index p = columns.cols();
  const double norm = 2.0 / static_cast<double>(p * (p - 1));
  const Matrix kc = kernel * columns;               // K c_j
  const Matrix ktc = kernel.transpose() * columns;  // K^T c_i
  const Eigen::MatrixXd quad = columns.transpose() * kc;

  CsRatioGrad g;
  g.ratio = cs_pairwise_ratio(columns, kernel);
  g.d_columns = Matrix::Zero(columns.rows(), p);
  // dL/dK = sum over pairs of outer products; collect coefficients first.
  Eigen::MatrixXd coeff = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = i + 1; j < p; ++j) {
      const double num = quad(i, j);
      const double ai = quad(i, i);
      const double aj = quad(j, j);
      const double q = std::sqrt(ai * aj + kCsEpsilon * kCsEpsilon);
      const double q3 = q * q * q;
      // d num / d c_i = K c_j, d num / d c_j = K^T c_i,
      // d a_i / d c_i = (K + K^T) c_i.
      g.d_columns.col(i) += norm * (kc.col(j) / q - num * aj / (2.0 * q3) * (kc.col(i) + ktc.col(i)));
      g.d_columns.col(j) += norm * (ktc.col(i) / q - num * ai / (2.0 * q3) * (kc.col(j) + ktc.col(j)));
      coeff(i, j) += norm / q;
      coeff(i, i) -= norm * num * aj / (2.0 * q3);
      coeff(j, j) -= norm * num * ai / (2.0 * q3);
    }
  }
  // dL/dK_ab = sum_ij coeff_ij c_i[a] c_j[b]
  g.d_kernel = columns * coeff * columns.transpose();
  return g;
}

double l1_cluster_separation(const AssignmentMatrix& a, const KernelMatrix& k) {
  return cs_pairwise_ratio(a, k.entries).value;
}

double l2_orthogonality(const AssignmentMatrix& a) {
  const Eigen::Index n = a.rows();
  if (n < 2) throw Error(Errc::TooFewRows, "l2 needs at least two rows");
  // sum_{q<r} a_q . a_r = (||sum_q a_q||^2 - sum_q ||a_q||^2) / 2
  const RowVector col_sum = a.colwise().sum();
  const double upper = 0.5 * (col_sum.squaredNorm() - a.squaredNorm());
  return 2.0 * upper / static_cast<double>(n * (n - 1));
}

Matrix simplex_similarity(const AssignmentMatrix& a) {
  const Eigen::Index n = a.rows();
  const Eigen::Index k = a.cols();
  Matrix m(n, k);
  const Vector row_sq = a.rowwise().squaredNorm();
  for (Eigen::Index q = 0; q < n; ++q) {
    for (Eigen::Index i = 0; i < k; ++i) {
      // ||a_q - e_i||^2 = ||a_q||^2 - 2 a_qi + 1
      m(q, i) = std::exp(-(row_sq(q) - 2.0 * a(q, i) + 1.0));
    }
  }
  return m;
}

double l3_corner(const AssignmentMatrix& a, const KernelMatrix& k) {
  return cs_pairwise_ratio(simplex_similarity(a), k.entries).value;
}

LossBreakdown ddc_loss(const AssignmentMatrix& a, const KernelMatrix& k, const DdcTermWeights& w) {
  LossBreakdown out;
  const CsRatio sep = cs_pairwise_ratio(a, k.entries);
  out.simplex_similarity = simplex_similarity(a);
  const CsRatio corner = cs_pairwise_ratio(out.simplex_similarity, k.entries);
  out.l1_separation = sep.value;
  out.l2_orthogonality = l2_orthogonality(a);
  out.l3_corner = corner.value;
  out.empty_cluster_warnings = sep.empty_columns;
  out.total = w.separation * out.l1_separation + w.orthogonality * out.l2_orthogonality +
              w.corner * out.l3_corner;
  return out;
}

DdcLossGrad ddc_loss_grad(const AssignmentMatrix& a, const Matrix& kernel, const DdcTermWeights& w,
                          double scale) {
  const Eigen::Index n = a.rows();
  if (n < 2) throw Error(Errc::TooFewRows, "ddc loss needs at least two rows");
  DdcLossGrad g;
  const CsRatioGrad sep = cs_pairwise_ratio_grad(a, kernel);
  const Matrix m = simplex_similarity(a);
  const CsRatioGrad corner = cs_pairwise_ratio_grad(m, kernel);

  g.loss.l1_separation = sep.ratio.value;
  g.loss.l2_orthogonality = l2_orthogonality(a);
  g.loss.l3_corner = corner.ratio.value;
  g.loss.empty_cluster_warnings = sep.ratio.empty_columns;
  g.loss.simplex_similarity = m;
  g.loss.total = w.separation * g.loss.l1_separation + w.orthogonality * g.loss.l2_orthogonality +
                 w.corner * g.loss.l3_corner;

  // l2: d/da_q = norm * (sum_r a_r - a_q)
  const double l2_norm = 2.0 / static_cast<double>(n * (n - 1));
  const RowVector col_sum = a.colwise().sum();
  Matrix d_l2 = (-a).rowwise() + col_sum;
  d_l2 *= l2_norm;

  // l3: m_qi = exp(-||a_q - e_i||^2), dm_qi/da_q = -2 m_qi (a_q - e_i)
  const Matrix& dm = corner.d_columns;
  Matrix d_l3(n, a.cols());
  const Vector dm_m = dm.cwiseProduct(m).rowwise().sum();  // sum_i dm_qi m_qi
  for (Eigen::Index q = 0; q < n; ++q) {
    // sum_i dm_qi * (-2 m_qi) (a_q - e_i)
    d_l3.row(q) = -2.0 * (dm_m(q) * a.row(q) - dm.row(q).cwiseProduct(m.row(q)));
  }

  g.d_assignments = scale * (w.separation * sep.d_columns + w.orthogonality * d_l2 + w.corner * d_l3);
  g.d_kernel = scale * (w.separation * sep.d_kernel + w.corner * corner.d_kernel);
  return g;
}

}  // namespace dtkc
