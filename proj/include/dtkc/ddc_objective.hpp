#pragma once

#include "dtkc/kernels.hpp"
#include "dtkc/types.hpp"

namespace dtkc {

// Soft cluster assignments: n x k, rows on the probability simplex.
using AssignmentMatrix = Matrix;

void validate_assignments(const AssignmentMatrix& a, double tol = 1e-6);

inline constexpr double kCsEpsilon = 1e-9;

struct LossBreakdown {
  double l1_separation = 0.0;
  double l2_orthogonality = 0.0;
  double l3_corner = 0.0;
  double total = 0.0;
  Matrix simplex_similarity;  // m_qi = exp(-||alpha_q - e_i||^2)
  int empty_cluster_warnings = 0;
};

struct DdcTermWeights {
  double separation = 1.0;
  double orthogonality = 1.0;
  double corner = 1.0;
};

struct CsRatio {
  double value = 0.0;
  int empty_columns = 0;  // pairs where a self-similarity fell below epsilon
};

/// Average over column pairs i < j of
///   c_i^T K c_j / sqrt((c_i^T K c_i)(c_j^T K c_j) + eps^2).
CsRatio cs_pairwise_ratio(const Matrix& columns, const Matrix& kernel);

// Gradients of cs_pairwise_ratio w.r.t. the columns matrix and every kernel entry.
struct CsRatioGrad {
  CsRatio ratio;
  Matrix d_columns;
  Matrix d_kernel;
};
CsRatioGrad cs_pairwise_ratio_grad(const Matrix& columns, const Matrix& kernel);

double l1_cluster_separation(const AssignmentMatrix& a, const KernelMatrix& k);
double l2_orthogonality(const AssignmentMatrix& a);
Matrix simplex_similarity(const AssignmentMatrix& a);
double l3_corner(const AssignmentMatrix& a, const KernelMatrix& k);

LossBreakdown ddc_loss(const AssignmentMatrix& a, const KernelMatrix& k,
                       const DdcTermWeights& w = {});

struct DdcLossGrad {
  LossBreakdown loss;
  Matrix d_assignments;
  Matrix d_kernel;
};

// scale multiplies the returned gradients (not the reported loss values).
DdcLossGrad ddc_loss_grad(const AssignmentMatrix& a, const Matrix& kernel,
                          const DdcTermWeights& w = {}, double scale = 1.0);

}  // namespace dtkc
