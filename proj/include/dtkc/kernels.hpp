#pragma once

#include <span>
#include <vector>

#include "dtkc/tensor_core.hpp"
#include "dtkc/types.hpp"

namespace dtkc {

enum class KernelKind { GaussianVector, Tensor };

struct KernelConfig {
  double rel_sigma = 0.15;  // bandwidth as a fraction of the median pairwise distance
  int subspace_rank = 2;    // per-mode truncation rank for the tensor kernel
  double min_sigma = 1e-9;

  void validate() const;
};

struct KernelMatrix {
  Matrix entries;
  double sigma = 0.0;
  KernelKind kind = KernelKind::GaussianVector;

  Eigen::Index n() const { return entries.rows(); }
};

// max(rel_sigma * median pairwise distance, min_sigma)
double bandwidth_from_batch(const Matrix& rows, const KernelConfig& cfg);

// Same rule applied to a precomputed symmetric distance matrix.
double bandwidth_from_distances(const Matrix& distances, const KernelConfig& cfg);

KernelMatrix gaussian_kernel_matrix(const Matrix& rows, double sigma);

/// Chordal distance 0.5 * ||Pa - Pb||_F^2 between the subspaces; lies in [0, r].
double chordal_sq_distance(const OrthonormalBasis& a, const OrthonormalBasis& b);

/// Tensor kernel over rank-3 observations:
///   k(X, Y) = prod_m exp(-d_m(X, Y) / (2 sigma^2))
/// with d_m the chordal distance between the top-r_m left singular subspaces of
/// the mode-m unfoldings, r_m = min(subspace_rank, unfolding dims). Modes where
/// r_m equals the mode size (including size-1 modes) contribute a factor of 1.
KernelMatrix tensor_kernel_matrix(std::span<const DenseTensor> batch, double sigma,
                                  const KernelConfig& cfg);

// Differentiable Gaussian kernel on vectors. sigma is fixed at construction
// and treated as a constant by backward().
class GaussianKernelEval {
 public:
  GaussianKernelEval(const Matrix& rows, const KernelConfig& cfg);
  GaussianKernelEval(const Matrix& rows, double sigma);

  const KernelMatrix& kernel() const { return kernel_; }
  // Gradient w.r.t. the rows given dL/dK (all n*n entries treated as free).
  Matrix backward(const Matrix& d_kernel) const;

 private:
  void build(double sigma);

  Matrix rows_;
  KernelMatrix kernel_;
};

// Differentiable tensor kernel on a batch of rank-3 observations.
class TensorKernelEval {
 public:
  // Bandwidth from the median pairwise subspace distance sqrt(sum_m d_m).
  TensorKernelEval(const FeatureBatch& batch, const KernelConfig& cfg);
  TensorKernelEval(const FeatureBatch& batch, double sigma, const KernelConfig& cfg);

  const KernelMatrix& kernel() const { return kernel_; }
  // Summed chordal distances sum_m d_m(i, j).
  const Matrix& subspace_sq_distances() const { return distances_; }
  Matrix backward(const Matrix& d_kernel) const;

 private:
  struct ModeFactor {
    int mode = 0;
    int rank = 0;
    Eigen::Index size = 0;
    // Per observation: scaled unfolding, its scale, eigenvectors (descending),
    // eigenvalues and top-r projection.
    std::vector<Eigen::MatrixXd> unfoldings;
    std::vector<double> scales;
    std::vector<Eigen::MatrixXd> eigenvectors;
    std::vector<Eigen::VectorXd> eigenvalues;
    std::vector<Eigen::MatrixXd> projections;
  };

  void prepare(const FeatureBatch& batch, const KernelConfig& cfg);
  void build(double sigma);

  std::vector<std::size_t> shape_;
  Eigen::Index n_ = 0;
  std::vector<ModeFactor> modes_;
  Matrix distances_;
  KernelMatrix kernel_;
};

}  // namespace dtkc
