#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dtkc/types.hpp"

namespace dtkc {

// Dense tensor of rank 1-4, values in row-major logical order.
class DenseTensor {
 public:
  DenseTensor() = default;
  DenseTensor(std::vector<std::size_t> shape, std::vector<double> values);
  // Zero-filled.
  explicit DenseTensor(std::vector<std::size_t> shape);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  double& at(std::size_t i, std::size_t j, std::size_t k);
  double at(std::size_t i, std::size_t j, std::size_t k) const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

std::size_t shape_product(std::span<const std::size_t> shape);

// Columns are mutually orthonormal.
struct OrthonormalBasis {
  Eigen::MatrixXd columns;  // ambient_dim x rank

  Eigen::Index ambient_dim() const { return columns.rows(); }
  Eigen::Index rank() const { return columns.cols(); }
  Eigen::MatrixXd projection() const { return columns * columns.transpose(); }
};

// A batch of layer outputs: one observation per row. item_shape is the
// per-observation shape, rank 3 for convolutional maps and rank 1 for vectors.
struct FeatureBatch {
  std::vector<std::size_t> item_shape;
  Matrix rows;

  Eigen::Index n() const { return rows.rows(); }
  bool is_tensor() const { return item_shape.size() == 3; }
  DenseTensor item(Eigen::Index i) const;

  static FeatureBatch from_tensors(std::span<const DenseTensor> batch);
  static FeatureBatch from_vectors(Matrix rows);
};

/// Mode-m matricization of a rank-3 tensor (mode in {1,2,3}).
///
/// Row i of the result is the mode-m fiber i. The remaining modes (a, b) are
/// taken in increasing order and the column index is j = i_a + i_b * I_a.
Matrix unfold(const DenseTensor& t, int mode);

// Same convention over a raw row-major buffer of shape (d1, d2, d3).
Matrix unfold(std::span<const double> values, std::span<const std::size_t> shape, int mode);

// Inverse of unfold.
DenseTensor refold(const Matrix& m, std::span<const std::size_t> shape, int mode);

/// Span of the top-r left singular vectors of m.
///
/// Computed from the eigendecomposition of m * m^T. Throws DegenerateInput if m
/// is numerically zero and RankTooLarge if r exceeds min(rows, cols).
OrthonormalBasis left_singular_subspace(const Matrix& m, int r);

// Squared Euclidean distances between rows; symmetric with an exact zero diagonal.
Matrix pairwise_sq_distances(const Matrix& rows);

// Median of the n(n-1)/2 off-diagonal Euclidean distances.
double median_pairwise_distance(const Matrix& rows);

// Median of the strict upper triangle of a symmetric matrix of distances.
double median_upper_triangle(const Matrix& distances);

void require_finite(const Matrix& m, const char* what);

}  // namespace dtkc
