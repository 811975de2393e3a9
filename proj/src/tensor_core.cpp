#include "dtkc/tensor_core.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace dtkc {

std::size_t shape_product(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

DenseTensor::DenseTensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_.empty() || shape_.size() > 4) {
    throw Error(Errc::WrongRank, "tensor rank must be between 1 and 4");
  }
  if (std::find(shape_.begin(), shape_.end(), std::size_t{0}) != shape_.end()) {
    throw Error(Errc::ShapeMismatch, "tensor dimensions must be positive");
  }
  if (shape_product(shape_) != values_.size()) {
    throw Error(Errc::ShapeMismatch, "shape does not match number of values");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw Error(Errc::NonFinite, "tensor contains non-finite values");
  }
}

DenseTensor::DenseTensor(std::vector<std::size_t> shape)
    : DenseTensor(shape, std::vector<double>(shape_product(shape), 0.0)) {}

double& DenseTensor::at(std::size_t i, std::size_t j, std::size_t k) {
  return values_[(i * shape_[1] + j) * shape_[2] + k];
}

double DenseTensor::at(std::size_t i, std::size_t j, std::size_t k) const {
  return values_[(i * shape_[1] + j) * shape_[2] + k];
}

DenseTensor FeatureBatch::item(Eigen::Index i) const {
  const RowVector row = rows.row(i);
  return DenseTensor(item_shape, std::vector<double>(row.data(), row.data() + row.size()));
}

FeatureBatch FeatureBatch::from_tensors(std::span<const DenseTensor> batch) {
  if (batch.empty()) throw Error(Errc::TooFewRows, "empty tensor batch");
  FeatureBatch fb;
  fb.item_shape = batch.front().shape();
  fb.rows.resize(static_cast<Eigen::Index>(batch.size()),
                 static_cast<Eigen::Index>(batch.front().size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].shape() != fb.item_shape) {
      throw Error(Errc::ShapeMismatch, "tensors in a batch must share one shape");
    }
    const auto v = batch[i].values();
    fb.rows.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const RowVector>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  return fb;
}

FeatureBatch FeatureBatch::from_vectors(Matrix rows) {
  FeatureBatch fb;
  fb.item_shape = {static_cast<std::size_t>(rows.cols())};
  fb.rows = std::move(rows);
  return fb;
}

namespace {

struct ModeLayout {
  std::size_t rows, a_dim, b_dim;
  int mode, a, b;
};

ModeLayout layout_for(std::span<const std::size_t> shape, int mode) {
  if (shape.size() != 3) throw Error(Errc::WrongRank, "unfold requires a rank-3 tensor");
  if (mode < 1 || mode > 3) throw Error(Errc::WrongRank, "mode must be 1, 2 or 3");
  // Remaining modes in increasing order; a varies fastest.
  static constexpr int kOthers[3][2] = {{1, 2}, {0, 2}, {0, 1}};
  const int m = mode - 1;
  const int a = kOthers[m][0];
  const int b = kOthers[m][1];
  return {shape[m], shape[a], shape[b], m, a, b};
}

}  // namespace

Matrix unfold(std::span<const double> values, std::span<const std::size_t> shape, int mode) {
  const ModeLayout l = layout_for(shape, mode);
  Matrix out(l.rows, l.a_dim * l.b_dim);
  std::size_t idx[3];
  std::size_t flat = 0;
  for (idx[0] = 0; idx[0] < shape[0]; ++idx[0]) {
    for (idx[1] = 0; idx[1] < shape[1]; ++idx[1]) {
      for (idx[2] = 0; idx[2] < shape[2]; ++idx[2]) {
        out(idx[l.mode], idx[l.a] + idx[l.b] * l.a_dim) = values[flat++];
      }
    }
  }
  return out;
}

Matrix unfold(const DenseTensor& t, int mode) {
  if (t.rank() != 3) throw Error(Errc::WrongRank, "unfold requires a rank-3 tensor");
  return unfold(t.values(), t.shape(), mode);
}

DenseTensor refold(const Matrix& m, std::span<const std::size_t> shape, int mode) {
  const ModeLayout l = layout_for(shape, mode);
  if (static_cast<std::size_t>(m.rows()) != l.rows ||
      static_cast<std::size_t>(m.cols()) != l.a_dim * l.b_dim) {
    throw Error(Errc::ShapeMismatch, "matrix does not match the unfolding shape");
  }
  DenseTensor t(std::vector<std::size_t>(shape.begin(), shape.end()));
  std::size_t idx[3];
  for (idx[0] = 0; idx[0] < shape[0]; ++idx[0]) {
    for (idx[1] = 0; idx[1] < shape[1]; ++idx[1]) {
      for (idx[2] = 0; idx[2] < shape[2]; ++idx[2]) {
        t.at(idx[0], idx[1], idx[2]) = m(idx[l.mode], idx[l.a] + idx[l.b] * l.a_dim);
      }
    }
  }
  return t;
}

OrthonormalBasis left_singular_subspace(const Matrix& m, int r) {
  if (r < 1 || r > std::min(m.rows(), m.cols())) {
    throw Error(Errc::RankTooLarge, "subspace rank must be in [1, min(rows, cols)]");
  }
  require_finite(m, "left_singular_subspace");
  const double scale = m.cwiseAbs().maxCoeff();
  if (!(scale > 1e-300)) throw Error(Errc::DegenerateInput, "matrix is numerically zero");
  // Rescale before forming the Gram matrix to keep it in range.
  const Matrix scaled = m / scale;
  const Eigen::MatrixXd gram = scaled * scaled.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  // Eigenvalues ascend; the top r vectors are the trailing columns.
  OrthonormalBasis basis;
  basis.columns = eig.eigenvectors().rightCols(r).rowwise().reverse();
  return basis;
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw Error(Errc::NonFinite, std::string(what) + ": non-finite input");
}

Matrix pairwise_sq_distances(const Matrix& rows) {
  if (rows.rows() < 1) throw Error(Errc::TooFewRows, "need at least one row");
  require_finite(rows, "pairwise_sq_distances");
  const Eigen::Index n = rows.rows();
  Matrix d = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = (rows.row(i) - rows.row(j)).squaredNorm();
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

double median_upper_triangle(const Matrix& distances) {
  const Eigen::Index n = distances.rows();
  if (n < 2) throw Error(Errc::TooFewRows, "median needs at least two rows");
  std::vector<double> vals;
  vals.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) vals.push_back(distances(i, j));
  }
  const std::size_t mid = vals.size() / 2;
  std::nth_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(mid), vals.end());
  const double upper = vals[mid];
  if (vals.size() % 2 == 1) return upper;
  const double lower = *std::max_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

double median_pairwise_distance(const Matrix& rows) {
  if (rows.rows() < 2) throw Error(Errc::TooFewRows, "median needs at least two rows");
  return median_upper_triangle(pairwise_sq_distances(rows).cwiseSqrt());
}

}  // namespace dtkc
