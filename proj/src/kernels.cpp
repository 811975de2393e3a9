#include "dtkc/kernels.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace dtkc {

void KernelConfig::validate() const {
  if (!(rel_sigma > 0.0)) throw Error(Errc::InvalidConfig, "rel_sigma must be positive");
  if (!(min_sigma > 0.0)) throw Error(Errc::InvalidConfig, "min_sigma must be positive");
  if (subspace_rank < 1) throw Error(Errc::InvalidConfig, "subspace_rank must be >= 1");
}

double bandwidth_from_distances(const Matrix& distances, const KernelConfig& cfg) {
  cfg.validate();
  return std::max(cfg.rel_sigma * median_upper_triangle(distances), cfg.min_sigma);
}

double bandwidth_from_batch(const Matrix& rows, const KernelConfig& cfg) {
  cfg.validate();
  return std::max(cfg.rel_sigma * median_pairwise_distance(rows), cfg.min_sigma);
}

namespace {

void check_sigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw Error(Errc::NonPositiveSigma, "kernel bandwidth must be positive and finite");
  }
}

}  // namespace

KernelMatrix gaussian_kernel_matrix(const Matrix& rows, double sigma) {
  return GaussianKernelEval(rows, sigma).kernel();
}

GaussianKernelEval::GaussianKernelEval(const Matrix& rows, const KernelConfig& cfg) : rows_(rows) {
  build(bandwidth_from_batch(rows_, cfg));
}

GaussianKernelEval::GaussianKernelEval(const Matrix& rows, double sigma) : rows_(rows) {
  build(sigma);
}

void GaussianKernelEval::build(double sigma) {
  check_sigma(sigma);
  const Matrix d = pairwise_sq_distances(rows_);
  kernel_.kind = KernelKind::GaussianVector;
  kernel_.sigma = sigma;
  kernel_.entries = (-d.array() / (2.0 * sigma * sigma)).exp().matrix();
}

Matrix GaussianKernelEval::backward(const Matrix& d_kernel) const {
  const double s2 = kernel_.sigma * kernel_.sigma;
  // dL/dD_ij, symmetrized over (i, j) and (j, i).
  Matrix g = d_kernel.cwiseProduct(kernel_.entries) * (-1.0 / (2.0 * s2));
  Matrix s = g + g.transpose();
  s.diagonal().setZero();
  const Vector row_sums = s.rowwise().sum();
  return 2.0 * (row_sums.asDiagonal() * rows_ - s * rows_);
}

double chordal_sq_distance(const OrthonormalBasis& a, const OrthonormalBasis& b) {
  if (a.ambient_dim() != b.ambient_dim() || a.rank() != b.rank()) {
    throw Error(Errc::DimensionMismatch, "subspaces must share ambient dimension and rank");
  }
  const Eigen::MatrixXd diff = a.projection() - b.projection();
  return 0.5 * diff.squaredNorm();
}

KernelMatrix tensor_kernel_matrix(std::span<const DenseTensor> batch, double sigma,
                                  const KernelConfig& cfg) {
  return TensorKernelEval(FeatureBatch::from_tensors(batch), sigma, cfg).kernel();
}

TensorKernelEval::TensorKernelEval(const FeatureBatch& batch, const KernelConfig& cfg) {
  prepare(batch, cfg);
  double sigma = cfg.min_sigma;
  if (n_ >= 2) sigma = bandwidth_from_distances(distances_.cwiseSqrt(), cfg);
  build(sigma);
}

TensorKernelEval::TensorKernelEval(const FeatureBatch& batch, double sigma,
                                   const KernelConfig& cfg) {
  prepare(batch, cfg);
  build(sigma);
}

void TensorKernelEval::prepare(const FeatureBatch& batch, const KernelConfig& cfg) {
  cfg.validate();
  if (!batch.is_tensor()) throw Error(Errc::WrongRank, "tensor kernel needs rank-3 observations");
  if (static_cast<std::size_t>(batch.rows.cols()) != shape_product(batch.item_shape)) {
    throw Error(Errc::ShapeMismatch, "feature rows do not match the item shape");
  }
  require_finite(batch.rows, "tensor_kernel_matrix");
  shape_ = batch.item_shape;
  n_ = batch.n();
  modes_.clear();
  distances_ = Matrix::Zero(n_, n_);

  for (int mode = 1; mode <= 3; ++mode) {
    const auto size = static_cast<Eigen::Index>(shape_[static_cast<std::size_t>(mode - 1)]);
    const auto other = static_cast<Eigen::Index>(shape_product(shape_)) / size;
    const int rank = static_cast<int>(std::min<Eigen::Index>({cfg.subspace_rank, size, other}));
    if (rank == size) continue;  // projection is the identity; factor 1

    ModeFactor f;
    f.mode = mode;
    f.rank = rank;
    f.size = size;
    for (Eigen::Index i = 0; i < n_; ++i) {
      const RowVector row = batch.rows.row(i);
      const Matrix m = unfold(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())),
                              shape_, mode);
      const double scale = m.cwiseAbs().maxCoeff();
      if (!(scale > 1e-300)) {
        throw Error(Errc::DegenerateInput, "observation " + std::to_string(i) + " is numerically zero");
      }
      Eigen::MatrixXd scaled = m / scale;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scaled * scaled.transpose());
      Eigen::MatrixXd vecs = eig.eigenvectors().rowwise().reverse();
      Eigen::VectorXd vals = eig.eigenvalues().reverse();
      const auto top = vecs.leftCols(rank);
      f.projections.push_back(top * top.transpose());
      f.unfoldings.push_back(std::move(scaled));
      f.scales.push_back(scale);
      f.eigenvectors.push_back(std::move(vecs));
      f.eigenvalues.push_back(std::move(vals));
    }
    // d(i, j) = r - <P_i, P_j>_F. Elementwise products summed in a fixed
    // index order, so d(i, j) and d(j, i) are bit-identical.
    for (Eigen::Index i = 0; i < n_; ++i) {
      for (Eigen::Index j = i + 1; j < n_; ++j) {
        const double inner = f.projections[static_cast<std::size_t>(i)]
                                 .cwiseProduct(f.projections[static_cast<std::size_t>(j)])
                                 .sum();
        const double d = std::max(0.0, static_cast<double>(rank) - inner);
        distances_(i, j) += d;
        distances_(j, i) += d;
      }
    }
    modes_.push_back(std::move(f));
  }
}

void TensorKernelEval::build(double sigma) {
  check_sigma(sigma);
  kernel_.kind = KernelKind::Tensor;
  kernel_.sigma = sigma;
  kernel_.entries = (-distances_.array() / (2.0 * sigma * sigma)).exp().matrix();
  kernel_.entries.diagonal().setOnes();
}

Matrix TensorKernelEval::backward(const Matrix& d_kernel) const {
  const double s2 = kernel_.sigma * kernel_.sigma;
  // w_ij = dL/d<P_i, P_j> for one mode; identical across modes.
  Matrix w = (d_kernel + d_kernel.transpose()).cwiseProduct(kernel_.entries) / (2.0 * s2);
  w.diagonal().setZero();

  Matrix grad = Matrix::Zero(n_, static_cast<Eigen::Index>(shape_product(shape_)));
  for (const ModeFactor& f : modes_) {
    for (Eigen::Index i = 0; i < n_; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      Eigen::MatrixXd p_bar = Eigen::MatrixXd::Zero(f.size, f.size);
      for (Eigen::Index j = 0; j < n_; ++j) {
        if (j == i || w(i, j) == 0.0) continue;
        p_bar.noalias() += w(i, j) * f.projections[static_cast<std::size_t>(j)];
      }
      // Backward through the eigenprojector onto the top-r eigenvectors of
      // G = M M^T: only (top, rest) eigenpairs contribute.
      const Eigen::MatrixXd& v = f.eigenvectors[ii];
      const Eigen::VectorXd& lam = f.eigenvalues[ii];
      const Eigen::MatrixXd b = v.transpose() * p_bar * v;
      Eigen::MatrixXd c = Eigen::MatrixXd::Zero(f.size, f.size);
      const double gap_floor = 1e-12 * std::max(lam(0), 1e-300);
      for (int a = 0; a < f.rank; ++a) {
        for (Eigen::Index r = f.rank; r < f.size; ++r) {
          const double gap = lam(a) - lam(r);
          if (gap <= gap_floor) continue;
          c(a, r) = 2.0 * b(a, r) / gap;
        }
      }
      const Eigen::MatrixXd vcv = v * c * v.transpose();
      const Eigen::MatrixXd g_bar = 0.5 * (vcv + vcv.transpose());
      const Eigen::MatrixXd m_bar = (2.0 / f.scales[ii]) * g_bar * f.unfoldings[ii];
      // Scatter back through the unfolding (refold is the inverse index map).
      const DenseTensor t = refold(Matrix(m_bar), shape_, f.mode);
      const auto vals = t.values();
      grad.row(i) += Eigen::Map<const RowVector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    }
  }
  return grad;
}

}  // namespace dtkc
