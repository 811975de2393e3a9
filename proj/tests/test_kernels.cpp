#include "doctest.h"

#include <Eigen/Eigenvalues>

#include "dtkc/kernels.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace dtkc;

namespace {

std::vector<DenseTensor> random_tensors(Rng& rng, std::size_t n, const std::vector<std::size_t>& shape) {
  std::vector<DenseTensor> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(shape_product(shape));
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    out.emplace_back(shape, std::move(v));
  }
  return out;
}

std::vector<std::vector<double>> values_of(const std::vector<DenseTensor>& ts) {
  std::vector<std::vector<double>> out;
  for (const auto& t : ts) out.emplace_back(t.values().begin(), t.values().end());
  return out;
}

Matrix permuted(const Matrix& k, const std::vector<std::size_t>& perm) {
  Matrix out(k.rows(), k.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t j = 0; j < perm.size(); ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          k(static_cast<Eigen::Index>(perm[i]), static_cast<Eigen::Index>(perm[j]));
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("bandwidth rule") {
  KernelConfig cfg;
  Matrix two(2, 1);
  two << 0, 2;
  CHECK(bandwidth_from_batch(two, cfg) == doctest::Approx(0.3).epsilon(1e-15));

  KernelConfig floor;
  floor.min_sigma = 1e-3;
  CHECK(bandwidth_from_batch(Matrix::Ones(5, 3), floor) == 1e-3);

  Rng rng(21);
  const Matrix rows = test::random_matrix(rng, 8, 4);
  const double median = oracle::median_of_pairs(oracle::sq_distances(rows).cwiseSqrt());
  CHECK(bandwidth_from_batch(rows, cfg) == doctest::Approx(0.15 * median).epsilon(1e-12));

  try {
    bandwidth_from_batch(Matrix::Ones(1, 3), cfg);
    FAIL("expected TooFewRows");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::TooFewRows);
  }
  KernelConfig bad;
  bad.rel_sigma = 0.0;
  CHECK_THROWS_AS(bandwidth_from_batch(rows, bad), Error);
}

TEST_CASE("gaussian kernel examples") {
  const KernelMatrix same = gaussian_kernel_matrix(Matrix::Ones(2, 3), 0.5);
  CHECK(same.entries == Matrix::Ones(2, 2));
  CHECK(same.kind == KernelKind::GaussianVector);

  const double sigma = 0.7;
  Matrix rows(2, 2);
  rows << 0.0, 0.0, sigma, sigma;  // squared distance 2 sigma^2
  CHECK(gaussian_kernel_matrix(rows, sigma).entries(0, 1) == doctest::Approx(0.36787944117144233).epsilon(1e-14));

  Rng rng(4);
  const Matrix r = test::random_matrix(rng, 5, 3);
  CHECK((gaussian_kernel_matrix(r, 0.8).entries - oracle::gaussian_kernel(r, 0.8)).cwiseAbs().maxCoeff() < 1e-12);

  for (double s : {0.0, -1.0, std::nan("")}) {
    try {
      gaussian_kernel_matrix(r, s);
      FAIL("expected NonPositiveSigma");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::NonPositiveSigma);
    }
  }
}

TEST_CASE("gaussian kernel invariants on random batches") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<Eigen::Index>(rng.integer(2, 32));
    const auto d = static_cast<Eigen::Index>(rng.integer(1, 16));
    const Matrix rows = test::random_matrix(rng, n, d);
    const KernelMatrix k = gaussian_kernel_matrix(rows, bandwidth_from_batch(rows, KernelConfig{}));
    CHECK((k.entries - k.entries.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((k.entries.diagonal().array() - 1.0).abs().maxCoeff() <= 1e-10);
    CHECK(k.entries.maxCoeff() <= 1.0);
    CHECK(k.entries.minCoeff() >= 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Eigen::MatrixXd(k.entries));
    CHECK(eig.eigenvalues().minCoeff() >= -1e-6 * eig.eigenvalues().maxCoeff());

    const auto perm = rng.permutation(static_cast<std::size_t>(n));
    Matrix shuffled(n, d);
    for (Eigen::Index i = 0; i < n; ++i) shuffled.row(i) = rows.row(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]));
    CHECK(gaussian_kernel_matrix(shuffled, k.sigma).entries == permuted(k.entries, perm));
  }
}

TEST_CASE("chordal distance") {
  Rng rng(8);
  const Matrix m = test::random_matrix(rng, 5, 6);
  const OrthonormalBasis a = left_singular_subspace(m, 2);
  CHECK(chordal_sq_distance(a, a) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));

  OrthonormalBasis e1{Eigen::MatrixXd::Zero(3, 1)}, e2{Eigen::MatrixXd::Zero(3, 1)};
  e1.columns(0, 0) = 1.0;
  e2.columns(1, 0) = 1.0;
  CHECK(chordal_sq_distance(e1, e2) == doctest::Approx(1.0).epsilon(1e-15));

  for (int trial = 0; trial < 10; ++trial) {
    const OrthonormalBasis p = left_singular_subspace(test::random_matrix(rng, 6, 4), 2);
    const OrthonormalBasis q = left_singular_subspace(test::random_matrix(rng, 6, 4), 2);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(p.columns.transpose() * q.columns);
    double sin2 = 0.0;
    for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i) {
      const double c = std::min(1.0, svd.singularValues()(i));
      sin2 += 1.0 - c * c;
    }
    const double d = chordal_sq_distance(p, q);
    CHECK(d == doctest::Approx(sin2).epsilon(1e-10));
    CHECK(d >= 0.0);
    CHECK(d <= 2.0 + 1e-12);
  }

  try {
    chordal_sq_distance(a, e1);
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DimensionMismatch);
  }
}

TEST_CASE("tensor kernel matches the full-SVD oracle") {
  Rng rng(12);
  for (int rank : {1, 2}) {
    KernelConfig cfg;
    cfg.subspace_rank = rank;
    for (int trial = 0; trial < 5; ++trial) {
      const std::vector<std::size_t> shape{4, 4, 2};
      const auto batch = random_tensors(rng, 3, shape);
      const KernelMatrix k = tensor_kernel_matrix(batch, 0.6, cfg);
      CHECK(k.kind == KernelKind::Tensor);
      CHECK((k.entries - oracle::tensor_kernel(values_of(batch), shape, 0.6, rank)).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
}

TEST_CASE("tensor kernel invariants") {
  Rng rng(13);
  KernelConfig cfg;
  for (int trial = 0; trial < 30; ++trial) {
    const std::vector<std::size_t> shape{static_cast<std::size_t>(rng.integer(1, 4)),
                                         static_cast<std::size_t>(rng.integer(2, 4)),
                                         static_cast<std::size_t>(rng.integer(2, 4))};
    const auto n = static_cast<std::size_t>(rng.integer(2, 6));
    auto batch = random_tensors(rng, n, shape);
    // Append a rescaled copy of the first item.
    std::vector<double> scaled(batch[0].values().begin(), batch[0].values().end());
    const double c = rng.uniform() < 0.5 ? -2.5 : 1e-3;
    for (double& v : scaled) v *= c;
    batch.emplace_back(shape, scaled);

    const KernelMatrix k = tensor_kernel_matrix(batch, 0.5, cfg);
    CHECK((k.entries - k.entries.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((k.entries.diagonal().array() - 1.0).abs().maxCoeff() <= 1e-10);
    CHECK(k.entries.minCoeff() > 0.0);
    CHECK(k.entries.maxCoeff() <= 1.0);
    CHECK(std::abs(k.entries(0, static_cast<Eigen::Index>(n)) - 1.0) <= 1e-10);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Eigen::MatrixXd(k.entries));
    CHECK(eig.eigenvalues().minCoeff() >= -1e-6 * eig.eigenvalues().maxCoeff());

    const auto perm = rng.permutation(batch.size());
    std::vector<DenseTensor> shuffled;
    for (std::size_t i : perm) shuffled.push_back(batch[i]);
    CHECK(tensor_kernel_matrix(shuffled, 0.5, cfg).entries == permuted(k.entries, perm));
  }
}

TEST_CASE("tensor kernel is monotone in sigma") {
  Rng rng(14);
  const auto batch = random_tensors(rng, 4, {3, 4, 4});
  KernelConfig cfg;
  Matrix previous = tensor_kernel_matrix(batch, 1e-3, cfg).entries;
  for (Eigen::Index i = 0; i < 4; ++i) {
    for (Eigen::Index j = 0; j < 4; ++j) {
      if (i != j) CHECK(previous(i, j) < 1e-12);
    }
  }
  for (double sigma : {0.1, 0.3, 1.0, 3.0, 100.0}) {
    const Matrix k = tensor_kernel_matrix(batch, sigma, cfg).entries;
    CHECK((k.array() >= previous.array()).all());
    previous = k;
  }
  CHECK((previous.array() - 1.0).abs().maxCoeff() < 1e-3);
}

TEST_CASE("tensor kernel errors") {
  KernelConfig cfg;
  std::vector<DenseTensor> zeros{DenseTensor({2, 3, 3}), DenseTensor({2, 3, 3})};
  try {
    tensor_kernel_matrix(zeros, 1.0, cfg);
    FAIL("expected DegenerateInput");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DegenerateInput);
  }
  std::vector<DenseTensor> mixed{DenseTensor({2, 3, 3}, std::vector<double>(18, 1.0)),
                                 DenseTensor({3, 3, 2}, std::vector<double>(18, 1.0))};
  try {
    tensor_kernel_matrix(mixed, 1.0, cfg);
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ShapeMismatch);
  }
}

TEST_CASE("kernel backward passes match finite differences") {
  Rng rng(15);
  SUBCASE("gaussian") {
    const Matrix rows = test::random_matrix(rng, 6, 3);
    const Matrix weights = test::random_matrix(rng, 6, 6);
    const double sigma = 0.9;
    const GaussianKernelEval eval(rows, sigma);
    const Matrix grad = eval.backward(weights);
    auto f = [&](const Matrix& x) { return gaussian_kernel_matrix(x, sigma).entries.cwiseProduct(weights).sum(); };
    CHECK(test::fd_matrix_error(f, rows, grad) < 1e-6);
  }
  SUBCASE("tensor") {
    const std::vector<std::size_t> shape{2, 4, 3};
    const auto items = random_tensors(rng, 5, shape);
    const FeatureBatch fb = FeatureBatch::from_tensors(items);
    const Matrix weights = test::random_matrix(rng, 5, 5);
    KernelConfig cfg;
    const TensorKernelEval eval(fb, 0.8, cfg);
    const Matrix grad = eval.backward(weights);
    auto f = [&](const Matrix& x) {
      FeatureBatch probe{shape, x};
      return TensorKernelEval(probe, 0.8, cfg).kernel().entries.cwiseProduct(weights).sum();
    };
    CHECK(test::fd_matrix_error(f, fb.rows, grad) < 1e-6);
  }
}

}  // TEST_SUITE
