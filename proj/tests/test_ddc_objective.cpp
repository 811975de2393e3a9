#include "doctest.h"

#include "dtkc/ddc_objective.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace dtkc;

namespace {

KernelMatrix wrap(const Matrix& entries) {
  KernelMatrix k;
  k.entries = entries;
  k.sigma = 1.0;
  return k;
}

Matrix uniform(Eigen::Index n, Eigen::Index k) { return Matrix::Constant(n, k, 1.0 / static_cast<double>(k)); }

Matrix hard(const std::vector<int>& labels, int k) {
  Matrix a = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), k);
  for (std::size_t i = 0; i < labels.size(); ++i) a(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return a;
}

Matrix random_kernel(Rng& rng, Eigen::Index n) {
  const Matrix rows = test::random_matrix(rng, n, 3);
  return gaussian_kernel_matrix(rows, bandwidth_from_batch(rows, KernelConfig{}) + 0.3).entries;
}

Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& perm) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(perm[i]));
  return out;
}

Matrix permute_both(const Matrix& k, const std::vector<std::size_t>& perm) {
  return permute_rows(permute_rows(k, perm).transpose(), perm).transpose();
}

}  // namespace

TEST_SUITE("ddc_objective") {

TEST_CASE("cs pairwise ratio") {
  const Matrix c = hard({0, 1, 0, 1}, 2);
  CHECK(cs_pairwise_ratio(c, Matrix::Identity(4, 4)).value == 0.0);

  Rng rng(1);
  const Matrix k = random_kernel(rng, 5);
  Matrix same(5, 3);
  const Matrix col = test::random_matrix(rng, 5, 1, 0.1, 1.0);
  same << col, col, col;
  CHECK(cs_pairwise_ratio(same, k).value == doctest::Approx(1.0).epsilon(1e-12));

  for (int trial = 0; trial < 10; ++trial) {
    const Matrix cols = test::random_matrix(rng, 6, 3, 0.0, 1.0);
    const Matrix kk = random_kernel(rng, 6);
    CHECK(std::abs(cs_pairwise_ratio(cols, kk).value - oracle::cs_ratio(cols, kk)) < 1e-12);
  }

  Matrix empty = Matrix::Zero(4, 2);
  empty.col(0).setOnes();
  const CsRatio r = cs_pairwise_ratio(empty, Matrix::Identity(4, 4));
  CHECK(r.empty_columns == 1);
  CHECK(std::isfinite(r.value));
}

TEST_CASE("l1 cluster separation") {
  CHECK(l1_cluster_separation(hard({0, 0, 1, 1}, 2), wrap(Matrix::Identity(4, 4))) == 0.0);
  Rng rng(2);
  CHECK(l1_cluster_separation(uniform(6, 3), wrap(random_kernel(rng, 6))) == doctest::Approx(1.0).epsilon(1e-12));
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = test::random_assignments(rng, 8, 3);
    const Matrix k = random_kernel(rng, 8);
    CHECK(std::abs(l1_cluster_separation(a, wrap(k)) - oracle::cs_ratio(a, k)) < 1e-12);
  }
}

TEST_CASE("l2 orthogonality") {
  Matrix a(2, 2);
  a << 1, 0, 0, 1;
  CHECK(l2_orthogonality(a) == 0.0);
  a << 1, 0, 1, 0;
  CHECK(l2_orthogonality(a) == 1.0);
  for (int k : {2, 3, 5}) CHECK(l2_orthogonality(uniform(7, k)) == doctest::Approx(1.0 / k).epsilon(1e-12));
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix r = test::random_assignments(rng, 9, 4);
    CHECK(std::abs(l2_orthogonality(r) - oracle::l2(r)) < 1e-12);
  }
  try {
    l2_orthogonality(uniform(1, 3));
    FAIL("expected TooFewRows");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::TooFewRows);
  }
}

TEST_CASE("simplex similarity") {
  const Matrix m = simplex_similarity(hard({1}, 3));
  CHECK(m(0, 1) == 1.0);
  CHECK(m(0, 0) == doctest::Approx(0.1353352832366127).epsilon(1e-14));
  CHECK(m(0, 2) == doctest::Approx(0.1353352832366127).epsilon(1e-14));
  const Matrix u = simplex_similarity(uniform(1, 2));
  CHECK(u(0, 0) == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
  CHECK(u(0, 1) == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
  Rng rng(4);
  const Matrix a = test::random_assignments(rng, 6, 4);
  CHECK((simplex_similarity(a) - oracle::simplex(a)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("l3 corner") {
  Rng rng(5);
  CHECK(l3_corner(uniform(5, 3), wrap(random_kernel(rng, 5))) == doctest::Approx(1.0).epsilon(1e-12));
  const double e2 = std::exp(-2.0);
  const double expected = 2.0 * e2 / (1.0 + e2 * e2);
  CHECK(std::abs(l3_corner(hard({0, 1}, 2), wrap(Matrix::Identity(2, 2))) - expected) < 1e-10);
  CHECK(expected == doctest::Approx(0.2658021).epsilon(1e-6));
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = test::random_assignments(rng, 7, 3);
    const Matrix k = random_kernel(rng, 7);
    CHECK(std::abs(l3_corner(a, wrap(k)) - oracle::cs_ratio(oracle::simplex(a), k)) < 1e-12);
  }
}

TEST_CASE("ddc loss composition") {
  Rng rng(6);
  for (int k : {2, 3, 4}) {
    const LossBreakdown b = ddc_loss(uniform(6, k), wrap(random_kernel(rng, 6)));
    CHECK(b.total == doctest::Approx(2.0 + 1.0 / k).epsilon(1e-12));
  }
  // Hard balanced assignment under the identity kernel: 2 of the 6 pairs share a cluster.
  const Matrix a = hard({0, 0, 1, 1}, 2);
  const LossBreakdown b = ddc_loss(a, wrap(Matrix::Identity(4, 4)));
  CHECK(b.l1_separation == 0.0);
  CHECK(b.l2_orthogonality == doctest::Approx(2.0 / 6.0).epsilon(1e-15));
  CHECK(b.l3_corner == doctest::Approx(oracle::cs_ratio(oracle::simplex(a), Matrix::Identity(4, 4))).epsilon(1e-12));
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix r = test::random_assignments(rng, 8, 3);
    const Matrix k = random_kernel(rng, 8);
    const LossBreakdown lb = ddc_loss(r, wrap(k));
    CHECK(std::abs(lb.total - oracle::ddc_total(r, k)) < 1e-12);
    CHECK(std::abs(lb.total - (lb.l1_separation + lb.l2_orthogonality + lb.l3_corner)) < 1e-10);
    CHECK(lb.l1_separation >= 0.0);
    CHECK(lb.l1_separation <= 1.0 + 1e-9);
    CHECK(lb.l3_corner <= 1.0 + 1e-9);
  }
}

TEST_CASE("ddc loss invariances") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = test::random_assignments(rng, 8, 4);
    const Matrix k = random_kernel(rng, 8);
    const LossBreakdown base = ddc_loss(a, wrap(k));

    const auto perm = rng.permutation(8);
    const LossBreakdown rows = ddc_loss(permute_rows(a, perm), wrap(permute_both(k, perm)));
    CHECK(rows.l1_separation == doctest::Approx(base.l1_separation).epsilon(1e-12));
    CHECK(rows.l2_orthogonality == doctest::Approx(base.l2_orthogonality).epsilon(1e-12));
    CHECK(rows.l3_corner == doctest::Approx(base.l3_corner).epsilon(1e-12));

    const auto cperm = rng.permutation(4);
    const Matrix relabel = permute_rows(a.transpose(), cperm).transpose();
    CHECK(l1_cluster_separation(relabel, wrap(k)) == doctest::Approx(base.l1_separation).epsilon(1e-12));
    CHECK(l3_corner(relabel, wrap(k)) == doctest::Approx(base.l3_corner).epsilon(1e-12));

    const double c = rng.uniform(0.1, 10.0);
    CHECK(std::abs(l1_cluster_separation(a, wrap(c * k)) - base.l1_separation) < 1e-10);
    CHECK(std::abs(l3_corner(a, wrap(c * k)) - base.l3_corner) < 1e-10);
  }
}

TEST_CASE("ddc loss gradients match finite differences") {
  Rng rng(8);
  const std::vector<std::pair<const char*, DdcTermWeights>> terms{
      {"l1", {1, 0, 0}}, {"l2", {0, 1, 0}}, {"l3", {0, 0, 1}}, {"total", {1, 1, 1}}};
  for (int trial = 0; trial < 10; ++trial) {
    const auto n = static_cast<Eigen::Index>(rng.integer(2, 8));
    const auto k = static_cast<Eigen::Index>(rng.integer(2, 4));
    const Matrix a = test::random_assignments(rng, n, k);
    const Matrix kern = random_kernel(rng, n);
    for (const auto& [name, w] : terms) {
      CAPTURE(name);
      const DdcLossGrad g = ddc_loss_grad(a, kern, w);
      auto fa = [&](const Matrix& x) { return ddc_loss(x, wrap(kern), w).total; };
      CHECK(test::fd_matrix_error(fa, a, g.d_assignments) < 1e-4);
      auto fk = [&](const Matrix& x) { return ddc_loss(a, wrap(x), w).total; };
      CHECK(test::fd_matrix_error(fk, kern, g.d_kernel) < 1e-4);
    }
    const double scale = 0.25;
    const DdcLossGrad s = ddc_loss_grad(a, kern, {}, scale);
    const DdcLossGrad u = ddc_loss_grad(a, kern, {}, 1.0);
    CHECK((s.d_assignments - scale * u.d_assignments).norm() < 1e-12);
  }
}

}  // TEST_SUITE
