#pragma once

#include <span>
#include <vector>

#include "dtkc/types.hpp"

namespace dtkc {

// Minimum-cost assignment of rows to columns (Kuhn-Munkres with potentials).
// Rectangular inputs are padded with zero-cost dummies; the result maps each
// row to a column, or -1 for rows matched to padding.
std::vector<int> linear_assignment(const Eigen::MatrixXd& cost);

// counts(p, t) = #{i : pred_i = p, truth_i = t}
Eigen::MatrixXd confusion_matrix(std::span<const int> pred, std::span<const int> truth, int k_pred,
                                 int k_true);

// Clustering accuracy after optimally matching clusters to classes.
double hungarian_accuracy(std::span<const int> pred, std::span<const int> truth, int k);

// Mutual information over the arithmetic mean of the two entropies; 0 when
// both entropies vanish.
double nmi(std::span<const int> pred, std::span<const int> truth);

}  // namespace dtkc
