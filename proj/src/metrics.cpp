#include "dtkc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace dtkc {

std::vector<int> linear_assignment(const Eigen::MatrixXd& cost) {
  const auto rows = static_cast<int>(cost.rows());
  const auto cols = static_cast<int>(cost.cols());
  const int n = std::max(rows, cols);
  if (n == 0) return {};
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n, n);
  c.topLeftCorner(rows, cols) = cost;

  // 1-based potentials formulation; p[j] is the row assigned to column j.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(static_cast<std::size_t>(rows), -1);
  for (int j = 1; j <= n; ++j) {
    const int row = p[j] - 1;
    if (row < rows && j - 1 < cols) assignment[static_cast<std::size_t>(row)] = j - 1;
  }
  return assignment;
}

namespace {

void check_labels(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) throw Error(Errc::LengthMismatch, "label vectors differ in length");
  if (pred.empty()) throw Error(Errc::LengthMismatch, "label vectors are empty");
}

}  // namespace

Eigen::MatrixXd confusion_matrix(std::span<const int> pred, std::span<const int> truth, int k_pred,
                                 int k_true) {
  check_labels(pred, truth);
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(k_pred, k_true);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= k_pred || truth[i] < 0 || truth[i] >= k_true) {
      throw Error(Errc::LabelOutOfRange, "label " + std::to_string(i) + " out of range");
    }
    counts(pred[i], truth[i]) += 1.0;
  }
  return counts;
}

double hungarian_accuracy(std::span<const int> pred, std::span<const int> truth, int k) {
  const Eigen::MatrixXd counts = confusion_matrix(pred, truth, k, k);
  const std::vector<int> match = linear_assignment(-counts);
  double matched = 0.0;
  for (int p = 0; p < k; ++p) {
    if (match[static_cast<std::size_t>(p)] >= 0) matched += counts(p, match[static_cast<std::size_t>(p)]);
  }
  return matched / static_cast<double>(pred.size());
}

double nmi(std::span<const int> pred, std::span<const int> truth) {
  check_labels(pred, truth);
  const auto n = static_cast<double>(pred.size());
  std::map<int, double> pc, tc;
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pc[pred[i]] += 1.0;
    tc[truth[i]] += 1.0;
    joint[{pred[i], truth[i]}] += 1.0;
  }
  const auto entropy = [n](const std::map<int, double>& counts) {
    double h = 0.0;
    for (const auto& [_, c] : counts) h -= (c / n) * std::log(c / n);
    return h;
  };
  double mi = 0.0;
  for (const auto& [key, c] : joint) {
    mi += (c / n) * std::log(c * n / (pc[key.first] * tc[key.second]));
  }
  const double denom = 0.5 * (entropy(pc) + entropy(tc));
  if (denom <= 0.0) return 0.0;
  return std::clamp(mi / denom, 0.0, 1.0);
}

}  // namespace dtkc
