#pragma once

#include <vector>

#include "dtkc/ddc_objective.hpp"
#include "dtkc/kernels.hpp"
#include "dtkc/networks.hpp"

namespace dtkc {

struct CompanionWeights {
  double lambda = 0.0;
  // Indexed by tap position; missing entries count as enabled.
  std::vector<bool> per_layer_enabled;

  bool enabled(std::size_t tap) const {
    return tap >= per_layer_enabled.size() || per_layer_enabled[tap];
  }
};

// Tensor kernel for convolutional taps, Gaussian kernel for vector taps.
KernelMatrix companion_kernel(const LayerTap& tap, const KernelConfig& cfg);

// l1 + l3 of the DDC loss under the tap's kernel; l2 is reported as 0.
LossBreakdown companion_loss(const LayerTap& tap, const AssignmentMatrix& a, const KernelConfig& cfg);

// Bandwidths used for one evaluation: the hidden-layer kernel and one per tap
// (0 for taps that were not evaluated).
struct Bandwidths {
  double main = 0.0;
  std::vector<double> taps;
};

struct ObjectiveBreakdown {
  Bandwidths bandwidths;
  LossBreakdown main;
  std::vector<LossBreakdown> companions;  // one per tap; zeros for disabled taps
  double total = 0.0;
};

/// main DDC loss on the hidden-layer kernel plus lambda times the sum of the
/// enabled companion losses.
ObjectiveBreakdown total_objective(const std::vector<LayerTap>& taps, const Matrix& hidden,
                                   const AssignmentMatrix& a, const CompanionWeights& weights,
                                   const KernelConfig& cfg, const Bandwidths* frozen = nullptr);

struct ObjectiveGrad {
  ObjectiveBreakdown loss;
  OutputGrads grads;
};

// Gradients w.r.t. the assignments, the hidden representation and each tap.
// Bandwidths are computed from the batch (or taken from `frozen`) and held
// constant.
ObjectiveGrad total_objective_grad(const std::vector<LayerTap>& taps, const Matrix& hidden,
                                   const AssignmentMatrix& a, const CompanionWeights& weights,
                                   const KernelConfig& cfg, double scale = 1.0,
                                   const Bandwidths* frozen = nullptr);

// Gradient of a single term: the main loss (layer == 0) or one companion
// (1-based tap layer index), scaled by `scale`.
ObjectiveGrad single_term_grad(const std::vector<LayerTap>& taps, const Matrix& hidden,
                               const AssignmentMatrix& a, int layer, const KernelConfig& cfg,
                               double scale = 1.0, const Bandwidths* frozen = nullptr);

}  // namespace dtkc
