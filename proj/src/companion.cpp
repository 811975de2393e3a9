#include "dtkc/companion.hpp"

#include <optional>
#include <variant>

namespace dtkc {

namespace {

constexpr DdcTermWeights kCompanionTerms{1.0, 0.0, 1.0};

// Holds whichever differentiable kernel the tap calls for.
class TapKernel {
 public:
  using Eval = std::variant<TensorKernelEval, GaussianKernelEval>;

  TapKernel(const LayerTap& tap, const KernelConfig& cfg, std::optional<double> sigma = std::nullopt)
      : eval_(make(tap, cfg, sigma)) {}

  const KernelMatrix& kernel() const {
    return std::visit([](const auto& e) -> const KernelMatrix& { return e.kernel(); }, eval_);
  }

  Matrix backward(const Matrix& d_kernel) const {
    return std::visit([&](const auto& e) { return e.backward(d_kernel); }, eval_);
  }

 private:
  static Eval make(const LayerTap& tap, const KernelConfig& cfg, std::optional<double> sigma) {
    if (tap.batch.n() < 2) {
      throw Error(Errc::TooFewRows, "companion kernels need at least two observations");
    }
    if (tap.kind == TapKind::ConvMap) {
      if (sigma) return TensorKernelEval(tap.batch, *sigma, cfg);
      return TensorKernelEval(tap.batch, cfg);
    }
    if (sigma) return GaussianKernelEval(tap.batch.rows, *sigma);
    return GaussianKernelEval(tap.batch.rows, cfg);
  }

  Eval eval_;
};

GaussianKernelEval main_kernel(const Matrix& hidden, const KernelConfig& cfg, const Bandwidths* frozen) {
  if (frozen) return GaussianKernelEval(hidden, frozen->main);
  return GaussianKernelEval(hidden, cfg);
}

std::optional<double> frozen_tap(const Bandwidths* frozen, std::size_t t) {
  if (frozen && t < frozen->taps.size() && frozen->taps[t] > 0.0) return frozen->taps[t];
  return std::nullopt;
}

LossBreakdown strip_l2(LossBreakdown b) {
  b.l2_orthogonality = 0.0;
  b.total = b.l1_separation + b.l3_corner;
  return b;
}

}  // namespace

KernelMatrix companion_kernel(const LayerTap& tap, const KernelConfig& cfg) {
  return TapKernel(tap, cfg).kernel();
}

LossBreakdown companion_loss(const LayerTap& tap, const AssignmentMatrix& a, const KernelConfig& cfg) {
  return strip_l2(ddc_loss(a, companion_kernel(tap, cfg), kCompanionTerms));
}

ObjectiveBreakdown total_objective(const std::vector<LayerTap>& taps, const Matrix& hidden,
                                   const AssignmentMatrix& a, const CompanionWeights& weights,
                                   const KernelConfig& cfg, const Bandwidths* frozen) {
  ObjectiveBreakdown out;
  const GaussianKernelEval mk = main_kernel(hidden, cfg, frozen);
  out.bandwidths.main = mk.kernel().sigma;
  out.bandwidths.taps.assign(taps.size(), 0.0);
  out.main = ddc_loss(a, mk.kernel());
  double companion_sum = 0.0;
  for (std::size_t t = 0; t < taps.size(); ++t) {
    if (weights.lambda > 0.0 && weights.enabled(t)) {
      const TapKernel kernel(taps[t], cfg, frozen_tap(frozen, t));
      out.bandwidths.taps[t] = kernel.kernel().sigma;
      out.companions.push_back(strip_l2(ddc_loss(a, kernel.kernel(), kCompanionTerms)));
      companion_sum += out.companions.back().total;
    } else {
      out.companions.emplace_back();
    }
  }
  out.total = out.main.total + weights.lambda * companion_sum;
  return out;
}

ObjectiveGrad total_objective_grad(const std::vector<LayerTap>& taps, const Matrix& hidden,
                                   const AssignmentMatrix& a, const CompanionWeights& weights,
                                   const KernelConfig& cfg, double scale, const Bandwidths* frozen) {
  ObjectiveGrad res;
  const GaussianKernelEval mk = main_kernel(hidden, cfg, frozen);
  const DdcLossGrad main = ddc_loss_grad(a, mk.kernel().entries, {}, scale);
  res.loss.bandwidths.main = mk.kernel().sigma;
  res.loss.bandwidths.taps.assign(taps.size(), 0.0);
  res.loss.main = main.loss;
  res.grads.d_assignments = main.d_assignments;
  res.grads.d_hidden = mk.backward(main.d_kernel);
  res.grads.d_taps.resize(taps.size());

  double companion_sum = 0.0;
  for (std::size_t t = 0; t < taps.size(); ++t) {
    if (!(weights.lambda > 0.0) || !weights.enabled(t)) {
      res.loss.companions.emplace_back();
      continue;
    }
    const TapKernel kernel(taps[t], cfg, frozen_tap(frozen, t));
    res.loss.bandwidths.taps[t] = kernel.kernel().sigma;
    const DdcLossGrad c =
        ddc_loss_grad(a, kernel.kernel().entries, kCompanionTerms, scale * weights.lambda);
    res.loss.companions.push_back(strip_l2(c.loss));
    companion_sum += res.loss.companions.back().total;
    res.grads.d_assignments += c.d_assignments;
    res.grads.d_taps[t] = kernel.backward(c.d_kernel);
  }
  res.loss.total = res.loss.main.total + weights.lambda * companion_sum;
  return res;
}

ObjectiveGrad single_term_grad(const std::vector<LayerTap>& taps, const Matrix& hidden,
                               const AssignmentMatrix& a, int layer, const KernelConfig& cfg, double scale,
                               const Bandwidths* frozen) {
  ObjectiveGrad res;
  res.grads.d_taps.resize(taps.size());
  res.loss.bandwidths.taps.assign(taps.size(), 0.0);
  res.loss.companions.resize(taps.size());
  if (layer == 0) {
    const GaussianKernelEval mk = main_kernel(hidden, cfg, frozen);
    const DdcLossGrad g = ddc_loss_grad(a, mk.kernel().entries, {}, scale);
    res.loss.bandwidths.main = mk.kernel().sigma;
    res.loss.main = g.loss;
    res.loss.total = g.loss.total;
    res.grads.d_assignments = g.d_assignments;
    res.grads.d_hidden = mk.backward(g.d_kernel);
    return res;
  }
  std::size_t t = 0;
  while (t < taps.size() && taps[t].layer_index != layer) ++t;
  if (t == taps.size()) {
    throw Error(Errc::LayerWithoutCompanion, "no companion objective at layer " + std::to_string(layer));
  }
  const TapKernel kernel(taps[t], cfg, frozen_tap(frozen, t));
  const DdcLossGrad g = ddc_loss_grad(a, kernel.kernel().entries, kCompanionTerms, scale);
  res.loss.bandwidths.taps[t] = kernel.kernel().sigma;
  res.loss.companions[t] = strip_l2(g.loss);
  res.loss.total = res.loss.companions[t].total;
  res.grads.d_assignments = g.d_assignments;
  res.grads.d_taps[t] = kernel.backward(g.d_kernel);
  return res;
}

}  // namespace dtkc
