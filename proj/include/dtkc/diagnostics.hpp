#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "dtkc/companion.hpp"
#include "dtkc/data.hpp"
#include "dtkc/training.hpp"

namespace dtkc {

// Selects the main DDC loss instead of a companion objective.
inline constexpr int kMainObjectiveLayer = 0;

struct ImportanceMap {
  int layer_index = 0;
  int observation = 0;
  Matrix values;  // height x width, in [0, 1]
};

// Gradient of one objective term (main loss or the companion at `layer`) with
// respect to the input batch, in inference mode. Bandwidths may be frozen.
Matrix objective_input_gradient(const ModelParams& params, const InputBatch& batch, int layer,
                                const KernelConfig& cfg, double loss_scale = 1.0,
                                const Bandwidths* frozen = nullptr);

// |input gradient|, summed over channels and max-normalized per observation.
// An all-zero gradient yields an all-zero map.
std::vector<ImportanceMap> importance_map(const ModelParams& params, const InputBatch& batch, int layer,
                                          const KernelConfig& cfg, double loss_scale = 1.0);

// Pearson correlation; throws ConstantSeries when either series has zero variance.
double pearson_correlation(std::span<const double> x, std::span<const double> y);

struct OfmReport {
  std::vector<double> loss;
  std::vector<double> accuracy;
  double correlation = 0.0;  // strongly negative: loss tracks accuracy
};

OfmReport ofm_curves(const RunRecord& record);

struct ClusterGrid {
  // Per cluster, up to 10 members ordered by decreasing assignment confidence.
  std::vector<std::vector<std::size_t>> members;
};

inline constexpr int kGridMembersPerRow = 10;

// Writes a PGM (one channel) or PPM (three channels) grid, one row per cluster.
ClusterGrid export_cluster_grid(const ModelParams& params, const Dataset& ds, const std::filesystem::path& out);

// Binary PGM of values in [0, 1].
void write_pgm(const std::filesystem::path& path, const Matrix& gray);

}  // namespace dtkc
