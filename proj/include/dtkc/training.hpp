#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dtkc/companion.hpp"
#include "dtkc/data.hpp"
#include "dtkc/kernels.hpp"
#include "dtkc/networks.hpp"

namespace dtkc {

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  int batch_size = 120;
  int epochs = 100;
  double learning_rate = 1e-3;
  AdamSettings adam;
  int n_runs = 20;
  std::uint64_t seed = 0;
  double lambda = 0.0;
  std::vector<bool> companion_layers;  // empty: all taps enabled
  KernelConfig kernel;
  std::optional<Architecture> architecture;  // default derived from the dataset
  std::string dataset;                       // path, used by the CLI
  bool track_accuracy = true;                // per-epoch accuracy when labels exist

  void validate() const;
  CompanionWeights companion_weights() const { return {lambda, companion_layers}; }
};

// Unknown keys are rejected.
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double total = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double l3 = 0.0;
  std::vector<double> companions;  // per-tap companion totals
  std::optional<double> accuracy;
};

struct RunRecord {
  int run_index = 0;
  std::uint64_t seed = 0;
  ModelParams params;
  std::string checkpoint;  // set once the params are written to disk
  std::vector<EpochRecord> history;
  double wall_clock_seconds = 0.0;
  bool failed = false;
  std::string failure;
  long failed_step = -1;

  // Last recorded total, or +inf without history.
  double final_loss() const;
};

// The params, wall clock and checkpoint path are not part of the JSON form.
nlohmann::json run_record_to_json(const RunRecord& r);
RunRecord run_record_from_json(const nlohmann::json& j);

class Adam {
 public:
  Adam(const ModelParams& params, double learning_rate, AdamSettings settings);
  void step(ModelParams& params, const ParamGrads& grads);

 private:
  double lr_;
  AdamSettings s_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

Architecture resolve_architecture(const TrainConfig& cfg, const DatasetMeta& meta);

// Objective on the fixed evaluation batch (first batch_size observations,
// inference mode).
ObjectiveBreakdown evaluate_objective(const ModelParams& params, const Dataset& ds, const TrainConfig& cfg);

// Soft assignments for every observation (inference mode).
Matrix predict_assignments(const ModelParams& params, const Dataset& ds);
std::vector<int> predict_labels(const ModelParams& params, const Dataset& ds);

RunRecord train_one_run(const TrainConfig& cfg, const Dataset& ds, std::uint64_t run_seed, int run_index = 0);

// Lowest final loss among runs that did not fail; ties go to the lower index.
std::size_t select_best_run(std::span<const RunRecord> runs);

struct MultiRunResult {
  std::size_t best = 0;
  std::vector<RunRecord> runs;

  const RunRecord& best_run() const { return runs[best]; }
};

// n_runs independent runs with seeds seed + i.
MultiRunResult train_multi(const TrainConfig& cfg, const Dataset& ds);

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const ModelParams& params, const std::filesystem::path& dir);
ModelParams load_checkpoint(const std::filesystem::path& dir);

}  // namespace dtkc
