#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dtkc/data.hpp"
#include "dtkc/training.hpp"

namespace dtkc {

struct RunSummary {
  std::vector<double> accuracies;  // per run, in run order (failed runs excluded)
  std::vector<double> nmis;
  double mean = 0.0;
  double std = 0.0;  // population
  double best = 0.0;
  std::size_t selected = 0;  // run index chosen by lowest final loss
  double selected_accuracy = 0.0;
  double selected_nmi = 0.0;
  int n_runs = 0;
};

// Statistics over per-run accuracies; `selected` indexes into `accuracies`.
RunSummary summarize_accuracies(std::span<const double> accuracies, std::size_t selected);

// Evaluates each run's final params on the whole labelled dataset.
RunSummary aggregate_runs(std::span<const RunRecord> records, const Dataset& ds);

enum class SweepParam { Lambda, RelSigma };

SweepParam parse_sweep_param(const std::string& name);
std::string sweep_param_name(SweepParam p);

struct SweepCell {
  double value = 0.0;
  std::optional<RunSummary> summary;
  std::string error;  // set when the cell failed
};

struct SweepTable {
  SweepParam param = SweepParam::Lambda;
  std::vector<SweepCell> cells;

  std::string to_csv() const;
  nlohmann::json to_json() const;
};

// One train_multi + aggregate_runs per value; every cell reuses base.seed.
SweepTable sweep(const TrainConfig& base, const Dataset& ds, SweepParam param, std::span<const double> values);

}  // namespace dtkc
