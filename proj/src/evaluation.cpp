#include "dtkc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dtkc/metrics.hpp"

namespace dtkc {

RunSummary summarize_accuracies(std::span<const double> accuracies, std::size_t selected) {
  if (accuracies.empty()) throw Error(Errc::TooFewRows, "no runs to summarize");
  RunSummary s;
  s.accuracies.assign(accuracies.begin(), accuracies.end());
  s.n_runs = static_cast<int>(accuracies.size());
  double sum = 0.0;
  for (double a : accuracies) sum += a;
  s.mean = sum / static_cast<double>(accuracies.size());
  double var = 0.0;
  for (double a : accuracies) var += (a - s.mean) * (a - s.mean);
  s.std = std::sqrt(var / static_cast<double>(accuracies.size()));
  s.best = *std::max_element(accuracies.begin(), accuracies.end());
  s.selected = selected;
  s.selected_accuracy = accuracies[selected];
  return s;
}

RunSummary aggregate_runs(std::span<const RunRecord> records, const Dataset& ds) {
  if (!ds.labels) throw Error(Errc::InvalidConfig, "aggregate_runs needs a labelled dataset");
  const std::size_t best = select_best_run(records);
  std::vector<double> accs, nmis;
  std::size_t selected = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].failed) continue;
    if (i == best) selected = accs.size();
    const std::vector<int> pred = predict_labels(records[i].params, ds);
    accs.push_back(hungarian_accuracy(pred, *ds.labels, ds.meta.k));
    nmis.push_back(nmi(pred, *ds.labels));
  }
  RunSummary s = summarize_accuracies(accs, selected);
  s.nmis = std::move(nmis);
  s.selected = static_cast<std::size_t>(records[best].run_index);
  s.selected_nmi = s.nmis[selected];
  return s;
}

SweepParam parse_sweep_param(const std::string& name) {
  if (name == "lambda") return SweepParam::Lambda;
  if (name == "rel_sigma") return SweepParam::RelSigma;
  throw Error(Errc::InvalidConfig, "sweep parameter must be 'lambda' or 'rel_sigma'");
}

std::string sweep_param_name(SweepParam p) { return p == SweepParam::Lambda ? "lambda" : "rel_sigma"; }

SweepTable sweep(const TrainConfig& base, const Dataset& ds, SweepParam param, std::span<const double> values) {
  if (values.empty()) throw Error(Errc::InvalidConfig, "sweep needs at least one value");
  SweepTable table;
  table.param = param;
  for (double v : values) {
    SweepCell cell;
    cell.value = v;
    try {
      TrainConfig cfg = base;
      if (param == SweepParam::Lambda) {
        cfg.lambda = v;
      } else {
        cfg.kernel.rel_sigma = v;
      }
      cfg.validate();
      const MultiRunResult res = train_multi(cfg, ds);
      cell.summary = aggregate_runs(res.runs, ds);
    } catch (const Error& e) {
      cell.error = e.what();
    }
    table.cells.push_back(std::move(cell));
  }
  return table;
}

std::string SweepTable::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << sweep_param_name(param) << ",mean,std,best,selected_accuracy,n_runs,error\n";
  for (const SweepCell& c : cells) {
    out << c.value << ',';
    if (c.summary) {
      out << c.summary->mean << ',' << c.summary->std << ',' << c.summary->best << ','
          << c.summary->selected_accuracy << ',' << c.summary->n_runs << ",\n";
    } else {
      std::string msg = c.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      out << ",,,,," << msg << '\n';
    }
  }
  return out.str();
}

nlohmann::json SweepTable::to_json() const {
  nlohmann::json j;
  j["param"] = sweep_param_name(param);
  j["cells"] = nlohmann::json::array();
  for (const SweepCell& c : cells) {
    nlohmann::json cell{{"value", c.value}};
    if (c.summary) {
      cell["mean"] = c.summary->mean;
      cell["std"] = c.summary->std;
      cell["best"] = c.summary->best;
      cell["selected_accuracy"] = c.summary->selected_accuracy;
      cell["n_runs"] = c.summary->n_runs;
      cell["accuracies"] = c.summary->accuracies;
    } else {
      cell["error"] = c.error;
    }
    j["cells"].push_back(std::move(cell));
  }
  return j;
}

}  // namespace dtkc
