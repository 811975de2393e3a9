#include "dtkc/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "dtkc/diagnostics.hpp"
#include "dtkc/evaluation.hpp"
#include "dtkc/metrics.hpp"
#include "dtkc/training.hpp"

namespace dtkc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot read " + path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidConfig, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
}

// Config with the dataset path resolved against the config's directory and
// DTKC_SEED applied.
TrainConfig load_config(const fs::path& path) {
  TrainConfig cfg = read_json_file(path).get<TrainConfig>();
  if (cfg.dataset.empty()) throw Error(Errc::InvalidConfig, "config has no dataset path");
  fs::path data = cfg.dataset;
  if (data.is_relative()) data = path.parent_path() / data;
  cfg.dataset = data.string();
  if (const char* seed = std::getenv("DTKC_SEED"); seed && *seed) {
    try {
      cfg.seed = std::stoull(seed);
    } catch (const std::exception&) {
      throw Error(Errc::InvalidConfig, "DTKC_SEED must be a non-negative integer");
    }
  }
  return cfg;
}

json labelled_scores(const ModelParams& params, const Dataset& ds) {
  json j;
  j["n"] = ds.meta.n;
  if (!ds.labels) {
    j["accuracy"] = nullptr;
    j["nmi"] = nullptr;
    return j;
  }
  const std::vector<int> pred = predict_labels(params, ds);
  j["accuracy"] = hungarian_accuracy(pred, *ds.labels, ds.meta.k);
  j["nmi"] = nmi(pred, *ds.labels);
  return j;
}

void write_runs(const MultiRunResult& res, const fs::path& out_dir) {
  for (const RunRecord& r : res.runs) {
    const fs::path dir = out_dir / ("run_" + std::to_string(r.run_index));
    fs::create_directories(dir);
    save_checkpoint(r.params, dir / "checkpoint");
    write_text(dir / "record.json", run_record_to_json(r).dump(2) + "\n");
    write_text(dir / "timing.json", json{{"wall_clock_seconds", r.wall_clock_seconds}}.dump(2) + "\n");
  }
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw CLI::ValidationError("--values", "'" + item + "' is not a number");
    }
  }
  if (values.empty()) throw CLI::ValidationError("--values", "no values given");
  return values;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deep tensor kernel clustering: training, evaluation and diagnostics"};
  app.require_subcommand(1);

  std::string config_path, out_path, checkpoint_path, data_path, run_path, param_name, values_text;
  int layer = 0;
  int count = 8;
  double rel_sigma = 0.15;

  auto* train = app.add_subcommand("train", "Train n_runs models and keep the lowest-loss run");
  train->add_option("--config", config_path, "Training config (JSON)")->required();
  train->add_option("--out", out_path, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Print accuracy and NMI of a checkpoint as JSON");
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint directory")->required();
  eval->add_option("--data", data_path, "Dataset directory")->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "Train and aggregate once per value of lambda or rel_sigma");
  sweep_cmd->add_option("--param", param_name, "lambda or rel_sigma")
      ->required()
      ->check(CLI::IsMember({"lambda", "rel_sigma"}));
  sweep_cmd->add_option("--values", values_text, "Comma-separated values")->required();
  sweep_cmd->add_option("--config", config_path, "Training config (JSON)")->required();
  sweep_cmd->add_option("--out", out_path, "Output directory (sweep.csv, sweep.json)")->required();

  auto* viz_imp = app.add_subcommand(
      "viz-importance",
      "Input-gradient importance maps, written as layer{L}_obs{i}.pgm plus importance.json");
  viz_imp->add_option("--checkpoint", checkpoint_path, "Checkpoint directory")->required();
  viz_imp->add_option("--data", data_path, "Image dataset directory")->required();
  viz_imp->add_option("--layer", layer, "Tap layer (1-based); 0 selects the main loss")->required();
  viz_imp->add_option("--out", out_path, "Output directory")->required();
  viz_imp->add_option("--count", count, "Number of leading observations used as the batch")
      ->check(CLI::Range(2, 100000));
  viz_imp->add_option("--rel-sigma", rel_sigma, "Kernel bandwidth relative to the median distance");

  auto* viz_clusters = app.add_subcommand("viz-clusters", "Grid image of the most confident members per cluster");
  viz_clusters->add_option("--checkpoint", checkpoint_path, "Checkpoint directory")->required();
  viz_clusters->add_option("--data", data_path, "Image dataset directory")->required();
  viz_clusters->add_option("--out", out_path, "Output image (.pgm or .ppm)")->required();

  auto* ofm = app.add_subcommand("ofm", "Loss/accuracy correlation over the epochs of one run");
  ofm->add_option("--run", run_path, "record.json of a run")->required();

  auto* make_data = app.add_subcommand("make-data", "Write a synthetic dataset");
  make_data->require_subcommand(1);
  int k = 3, per_cluster = 50, side = 16, dim = 2, min_length = 20, max_length = 26;
  std::uint64_t seed = 0;
  auto* blobs = make_data->add_subcommand("blobs", "Gaussian blob images");
  auto* seqs = make_data->add_subcommand("seqs", "Noisy sinusoid sequences");
  for (auto* sub : {blobs, seqs}) {
    sub->add_option("--k", k, "Number of clusters")->check(CLI::Range(2, 1000));
    sub->add_option("--per-cluster", per_cluster, "Observations per cluster")->check(CLI::Range(1, 1000000));
    sub->add_option("--seed", seed, "Generator seed");
    sub->add_option("--out", out_path, "Output directory")->required();
  }
  blobs->add_option("--side", side, "Image side length")->check(CLI::Range(8, 4096));
  seqs->add_option("--dim", dim, "Element dimension")->check(CLI::Range(1, 4096));
  seqs->add_option("--min-length", min_length, "Shortest sequence")->check(CLI::Range(1, 1000000));
  seqs->add_option("--max-length", max_length, "Longest sequence")->check(CLI::Range(1, 1000000));

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (train->parsed()) {
      const TrainConfig cfg = load_config(config_path);
      const Dataset ds = load_dataset(cfg.dataset);
      const MultiRunResult res = train_multi(cfg, ds);
      fs::create_directories(out_path);
      write_text(fs::path(out_path) / "config.json", json(cfg).dump(2) + "\n");
      write_runs(res, out_path);
      json summary;
      summary["selected_run"] = res.best;
      summary["selected_checkpoint"] = "run_" + std::to_string(res.best) + "/checkpoint";
      summary["final_losses"] = json::array();
      for (const RunRecord& r : res.runs) {
        summary["final_losses"].push_back(r.failed ? json(nullptr) : json(r.final_loss()));
      }
      const json scores = labelled_scores(res.best_run().params, ds);
      summary["selected_accuracy"] = scores["accuracy"];
      summary["selected_nmi"] = scores["nmi"];
      write_text(fs::path(out_path) / "summary.json", summary.dump(2) + "\n");
      out << summary.dump(2) << '\n';
    } else if (eval->parsed()) {
      const ModelParams params = load_checkpoint(checkpoint_path);
      const Dataset ds = load_dataset(data_path);
      out << labelled_scores(params, ds).dump(2) << '\n';
    } else if (sweep_cmd->parsed()) {
      const std::vector<double> values = parse_values(values_text);
      const TrainConfig cfg = load_config(config_path);
      const Dataset ds = load_dataset(cfg.dataset);
      const SweepTable table = sweep(cfg, ds, parse_sweep_param(param_name), values);
      fs::create_directories(out_path);
      write_text(fs::path(out_path) / "sweep.csv", table.to_csv());
      write_text(fs::path(out_path) / "sweep.json", table.to_json().dump(2) + "\n");
      out << table.to_json().dump(2) << '\n';
    } else if (viz_imp->parsed()) {
      const ModelParams params = load_checkpoint(checkpoint_path);
      const Dataset ds = load_dataset(data_path);
      if (ds.meta.kind != DatasetKind::Image) throw Error(Errc::NotAnImageDataset, "viz-importance needs images");
      KernelConfig kcfg;
      kcfg.rel_sigma = rel_sigma;
      const auto maps = importance_map(params, ds.head(static_cast<std::size_t>(count)), layer, kcfg);
      fs::create_directories(out_path);
      json index = json::array();
      for (const ImportanceMap& m : maps) {
        const std::string name =
            "layer" + std::to_string(m.layer_index) + "_obs" + std::to_string(m.observation) + ".pgm";
        write_pgm(fs::path(out_path) / name, m.values);
        index.push_back({{"layer", m.layer_index}, {"observation", m.observation}, {"file", name}});
      }
      write_text(fs::path(out_path) / "importance.json", index.dump(2) + "\n");
      out << index.dump(2) << '\n';
    } else if (viz_clusters->parsed()) {
      const ModelParams params = load_checkpoint(checkpoint_path);
      const Dataset ds = load_dataset(data_path);
      const ClusterGrid grid = export_cluster_grid(params, ds, out_path);
      out << json{{"file", out_path}, {"members", grid.members}}.dump(2) << '\n';
    } else if (ofm->parsed()) {
      const RunRecord rec = run_record_from_json(read_json_file(run_path));
      json report;
      try {
        const OfmReport r = ofm_curves(rec);
        report["loss"] = r.loss;
        report["accuracy"] = r.accuracy;
        report["correlation"] = r.correlation;
      } catch (const Error& e) {
        if (e.code() != Errc::ConstantSeries) throw;
        report["correlation"] = nullptr;
        report["error"] = e.what();
      }
      out << report.dump(2) << '\n';
    } else if (blobs->parsed()) {
      save_dataset(make_synthetic_blob_images(k, per_cluster, side, seed), out_path);
    } else if (seqs->parsed()) {
      if (max_length < min_length) throw Error(Errc::InvalidConfig, "--max-length must be >= --min-length");
      save_dataset(make_synthetic_sequences(k, per_cluster, dim, min_length, max_length, seed), out_path);
    }
  } catch (const CLI::ValidationError& e) {
    err << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace dtkc
