#include "dtkc/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "dtkc/binary_io.hpp"
#include "dtkc/metrics.hpp"
#include "dtkc/rng.hpp"

namespace dtkc {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (batch_size < 2) throw Error(Errc::InvalidConfig, "batch_size must be >= 2");
  if (epochs < 0) throw Error(Errc::InvalidConfig, "epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw Error(Errc::InvalidConfig, "learning_rate must be positive");
  if (n_runs < 1) throw Error(Errc::InvalidConfig, "n_runs must be >= 1");
  if (!(lambda >= 0.0)) throw Error(Errc::InvalidConfig, "lambda must be >= 0");
  kernel.validate();
  if (architecture) architecture->validate();
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw Error(Errc::InvalidConfig, where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw Error(Errc::InvalidConfig, "unknown key '" + key + "' in " + where);
  }
}

}  // namespace

void to_json(json& j, const TrainConfig& c) {
  j = json::object();
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["optimizer"] = {{"name", "adam"}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}};
  j["n_runs"] = c.n_runs;
  j["seed"] = c.seed;
  j["lambda"] = c.lambda;
  j["companion_layers"] = c.companion_layers;
  j["kernel"] = {{"rel_sigma", c.kernel.rel_sigma},
                 {"subspace_rank", c.kernel.subspace_rank},
                 {"min_sigma", c.kernel.min_sigma}};
  if (c.architecture) j["architecture"] = *c.architecture;
  j["dataset"] = c.dataset;
  j["track_accuracy"] = c.track_accuracy;
}

void from_json(const json& j, TrainConfig& c) {
  c = TrainConfig{};
  try {
    reject_unknown(j,
                   {"batch_size", "epochs", "learning_rate", "optimizer", "n_runs", "seed", "lambda",
                    "companion_layers", "kernel", "architecture", "dataset", "track_accuracy"},
                   "config");
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    if (j.contains("optimizer")) {
      const json& o = j.at("optimizer");
      reject_unknown(o, {"name", "beta1", "beta2", "eps"}, "optimizer");
      if (o.value("name", std::string("adam")) != "adam") {
        throw Error(Errc::InvalidConfig, "only the adam optimizer is supported");
      }
      c.adam.beta1 = o.value("beta1", c.adam.beta1);
      c.adam.beta2 = o.value("beta2", c.adam.beta2);
      c.adam.eps = o.value("eps", c.adam.eps);
    }
    c.n_runs = j.value("n_runs", c.n_runs);
    c.seed = j.value("seed", c.seed);
    c.lambda = j.value("lambda", c.lambda);
    c.companion_layers = j.value("companion_layers", c.companion_layers);
    if (j.contains("kernel")) {
      const json& k = j.at("kernel");
      reject_unknown(k, {"rel_sigma", "subspace_rank", "min_sigma"}, "kernel");
      c.kernel.rel_sigma = k.value("rel_sigma", c.kernel.rel_sigma);
      c.kernel.subspace_rank = k.value("subspace_rank", c.kernel.subspace_rank);
      c.kernel.min_sigma = k.value("min_sigma", c.kernel.min_sigma);
    }
    if (j.contains("architecture") && !j.at("architecture").is_null()) {
      c.architecture = j.at("architecture").get<Architecture>();
    }
    c.dataset = j.value("dataset", c.dataset);
    c.track_accuracy = j.value("track_accuracy", c.track_accuracy);
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidConfig, e.what());
  }
  c.validate();
}

// ---------------------------------------------------------------------------
// Records

double RunRecord::final_loss() const {
  if (history.empty()) return std::numeric_limits<double>::infinity();
  return history.back().total;
}

json run_record_to_json(const RunRecord& r) {
  json j;
  j["run_index"] = r.run_index;
  j["seed"] = r.seed;
  j["failed"] = r.failed;
  j["failure"] = r.failure;
  j["failed_step"] = r.failed_step;
  j["history"] = json::array();
  for (const EpochRecord& e : r.history) {
    json h{{"epoch", e.epoch}, {"total", e.total}, {"l1", e.l1}, {"l2", e.l2}, {"l3", e.l3},
           {"companions", e.companions}};
    h["accuracy"] = e.accuracy ? json(*e.accuracy) : json(nullptr);
    j["history"].push_back(std::move(h));
  }
  return j;
}

RunRecord run_record_from_json(const json& j) {
  RunRecord r;
  try {
    r.run_index = j.at("run_index").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.failed = j.value("failed", false);
    r.failure = j.value("failure", std::string{});
    r.failed_step = j.value("failed_step", -1L);
    for (const json& h : j.at("history")) {
      EpochRecord e;
      e.epoch = h.at("epoch").get<int>();
      e.total = h.at("total").get<double>();
      e.l1 = h.at("l1").get<double>();
      e.l2 = h.at("l2").get<double>();
      e.l3 = h.at("l3").get<double>();
      e.companions = h.value("companions", std::vector<double>{});
      if (h.contains("accuracy") && !h.at("accuracy").is_null()) e.accuracy = h.at("accuracy").get<double>();
      r.history.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("run record: ") + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Optimizer

Adam::Adam(const ModelParams& params, double learning_rate, AdamSettings settings)
    : lr_(learning_rate), s_(settings) {
  for (const ParamArray& a : params.arrays) {
    m_.emplace_back(a.values.size(), 0.0);
    v_.emplace_back(a.values.size(), 0.0);
  }
}

void Adam::step(ModelParams& params, const ParamGrads& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
  for (std::size_t a = 0; a < params.arrays.size(); ++a) {
    ParamArray& p = params.arrays[a];
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const double g = grads[a][i];
      m_[a][i] = s_.beta1 * m_[a][i] + (1.0 - s_.beta1) * g;
      v_[a][i] = s_.beta2 * v_[a][i] + (1.0 - s_.beta2) * g * g;
      p.values[i] -= lr_ * (m_[a][i] / c1) / (std::sqrt(v_[a][i] / c2) + s_.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training

Architecture resolve_architecture(const TrainConfig& cfg, const DatasetMeta& meta) {
  Architecture arch = cfg.architecture ? *cfg.architecture : default_architecture(meta);
  const bool image = meta.kind == DatasetKind::Image;
  if (image != (arch.kind == BackboneKind::Cnn)) {
    throw Error(Errc::InvalidConfig, "architecture kind does not match the dataset kind");
  }
  if (arch.n_clusters != meta.k) throw Error(Errc::InvalidConfig, "architecture n_clusters differs from dataset k");
  if (image && (arch.channels != meta.channels || arch.height != meta.height || arch.width != meta.width)) {
    throw Error(Errc::InvalidConfig, "architecture input shape differs from the dataset");
  }
  if (!image && arch.input_dim != meta.dim) {
    throw Error(Errc::InvalidConfig, "architecture input_dim differs from the dataset");
  }
  return arch;
}

ObjectiveBreakdown evaluate_objective(const ModelParams& params, const Dataset& ds, const TrainConfig& cfg) {
  const ForwardResult f = forward(params, ds.head(static_cast<std::size_t>(cfg.batch_size)), Mode::Inference);
  return total_objective(f.taps, f.hidden, f.assignments, cfg.companion_weights(), cfg.kernel);
}

Matrix predict_assignments(const ModelParams& params, const Dataset& ds) {
  constexpr std::size_t kChunk = 256;
  const auto n = static_cast<std::size_t>(ds.data.rows());
  Matrix out(static_cast<Eigen::Index>(n), params.arch.n_clusters);
  for (std::size_t start = 0; start < n; start += kChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(n, start + kChunk); ++i) idx.push_back(i);
    const ForwardResult f = forward(params, ds.batch(idx), Mode::Inference);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(idx.size())) = f.assignments;
  }
  return out;
}

std::vector<int> predict_labels(const ModelParams& params, const Dataset& ds) {
  const Matrix a = predict_assignments(params, ds);
  std::vector<int> labels(static_cast<std::size_t>(a.rows()));
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    Eigen::Index best = 0;
    a.row(i).maxCoeff(&best);
    labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return labels;
}

RunRecord train_one_run(const TrainConfig& cfg, const Dataset& ds, std::uint64_t run_seed, int run_index) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const auto n = static_cast<std::size_t>(ds.data.rows());
  if (n == 0) throw Error(Errc::TooFewRows, "dataset is empty");
  if (static_cast<std::size_t>(cfg.batch_size) > n) {
    throw Error(Errc::InvalidConfig, "batch_size exceeds the dataset size");
  }
  RunRecord rec;
  rec.run_index = run_index;
  rec.seed = run_seed;
  rec.params = init_params(resolve_architecture(cfg, ds.meta), run_seed);

  Adam adam(rec.params, cfg.learning_rate, cfg.adam);
  Rng shuffle_rng(run_seed ^ 0x9e3779b97f4a7c15ULL);
  const CompanionWeights weights = cfg.companion_weights();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  long step = 0;

  for (int epoch = 1; epoch <= cfg.epochs && !rec.failed; ++epoch) {
    const std::vector<std::size_t> order = shuffle_rng.permutation(n);
    for (std::size_t b = 0; b < n; b += bs) {
      const std::size_t count = std::min(bs, n - b);
      if (count < 2) continue;
      const std::span<const std::size_t> idx(order.data() + b, count);
      ForwardCache cache;
      const ForwardResult f = forward(rec.params, ds.batch(idx), Mode::Train, &cache);
      const ObjectiveGrad obj = total_objective_grad(f.taps, f.hidden, f.assignments, weights, cfg.kernel);
      ++step;
      if (!std::isfinite(obj.loss.total)) {
        rec.failed = true;
        rec.failed_step = step;
        rec.failure = "NonFiniteLoss at step " + std::to_string(step);
        break;
      }
      const BackwardResult grads = backward(rec.params, cache, obj.grads);
      update_running_stats(rec.params, cache);
      adam.step(rec.params, grads.params);
    }
    if (rec.failed) break;

    const ObjectiveBreakdown eval = evaluate_objective(rec.params, ds, cfg);
    if (!std::isfinite(eval.total)) {
      rec.failed = true;
      rec.failed_step = step;
      rec.failure = "NonFiniteLoss in evaluation after epoch " + std::to_string(epoch);
      break;
    }
    EpochRecord e;
    e.epoch = epoch;
    e.total = eval.total;
    e.l1 = eval.main.l1_separation;
    e.l2 = eval.main.l2_orthogonality;
    e.l3 = eval.main.l3_corner;
    for (const LossBreakdown& c : eval.companions) e.companions.push_back(c.total);
    if (cfg.track_accuracy && ds.labels) {
      e.accuracy = hungarian_accuracy(predict_labels(rec.params, ds), *ds.labels, ds.meta.k);
    }
    rec.history.push_back(std::move(e));
  }
  rec.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

std::size_t select_best_run(std::span<const RunRecord> runs) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (runs[i].failed) continue;
    if (!best || runs[i].final_loss() < runs[*best].final_loss()) best = i;
  }
  if (!best) throw Error(Errc::AllRunsFailed, "every run aborted");
  return *best;
}

MultiRunResult train_multi(const TrainConfig& cfg, const Dataset& ds) {
  cfg.validate();
  MultiRunResult res;
  for (int i = 0; i < cfg.n_runs; ++i) {
    res.runs.push_back(train_one_run(cfg, ds, cfg.seed + static_cast<std::uint64_t>(i), i));
  }
  res.best = select_best_run(res.runs);
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const ModelParams& params, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "dtkc-checkpoint";
  manifest["version"] = kCheckpointVersion;
  manifest["seed"] = params.seed;
  manifest["architecture"] = params.arch;
  manifest["arrays"] = json::array();
  for (const ParamArray& a : params.arrays) {
    const std::string file = a.name + ".bin";
    manifest["arrays"].push_back(
        {{"name", a.name}, {"shape", a.shape}, {"dtype", "f64"}, {"file", file}, {"trainable", a.trainable}});
    write_f64_file(dir / file, a.values);
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw Error(Errc::Io, "cannot write checkpoint manifest");
}

ModelParams load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error(Errc::CorruptCheckpoint, "missing manifest.json in " + dir.string());
  ModelParams params;
  try {
    json manifest;
    in >> manifest;
    const int version = manifest.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw Error(Errc::CorruptCheckpoint, "checkpoint version " + std::to_string(version) +
                                               " is not supported (expected " +
                                               std::to_string(kCheckpointVersion) + ")");
    }
    const Architecture arch = manifest.at("architecture").get<Architecture>();
    params = init_params(arch, manifest.at("seed").get<std::uint64_t>());
    const json& arrays = manifest.at("arrays");
    if (arrays.size() != params.arrays.size()) {
      throw Error(Errc::CorruptCheckpoint, "manifest array count does not match the architecture");
    }
    for (std::size_t i = 0; i < arrays.size(); ++i) {
      const json& a = arrays[i];
      ParamArray& p = params.arrays[i];
      if (a.at("name").get<std::string>() != p.name ||
          a.at("shape").get<std::vector<std::size_t>>() != p.shape || a.at("dtype").get<std::string>() != "f64") {
        throw Error(Errc::CorruptCheckpoint, "array " + std::to_string(i) + " does not match the architecture");
      }
      p.values = read_f64_file(dir / a.at("file").get<std::string>(), p.values.size(), Errc::CorruptCheckpoint);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorruptCheckpoint, e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::CorruptCheckpoint) throw;
    throw Error(Errc::CorruptCheckpoint, e.what());
  }
  return params;
}

}  // namespace dtkc
