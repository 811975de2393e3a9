#include "doctest.h"

#include <fstream>

#include "dtkc/training.hpp"
#include "json.hpp"
#include "test_support.hpp"

using namespace dtkc;
namespace fs = std::filesystem;

namespace {

RunRecord fake_record(int index, double final_loss, bool failed = false) {
  RunRecord r;
  r.run_index = index;
  r.failed = failed;
  EpochRecord e;
  e.epoch = 1;
  e.total = final_loss;
  r.history.push_back(e);
  return r;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void expect_corrupt_checkpoint(const fs::path& dir, const std::string& needle = "") {
  try {
    load_checkpoint(dir);
    FAIL("expected CorruptCheckpoint");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::CorruptCheckpoint);
    if (!needle.empty()) CHECK(std::string(e.what()).find(needle) != std::string::npos);
  }
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("config validation and strict json") {
  TrainConfig cfg;
  CHECK(cfg.batch_size == 120);
  CHECK(cfg.epochs == 100);
  CHECK(cfg.learning_rate == 1e-3);
  CHECK(cfg.n_runs == 20);
  CHECK(cfg.lambda == 0.0);
  cfg.lambda = 0.25;
  cfg.companion_layers = {true, false};
  cfg.architecture = test::small_cnn(1, 16, 3);
  cfg.dataset = "somewhere";
  const nlohmann::json j = cfg;
  const TrainConfig back = j.get<TrainConfig>();
  CHECK(nlohmann::json(back) == j);

  nlohmann::json typo = j;
  typo["lamda"] = 0.1;
  CHECK_THROWS_AS(typo.get<TrainConfig>(), Error);
  nlohmann::json nested = j;
  nested["kernel"]["sigma"] = 1.0;
  CHECK_THROWS_AS(nested.get<TrainConfig>(), Error);
  nlohmann::json tiny_batch = j;
  tiny_batch["batch_size"] = 1;
  CHECK_THROWS_AS(tiny_batch.get<TrainConfig>(), Error);
  nlohmann::json no_runs = j;
  no_runs["n_runs"] = 0;
  CHECK_THROWS_AS(no_runs.get<TrainConfig>(), Error);
}

TEST_CASE("zero epochs returns the initial parameters") {
  const Dataset ds = make_synthetic_blob_images(3, 10, 16, 1);
  TrainConfig cfg = test::small_config(ds, 0, 1, 3);
  cfg.batch_size = 30;
  const RunRecord r = train_one_run(cfg, ds, 3);
  CHECK(r.history.empty());
  const ModelParams init = init_params(*cfg.architecture, 3);
  for (std::size_t i = 0; i < init.arrays.size(); ++i) CHECK(r.params.arrays[i].values == init.arrays[i].values);
}

TEST_CASE("same seed gives bit-identical runs") {
  const Dataset ds = make_synthetic_blob_images(3, 10, 16, 2);
  TrainConfig cfg = test::small_config(ds, 3, 1, 0);
  cfg.batch_size = 12;
  cfg.lambda = 0.1;
  const RunRecord a = train_one_run(cfg, ds, 42);
  const RunRecord b = train_one_run(cfg, ds, 42);
  CHECK(run_record_to_json(a).dump() == run_record_to_json(b).dump());
  for (std::size_t i = 0; i < a.params.arrays.size(); ++i) CHECK(a.params.arrays[i].values == b.params.arrays[i].values);
  REQUIRE(a.history.size() == 3);
  CHECK(a.history[0].companions.size() == 2);
  CHECK(a.history[0].accuracy.has_value());
  const RunRecord c = train_one_run(cfg, ds, 43);
  CHECK(run_record_to_json(c).dump() != run_record_to_json(a).dump());
}

TEST_CASE("recorded losses equal re-evaluation of the final parameters") {
  const Dataset ds = make_synthetic_blob_images(3, 10, 16, 3);
  TrainConfig cfg = test::small_config(ds, 2, 1, 0);
  cfg.batch_size = 12;
  cfg.lambda = 0.2;
  const RunRecord r = train_one_run(cfg, ds, 5);
  const ObjectiveBreakdown eval = evaluate_objective(r.params, ds, cfg);
  CHECK(std::abs(eval.total - r.final_loss()) < 1e-6);
  CHECK(std::abs(eval.main.l2_orthogonality - r.history.back().l2) < 1e-6);
}

TEST_CASE("loss decreases on separable blobs") {
  const Dataset ds = make_synthetic_blob_images(3, 20, 16, 7);
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TrainConfig cfg = test::small_config(ds, 20, 1, seed);
    cfg.batch_size = 30;
    const RunRecord r = train_one_run(cfg, ds, seed);
    REQUIRE(r.history.size() == 20);
    if (r.history.back().total < r.history.front().total) ++decreased;
  }
  CHECK(decreased >= 9);
}

TEST_CASE("best run selection") {
  const std::vector<RunRecord> one{fake_record(0, 2.0)};
  CHECK(select_best_run(one) == 0);
  const std::vector<RunRecord> three{fake_record(0, 3.0), fake_record(1, 1.0), fake_record(2, 2.0)};
  CHECK(select_best_run(three) == 1);
  const std::vector<RunRecord> ties{fake_record(0, 1.5), fake_record(1, 1.5)};
  CHECK(select_best_run(ties) == 0);
  const std::vector<RunRecord> with_failure{fake_record(0, 0.5, true), fake_record(1, 1.5)};
  CHECK(select_best_run(with_failure) == 1);
  const std::vector<RunRecord> all_failed{fake_record(0, 0.5, true)};
  try {
    select_best_run(all_failed);
    FAIL("expected AllRunsFailed");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::AllRunsFailed);
  }
}

TEST_CASE("train_multi uses consecutive seeds") {
  const Dataset ds = make_synthetic_blob_images(3, 10, 16, 4);
  TrainConfig cfg = test::small_config(ds, 1, 3, 100);
  cfg.batch_size = 15;
  const MultiRunResult res = train_multi(cfg, ds);
  REQUIRE(res.runs.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(res.runs[static_cast<std::size_t>(i)].seed == 100u + static_cast<unsigned>(i));
    CHECK(res.runs[static_cast<std::size_t>(i)].run_index == i);
  }
  CHECK(res.best == select_best_run(res.runs));
}

TEST_CASE("run record json round trip") {
  RunRecord r = fake_record(2, 1.25);
  r.seed = 9;
  r.history[0].companions = {0.5, 0.75};
  r.history[0].accuracy = 0.8;
  r.failed = true;
  r.failure = "NonFiniteLoss at step 3";
  r.failed_step = 3;
  const nlohmann::json j = run_record_to_json(r);
  CHECK(run_record_to_json(run_record_from_json(j)) == j);
  CHECK_FALSE(j.contains("wall_clock_seconds"));
}

TEST_CASE("checkpoints") {
  const ModelParams p = init_params(test::small_cnn(1, 16, 3), 21);
  const fs::path dir = test::scratch_dir("checkpoint");

  SUBCASE("round trip is bit exact") {
    save_checkpoint(p, dir);
    const ModelParams back = load_checkpoint(dir);
    CHECK(back.seed == p.seed);
    CHECK(nlohmann::json(back.arch) == nlohmann::json(p.arch));
    REQUIRE(back.arrays.size() == p.arrays.size());
    for (std::size_t i = 0; i < p.arrays.size(); ++i) {
      CHECK(back.arrays[i].name == p.arrays[i].name);
      CHECK(back.arrays[i].shape == p.arrays[i].shape);
      CHECK(back.arrays[i].values == p.arrays[i].values);
      CHECK(back.arrays[i].trainable == p.arrays[i].trainable);
    }
    const fs::path again = test::scratch_dir("checkpoint_again");
    save_checkpoint(back, again);
    for (const auto& entry : fs::directory_iterator(dir)) {
      CHECK(read_bytes(entry.path()) == read_bytes(again / entry.path().filename()));
    }
  }
  SUBCASE("truncated array file") {
    save_checkpoint(p, dir);
    const fs::path victim = dir / "conv1.weight.bin";
    REQUIRE(fs::exists(victim));
    fs::resize_file(victim, fs::file_size(victim) - 3);
    expect_corrupt_checkpoint(dir);
  }
  SUBCASE("version mismatch") {
    save_checkpoint(p, dir);
    nlohmann::json manifest;
    std::ifstream(dir / "manifest.json") >> manifest;
    manifest["version"] = kCheckpointVersion + 1;
    std::ofstream(dir / "manifest.json") << manifest.dump();
    expect_corrupt_checkpoint(dir, "version");
  }
  SUBCASE("missing manifest") { expect_corrupt_checkpoint(dir); }
}

}  // TEST_SUITE
