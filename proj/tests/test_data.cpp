#include "doctest.h"

#include <complex>
#include <fstream>

#include "dtkc/binary_io.hpp"
#include "dtkc/data.hpp"
#include "json.hpp"
#include "test_support.hpp"

using namespace dtkc;
namespace fs = std::filesystem;

namespace {

// A sequence dataset with a benchmark's declared attributes; values are filler.
Dataset profile_dataset(const SequenceProfile& p) {
  Dataset ds;
  ds.meta.name = p.name;
  ds.meta.kind = DatasetKind::Sequence;
  ds.meta.n = p.n;
  ds.meta.k = p.k;
  ds.meta.dim = p.dim;
  ds.meta.min_length = p.min_length;
  ds.meta.max_length = p.max_length;
  ds.meta.has_labels = true;
  ds.data = Matrix::Zero(p.n, static_cast<Eigen::Index>(p.max_length) * p.dim);
  Rng rng(3);
  std::vector<int> labels;
  for (int i = 0; i < p.n; ++i) {
    const int len = static_cast<int>(rng.integer(p.min_length, p.max_length));
    ds.lengths.push_back(len);
    labels.push_back(i % p.k);
    for (int c = 0; c < len * p.dim; ++c) ds.data(i, c) = static_cast<float>(rng.uniform(-1.0, 1.0));
  }
  ds.labels = labels;
  return ds;
}

void expect_corrupt(const fs::path& dir) {
  try {
    load_dataset(dir);
    FAIL("expected CorruptDataset");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::CorruptDataset);
  }
}

// Index of the largest DFT magnitude among bins 1..len/2 of one channel.
int dominant_bin(const Dataset& ds, int i) {
  const int len = ds.lengths[static_cast<std::size_t>(i)];
  const int dim = ds.meta.dim;
  int best = 1;
  double best_mag = -1.0;
  for (int f = 1; f <= len / 2; ++f) {
    std::complex<double> acc(0.0, 0.0);
    for (int t = 0; t < len; ++t) acc += ds.data(i, t * dim) * std::polar(1.0, -2.0 * M_PI * f * t / len);
    if (std::abs(acc) > best_mag) {
      best_mag = std::abs(acc);
      best = f;
    }
  }
  return best;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("image dataset round trip is bit exact") {
  const Dataset ds = make_synthetic_blob_images(3, 5, 12, 2);
  const fs::path dir = test::scratch_dir("roundtrip_img");
  save_dataset(ds, dir);
  const Dataset back = load_dataset(dir);
  CHECK(back.meta.n == 15);
  CHECK(back.meta.kind == DatasetKind::Image);
  CHECK(back.data == ds.data);
  CHECK(back.labels == ds.labels);
}

TEST_CASE("sequence dataset round trip is bit exact") {
  const Dataset ds = make_synthetic_sequences(2, 6, 3, 10, 20, 4);
  const fs::path dir = test::scratch_dir("roundtrip_seq");
  save_dataset(ds, dir);
  const Dataset back = load_dataset(dir);
  CHECK(back.data == ds.data);
  CHECK(back.lengths == ds.lengths);
  CHECK(back.labels == ds.labels);
  CHECK(back.meta.min_length == 10);
  CHECK(back.meta.max_length == 20);
}

TEST_CASE("benchmark attribute profiles load") {
  for (const SequenceProfile& p : {kCharacterTrajectories, kArabicDigits}) {
    CAPTURE(p.name);
    const fs::path dir = test::scratch_dir(std::string("profile_") + p.name);
    save_dataset(profile_dataset(p), dir);
    const Dataset ds = load_dataset(dir);
    CHECK(ds.meta.n == p.n);
    CHECK(ds.meta.k == 10);
    CHECK(ds.meta.dim == p.dim);
    CHECK(*std::min_element(ds.lengths.begin(), ds.lengths.end()) >= p.min_length);
    CHECK(*std::max_element(ds.lengths.begin(), ds.lengths.end()) <= p.max_length);
    CHECK(matches_profile(ds.meta, p));
    CHECK(default_architecture(ds.meta).kind == BackboneKind::Rnn);
    CHECK(default_architecture(ds.meta).rnn_hidden == 32);
    CHECK(default_architecture(ds.meta).rnn_layers == 2);
    CHECK(default_architecture(ds.meta).bidirectional);
  }
  CHECK(kCharacterTrajectories.n == 1491);
  CHECK(kCharacterTrajectories.dim == 3);
  CHECK(kCharacterTrajectories.min_length == 109);
  CHECK(kCharacterTrajectories.max_length == 198);
  CHECK(kArabicDigits.n == 8800);
  CHECK(kArabicDigits.dim == 13);
  CHECK(kArabicDigits.min_length == 4);
  CHECK(kArabicDigits.max_length == 93);
  CHECK_FALSE(matches_profile(make_synthetic_sequences(2, 3, 3, 109, 198, 1).meta, kCharacterTrajectories));
}

TEST_CASE("corrupt payloads are rejected") {
  const Dataset ds = make_synthetic_sequences(2, 4, 2, 5, 8, 6);
  const fs::path dir = test::scratch_dir("corrupt");

  SUBCASE("data one value short") {
    save_dataset(ds, dir);
    fs::resize_file(dir / "data.f32", fs::file_size(dir / "data.f32") - 4);
    expect_corrupt(dir);
  }
  SUBCASE("non-zero padding") {
    Dataset bad = ds;
    const auto i = static_cast<std::size_t>(std::distance(
        bad.lengths.begin(), std::min_element(bad.lengths.begin(), bad.lengths.end())));
    REQUIRE(bad.lengths[i] < 8);
    bad.data(static_cast<Eigen::Index>(i), bad.data.cols() - 1) = 1.0f;
    save_dataset(bad, dir);
    expect_corrupt(dir);
  }
  SUBCASE("length out of range") {
    save_dataset(ds, dir);
    std::vector<int> lengths = ds.lengths;
    lengths[0] = 9;
    write_i32_file(dir / "lengths.i32", lengths);
    expect_corrupt(dir);
  }
  SUBCASE("label out of range") {
    save_dataset(ds, dir);
    std::vector<int> labels = *ds.labels;
    labels[1] = 2;
    write_i32_file(dir / "labels.i32", labels);
    expect_corrupt(dir);
  }
  SUBCASE("unknown meta key") {
    save_dataset(ds, dir);
    nlohmann::json meta;
    std::ifstream(dir / "meta.json") >> meta;
    meta["colour"] = "red";
    std::ofstream(dir / "meta.json") << meta.dump();
    expect_corrupt(dir);
  }
  SUBCASE("missing directory") { expect_corrupt(dir / "nope"); }
}

TEST_CASE("unlabelled datasets load without labels") {
  Dataset ds = make_synthetic_blob_images(2, 4, 8, 1);
  ds.labels.reset();
  ds.meta.has_labels = false;
  const fs::path dir = test::scratch_dir("unlabelled");
  save_dataset(ds, dir);
  CHECK_FALSE(fs::exists(dir / "labels.i32"));
  const Dataset back = load_dataset(dir);
  CHECK_FALSE(back.labels.has_value());
}

TEST_CASE("blob generator") {
  const Dataset ds = make_synthetic_blob_images(3, 50, 16, 9);
  CHECK(ds.meta.n == 150);
  CHECK(ds.data.rows() == 150);
  CHECK(ds.data.cols() == 256);
  std::vector<int> counts(3, 0);
  for (int l : *ds.labels) ++counts[static_cast<std::size_t>(l)];
  CHECK(counts == std::vector<int>{50, 50, 50});

  const Dataset again = make_synthetic_blob_images(3, 50, 16, 9);
  CHECK(again.data == ds.data);
  CHECK(again.labels == ds.labels);
  CHECK(make_synthetic_blob_images(3, 50, 16, 10).data != ds.data);

  // Nearest class centroid on raw pixels.
  Matrix centroids = Matrix::Zero(3, ds.data.cols());
  for (Eigen::Index i = 0; i < ds.data.rows(); ++i) centroids.row((*ds.labels)[static_cast<std::size_t>(i)]) += ds.data.row(i) / 50.0;
  int hits = 0;
  for (Eigen::Index i = 0; i < ds.data.rows(); ++i) {
    Eigen::Index best = 0;
    (centroids.rowwise() - ds.data.row(i)).rowwise().squaredNorm().minCoeff(&best);
    if (best == (*ds.labels)[static_cast<std::size_t>(i)]) ++hits;
  }
  CHECK(hits / 150.0 >= 0.99);
}

TEST_CASE("sequence generator") {
  const Dataset ds = make_synthetic_sequences(2, 40, 2, 10, 20, 3);
  CHECK(ds.meta.n == 80);
  for (int len : ds.lengths) {
    CHECK(len >= 10);
    CHECK(len <= 20);
  }
  CHECK(make_synthetic_sequences(2, 40, 2, 10, 20, 3).data == ds.data);

  // Cluster 0 completes one cycle, cluster 1 three cycles.
  const Dataset wide = make_synthetic_sequences(2, 100, 1, 30, 60, 5);
  int hits = 0;
  for (int i = 0; i < wide.meta.n; ++i) {
    const int predicted = dominant_bin(wide, i) >= 2 ? 1 : 0;
    if (predicted == (*wide.labels)[static_cast<std::size_t>(i)]) ++hits;
  }
  CHECK(hits / static_cast<double>(wide.meta.n) >= 0.95);
}

}  // TEST_SUITE
