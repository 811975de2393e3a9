#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dtkc/networks.hpp"
#include "dtkc/types.hpp"

namespace dtkc {

enum class DatasetKind { Image, Sequence };

struct DatasetMeta {
  std::string name;
  DatasetKind kind = DatasetKind::Image;
  int n = 0;
  int k = 0;
  // Images.
  int channels = 0;
  int height = 0;
  int width = 0;
  // Sequences.
  int dim = 0;
  int min_length = 0;
  int max_length = 0;
  bool has_labels = false;

  // Values per observation in data.f32.
  std::size_t row_width() const;
  void validate() const;
};

// In-memory dataset. Values are float32-representable (they round-trip
// through data.f32 exactly).
struct Dataset {
  DatasetMeta meta;
  Matrix data;               // n x row_width
  std::vector<int> lengths;  // sequences only
  std::optional<std::vector<int>> labels;

  InputBatch batch(std::span<const std::size_t> indices) const;
  InputBatch head(std::size_t count) const;  // first `count` observations in order
  InputBatch all() const;
};

// Directory layout: meta.json, data.f32, optional labels.i32 and, for
// sequences, lengths.i32. Little-endian, row-major.
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

// Architecture used when a config does not provide one.
Architecture default_architecture(const DatasetMeta& meta);

// k Gaussian blobs on a side x side canvas, one location per cluster, plus
// pixel noise with standard deviation 0.05. Labels included.
Dataset make_synthetic_blob_images(int k, int per_cluster, int side, std::uint64_t seed);

// Cluster c is a noisy sinusoid completing 1 + 2c cycles over the sequence,
// with a small phase jitter; lengths are uniform in [min_length, max_length].
Dataset make_synthetic_sequences(int k, int per_cluster, int dim, int min_length, int max_length,
                                 std::uint64_t seed);

// Attributes of the public sequence benchmarks the loaders are expected to read.
struct SequenceProfile {
  const char* name;
  int min_length;
  int max_length;
  int dim;
  int n;
  int k;
};

inline constexpr SequenceProfile kCharacterTrajectories{"CharacterTrajectories", 109, 198, 3, 1491, 10};
inline constexpr SequenceProfile kArabicDigits{"ArabicDigits", 4, 93, 13, 8800, 10};

bool matches_profile(const DatasetMeta& meta, const SequenceProfile& profile);

}  // namespace dtkc
