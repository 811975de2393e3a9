#include "dtkc/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "json.hpp"

#include "dtkc/binary_io.hpp"
#include "dtkc/rng.hpp"

namespace dtkc {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t DatasetMeta::row_width() const {
  if (kind == DatasetKind::Image) {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  return static_cast<std::size_t>(max_length) * static_cast<std::size_t>(dim);
}

void DatasetMeta::validate() const {
  if (n <= 0) throw Error(Errc::CorruptDataset, "n must be positive");
  if (k < 2) throw Error(Errc::CorruptDataset, "k must be at least 2");
  if (kind == DatasetKind::Image) {
    if (channels < 1 || height < 1 || width < 1) throw Error(Errc::CorruptDataset, "bad image shape");
  } else if (dim < 1 || min_length < 1 || max_length < min_length) {
    throw Error(Errc::CorruptDataset, "bad sequence attributes");
  }
}

InputBatch Dataset::batch(std::span<const std::size_t> indices) const {
  InputBatch b;
  b.values.resize(static_cast<Eigen::Index>(indices.size()), data.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    b.values.row(static_cast<Eigen::Index>(i)) = data.row(static_cast<Eigen::Index>(indices[i]));
    if (meta.kind == DatasetKind::Sequence) b.lengths.push_back(lengths[indices[i]]);
  }
  return b;
}

InputBatch Dataset::head(std::size_t count) const {
  count = std::min(count, static_cast<std::size_t>(data.rows()));
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  return batch(idx);
}

InputBatch Dataset::all() const { return head(static_cast<std::size_t>(data.rows())); }

namespace {

json meta_to_json(const DatasetMeta& m) {
  json j;
  j["name"] = m.name;
  j["n"] = m.n;
  j["k"] = m.k;
  j["has_labels"] = m.has_labels;
  if (m.kind == DatasetKind::Image) {
    j["kind"] = "image";
    j["channels"] = m.channels;
    j["height"] = m.height;
    j["width"] = m.width;
  } else {
    j["kind"] = "sequence";
    j["dim"] = m.dim;
    j["min_length"] = m.min_length;
    j["max_length"] = m.max_length;
  }
  return j;
}

DatasetMeta meta_from_json(const json& j) {
  DatasetMeta m;
  try {
    const std::string kind = j.at("kind").get<std::string>();
    std::set<std::string> allowed{"name", "kind", "n", "k", "has_labels"};
    if (kind == "image") {
      m.kind = DatasetKind::Image;
      allowed.insert({"channels", "height", "width"});
      m.channels = j.at("channels").get<int>();
      m.height = j.at("height").get<int>();
      m.width = j.at("width").get<int>();
    } else if (kind == "sequence") {
      m.kind = DatasetKind::Sequence;
      allowed.insert({"dim", "min_length", "max_length"});
      m.dim = j.at("dim").get<int>();
      m.min_length = j.at("min_length").get<int>();
      m.max_length = j.at("max_length").get<int>();
    } else {
      throw Error(Errc::CorruptDataset, "unknown dataset kind '" + kind + "'");
    }
    for (const auto& [key, _] : j.items()) {
      if (!allowed.contains(key)) throw Error(Errc::CorruptDataset, "unknown meta key '" + key + "'");
    }
    m.name = j.value("name", std::string{});
    m.n = j.at("n").get<int>();
    m.k = j.at("k").get<int>();
    m.has_labels = j.value("has_labels", false);
  } catch (const json::exception& e) {
    throw Error(Errc::CorruptDataset, std::string("meta.json: ") + e.what());
  }
  m.validate();
  return m;
}

}  // namespace

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  std::ifstream meta_in(dir / "meta.json");
  if (!meta_in) throw Error(Errc::CorruptDataset, "missing meta.json in " + dir.string());
  json j;
  try {
    meta_in >> j;
  } catch (const json::exception& e) {
    throw Error(Errc::CorruptDataset, std::string("meta.json: ") + e.what());
  }
  ds.meta = meta_from_json(j);
  const auto n = static_cast<std::size_t>(ds.meta.n);
  const std::size_t width = ds.meta.row_width();

  const auto values = read_f32_file(dir / "data.f32", n * width, Errc::CorruptDataset);
  ds.data.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (!std::isfinite(v)) throw Error(Errc::CorruptDataset, "data.f32 contains non-finite values");
    ds.data.data()[i] = v;
  }

  if (ds.meta.kind == DatasetKind::Sequence) {
    ds.lengths = read_i32_file(dir / "lengths.i32", n, Errc::CorruptDataset);
    for (std::size_t i = 0; i < n; ++i) {
      const int len = ds.lengths[i];
      if (len < ds.meta.min_length || len > ds.meta.max_length) {
        throw Error(Errc::CorruptDataset, "sequence " + std::to_string(i) + " length out of declared range");
      }
      const auto row = ds.data.row(static_cast<Eigen::Index>(i));
      const Eigen::Index used = static_cast<Eigen::Index>(len) * ds.meta.dim;
      if ((row.tail(row.size() - used).array() != 0.0).any()) {
        throw Error(Errc::CorruptDataset, "sequence " + std::to_string(i) + " has non-zero padding");
      }
    }
  }

  const fs::path labels_path = dir / "labels.i32";
  if (ds.meta.has_labels || fs::exists(labels_path)) {
    if (!ds.meta.has_labels) throw Error(Errc::CorruptDataset, "labels.i32 present but has_labels is false");
    auto labels = read_i32_file(labels_path, n, Errc::CorruptDataset);
    for (int l : labels) {
      if (l < 0 || l >= ds.meta.k) throw Error(Errc::CorruptDataset, "label out of range");
    }
    ds.labels = std::move(labels);
  }
  return ds;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  ds.meta.validate();
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "meta.json");
    out << meta_to_json(ds.meta).dump(2) << '\n';
    if (!out) throw Error(Errc::Io, "cannot write meta.json");
  }
  std::vector<float> values(static_cast<std::size_t>(ds.data.size()));
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(ds.data.data()[i]);
  write_f32_file(dir / "data.f32", values);
  if (ds.meta.kind == DatasetKind::Sequence) write_i32_file(dir / "lengths.i32", ds.lengths);
  if (ds.labels) {
    write_i32_file(dir / "labels.i32", *ds.labels);
  } else {
    fs::remove(dir / "labels.i32");
  }
}

Architecture default_architecture(const DatasetMeta& meta) {
  if (meta.kind == DatasetKind::Image) {
    return default_cnn_architecture(meta.channels, meta.height, meta.width, meta.k);
  }
  return default_rnn_architecture(meta.dim, meta.k);
}

Dataset make_synthetic_blob_images(int k, int per_cluster, int side, std::uint64_t seed) {
  if (k < 2 || per_cluster < 1 || side < 8) {
    throw Error(Errc::InvalidConfig, "blob images need k >= 2, per_cluster >= 1, side >= 8");
  }
  Rng rng(seed);
  Dataset ds;
  ds.meta = {"blobs", DatasetKind::Image, k * per_cluster, k, 1, side, side, 0, 0, 0, true};
  ds.data.resize(ds.meta.n, side * side);
  ds.labels.emplace();

  const double center = (side - 1) / 2.0;
  const double radius = 0.3 * side;
  const double width = side / 10.0;
  // Clusters are interleaved so that any prefix of the dataset is balanced.
  int row = 0;
  for (int i = 0; i < per_cluster; ++i) {
    for (int c = 0; c < k; ++c, ++row) {
      const double angle = 2.0 * M_PI * c / k;
      const double cy = center + radius * std::sin(angle);
      const double cx = center + radius * std::cos(angle);
      const double jy = cy + rng.uniform(-0.5, 0.5);
      const double jx = cx + rng.uniform(-0.5, 0.5);
      const double amp = rng.uniform(0.8, 1.0);
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
          const double d2 = (y - jy) * (y - jy) + (x - jx) * (x - jx);
          const double v = amp * std::exp(-d2 / (2.0 * width * width)) + 0.05 * rng.normal();
          ds.data(row, y * side + x) = static_cast<float>(v);
        }
      }
      ds.labels->push_back(c);
    }
  }
  return ds;
}

Dataset make_synthetic_sequences(int k, int per_cluster, int dim, int min_length, int max_length,
                                 std::uint64_t seed) {
  if (k < 2 || per_cluster < 1 || dim < 1 || min_length < 1 || max_length < min_length) {
    throw Error(Errc::InvalidConfig, "invalid synthetic sequence parameters");
  }
  Rng rng(seed);
  Dataset ds;
  ds.meta = {"sinusoids", DatasetKind::Sequence, k * per_cluster, k, 0, 0, 0, dim, min_length, max_length, true};
  ds.data = Matrix::Zero(ds.meta.n, static_cast<Eigen::Index>(max_length) * dim);
  ds.labels.emplace();
  int row = 0;
  for (int i = 0; i < per_cluster; ++i) {
    for (int c = 0; c < k; ++c, ++row) {
      const double cycles = 1.0 + 2.0 * c;
      const int len = static_cast<int>(rng.integer(min_length, max_length));
      const double phase = rng.uniform(-0.5, 0.5);
      for (int t = 0; t < len; ++t) {
        for (int d = 0; d < dim; ++d) {
          const double arg = 2.0 * M_PI * cycles * t / len + phase + d * M_PI / 2.0;
          ds.data(row, t * dim + d) = static_cast<float>(std::sin(arg) + 0.1 * rng.normal());
        }
      }
      ds.lengths.push_back(len);
      ds.labels->push_back(c);
    }
  }
  return ds;
}

bool matches_profile(const DatasetMeta& meta, const SequenceProfile& p) {
  return meta.kind == DatasetKind::Sequence && meta.n == p.n && meta.k == p.k && meta.dim == p.dim &&
         meta.min_length >= p.min_length && meta.max_length <= p.max_length;
}

}  // namespace dtkc
