#include "dtkc/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace dtkc {

namespace fs = std::filesystem;

Matrix objective_input_gradient(const ModelParams& params, const InputBatch& batch, int layer,
                                const KernelConfig& cfg, double loss_scale, const Bandwidths* frozen) {
  ForwardCache cache;
  const ForwardResult f = forward(params, batch, Mode::Inference, &cache);
  const ObjectiveGrad g = single_term_grad(f.taps, f.hidden, f.assignments, layer, cfg, loss_scale, frozen);
  return backward(params, cache, g.grads).d_input;
}

std::vector<ImportanceMap> importance_map(const ModelParams& params, const InputBatch& batch, int layer,
                                          const KernelConfig& cfg, double loss_scale) {
  const Architecture& arch = params.arch;
  if (arch.kind != BackboneKind::Cnn) throw Error(Errc::NotAnImageDataset, "importance maps need an image model");
  const Matrix grad = objective_input_gradient(params, batch, layer, cfg, loss_scale);
  const Eigen::Index hw = static_cast<Eigen::Index>(arch.height) * arch.width;
  std::vector<ImportanceMap> maps;
  for (Eigen::Index i = 0; i < grad.rows(); ++i) {
    RowVector pixel = RowVector::Zero(hw);
    for (int c = 0; c < arch.channels; ++c) pixel += grad.row(i).segment(c * hw, hw).cwiseAbs();
    const double peak = pixel.maxCoeff();
    if (peak > 0.0) pixel /= peak;
    ImportanceMap m;
    m.layer_index = layer;
    m.observation = static_cast<int>(i);
    m.values = Eigen::Map<const Matrix>(pixel.data(), arch.height, arch.width);
    maps.push_back(std::move(m));
  }
  return maps;
}

double pearson_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(Errc::LengthMismatch, "series differ in length");
  if (x.size() < 2) throw Error(Errc::ConstantSeries, "need at least two points");
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) throw Error(Errc::ConstantSeries, "correlation undefined for a constant series");
  return sxy / std::sqrt(sxx * syy);
}

OfmReport ofm_curves(const RunRecord& record) {
  OfmReport r;
  for (const EpochRecord& e : record.history) {
    if (!e.accuracy) throw Error(Errc::InvalidConfig, "run history has no accuracy at epoch " + std::to_string(e.epoch));
    r.loss.push_back(e.total);
    r.accuracy.push_back(*e.accuracy);
  }
  r.correlation = pearson_correlation(r.loss, r.accuracy);
  return r;
}

void write_pgm(const fs::path& path, const Matrix& gray) {
  std::ofstream out(path, std::ios::binary);
  out << "P5\n" << gray.cols() << ' ' << gray.rows() << "\n255\n";
  for (Eigen::Index y = 0; y < gray.rows(); ++y) {
    for (Eigen::Index x = 0; x < gray.cols(); ++x) {
      const double v = std::clamp(gray(y, x), 0.0, 1.0);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
}

ClusterGrid export_cluster_grid(const ModelParams& params, const Dataset& ds, const fs::path& out) {
  if (ds.meta.kind != DatasetKind::Image) throw Error(Errc::NotAnImageDataset, "cluster grids need image data");
  const Matrix a = predict_assignments(params, ds);
  const int k = ds.meta.k;
  ClusterGrid grid;
  grid.members.resize(static_cast<std::size_t>(k));
  std::vector<std::vector<std::pair<double, std::size_t>>> per_cluster(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    Eigen::Index c = 0;
    const double conf = a.row(i).maxCoeff(&c);
    per_cluster[static_cast<std::size_t>(c)].emplace_back(conf, static_cast<std::size_t>(i));
  }
  for (int c = 0; c < k; ++c) {
    auto& v = per_cluster[static_cast<std::size_t>(c)];
    // Highest confidence first; ties by index.
    std::stable_sort(v.begin(), v.end(), [](const auto& l, const auto& r) { return l.first > r.first; });
    for (std::size_t j = 0; j < v.size() && j < kGridMembersPerRow; ++j) {
      grid.members[static_cast<std::size_t>(c)].push_back(v[j].second);
    }
  }

  const int ch = ds.meta.channels, h = ds.meta.height, w = ds.meta.width;
  const double lo = ds.data.minCoeff();
  const double hi = ds.data.maxCoeff();
  const double range = hi > lo ? hi - lo : 1.0;
  const int rows = k * (h + 1) + 1;
  const int cols = kGridMembersPerRow * (w + 1) + 1;
  const int out_channels = ch == 3 ? 3 : 1;
  std::vector<unsigned char> pixels(static_cast<std::size_t>(rows * cols * out_channels), 0);
  for (int c = 0; c < k; ++c) {
    const auto& members = grid.members[static_cast<std::size_t>(c)];
    for (std::size_t j = 0; j < members.size(); ++j) {
      const auto img = ds.data.row(static_cast<Eigen::Index>(members[j]));
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const int py = c * (h + 1) + 1 + y;
          const int px = static_cast<int>(j) * (w + 1) + 1 + x;
          for (int oc = 0; oc < out_channels; ++oc) {
            double v = 0.0;
            if (out_channels == 3) {
              v = img((oc * h + y) * w + x);
            } else {
              for (int ic = 0; ic < ch; ++ic) v += img((ic * h + y) * w + x);
              v /= ch;
            }
            const double scaled = std::clamp((v - lo) / range, 0.0, 1.0);
            pixels[static_cast<std::size_t>((py * cols + px) * out_channels + oc)] =
                static_cast<unsigned char>(std::lround(scaled * 255.0));
          }
        }
      }
    }
  }
  std::ofstream file(out, std::ios::binary);
  file << (out_channels == 3 ? "P6\n" : "P5\n") << cols << ' ' << rows << "\n255\n";
  file.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!file) throw Error(Errc::Io, "cannot write " + out.string());
  return grid;
}

}  // namespace dtkc
