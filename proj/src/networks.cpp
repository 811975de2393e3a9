#include "dtkc/networks.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dtkc/rng.hpp"

namespace dtkc {

namespace {

constexpr double kBnEps = 1e-5;

int directions(const Architecture& a) { return a.bidirectional ? 2 : 1; }

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const char* what) {
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) {
      throw Error(Errc::InvalidConfig, std::string("unknown key '") + key + "' in " + what);
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Architecture

void Architecture::validate() const {
  if (n_clusters < 2) throw Error(Errc::InvalidConfig, "n_clusters must be >= 2");
  if (hidden_units < 1) throw Error(Errc::InvalidConfig, "hidden_units must be >= 1");
  if (kind == BackboneKind::Cnn) {
    if (channels < 1 || height < 1 || width < 1) {
      throw Error(Errc::InvalidConfig, "image shape must be positive");
    }
    int h = height, w = width;
    for (const ConvBlockSpec& b : conv_blocks) {
      if (b.channels < 1 || b.kernel_size < 1 || b.kernel_size % 2 == 0) {
        throw Error(Errc::InvalidConfig, "conv blocks need positive channels and an odd kernel size");
      }
      h /= 2;
      w /= 2;
      if (h < 1 || w < 1) throw Error(Errc::InvalidConfig, "too many pooling stages for the input size");
    }
  } else {
    if (input_dim < 1 || rnn_hidden < 1 || rnn_layers < 1) {
      throw Error(Errc::InvalidConfig, "recurrent backbone needs positive sizes");
    }
  }
}

std::vector<std::vector<std::size_t>> Architecture::tap_shapes() const {
  std::vector<std::vector<std::size_t>> shapes;
  if (kind == BackboneKind::Cnn) {
    std::size_t h = static_cast<std::size_t>(height), w = static_cast<std::size_t>(width);
    for (const ConvBlockSpec& b : conv_blocks) {
      h /= 2;
      w /= 2;
      shapes.push_back({static_cast<std::size_t>(b.channels), h, w});
    }
  } else {
    for (int l = 0; l < rnn_layers; ++l) {
      shapes.push_back({static_cast<std::size_t>(directions(*this) * rnn_hidden)});
    }
  }
  return shapes;
}

std::size_t Architecture::input_size() const {
  return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
         static_cast<std::size_t>(width);
}

Architecture default_cnn_architecture(int channels, int height, int width, int n_clusters) {
  Architecture a;
  a.kind = BackboneKind::Cnn;
  a.channels = channels;
  a.height = height;
  a.width = width;
  a.conv_blocks = {{32, 5, true}, {64, 5, true}};
  a.hidden_units = 100;
  a.n_clusters = n_clusters;
  a.validate();
  return a;
}

Architecture default_rnn_architecture(int input_dim, int n_clusters) {
  Architecture a;
  a.kind = BackboneKind::Rnn;
  a.input_dim = input_dim;
  a.rnn_hidden = 32;
  a.rnn_layers = 2;
  a.bidirectional = true;
  a.hidden_units = 100;
  a.n_clusters = n_clusters;
  a.validate();
  return a;
}

void to_json(nlohmann::json& j, const Architecture& a) {
  j = nlohmann::json::object();
  j["n_clusters"] = a.n_clusters;
  j["hidden_units"] = a.hidden_units;
  j["hidden_batch_norm"] = a.hidden_batch_norm;
  if (a.kind == BackboneKind::Cnn) {
    j["kind"] = "cnn";
    j["channels"] = a.channels;
    j["height"] = a.height;
    j["width"] = a.width;
    j["conv_blocks"] = nlohmann::json::array();
    for (const ConvBlockSpec& b : a.conv_blocks) {
      j["conv_blocks"].push_back(
          {{"channels", b.channels}, {"kernel_size", b.kernel_size}, {"batch_norm", b.batch_norm}});
    }
  } else {
    j["kind"] = "rnn";
    j["input_dim"] = a.input_dim;
    j["rnn_hidden"] = a.rnn_hidden;
    j["rnn_layers"] = a.rnn_layers;
    j["bidirectional"] = a.bidirectional;
  }
}

void from_json(const nlohmann::json& j, Architecture& a) {
  a = Architecture{};
  const std::string kind = j.at("kind").get<std::string>();
  a.n_clusters = j.at("n_clusters").get<int>();
  a.hidden_units = j.value("hidden_units", 100);
  a.hidden_batch_norm = j.value("hidden_batch_norm", true);
  if (kind == "cnn") {
    check_keys(j, {"kind", "n_clusters", "hidden_units", "hidden_batch_norm", "channels", "height",
                   "width", "conv_blocks"},
               "architecture");
    a.kind = BackboneKind::Cnn;
    a.channels = j.at("channels").get<int>();
    a.height = j.at("height").get<int>();
    a.width = j.at("width").get<int>();
    if (j.contains("conv_blocks")) {
      for (const auto& b : j.at("conv_blocks")) {
        check_keys(b, {"channels", "kernel_size", "batch_norm"}, "conv block");
        a.conv_blocks.push_back({b.at("channels").get<int>(), b.value("kernel_size", 5),
                                 b.value("batch_norm", true)});
      }
    } else {
      a.conv_blocks = {{32, 5, true}, {64, 5, true}};
    }
  } else if (kind == "rnn") {
    check_keys(j, {"kind", "n_clusters", "hidden_units", "hidden_batch_norm", "input_dim",
                   "rnn_hidden", "rnn_layers", "bidirectional"},
               "architecture");
    a.kind = BackboneKind::Rnn;
    a.input_dim = j.at("input_dim").get<int>();
    a.rnn_hidden = j.value("rnn_hidden", 32);
    a.rnn_layers = j.value("rnn_layers", 2);
    a.bidirectional = j.value("bidirectional", true);
  } else {
    throw Error(Errc::InvalidConfig, "architecture kind must be 'cnn' or 'rnn'");
  }
  a.validate();
}

// ---------------------------------------------------------------------------
// Parameters

std::size_t ModelParams::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    if (arrays[i].name == name) return i;
  }
  throw Error(Errc::ShapeMismatch, "no parameter array named '" + name + "'");
}

namespace {

void add_uniform(ModelParams& p, Rng& rng, std::string name, std::vector<std::size_t> shape, double bound) {
  ParamArray a{std::move(name), std::move(shape), {}, true};
  a.values.resize(shape_product(a.shape));
  for (double& v : a.values) v = rng.uniform(-bound, bound);
  p.arrays.push_back(std::move(a));
}

void add_constant(ModelParams& p, std::string name, std::size_t size, double value, bool trainable) {
  p.arrays.push_back({std::move(name), {size}, std::vector<double>(size, value), trainable});
}

void add_batch_norm(ModelParams& p, const std::string& prefix, std::size_t size) {
  add_constant(p, prefix + ".gamma", size, 1.0, true);
  add_constant(p, prefix + ".beta", size, 0.0, true);
  add_constant(p, prefix + ".running_mean", size, 0.0, false);
  add_constant(p, prefix + ".running_var", size, 1.0, false);
}

void add_linear(ModelParams& p, Rng& rng, const std::string& prefix, std::size_t out, std::size_t in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  add_uniform(p, rng, prefix + ".weight", {out, in}, bound);
  add_uniform(p, rng, prefix + ".bias", {out}, bound);
}

std::string gru_prefix(int layer, int dir) {
  return "gru" + std::to_string(layer) + (dir == 0 ? ".fwd" : ".bwd");
}

}  // namespace

ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  ModelParams p;
  p.arch = arch;
  p.seed = seed;
  Rng rng(seed);

  std::size_t head_in = 0;
  if (arch.kind == BackboneKind::Cnn) {
    std::size_t c = static_cast<std::size_t>(arch.channels);
    for (std::size_t b = 0; b < arch.conv_blocks.size(); ++b) {
      const ConvBlockSpec& spec = arch.conv_blocks[b];
      const auto co = static_cast<std::size_t>(spec.channels);
      const auto k = static_cast<std::size_t>(spec.kernel_size);
      const double bound = 1.0 / std::sqrt(static_cast<double>(c * k * k));
      const std::string prefix = "conv" + std::to_string(b + 1);
      add_uniform(p, rng, prefix + ".weight", {co, c, k, k}, bound);
      add_uniform(p, rng, prefix + ".bias", {co}, bound);
      if (spec.batch_norm) add_batch_norm(p, "bn" + std::to_string(b + 1), co);
      c = co;
    }
    const auto shapes = arch.tap_shapes();
    head_in = shapes.empty() ? arch.input_size() : shape_product(shapes.back());
  } else {
    const auto h = static_cast<std::size_t>(arch.rnn_hidden);
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    for (int l = 0; l < arch.rnn_layers; ++l) {
      const std::size_t in = l == 0 ? static_cast<std::size_t>(arch.input_dim)
                                    : static_cast<std::size_t>(directions(arch)) * h;
      for (int d = 0; d < directions(arch); ++d) {
        const std::string prefix = gru_prefix(l + 1, d);
        add_uniform(p, rng, prefix + ".w_ih", {3 * h, in}, bound);
        add_uniform(p, rng, prefix + ".w_hh", {3 * h, h}, bound);
        add_uniform(p, rng, prefix + ".b_ih", {3 * h}, bound);
        add_uniform(p, rng, prefix + ".b_hh", {3 * h}, bound);
      }
    }
    head_in = static_cast<std::size_t>(directions(arch)) * h;
  }
  const auto units = static_cast<std::size_t>(arch.hidden_units);
  add_linear(p, rng, "fc_hidden", units, head_in);
  if (arch.hidden_batch_norm) add_batch_norm(p, "bn_hidden", units);
  add_linear(p, rng, "head", static_cast<std::size_t>(arch.n_clusters), units);
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using ConstVecMap = Eigen::Map<const Vector>;

ConstMap as_matrix(const ParamArray& a, Eigen::Index rows, Eigen::Index cols) {
  return ConstMap(a.values.data(), rows, cols);
}

ConstVecMap as_vector(const ParamArray& a) {
  return ConstVecMap(a.values.data(), static_cast<Eigen::Index>(a.values.size()));
}

Eigen::Map<Matrix> grad_matrix(std::vector<double>& g, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<Matrix>(g.data(), rows, cols);
}

Eigen::Map<Vector> grad_vector(std::vector<double>& g) {
  return Eigen::Map<Vector>(g.data(), static_cast<Eigen::Index>(g.size()));
}

struct BnCache {
  std::size_t gamma = 0, beta = 0, running_mean = 0, running_var = 0;
  Eigen::Index channels = 0, spatial = 1;
  Vector mean, var, inv_std;
  Matrix xhat;
};

struct ConvBlockCache {
  std::size_t weight = 0, bias = 0;
  int in_channels = 0, height = 0, width = 0, out_channels = 0, kernel = 0;
  Matrix input;
  Matrix activated;  // after ReLU
  std::vector<int> pool_index;
  bool has_bn = false;
  BnCache bn;
};

struct GruDirCache {
  std::size_t w_ih = 0, w_hh = 0, b_ih = 0, b_hh = 0;
  std::vector<int> order;  // time steps in processing order
  std::vector<Matrix> h_prev, r, z, cand, gh_n;
  Matrix final_state;
};

struct GruLayerCache {
  std::vector<Matrix> inputs;  // per time step, n x in
  std::vector<Matrix> outputs; // per time step, n x dirs*H
  GruDirCache dirs[2];
};

}  // namespace

struct ForwardCache::Impl {
  Mode mode = Mode::Inference;
  BackboneKind kind = BackboneKind::Cnn;
  Eigen::Index n = 0;
  std::vector<ConvBlockCache> blocks;
  std::vector<GruLayerCache> gru;
  Matrix mask;  // n x T, 1 where t < length
  Matrix head_input;
  std::size_t fc_w = 0, fc_b = 0, head_w = 0, head_b = 0;
  Matrix fc_activated;
  bool has_hidden_bn = false;
  BnCache hidden_bn;
  Matrix hidden;
  Matrix assignments;
};

ForwardCache::ForwardCache() : impl_(std::make_unique<Impl>()) {}
ForwardCache::~ForwardCache() = default;
ForwardCache::ForwardCache(ForwardCache&&) noexcept = default;
ForwardCache& ForwardCache::operator=(ForwardCache&&) noexcept = default;

namespace {

// Batch-norm over n x (channels * spatial) with statistics per channel.
Matrix bn_forward(const ModelParams& p, const Matrix& x, Mode mode, BnCache& c) {
  const Eigen::Index n = x.rows();
  const Eigen::Index count = n * c.spatial;
  const ConstVecMap gamma = as_vector(p.arrays[c.gamma]);
  const ConstVecMap beta = as_vector(p.arrays[c.beta]);
  c.mean.resize(c.channels);
  c.var.resize(c.channels);
  if (mode == Mode::Train) {
    if (count < 2) throw Error(Errc::TooFewRows, "batch-norm in training mode needs more than one value");
    for (Eigen::Index ch = 0; ch < c.channels; ++ch) {
      const auto block = x.middleCols(ch * c.spatial, c.spatial);
      const double mean = block.sum() / static_cast<double>(count);
      c.mean(ch) = mean;
      c.var(ch) = (block.array() - mean).square().sum() / static_cast<double>(count);
    }
  } else {
    c.mean = as_vector(p.arrays[c.running_mean]);
    c.var = as_vector(p.arrays[c.running_var]);
  }
  c.inv_std = (c.var.array() + kBnEps).rsqrt();
  c.xhat.resize(n, x.cols());
  Matrix y(n, x.cols());
  for (Eigen::Index ch = 0; ch < c.channels; ++ch) {
    const auto cols = Eigen::seqN(ch * c.spatial, c.spatial);
    c.xhat(Eigen::all, cols) = (x(Eigen::all, cols).array() - c.mean(ch)) * c.inv_std(ch);
    y(Eigen::all, cols) = c.xhat(Eigen::all, cols).array() * gamma(ch) + beta(ch);
  }
  return y;
}

Matrix bn_backward(const ModelParams& p, Mode mode, const BnCache& c, const Matrix& dy, ParamGrads& g) {
  const Eigen::Index n = dy.rows();
  const auto count = static_cast<double>(n * c.spatial);
  const ConstVecMap gamma = as_vector(p.arrays[c.gamma]);
  auto d_gamma = grad_vector(g[c.gamma]);
  auto d_beta = grad_vector(g[c.beta]);
  Matrix dx(n, dy.cols());
  for (Eigen::Index ch = 0; ch < c.channels; ++ch) {
    const auto cols = Eigen::seqN(ch * c.spatial, c.spatial);
    const Matrix dyc = dy(Eigen::all, cols);
    const Matrix xh = c.xhat(Eigen::all, cols);
    d_gamma(ch) += dyc.cwiseProduct(xh).sum();
    d_beta(ch) += dyc.sum();
    const Matrix dxhat = dyc * gamma(ch);
    if (mode == Mode::Train) {
      const double sum_d = dxhat.sum();
      const double sum_dx = dxhat.cwiseProduct(xh).sum();
      dx(Eigen::all, cols) =
          (c.inv_std(ch) / count) * (count * dxhat.array() - sum_d - xh.array() * sum_dx);
    } else {
      dx(Eigen::all, cols) = dxhat * c.inv_std(ch);
    }
  }
  return dx;
}

Eigen::MatrixXd im2col(const double* img, int channels, int height, int width, int k) {
  const int pad = k / 2;
  Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(channels * k * k, height * width);
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int row = (c * k + ky) * k + kx;
        for (int y = 0; y < height; ++y) {
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= height) continue;
          for (int x = 0; x < width; ++x) {
            const int ix = x + kx - pad;
            if (ix < 0 || ix >= width) continue;
            cols(row, y * width + x) = img[(c * height + iy) * width + ix];
          }
        }
      }
    }
  }
  return cols;
}

void col2im(const Eigen::MatrixXd& cols, double* img, int channels, int height, int width, int k) {
  const int pad = k / 2;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int row = (c * k + ky) * k + kx;
        for (int y = 0; y < height; ++y) {
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= height) continue;
          for (int x = 0; x < width; ++x) {
            const int ix = x + kx - pad;
            if (ix < 0 || ix >= width) continue;
            img[(c * height + iy) * width + ix] += cols(row, y * width + x);
          }
        }
      }
    }
  }
}

Matrix conv_block_forward(const ModelParams& p, const Matrix& x, Mode mode, ConvBlockCache& c) {
  const Eigen::Index n = x.rows();
  const int hw = c.height * c.width;
  const int k = c.kernel;
  const ConstMap w = as_matrix(p.arrays[c.weight], c.out_channels, c.in_channels * k * k);
  const ConstVecMap b = as_vector(p.arrays[c.bias]);
  c.input = x;
  c.activated.resize(n, c.out_channels * hw);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::MatrixXd cols = im2col(x.row(i).data(), c.in_channels, c.height, c.width, k);
    Eigen::MatrixXd out = w * cols;
    out.colwise() += b;
    Eigen::Map<Matrix>(c.activated.row(i).data(), c.out_channels, hw) = out.cwiseMax(0.0);
  }
  // 2x2 max-pool, floor.
  const int ph = c.height / 2, pw = c.width / 2;
  Matrix pooled(n, c.out_channels * ph * pw);
  c.pool_index.assign(static_cast<std::size_t>(pooled.size()), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* src = c.activated.row(i).data();
    for (int ch = 0; ch < c.out_channels; ++ch) {
      for (int oy = 0; oy < ph; ++oy) {
        for (int ox = 0; ox < pw; ++ox) {
          int best = (ch * c.height + 2 * oy) * c.width + 2 * ox;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const int idx = (ch * c.height + 2 * oy + dy) * c.width + 2 * ox + dx;
              if (src[idx] > src[best]) best = idx;
            }
          }
          const int out_idx = (ch * ph + oy) * pw + ox;
          pooled(i, out_idx) = src[best];
          c.pool_index[static_cast<std::size_t>(i * pooled.cols() + out_idx)] = best;
        }
      }
    }
  }
  if (!c.has_bn) return pooled;
  return bn_forward(p, pooled, mode, c.bn);
}

Matrix conv_block_backward(const ModelParams& p, Mode mode, const ConvBlockCache& c, const Matrix& d_out,
                           ParamGrads& g) {
  const Eigen::Index n = d_out.rows();
  const int hw = c.height * c.width;
  const int k = c.kernel;
  Matrix d_pooled = c.has_bn ? bn_backward(p, mode, c.bn, d_out, g) : d_out;

  Matrix d_act = Matrix::Zero(n, c.out_channels * hw);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index o = 0; o < d_pooled.cols(); ++o) {
      const int src = c.pool_index[static_cast<std::size_t>(i * d_pooled.cols() + o)];
      d_act(i, src) += d_pooled(i, o);
    }
  }
  d_act = d_act.cwiseProduct((c.activated.array() > 0.0).cast<double>().matrix());

  const ConstMap w = as_matrix(p.arrays[c.weight], c.out_channels, c.in_channels * k * k);
  auto d_w = grad_matrix(g[c.weight], c.out_channels, c.in_channels * k * k);
  auto d_b = grad_vector(g[c.bias]);
  Matrix d_x = Matrix::Zero(n, c.in_channels * hw);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::MatrixXd d_o = Eigen::Map<const Matrix>(d_act.row(i).data(), c.out_channels, hw);
    const Eigen::MatrixXd cols = im2col(c.input.row(i).data(), c.in_channels, c.height, c.width, k);
    d_w.noalias() += d_o * cols.transpose();
    d_b += d_o.rowwise().sum();
    const Eigen::MatrixXd d_cols = w.transpose() * d_o;
    col2im(d_cols, d_x.row(i).data(), c.in_channels, c.height, c.width, k);
  }
  return d_x;
}

Matrix sigmoid(const Matrix& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

// One direction of a GRU layer over all time steps, with masking.
Matrix gru_direction_forward(const ModelParams& p, const std::vector<Matrix>& inputs, const Matrix& mask,
                             int hidden, GruDirCache& c) {
  const Eigen::Index n = mask.rows();
  const ConstMap w_ih = as_matrix(p.arrays[c.w_ih], 3 * hidden, inputs.front().cols());
  const ConstMap w_hh = as_matrix(p.arrays[c.w_hh], 3 * hidden, hidden);
  const RowVector b_ih = as_vector(p.arrays[c.b_ih]).transpose();
  const RowVector b_hh = as_vector(p.arrays[c.b_hh]).transpose();
  const auto steps = c.order.size();
  c.h_prev.resize(steps);
  c.r.resize(steps);
  c.z.resize(steps);
  c.cand.resize(steps);
  c.gh_n.resize(steps);
  Matrix h = Matrix::Zero(n, hidden);
  for (std::size_t s = 0; s < steps; ++s) {
    const int t = c.order[s];
    const Matrix gi = (inputs[static_cast<std::size_t>(t)] * w_ih.transpose()).rowwise() + b_ih;
    const Matrix gh = (h * w_hh.transpose()).rowwise() + b_hh;
    c.h_prev[s] = h;
    c.r[s] = sigmoid(gi.leftCols(hidden) + gh.leftCols(hidden));
    c.z[s] = sigmoid(gi.middleCols(hidden, hidden) + gh.middleCols(hidden, hidden));
    c.gh_n[s] = gh.rightCols(hidden);
    c.cand[s] = (gi.rightCols(hidden) + c.r[s].cwiseProduct(c.gh_n[s])).array().tanh().matrix();
    const Matrix h_new = (1.0 - c.z[s].array()) * c.cand[s].array() + c.z[s].array() * h.array();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (mask(i, t) > 0.0) h.row(i) = h_new.row(i);
    }
  }
  c.final_state = h;
  return h;
}

// Returns d inputs per time step; accumulates parameter gradients.
std::vector<Matrix> gru_direction_backward(const ModelParams& p, const std::vector<Matrix>& inputs,
                                           const Matrix& mask, int hidden, const GruDirCache& c,
                                           const std::vector<Matrix>& d_outputs, Eigen::Index out_offset,
                                           const Matrix& d_final, ParamGrads& g) {
  const Eigen::Index n = mask.rows();
  const Eigen::Index in_dim = inputs.front().cols();
  const ConstMap w_ih = as_matrix(p.arrays[c.w_ih], 3 * hidden, in_dim);
  const ConstMap w_hh = as_matrix(p.arrays[c.w_hh], 3 * hidden, hidden);
  auto d_w_ih = grad_matrix(g[c.w_ih], 3 * hidden, in_dim);
  auto d_w_hh = grad_matrix(g[c.w_hh], 3 * hidden, hidden);
  auto d_b_ih = grad_vector(g[c.b_ih]);
  auto d_b_hh = grad_vector(g[c.b_hh]);

  std::vector<Matrix> d_inputs(inputs.size(), Matrix::Zero(n, in_dim));
  Matrix dh = d_final;
  for (std::size_t s = c.order.size(); s-- > 0;) {
    const int t = c.order[s];
    const Eigen::VectorXd m = mask.col(t);
    if (!d_outputs.empty()) {
      dh += m.asDiagonal() * d_outputs[static_cast<std::size_t>(t)].middleCols(out_offset, hidden);
    }
    const Matrix dh_valid = m.asDiagonal() * dh;
    const Matrix& z = c.z[s];
    const Matrix& r = c.r[s];
    const Matrix& cand = c.cand[s];
    const Matrix d_cand = dh_valid.cwiseProduct((1.0 - z.array()).matrix());
    const Matrix d_z = dh_valid.cwiseProduct(c.h_prev[s] - cand);
    const Matrix d_an = d_cand.cwiseProduct((1.0 - cand.array().square()).matrix());
    const Matrix d_r = d_an.cwiseProduct(c.gh_n[s]);
    Matrix d_gi(n, 3 * hidden), d_gh(n, 3 * hidden);
    d_gi.leftCols(hidden) = d_r.cwiseProduct(r.cwiseProduct((1.0 - r.array()).matrix()));
    d_gi.middleCols(hidden, hidden) = d_z.cwiseProduct(z.cwiseProduct((1.0 - z.array()).matrix()));
    d_gi.rightCols(hidden) = d_an;
    d_gh.leftCols(2 * hidden) = d_gi.leftCols(2 * hidden);
    d_gh.rightCols(hidden) = d_an.cwiseProduct(r);

    const Matrix& x = inputs[static_cast<std::size_t>(t)];
    d_w_ih.noalias() += d_gi.transpose() * x;
    d_b_ih += d_gi.colwise().sum().transpose();
    d_w_hh.noalias() += d_gh.transpose() * c.h_prev[s];
    d_b_hh += d_gh.colwise().sum().transpose();
    d_inputs[static_cast<std::size_t>(t)] += d_gi * w_ih;

    const Eigen::VectorXd keep = (1.0 - m.array()).matrix();
    dh = keep.asDiagonal() * dh + dh_valid.cwiseProduct(z) + d_gh * w_hh;
  }
  return d_inputs;
}

}  // namespace

ForwardResult forward(const ModelParams& params, const InputBatch& input, Mode mode, ForwardCache* cache) {
  const Architecture& arch = params.arch;
  ForwardCache local;
  ForwardCache::Impl& c = cache ? cache->impl() : local.impl();
  c = ForwardCache::Impl{};
  c.mode = mode;
  c.kind = arch.kind;
  c.n = input.n();
  const Eigen::Index n = c.n;
  if (n < 1) throw Error(Errc::TooFewRows, "empty input batch");
  require_finite(input.values, "forward");

  ForwardResult out;
  const auto tap_shapes = arch.tap_shapes();

  if (arch.kind == BackboneKind::Cnn) {
    if (static_cast<std::size_t>(input.values.cols()) != arch.input_size()) {
      throw Error(Errc::ShapeMismatch, "image batch width does not match the architecture input shape");
    }
    Matrix x = input.values;
    int channels = arch.channels, height = arch.height, width = arch.width;
    for (std::size_t b = 0; b < arch.conv_blocks.size(); ++b) {
      const ConvBlockSpec& spec = arch.conv_blocks[b];
      ConvBlockCache bc;
      const std::string id = std::to_string(b + 1);
      bc.weight = params.index_of("conv" + id + ".weight");
      bc.bias = params.index_of("conv" + id + ".bias");
      bc.in_channels = channels;
      bc.height = height;
      bc.width = width;
      bc.out_channels = spec.channels;
      bc.kernel = spec.kernel_size;
      bc.has_bn = spec.batch_norm;
      if (bc.has_bn) {
        bc.bn.gamma = params.index_of("bn" + id + ".gamma");
        bc.bn.beta = params.index_of("bn" + id + ".beta");
        bc.bn.running_mean = params.index_of("bn" + id + ".running_mean");
        bc.bn.running_var = params.index_of("bn" + id + ".running_var");
        bc.bn.channels = spec.channels;
        bc.bn.spatial = (height / 2) * (width / 2);
      }
      x = conv_block_forward(params, x, mode, bc);
      c.blocks.push_back(std::move(bc));
      channels = spec.channels;
      height /= 2;
      width /= 2;
      out.taps.push_back({static_cast<int>(b + 1), TapKind::ConvMap, {tap_shapes[b], x}});
    }
    c.head_input = std::move(x);
  } else {
    if (static_cast<Eigen::Index>(input.lengths.size()) != n) {
      throw Error(Errc::ShapeMismatch, "sequence batch needs one length per sequence");
    }
    if (input.values.cols() % arch.input_dim != 0) {
      throw Error(Errc::ShapeMismatch, "sequence width is not a multiple of the element dimension");
    }
    const Eigen::Index max_len = input.values.cols() / arch.input_dim;
    c.mask = Matrix::Zero(n, max_len);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int len = input.lengths[static_cast<std::size_t>(i)];
      if (len < 1) throw Error(Errc::EmptySequence, "sequence " + std::to_string(i) + " is empty");
      if (len > max_len) throw Error(Errc::ShapeMismatch, "sequence length exceeds the padded width");
      c.mask.row(i).head(len).setOnes();
    }
    std::vector<Matrix> layer_inputs(static_cast<std::size_t>(max_len));
    for (Eigen::Index t = 0; t < max_len; ++t) {
      layer_inputs[static_cast<std::size_t>(t)] = input.values.middleCols(t * arch.input_dim, arch.input_dim);
    }
    const int dirs = directions(arch);
    const int h = arch.rnn_hidden;
    for (int l = 0; l < arch.rnn_layers; ++l) {
      GruLayerCache lc;
      lc.inputs = std::move(layer_inputs);
      lc.outputs.assign(static_cast<std::size_t>(max_len), Matrix::Zero(n, dirs * h));
      Matrix tap(n, dirs * h);
      for (int d = 0; d < dirs; ++d) {
        GruDirCache& dc = lc.dirs[d];
        const std::string prefix = gru_prefix(l + 1, d);
        dc.w_ih = params.index_of(prefix + ".w_ih");
        dc.w_hh = params.index_of(prefix + ".w_hh");
        dc.b_ih = params.index_of(prefix + ".b_ih");
        dc.b_hh = params.index_of(prefix + ".b_hh");
        for (Eigen::Index t = 0; t < max_len; ++t) {
          dc.order.push_back(static_cast<int>(d == 0 ? t : max_len - 1 - t));
        }
        tap.middleCols(d * h, h) = gru_direction_forward(params, lc.inputs, c.mask, h, dc);
        // Per-step outputs: state after the step at t, zero at padding.
        for (std::size_t s = 0; s < dc.order.size(); ++s) {
          const int t = dc.order[s];
          const Matrix& next = s + 1 < dc.order.size() ? dc.h_prev[s + 1] : dc.final_state;
          lc.outputs[static_cast<std::size_t>(t)].middleCols(d * h, h) = c.mask.col(t).asDiagonal() * next;
        }
      }
      layer_inputs = lc.outputs;
      c.gru.push_back(std::move(lc));
      out.taps.push_back({l + 1, TapKind::LastHiddenState, FeatureBatch::from_vectors(tap)});
    }
    c.head_input = out.taps.back().batch.rows;
  }

  // Head.
  c.fc_w = params.index_of("fc_hidden.weight");
  c.fc_b = params.index_of("fc_hidden.bias");
  c.head_w = params.index_of("head.weight");
  c.head_b = params.index_of("head.bias");
  const Eigen::Index units = arch.hidden_units;
  const ConstMap fc_w = as_matrix(params.arrays[c.fc_w], units, c.head_input.cols());
  const RowVector fc_b = as_vector(params.arrays[c.fc_b]).transpose();
  c.fc_activated = ((c.head_input * fc_w.transpose()).rowwise() + fc_b).cwiseMax(0.0);
  c.has_hidden_bn = arch.hidden_batch_norm;
  if (c.has_hidden_bn) {
    c.hidden_bn.gamma = params.index_of("bn_hidden.gamma");
    c.hidden_bn.beta = params.index_of("bn_hidden.beta");
    c.hidden_bn.running_mean = params.index_of("bn_hidden.running_mean");
    c.hidden_bn.running_var = params.index_of("bn_hidden.running_var");
    c.hidden_bn.channels = units;
    c.hidden_bn.spatial = 1;
    c.hidden = bn_forward(params, c.fc_activated, mode, c.hidden_bn);
  } else {
    c.hidden = c.fc_activated;
  }
  const ConstMap head_w = as_matrix(params.arrays[c.head_w], arch.n_clusters, units);
  const RowVector head_b = as_vector(params.arrays[c.head_b]).transpose();
  Matrix logits = (c.hidden * head_w.transpose()).rowwise() + head_b;
  logits.colwise() -= logits.rowwise().maxCoeff();
  Matrix a = logits.array().exp().matrix();
  a.array().colwise() /= a.rowwise().sum().array();
  c.assignments = a;

  out.hidden = c.hidden;
  out.assignments = std::move(a);
  return out;
}

BackwardResult backward(const ModelParams& params, const ForwardCache& cache, const OutputGrads& grads) {
  const ForwardCache::Impl& c = cache.impl();
  const Architecture& arch = params.arch;
  BackwardResult res;
  res.params.resize(params.arrays.size());
  for (std::size_t i = 0; i < params.arrays.size(); ++i) {
    res.params[i].assign(params.arrays[i].values.size(), 0.0);
  }
  ParamGrads& g = res.params;
  const Eigen::Index n = c.n;
  const Eigen::Index units = arch.hidden_units;
  const auto tap_grad = [&](std::size_t t) -> const Matrix* {
    if (t < grads.d_taps.size() && grads.d_taps[t].size() > 0) return &grads.d_taps[t];
    return nullptr;
  };

  // Softmax.
  const Matrix& a = c.assignments;
  const Vector inner = grads.d_assignments.cwiseProduct(a).rowwise().sum();
  const Matrix d_logits = a.cwiseProduct(grads.d_assignments.colwise() - inner);

  const ConstMap head_w = as_matrix(params.arrays[c.head_w], arch.n_clusters, units);
  grad_matrix(g[c.head_w], arch.n_clusters, units).noalias() += d_logits.transpose() * c.hidden;
  grad_vector(g[c.head_b]) += d_logits.colwise().sum().transpose();
  Matrix d_hidden = d_logits * head_w;
  if (grads.d_hidden.size() > 0) d_hidden += grads.d_hidden;

  Matrix d_fc = c.has_hidden_bn ? bn_backward(params, c.mode, c.hidden_bn, d_hidden, g) : d_hidden;
  d_fc = d_fc.cwiseProduct((c.fc_activated.array() > 0.0).cast<double>().matrix());
  const ConstMap fc_w = as_matrix(params.arrays[c.fc_w], units, c.head_input.cols());
  grad_matrix(g[c.fc_w], units, c.head_input.cols()).noalias() += d_fc.transpose() * c.head_input;
  grad_vector(g[c.fc_b]) += d_fc.colwise().sum().transpose();
  Matrix d_head_input = d_fc * fc_w;

  if (c.kind == BackboneKind::Cnn) {
    Matrix d_out = std::move(d_head_input);
    for (std::size_t b = c.blocks.size(); b-- > 0;) {
      if (const Matrix* tg = tap_grad(b)) d_out += *tg;
      d_out = conv_block_backward(params, c.mode, c.blocks[b], d_out, g);
    }
    res.d_input = std::move(d_out);
  } else {
    const int dirs = directions(arch);
    const int h = arch.rnn_hidden;
    const auto max_len = c.mask.cols();
    std::vector<Matrix> d_outputs;  // gradient w.r.t. this layer's per-step outputs
    Matrix d_tap = std::move(d_head_input);
    for (std::size_t l = c.gru.size(); l-- > 0;) {
      if (const Matrix* tg = tap_grad(l)) d_tap += *tg;
      const GruLayerCache& lc = c.gru[l];
      std::vector<Matrix> d_inputs(static_cast<std::size_t>(max_len),
                                   Matrix::Zero(n, lc.inputs.front().cols()));
      for (int d = 0; d < dirs; ++d) {
        const auto part = gru_direction_backward(params, lc.inputs, c.mask, h, lc.dirs[d], d_outputs,
                                                 d * h, d_tap.middleCols(d * h, h), g);
        for (std::size_t t = 0; t < part.size(); ++t) d_inputs[t] += part[t];
      }
      d_outputs = std::move(d_inputs);
      d_tap = Matrix::Zero(n, dirs * h);
    }
    res.d_input = Matrix::Zero(n, max_len * arch.input_dim);
    for (Eigen::Index t = 0; t < max_len; ++t) {
      res.d_input.middleCols(t * arch.input_dim, arch.input_dim) = d_outputs[static_cast<std::size_t>(t)];
    }
  }
  return res;
}

void update_running_stats(ModelParams& params, const ForwardCache& cache, double momentum) {
  const ForwardCache::Impl& c = cache.impl();
  if (c.mode != Mode::Train) return;
  const auto update = [&](const BnCache& bn) {
    const double count = static_cast<double>(c.n * bn.spatial);
    auto rm = Eigen::Map<Vector>(params.arrays[bn.running_mean].values.data(), bn.channels);
    auto rv = Eigen::Map<Vector>(params.arrays[bn.running_var].values.data(), bn.channels);
    rm = (1.0 - momentum) * rm + momentum * bn.mean;
    rv = (1.0 - momentum) * rv + momentum * bn.var * (count / (count - 1.0));
  };
  for (const ConvBlockCache& b : c.blocks) {
    if (b.has_bn) update(b.bn);
  }
  if (c.has_hidden_bn) update(c.hidden_bn);
}

ForwardResult cnn_forward(const Matrix& images, const ModelParams& params, Mode mode) {
  if (params.arch.kind != BackboneKind::Cnn) throw Error(Errc::ShapeMismatch, "parameters are not a CNN");
  return forward(params, InputBatch{images, {}}, mode);
}

ForwardResult rnn_forward(const SequenceBatch& seqs, const ModelParams& params, Mode mode) {
  if (params.arch.kind != BackboneKind::Rnn) throw Error(Errc::ShapeMismatch, "parameters are not an RNN");
  return forward(params, seqs, mode);
}

}  // namespace dtkc
