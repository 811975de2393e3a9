#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dtkc/ddc_objective.hpp"
#include "dtkc/tensor_core.hpp"
#include "dtkc/types.hpp"

namespace dtkc {

enum class BackboneKind { Cnn, Rnn };

struct ConvBlockSpec {
  int channels = 32;
  int kernel_size = 5;  // odd; "same" padding, stride 1
  bool batch_norm = true;
};

// Layer description used to build (and rebuild) a model. Conv blocks are
// conv -> ReLU -> 2x2 max-pool -> batch-norm. The head is
// FC(hidden_units) -> ReLU -> batch-norm (the "hidden" representation) followed
// by FC(n_clusters) -> softmax.
struct Architecture {
  BackboneKind kind = BackboneKind::Cnn;

  // Images: channels x height x width.
  int channels = 1;
  int height = 0;
  int width = 0;
  std::vector<ConvBlockSpec> conv_blocks;

  // Sequences: per-element dimension and the GRU stack.
  int input_dim = 0;
  int rnn_hidden = 32;  // per direction
  int rnn_layers = 2;
  bool bidirectional = true;

  int hidden_units = 100;
  bool hidden_batch_norm = true;
  int n_clusters = 0;

  void validate() const;
  // Per-observation shape of each tap.
  std::vector<std::vector<std::size_t>> tap_shapes() const;
  std::size_t input_size() const;  // per observation, images only
};

Architecture default_cnn_architecture(int channels, int height, int width, int n_clusters);
Architecture default_rnn_architecture(int input_dim, int n_clusters);

void to_json(nlohmann::json& j, const Architecture& a);
void from_json(const nlohmann::json& j, Architecture& a);

struct ParamArray {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
  bool trainable = true;  // false for batch-norm running statistics
};

struct ModelParams {
  Architecture arch;
  std::uint64_t seed = 0;
  std::vector<ParamArray> arrays;

  std::size_t index_of(const std::string& name) const;
  ParamArray& at(const std::string& name) { return arrays[index_of(name)]; }
  const ParamArray& at(const std::string& name) const { return arrays[index_of(name)]; }
};

// One gradient buffer per ModelParams array, same order and sizes.
using ParamGrads = std::vector<std::vector<double>>;

ModelParams init_params(const Architecture& arch, std::uint64_t seed);

enum class TapKind { ConvMap, LastHiddenState };

struct LayerTap {
  int layer_index = 0;  // 1-based
  TapKind kind = TapKind::ConvMap;
  FeatureBatch batch;
};

// Images: values is n x (C*H*W) with lengths empty. Sequences: values is
// n x (max_length*dim), element t of sequence i in columns [t*dim, (t+1)*dim),
// zero beyond lengths[i].
struct InputBatch {
  Matrix values;
  std::vector<int> lengths;

  Eigen::Index n() const { return values.rows(); }
};

using SequenceBatch = InputBatch;

enum class Mode { Train, Inference };

struct ForwardResult {
  std::vector<LayerTap> taps;
  Matrix hidden;
  AssignmentMatrix assignments;
};

// Intermediates kept by forward() for backward().
class ForwardCache {
 public:
  ForwardCache();
  ~ForwardCache();
  ForwardCache(ForwardCache&&) noexcept;
  ForwardCache& operator=(ForwardCache&&) noexcept;

  struct Impl;
  Impl& impl() { return *impl_; }
  const Impl& impl() const { return *impl_; }

 private:
  std::unique_ptr<Impl> impl_;
};

ForwardResult forward(const ModelParams& params, const InputBatch& input, Mode mode,
                      ForwardCache* cache = nullptr);

struct OutputGrads {
  Matrix d_assignments;
  Matrix d_hidden;            // empty for none
  std::vector<Matrix> d_taps; // aligned with ForwardResult::taps; empty entries for none
};

struct BackwardResult {
  ParamGrads params;
  Matrix d_input;
};

BackwardResult backward(const ModelParams& params, const ForwardCache& cache, const OutputGrads& grads);

// Exponential moving average of the batch-norm statistics seen in a Train-mode pass.
void update_running_stats(ModelParams& params, const ForwardCache& cache, double momentum = 0.1);

ForwardResult cnn_forward(const Matrix& images, const ModelParams& params, Mode mode = Mode::Inference);
ForwardResult rnn_forward(const SequenceBatch& seqs, const ModelParams& params,
                          Mode mode = Mode::Inference);

}  // namespace dtkc
