#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dtkc {

// Observations are stored one per row, so batches are row-major.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class Errc {
  WrongRank,
  DegenerateInput,
  RankTooLarge,
  TooFewRows,
  NonFinite,
  NonPositiveSigma,
  DimensionMismatch,
  ShapeMismatch,
  EmptySequence,
  NonFiniteLoss,
  AllRunsFailed,
  CorruptCheckpoint,
  LengthMismatch,
  LabelOutOfRange,
  LayerWithoutCompanion,
  ConstantSeries,
  NotAnImageDataset,
  CorruptDataset,
  InvalidConfig,
  Io,
};

const char* errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace dtkc
