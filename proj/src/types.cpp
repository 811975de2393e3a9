#include "dtkc/types.hpp"

namespace dtkc {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::WrongRank: return "WrongRank";
    case Errc::DegenerateInput: return "DegenerateInput";
    case Errc::RankTooLarge: return "RankTooLarge";
    case Errc::TooFewRows: return "TooFewRows";
    case Errc::NonFinite: return "NonFinite";
    case Errc::NonPositiveSigma: return "NonPositiveSigma";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::EmptySequence: return "EmptySequence";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::AllRunsFailed: return "AllRunsFailed";
    case Errc::CorruptCheckpoint: return "CorruptCheckpoint";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::LabelOutOfRange: return "LabelOutOfRange";
    case Errc::LayerWithoutCompanion: return "LayerWithoutCompanion";
    case Errc::ConstantSeries: return "ConstantSeries";
    case Errc::NotAnImageDataset: return "NotAnImageDataset";
    case Errc::CorruptDataset: return "CorruptDataset";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace dtkc
