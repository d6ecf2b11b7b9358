#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mm {

// Base class for all library errors.  `code()` is a stable machine-readable
// identifier (also used by the command line tool for its JSON error output);
// `what()` prepends the code to the human-readable message.
class Error : public std::runtime_error {
public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

private:
  std::string code_;
};

#define MM_DEFINE_ERROR(Name)                       \
  class Name : public Error {                       \
  public:                                           \
    explicit Name(const std::string& message)       \
        : Error(#Name, message) {}                  \
  }

// dataset / io
MM_DEFINE_ERROR(MissingSequence);
MM_DEFINE_ERROR(DecodeError);
MM_DEFINE_ERROR(ShapeMismatch);
MM_DEFINE_ERROR(BadManifest);
MM_DEFINE_ERROR(IoError);
MM_DEFINE_ERROR(ParseError);

// filters
MM_DEFINE_ERROR(InvalidParams);
MM_DEFINE_ERROR(DenominatorUnderflow);
MM_DEFINE_ERROR(NonPositivePixels);
MM_DEFINE_ERROR(EmptyRegion);

// mixture fitting
MM_DEFINE_ERROR(DegenerateCluster);
MM_DEFINE_ERROR(TooFewPoints);

// divergences
MM_DEFINE_ERROR(SingularCovariance);
MM_DEFINE_ERROR(NegativeInput);
MM_DEFINE_ERROR(DimensionMismatch);

// kernel methods
MM_DEFINE_ERROR(RankDeficient);
MM_DEFINE_ERROR(NoConsensus);

// subspace methods
MM_DEFINE_ERROR(AllEigenvaluesLarge);
MM_DEFINE_ERROR(ProjectedRankZero);

// fusion
MM_DEFINE_ERROR(InsufficientCorpus);

// illumination model
MM_DEFINE_ERROR(CoincidentEyes);
MM_DEFINE_ERROR(DegenerateClusters);
MM_DEFINE_ERROR(SingleIllumination);
MM_DEFINE_ERROR(SingularNormalEquations);

// geodesic pipeline
MM_DEFINE_ERROR(DisconnectedGraph);

// incremental mixtures
MM_DEFINE_ERROR(NoNewEvidence);

// evaluation
MM_DEFINE_ERROR(LengthMismatch);
MM_DEFINE_ERROR(NoPositives);

// command line / config
MM_DEFINE_ERROR(BadConfig);

#undef MM_DEFINE_ERROR

}  // namespace mm
