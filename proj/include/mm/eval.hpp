#pragma once

#include "mm/common.hpp"
#include "mm/dataset.hpp"
#include "mm/errors.hpp"

#include <json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace mm {

// ---------------------------------------------------------------------------
// Point metrics
// ---------------------------------------------------------------------------

// Fraction of predictions equal to the corresponding truth label.
double recognition_rate(const std::vector<int>& predictions, const std::vector<int>& truths);

// Whether a score is accepted above or below the sweep threshold.
enum class ScoreDirection {
  Similarity,  // accept comparisons with score >= threshold
  Distance,    // accept comparisons with score <= threshold
};

struct RocCurve {
  Vector thresholds;  // ascending sweep values (includes one sentinel per end)
  Vector tpr;         // fraction of in-class comparisons accepted
  Vector fpr;         // fraction of out-of-class comparisons accepted
  double eer = 0.0;   // rate where fpr == 1 - tpr, linearly interpolated
};

// Sweeps every distinct score as an acceptance threshold.  The equal-error
// rate comes from the (unique) sign change of fpr + tpr - 1 along the sweep,
// interpolated linearly between the bracketing thresholds; the interpolation
// ratio depends only on the bracketing curve points, so the whole curve and
// the EER are invariant under strictly monotone transforms of the scores.
RocCurve roc(const std::vector<double>& intra, const std::vector<double>& inter,
             ScoreDirection direction);

// Rank quality of a retrieval: 1 - (S - m) / M where S sums the ranks of the
// in-class items, m is the best attainable sum (in-class first) and M the
// worst-minus-best span.  1 = all in-class items retrieved first, 0 = all
// last, 0.5 = expectation under a random ordering.  `retrieval_order` is a
// permutation of item indices; `in_class` is indexed by item.
double rank_ordering_score(const std::vector<int>& retrieval_order,
                           const std::vector<bool>& in_class);

// ---------------------------------------------------------------------------
// Cross-illumination protocol
// ---------------------------------------------------------------------------

using SetSimilarity = std::function<double(const FaceSet& gallery, const FaceSet& probe)>;

struct ProtocolOptions {
  std::vector<std::string> train_tags;  // empty: every tag present in the corpus
  std::vector<std::string> test_tags;   // empty: every tag present in the corpus
  bool skip_same_tag = true;
};

struct ProtocolPair {
  std::string train_tag;
  std::string test_tag;
  double rate = 0.0;
  int n_probes = 0;
};

struct ProtocolResult {
  std::vector<std::string> train_tags;
  std::vector<std::string> test_tags;
  Matrix rates;  // train x test; NaN where the cell was skipped
  std::vector<ProtocolPair> pairs;  // evaluated cells in row-major order
  double mean_rate = 0.0;
  double std_rate = 0.0;  // population standard deviation over pairs
};

// Train-on-one-illumination / test-on-each-other loop: for every ordered
// (train tag, test tag) cell, each test sequence is assigned the person of
// its most similar gallery sequence and the cell records the fraction of
// correct assignments.  Probes are scored in parallel into fixed slots, so
// the report does not depend on the worker count.
ProtocolResult run_protocol(const std::vector<FaceSet>& sets, const SetSimilarity& similarity,
                            const ProtocolOptions& opts = {});

nlohmann::json protocol_to_json(const ProtocolResult& result);
// Matrix layout: one row per train tag, one column per test tag, empty cells
// where the pair was skipped.
std::string protocol_to_csv(const ProtocolResult& result);

}  // namespace mm
