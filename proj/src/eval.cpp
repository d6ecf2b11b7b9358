#include "mm/eval.hpp"

#include "mm/io.hpp"
#include "mm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <vector>

namespace mm {

namespace {

// Fraction of `sorted` at or above `threshold`.
double accept_fraction(const std::vector<double>& sorted, double threshold) {
  const auto it = std::lower_bound(sorted.begin(), sorted.end(), threshold);
  return static_cast<double>(sorted.end() - it) / static_cast<double>(sorted.size());
}

}  // namespace

double recognition_rate(const std::vector<int>& predictions, const std::vector<int>& truths) {
  if (predictions.size() != truths.size() || predictions.empty()) {
    throw LengthMismatch("predictions and truths must have equal nonzero lengths");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == truths[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

RocCurve roc(const std::vector<double>& intra, const std::vector<double>& inter,
             ScoreDirection direction) {
  if (intra.empty() || inter.empty()) {
    throw InvalidParams("roc needs nonempty intra- and inter-class score lists");
  }
  // Work in accept-high orientation; distances are negated in and the
  // thresholds negated back out.
  const bool flipped = direction == ScoreDirection::Distance;
  std::vector<double> a = intra;
  std::vector<double> b = inter;
  if (flipped) {
    for (double& v : a) v = -v;
    for (double& v : b) v = -v;
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());

  std::set<double> distinct(a.begin(), a.end());
  distinct.insert(b.begin(), b.end());
  const double lo = *distinct.begin() - 1.0;
  const double hi = *distinct.rbegin() + 1.0;

  std::vector<double> sweep;
  sweep.reserve(distinct.size() + 2);
  sweep.push_back(lo);
  sweep.insert(sweep.end(), distinct.begin(), distinct.end());
  sweep.push_back(hi);

  const Eigen::Index n = static_cast<Eigen::Index>(sweep.size());
  RocCurve curve;
  curve.thresholds = Vector(n);
  curve.tpr = Vector(n);
  curve.fpr = Vector(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    curve.thresholds(k) = sweep[static_cast<std::size_t>(k)];
    curve.tpr(k) = accept_fraction(a, sweep[static_cast<std::size_t>(k)]);
    curve.fpr(k) = accept_fraction(b, sweep[static_cast<std::size_t>(k)]);
  }

  // fpr + tpr - 1 descends from +1 to -1 along the sweep; the equal-error
  // point is its zero.
  double eer = 0.5;
  for (Eigen::Index k = 1; k < n; ++k) {
    const double g_prev = curve.fpr(k - 1) + curve.tpr(k - 1) - 1.0;
    const double g = curve.fpr(k) + curve.tpr(k) - 1.0;
    if (g <= 0.0) {
      if (g == 0.0) {
        eer = curve.fpr(k);
      } else if (g_prev <= 0.0) {
        eer = curve.fpr(k - 1);  // defensive: sweep started at or below zero
      } else {
        const double t = g_prev / (g_prev - g);
        eer = curve.fpr(k - 1) + t * (curve.fpr(k) - curve.fpr(k - 1));
      }
      break;
    }
  }
  curve.eer = eer;

  if (flipped) {
    // Undo the negation: reverse the sweep so thresholds ascend again.
    curve.thresholds.reverseInPlace();
    curve.thresholds = -curve.thresholds;
    curve.tpr.reverseInPlace();
    curve.fpr.reverseInPlace();
  }
  return curve;
}

double rank_ordering_score(const std::vector<int>& retrieval_order,
                           const std::vector<bool>& in_class) {
  const std::size_t n = retrieval_order.size();
  if (n != in_class.size() || n == 0) {
    throw LengthMismatch("retrieval order and class flags must have equal nonzero lengths");
  }
  std::vector<bool> seen(n, false);
  for (int id : retrieval_order) {
    if (id < 0 || static_cast<std::size_t>(id) >= n || seen[static_cast<std::size_t>(id)]) {
      throw InvalidParams("retrieval order is not a permutation of the item indices");
    }
    seen[static_cast<std::size_t>(id)] = true;
  }
  double k = 0.0;
  double rank_sum = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (in_class[static_cast<std::size_t>(retrieval_order[r])]) {
      k += 1.0;
      rank_sum += static_cast<double>(r);
    }
  }
  if (k == 0.0) throw NoPositives("no in-class item in the retrieval");
  const double nn = static_cast<double>(n);
  const double best = k * (k - 1.0) / 2.0;
  const double worst = k * (2.0 * nn - k - 1.0) / 2.0;
  const double span = worst - best;
  if (span == 0.0) return 1.0;
  return 1.0 - (rank_sum - best) / span;
}

ProtocolResult run_protocol(const std::vector<FaceSet>& sets, const SetSimilarity& similarity,
                            const ProtocolOptions& opts) {
  if (sets.empty()) throw InvalidParams("protocol corpus is empty");

  std::set<std::string> tag_set;
  for (const auto& s : sets) tag_set.insert(s.illumination_tag);
  const std::vector<std::string> all_tags(tag_set.begin(), tag_set.end());
  auto resolve = [&](const std::vector<std::string>& requested) {
    if (requested.empty()) return all_tags;
    for (const auto& t : requested) {
      if (tag_set.count(t) == 0) {
        throw InvalidParams("illumination tag '" + t + "' not present in the corpus");
      }
    }
    return requested;
  };

  ProtocolResult result;
  result.train_tags = resolve(opts.train_tags);
  result.test_tags = resolve(opts.test_tags);
  const Eigen::Index n_train = static_cast<Eigen::Index>(result.train_tags.size());
  const Eigen::Index n_test = static_cast<Eigen::Index>(result.test_tags.size());
  result.rates = Matrix::Constant(n_train, n_test, std::numeric_limits<double>::quiet_NaN());

  auto sets_with_tag = [&](const std::string& tag) {
    std::vector<const FaceSet*> out;
    for (const auto& s : sets) {
      if (s.illumination_tag == tag) out.push_back(&s);
    }
    std::sort(out.begin(), out.end(), [](const FaceSet* x, const FaceSet* y) {
      if (x->person_id != y->person_id) return x->person_id < y->person_id;
      return x->sequence_id < y->sequence_id;
    });
    return out;
  };

  for (Eigen::Index ti = 0; ti < n_train; ++ti) {
    for (Eigen::Index ui = 0; ui < n_test; ++ui) {
      const std::string& train_tag = result.train_tags[static_cast<std::size_t>(ti)];
      const std::string& test_tag = result.test_tags[static_cast<std::size_t>(ui)];
      if (opts.skip_same_tag && train_tag == test_tag) continue;
      const auto gallery = sets_with_tag(train_tag);
      const auto probes = sets_with_tag(test_tag);
      if (gallery.empty() || probes.empty()) {
        throw InvalidParams("illumination pair " + train_tag + "->" + test_tag +
                            " has an empty gallery or probe side");
      }
      std::vector<int> correct(probes.size(), 0);
      parallel_for(
          probes.size(),
          [&](std::size_t p) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t best_g = 0;
            for (std::size_t g = 0; g < gallery.size(); ++g) {
              const double s = similarity(*gallery[g], *probes[p]);
              if (s > best) {
                best = s;
                best_g = g;
              }
            }
            correct[p] = gallery[best_g]->person_id == probes[p]->person_id ? 1 : 0;
          },
          1);
      double rate = 0.0;
      for (int c : correct) rate += c;
      rate /= static_cast<double>(probes.size());
      result.rates(ti, ui) = rate;
      result.pairs.push_back({train_tag, test_tag, rate, static_cast<int>(probes.size())});
    }
  }

  if (result.pairs.empty()) {
    throw InvalidParams("protocol evaluated no illumination pair (filters too strict?)");
  }
  double mean = 0.0;
  for (const auto& p : result.pairs) mean += p.rate;
  mean /= static_cast<double>(result.pairs.size());
  double var = 0.0;
  for (const auto& p : result.pairs) var += (p.rate - mean) * (p.rate - mean);
  var /= static_cast<double>(result.pairs.size());
  result.mean_rate = mean;
  result.std_rate = std::sqrt(var);
  return result;
}

nlohmann::json protocol_to_json(const ProtocolResult& result) {
  nlohmann::json j;
  j["train_tags"] = result.train_tags;
  j["test_tags"] = result.test_tags;
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : result.pairs) {
    nlohmann::json e;
    e["train"] = p.train_tag;
    e["test"] = p.test_tag;
    e["rate"] = p.rate;
    e["probes"] = p.n_probes;
    pairs.push_back(e);
  }
  j["pairs"] = pairs;
  j["mean_rate"] = result.mean_rate;
  j["std_rate"] = result.std_rate;
  return j;
}

std::string protocol_to_csv(const ProtocolResult& result) {
  std::ostringstream out;
  out << "train/test";
  for (const auto& t : result.test_tags) out << "," << t;
  out << "\n";
  for (Eigen::Index ti = 0; ti < result.rates.rows(); ++ti) {
    out << result.train_tags[static_cast<std::size_t>(ti)];
    for (Eigen::Index ui = 0; ui < result.rates.cols(); ++ui) {
      out << ",";
      const double r = result.rates(ti, ui);
      if (!std::isnan(r)) out << format_full(r);
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace mm
