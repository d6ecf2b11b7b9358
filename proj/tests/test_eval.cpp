#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mm/errors.hpp"
#include "mm/eval.hpp"
#include "mm/parallel.hpp"
#include "mm/rng.hpp"

#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace {

mm::FaceSet tagged_set(int person, int seq, const std::string& tag) {
  mm::FaceSet set;
  set.person_id = "p" + std::to_string(person);
  set.sequence_id = "s" + std::to_string(seq);
  set.illumination_tag = tag;
  set.height = 1;
  set.width = 1;
  set.frames = mm::Matrix::Constant(1, 2, static_cast<double>(person));
  return set;
}

std::vector<mm::FaceSet> tagged_corpus(const std::vector<std::string>& tags, int persons) {
  std::vector<mm::FaceSet> sets;
  int seq = 0;
  for (int p = 0; p < persons; ++p) {
    for (const auto& t : tags) sets.push_back(tagged_set(p, seq++, t));
  }
  return sets;
}

double oracle_same_person(const mm::FaceSet& gallery, const mm::FaceSet& probe) {
  return gallery.person_id == probe.person_id ? 0.9 : 0.1;
}

}  // namespace

TEST_CASE("recognition rate counts exact matches") {
  CHECK(mm::recognition_rate({1, 2, 3, 1}, {1, 2, 0, 1}) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(mm::recognition_rate({5}, {5}) == 1.0);
  CHECK(mm::recognition_rate({5}, {4}) == 0.0);
  CHECK_THROWS_AS(mm::recognition_rate({1, 2}, {1}), mm::LengthMismatch);
  CHECK_THROWS_AS(mm::recognition_rate({}, {}), mm::LengthMismatch);
}

TEST_CASE("perfectly separated scores give a zero equal-error rate") {
  const std::vector<double> intra = {0.9, 0.8, 0.95, 0.99};
  const std::vector<double> inter = {0.1, 0.2, 0.3, 0.05, 0.15};
  const mm::RocCurve curve = mm::roc(intra, inter, mm::ScoreDirection::Similarity);
  CHECK(curve.eer < 1e-12);
  REQUIRE(curve.tpr.size() == curve.fpr.size());
  REQUIRE(curve.tpr.size() == curve.thresholds.size());
  for (Eigen::Index i = 0; i < curve.tpr.size(); ++i) {
    CHECK(curve.tpr(i) >= 0.0);
    CHECK(curve.tpr(i) <= 1.0);
    CHECK(curve.fpr(i) >= 0.0);
    CHECK(curve.fpr(i) <= 1.0);
    if (i > 0) CHECK(curve.thresholds(i) >= curve.thresholds(i - 1));
  }
  CHECK_THROWS_AS(mm::roc({}, inter, mm::ScoreDirection::Similarity), mm::InvalidParams);
  CHECK_THROWS_AS(mm::roc(intra, {}, mm::ScoreDirection::Similarity), mm::InvalidParams);
}

TEST_CASE("identically distributed scores give an equal-error rate near one half") {
  mm::Rng rng(411);
  std::vector<double> intra(3000);
  std::vector<double> inter(3000);
  for (auto& v : intra) v = rng.next_double();
  for (auto& v : inter) v = rng.next_double();
  const mm::RocCurve curve = mm::roc(intra, inter, mm::ScoreDirection::Similarity);
  CHECK(curve.eer == doctest::Approx(0.5).epsilon(0.1));
  CHECK(std::abs(curve.eer - 0.5) < 0.05);
}

TEST_CASE("the equal-error rate ignores monotone score recalibration") {
  mm::Rng rng(412);
  std::vector<double> intra(400);
  std::vector<double> inter(500);
  for (auto& v : intra) v = 0.3 + 0.5 * rng.next_double();
  for (auto& v : inter) v = 0.6 * rng.next_double();
  const double base = mm::roc(intra, inter, mm::ScoreDirection::Similarity).eer;

  auto warp = [](std::vector<double> v) {
    for (auto& x : v) x = std::exp(3.0 * x + 1.0);
    return v;
  };
  const double warped = mm::roc(warp(intra), warp(inter), mm::ScoreDirection::Similarity).eer;
  CHECK(warped == base);

  // Negating scores and flipping the acceptance direction is the same test.
  auto negate = [](std::vector<double> v) {
    for (auto& x : v) x = -x;
    return v;
  };
  const double flipped = mm::roc(negate(intra), negate(inter), mm::ScoreDirection::Distance).eer;
  CHECK(flipped == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("rank ordering scores the retrieval quality") {
  // All in-class items first: perfect.
  CHECK(mm::rank_ordering_score({0, 1, 2, 3, 4, 5}, {true, true, true, false, false, false}) ==
        doctest::Approx(1.0).epsilon(1e-12));
  // All in-class items last: worst.
  CHECK(mm::rank_ordering_score({3, 4, 5, 0, 1, 2}, {true, true, true, false, false, false}) ==
        doctest::Approx(0.0).epsilon(1e-12));
  // Hand-computed middle value: in-class ranks 0 and 2 of 4.
  CHECK(mm::rank_ordering_score({0, 2, 1, 3}, {true, true, false, false}) ==
        doctest::Approx(0.75).epsilon(1e-12));
  // Padding the tail with out-of-class items cannot spoil a perfect score.
  CHECK(mm::rank_ordering_score({0, 1, 2, 3, 4}, {true, true, false, false, false}) ==
        doctest::Approx(1.0).epsilon(1e-12));
  // Degenerate all-in-class retrieval counts as perfect.
  CHECK(mm::rank_ordering_score({1, 0, 2}, {true, true, true}) == 1.0);

  CHECK_THROWS_AS(mm::rank_ordering_score({0, 0, 1}, {true, false, false}), mm::InvalidParams);
  CHECK_THROWS_AS(mm::rank_ordering_score({0, 1, 5}, {true, false, false}), mm::InvalidParams);
  CHECK_THROWS_AS(mm::rank_ordering_score({0, 1}, {true, false, false}), mm::LengthMismatch);
  CHECK_THROWS_AS(mm::rank_ordering_score({0, 1}, {false, false}), mm::NoPositives);
}

TEST_CASE("random retrievals average one half") {
  mm::Rng rng(413);
  std::vector<int> order(12);
  std::iota(order.begin(), order.end(), 0);
  std::vector<bool> in_class(12, false);
  for (int i : {2, 5, 7, 11}) in_class[static_cast<std::size_t>(i)] = true;
  double total = 0.0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    rng.shuffle(order);
    total += mm::rank_ordering_score(order, in_class);
  }
  CHECK(std::abs(total / trials - 0.5) < 0.03);
}

TEST_CASE("the illumination protocol scores every ordered tag pair") {
  const std::vector<std::string> tags = {"a", "b", "c"};
  const std::vector<mm::FaceSet> sets = tagged_corpus(tags, 3);
  mm::ProtocolOptions opts;
  opts.train_tags = tags;
  opts.test_tags = tags;

  const mm::ProtocolResult result = mm::run_protocol(sets, oracle_same_person, opts);
  REQUIRE(result.rates.rows() == 3);
  REQUIRE(result.rates.cols() == 3);
  CHECK(result.pairs.size() == 6);
  for (Eigen::Index i = 0; i < 3; ++i) {
    CHECK(std::isnan(result.rates(i, i)));
    for (Eigen::Index j = 0; j < 3; ++j) {
      if (i != j) CHECK(result.rates(i, j) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  CHECK(result.mean_rate == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(result.std_rate == doctest::Approx(0.0).epsilon(1e-12));
  for (const auto& p : result.pairs) CHECK(p.n_probes == 3);

  // Including the same-tag diagonal adds the three remaining cells.
  opts.skip_same_tag = false;
  const mm::ProtocolResult full = mm::run_protocol(sets, oracle_same_person, opts);
  CHECK(full.pairs.size() == 9);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(full.rates(i, i) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("protocol statistics aggregate the per-pair rates") {
  const std::vector<std::string> tags = {"a", "b"};
  const std::vector<mm::FaceSet> sets = tagged_corpus(tags, 3);
  // Sabotage one direction: probes under tag "b" matched against gallery "a"
  // prefer the wrong person.
  auto similarity = [](const mm::FaceSet& gallery, const mm::FaceSet& probe) {
    const bool same = gallery.person_id == probe.person_id;
    if (gallery.illumination_tag == "a" && probe.illumination_tag == "b") {
      return same ? 0.1 : 0.9;
    }
    return same ? 0.9 : 0.1;
  };
  const mm::ProtocolResult result = mm::run_protocol(sets, similarity, {});
  REQUIRE(result.pairs.size() == 2);
  double mean = 0.0;
  for (const auto& p : result.pairs) mean += p.rate;
  mean /= 2.0;
  double var = 0.0;
  for (const auto& p : result.pairs) var += (p.rate - mean) * (p.rate - mean);
  var /= 2.0;
  CHECK(result.mean_rate == doctest::Approx(mean).epsilon(1e-12));
  CHECK(result.std_rate == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
  CHECK(result.mean_rate == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("protocol rejects impossible filters") {
  const std::vector<mm::FaceSet> sets = tagged_corpus({"a", "b"}, 2);
  CHECK_THROWS_AS(mm::run_protocol({}, oracle_same_person, {}), mm::InvalidParams);

  mm::ProtocolOptions missing;
  missing.train_tags = {"zzz"};
  CHECK_THROWS_AS(mm::run_protocol(sets, oracle_same_person, missing), mm::InvalidParams);

  mm::ProtocolOptions self_only;
  self_only.train_tags = {"a"};
  self_only.test_tags = {"a"};
  CHECK_THROWS_AS(mm::run_protocol(sets, oracle_same_person, self_only), mm::InvalidParams);
}

TEST_CASE("protocol reports do not depend on the worker count") {
  const std::vector<mm::FaceSet> sets = tagged_corpus({"a", "b", "c"}, 4);
  const int saved = mm::max_jobs();
  mm::set_max_jobs(1);
  const nlohmann::json serial = mm::protocol_to_json(mm::run_protocol(sets, oracle_same_person, {}));
  mm::set_max_jobs(3);
  const nlohmann::json parallel = mm::protocol_to_json(mm::run_protocol(sets, oracle_same_person, {}));
  mm::set_max_jobs(saved);
  CHECK(serial.dump() == parallel.dump());
}

TEST_CASE("protocol reports serialize to json and csv") {
  const std::vector<std::string> tags = {"a", "b", "c"};
  const std::vector<mm::FaceSet> sets = tagged_corpus(tags, 3);
  mm::ProtocolOptions opts;
  opts.train_tags = tags;
  opts.test_tags = tags;
  const mm::ProtocolResult result = mm::run_protocol(sets, oracle_same_person, opts);

  const nlohmann::json j = mm::protocol_to_json(result);
  CHECK(j.at("train_tags").size() == 3);
  CHECK(j.at("test_tags").size() == 3);
  CHECK(j.at("pairs").size() == 6);
  for (const auto& p : j.at("pairs")) {
    CHECK(p.contains("train"));
    CHECK(p.contains("test"));
    CHECK(p.contains("rate"));
    CHECK(p.contains("probes"));
  }
  CHECK(j.at("mean_rate").get<double>() == doctest::Approx(1.0).epsilon(1e-12));

  const std::string csv = mm::protocol_to_csv(result);
  CHECK(csv.rfind("train/test,a,b,c\n", 0) == 0);
  // Skipped diagonal cells stay empty; evaluated cells carry the rate.
  CHECK(csv.find("a,,1,1\n") != std::string::npos);
  CHECK(csv.find("b,1,,1\n") != std::string::npos);
  CHECK(csv.find("c,1,1,\n") != std::string::npos);
}
