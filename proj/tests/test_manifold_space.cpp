#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mm/errors.hpp"
#include "mm/manifold_space.hpp"
#include "mm/rng.hpp"
#include "mm/subspace.hpp"

#include "test_util.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

namespace {

mm::FaceSet face_set_from_frames(const mm::Matrix& frames) {
  mm::FaceSet set;
  set.frames = frames;
  set.height = 4;
  set.width = 4;
  return set;
}

// A set whose frames live near a planted plane spanned by two axis blocks.
mm::FaceSet planted_set(mm::Rng& rng, int axis_a, int axis_b) {
  mm::Matrix frames = 0.01 * testutil::random_matrix(rng, 16, 12);
  for (Eigen::Index c = 0; c < frames.cols(); ++c) {
    frames(axis_a, c) += rng.next_normal(0.0, 1.0);
    frames(axis_b, c) += rng.next_normal(0.0, 1.0);
  }
  return face_set_from_frames(frames);
}

mm::Matrix euclidean_distances(const mm::Matrix& points) {
  const Eigen::Index n = points.rows();
  mm::Matrix d = mm::Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) d(i, j) = (points.row(i) - points.row(j)).norm();
  }
  return d;
}

double reference_weighted_dl(const mm::Matrix& points, const std::vector<int>& assignment,
                             const std::vector<double>& supports) {
  const double d = static_cast<double>(points.cols());
  int n_classes = 0;
  for (int a : assignment) n_classes = std::max(n_classes, a + 1);
  double n_total = 0.0;
  for (double s : supports) n_total += s;
  const double n_params = (n_classes - 1.0) + n_classes * (d + d * (d + 1.0) / 2.0);
  double dl = 0.5 * n_params * std::log2(std::max(n_total, 2.0));
  for (int c = 0; c < n_classes; ++c) {
    std::vector<int> members;
    for (std::size_t j = 0; j < assignment.size(); ++j) {
      if (assignment[j] == c) members.push_back(static_cast<int>(j));
    }
    mm::Vector mean = mm::Vector::Zero(points.cols());
    for (int j : members) mean += points.row(j).transpose();
    mean /= static_cast<double>(members.size());
    mm::Matrix cov = mm::Matrix::Zero(points.cols(), points.cols());
    for (int j : members) {
      const mm::Vector r = points.row(j).transpose() - mean;
      cov += r * r.transpose();
    }
    cov /= static_cast<double>(members.size());
    const Eigen::LLT<mm::Matrix> llt(cov);
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < points.cols(); ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
    double weighted = 0.0;
    double total_w = 0.0;
    for (int j : members) {
      const mm::Vector diff = points.row(j).transpose() - mean;
      const double quad = diff.dot(llt.solve(diff));
      const double log2p =
          (-0.5 * d * std::log(2.0 * mm::kPi) - 0.5 * log_det - 0.5 * quad) / std::log(2.0);
      weighted += supports[static_cast<std::size_t>(j)] * log2p;
      total_w += supports[static_cast<std::size_t>(j)];
    }
    dl -= static_cast<double>(members.size()) * weighted / total_w;
  }
  return dl;
}

mm::ManifoldSpaceEmbedding embedding_from_points(const mm::Matrix& points) {
  mm::ManifoldSpaceEmbedding e;
  e.points = points;
  e.source_distances = euclidean_distances(points);
  return e;
}

mm::Matrix two_cluster_points(mm::Rng& rng, double separation, int per_cluster) {
  mm::Matrix points(2 * per_cluster, 2);
  for (int i = 0; i < per_cluster; ++i) {
    points(i, 0) = rng.next_normal();
    points(i, 1) = rng.next_normal();
    points(per_cluster + i, 0) = separation + rng.next_normal();
    points(per_cluster + i, 1) = rng.next_normal();
  }
  return points;
}

}  // namespace

TEST_CASE("pairwise dissimilarities match a per-pair recomputation") {
  mm::Rng rng(211);
  std::vector<mm::FaceSet> sets;
  sets.push_back(planted_set(rng, 0, 1));
  sets.push_back(planted_set(rng, 0, 1));
  sets.push_back(planted_set(rng, 6, 7));
  sets.push_back(planted_set(rng, 12, 13));
  const mm::LinearSubspace constraint = mm::pca_subspace(testutil::random_matrix(rng, 16, 40), 12, false);

  const mm::Matrix d = mm::pairwise_cmsm_matrix(sets, constraint);
  REQUIRE(d.rows() == 4);
  REQUIRE(d.cols() == 4);
  for (Eigen::Index i = 0; i < 4; ++i) {
    CHECK(d(i, i) == 0.0);
    for (Eigen::Index j = 0; j < 4; ++j) CHECK(d(i, j) == d(j, i));
  }
  for (Eigen::Index i = 0; i < 4; ++i) {
    for (Eigen::Index j = i + 1; j < 4; ++j) {
      const mm::LinearSubspace a = mm::pca_subspace(sets[static_cast<std::size_t>(i)].frames,
                                                    mm::kMsmSubspaceDim, false);
      const mm::LinearSubspace b = mm::pca_subspace(sets[static_cast<std::size_t>(j)].frames,
                                                    mm::kMsmSubspaceDim, false);
      const double expected = 1.0 - mm::cmsm_similarity(a, b, constraint);
      CHECK(d(i, j) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
  // Same plane pairs sit closer than cross-plane pairs.
  CHECK(d(0, 1) < d(0, 2));
  CHECK(d(0, 1) < d(0, 3));
}

TEST_CASE("constraint refinement returns an orthonormal mixed subspace") {
  mm::Rng rng(212);
  std::vector<mm::FaceSet> sets;
  sets.push_back(planted_set(rng, 0, 1));
  sets.push_back(planted_set(rng, 0, 1));
  sets.push_back(planted_set(rng, 8, 9));
  sets.push_back(planted_set(rng, 8, 9));
  const mm::LinearSubspace generic = mm::pca_subspace(testutil::random_matrix(rng, 16, 40), 6, false);

  const mm::LinearSubspace refined = mm::refine_constraint(generic, sets, 0.05, 0.9);
  CHECK(refined.ambient_dim() == 16);
  CHECK(refined.dim() >= 1);
  CHECK(refined.dim() <= generic.dim());
  const mm::Matrix gram = refined.basis.transpose() * refined.basis;
  CHECK(testutil::max_abs_diff(gram, mm::Matrix::Identity(refined.dim(), refined.dim())) < 1e-9);

  CHECK_THROWS_AS(mm::refine_constraint(generic, sets, 0.9, 0.05), mm::InvalidParams);
}

TEST_CASE("metric repair restores the triangle inequality and is idempotent") {
  mm::Rng rng(213);
  const Eigen::Index n = 12;
  mm::Matrix d = mm::Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      d(i, j) = d(j, i) = 5.0 * std::abs(rng.next_normal());
    }
  }
  const mm::Matrix r = mm::metric_repair(d);

  for (Eigen::Index i = 0; i < n; ++i) {
    CHECK(r(i, i) == 0.0);
    for (Eigen::Index j = 0; j < n; ++j) {
      CHECK(r(i, j) == r(j, i));
      CHECK(r(i, j) <= d(i, j));
      for (Eigen::Index k = 0; k < n; ++k) {
        CHECK(r(i, j) <= r(i, k) + r(k, j));
      }
    }
  }

  const mm::Matrix r2 = mm::metric_repair(r);
  CHECK((r2.array() == r.array()).all());
}

TEST_CASE("metric repair leaves genuine metrics untouched") {
  mm::Rng rng(214);
  const mm::Matrix points = testutil::random_matrix(rng, 9, 2);
  const mm::Matrix d = euclidean_distances(points);
  const mm::Matrix r = mm::metric_repair(d);
  CHECK((r.array() == d.array()).all());
}

TEST_CASE("metric repair shortcuts an inflated leg through the chain") {
  mm::Matrix d(3, 3);
  d << 0.0, 1.0, 10.0,
       1.0, 0.0, 2.0,
       10.0, 2.0, 0.0;
  const mm::Matrix r = mm::metric_repair(d);
  CHECK(r(0, 2) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(r(0, 1) == 1.0);
  CHECK(r(1, 2) == 2.0);
}

TEST_CASE("metric repair rejects malformed inputs") {
  mm::Matrix bad(2, 2);
  bad << 0.0, 1.0, 2.0, 0.0;  // asymmetric
  CHECK_THROWS_AS(mm::metric_repair(bad), mm::InvalidParams);
  mm::Matrix diag(2, 2);
  diag << 0.5, 1.0, 1.0, 0.0;  // nonzero diagonal
  CHECK_THROWS_AS(mm::metric_repair(diag), mm::InvalidParams);
  mm::Matrix neg(2, 2);
  neg << 0.0, -1.0, -1.0, 0.0;  // negative distance
  CHECK_THROWS_AS(mm::metric_repair(neg), mm::InvalidParams);
}

TEST_CASE("embedding a line recovers the line") {
  const std::vector<double> xs = {0.0, 1.0, 3.0, 6.0};
  mm::Matrix d = mm::Matrix::Zero(4, 4);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) d(i, j) = std::abs(xs[static_cast<std::size_t>(i)] - xs[static_cast<std::size_t>(j)]);
  }
  const mm::ManifoldSpaceEmbedding e = mm::mds_embed(d, 1);
  REQUIRE(e.points.rows() == 4);
  REQUIRE(e.points.cols() == 1);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const double rec = std::abs(e.points(i, 0) - e.points(j, 0));
      CHECK(rec == doctest::Approx(d(i, j)).epsilon(1e-8));
    }
  }
  CHECK(e.stress < 1e-9);
  CHECK_FALSE(e.negative_eigenmass_warning);
  CHECK((e.source_distances.array() == d.array()).all());
}

TEST_CASE("embedding Euclidean point distances reconstructs them") {
  mm::Rng rng(215);
  const mm::Matrix config = testutil::random_matrix(rng, 9, 3);
  const mm::Matrix d = euclidean_distances(config);

  const mm::ManifoldSpaceEmbedding fixed = mm::mds_embed(d, 3);
  REQUIRE(fixed.points.cols() == 3);
  const mm::Matrix rec = euclidean_distances(fixed.points);
  CHECK(testutil::max_abs_diff(rec, d) < 1e-8);
  CHECK(fixed.stress < 1e-8);
  CHECK_FALSE(fixed.negative_eigenmass_warning);

  // Automatic dimension choice finds the true dimensionality.
  const mm::ManifoldSpaceEmbedding automatic = mm::mds_embed(d);
  CHECK(automatic.points.cols() == 3);
}

TEST_CASE("non-Euclidean dissimilarities yield stress and a spectral-mass warning") {
  // Two legs of 1 cannot bridge a gap of 5: one double-centered eigenvalue is
  // -3.5 against +12.5 and +0 positives, so 21.9% of the mass is negative.
  mm::Matrix d(3, 3);
  d << 0.0, 1.0, 1.0,
       1.0, 0.0, 5.0,
       1.0, 5.0, 0.0;
  const mm::ManifoldSpaceEmbedding e = mm::mds_embed(d, 2);
  CHECK(e.stress > 0.01);
  CHECK(e.negative_eigenmass_warning);

  // A milder violation keeps the negative fraction under the 20% trigger.
  mm::Matrix mild(3, 3);
  mild << 0.0, 1.0, 1.0,
          1.0, 0.0, 2.5,
          1.0, 2.5, 0.0;
  const mm::ManifoldSpaceEmbedding me = mm::mds_embed(mild, 2);
  CHECK(me.stress > 1e-4);
  CHECK_FALSE(me.negative_eigenmass_warning);
}

TEST_CASE("threshold clustering is transitive and labels by first occurrence") {
  mm::Matrix blocks = mm::Matrix::Constant(4, 4, 5.0);
  blocks.diagonal().setZero();
  blocks(0, 1) = blocks(1, 0) = 0.1;
  blocks(2, 3) = blocks(3, 2) = 0.1;
  CHECK(mm::isotropic_cluster(blocks, 0.5) == std::vector<int>{0, 0, 1, 1});

  // Chains connect through intermediate members.
  mm::Matrix chain = mm::Matrix::Zero(3, 3);
  chain(0, 1) = chain(1, 0) = 0.4;
  chain(1, 2) = chain(2, 1) = 0.4;
  chain(0, 2) = chain(2, 0) = 3.0;
  CHECK(mm::isotropic_cluster(chain, 0.5) == std::vector<int>{0, 0, 0});

  // Interleaved classes keep ids in order of first appearance.
  mm::Matrix inter = mm::Matrix::Constant(4, 4, 5.0);
  inter.diagonal().setZero();
  inter(0, 2) = inter(2, 0) = 0.1;
  inter(1, 3) = inter(3, 1) = 0.1;
  CHECK(mm::isotropic_cluster(inter, 0.5) == std::vector<int>{0, 1, 0, 1});

  // The threshold itself is inclusive.
  mm::Matrix edge = mm::Matrix::Zero(2, 2);
  edge(0, 1) = edge(1, 0) = 0.5;
  CHECK(mm::isotropic_cluster(edge, 0.5) == std::vector<int>{0, 0});
  CHECK(mm::isotropic_cluster(edge, 0.499) == std::vector<int>{0, 1});

  CHECK_THROWS_AS(mm::isotropic_cluster(edge, -0.1), mm::InvalidParams);
}

TEST_CASE("weighted description length matches an independent recomputation") {
  mm::Rng rng(216);
  const mm::Matrix points = two_cluster_points(rng, 6.0, 6);
  std::vector<int> assignment = {0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1};
  std::vector<double> supports = {1, 2, 3, 4, 5, 1, 2, 3, 4, 5, 1, 2};
  const mm::ManifoldSpaceEmbedding e = embedding_from_points(points);

  const double dl = mm::weighted_dl(e, assignment, supports);
  const double expected = reference_weighted_dl(points, assignment, supports);
  CHECK(dl == doctest::Approx(expected).epsilon(1e-9));

  // More supporting frames raise the complexity penalty term.
  std::vector<double> doubled;
  for (double s : supports) doubled.push_back(2.0 * s);
  const double dl2 = mm::weighted_dl(e, assignment, doubled);
  CHECK(dl2 == doctest::Approx(reference_weighted_dl(points, assignment, doubled)).epsilon(1e-9));

  CHECK_THROWS_AS(mm::weighted_dl(e, {0, 1}, supports), mm::LengthMismatch);
  std::vector<double> bad_supports(supports);
  bad_supports[0] = 0.0;
  CHECK_THROWS_AS(mm::weighted_dl(e, assignment, bad_supports), mm::InvalidParams);
}

TEST_CASE("merging joins overlapping clusters and preserves separated ones") {
  mm::Rng rng(217);
  std::vector<int> seed;
  std::vector<double> supports;
  for (int i = 0; i < 80; ++i) {
    seed.push_back(i < 40 ? 0 : 1);
    supports.push_back(20.0);
  }
  mm::AnisotropicOptions opts;
  opts.threshold = -20.0;

  const mm::ManifoldSpaceEmbedding close = embedding_from_points(two_cluster_points(rng, 0.5, 40));
  const mm::ClusterState merged = mm::anisotropic_merge(close, seed, supports, opts);
  CHECK(merged.classes.size() == 1);
  for (int a : merged.assignment) CHECK(a == 0);

  const mm::ManifoldSpaceEmbedding far = embedding_from_points(two_cluster_points(rng, 10.0, 40));
  const mm::ClusterState kept = mm::anisotropic_merge(far, seed, supports, opts);
  CHECK(kept.classes.size() == 2);
  CHECK(kept.assignment == seed);

  // The reported description length is the weighted DL of the final labels.
  CHECK(kept.description_length ==
        doctest::Approx(mm::weighted_dl(far, kept.assignment, supports, opts)).epsilon(1e-9));
  // Class supports accumulate their members' supports.
  double total = 0.0;
  for (const auto& cls : kept.classes) total += cls.support;
  CHECK(total == doctest::Approx(80.0 * 20.0).epsilon(1e-12));

  CHECK_THROWS_AS(mm::anisotropic_merge(far, {0, 1}, supports, opts), mm::LengthMismatch);
}

TEST_CASE("cluster reports expose members ids and Gaussian parameters") {
  mm::Rng rng(218);
  std::vector<int> seed;
  std::vector<double> supports;
  for (int i = 0; i < 24; ++i) {
    seed.push_back(i < 12 ? 0 : 1);
    supports.push_back(10.0);
  }
  const mm::ManifoldSpaceEmbedding e = embedding_from_points(two_cluster_points(rng, 12.0, 12));
  const mm::ClusterState state = mm::anisotropic_merge(e, seed, supports, {});

  std::vector<std::string> ids;
  for (int i = 0; i < 24; ++i) ids.push_back("set_" + std::to_string(i));
  const nlohmann::json report = mm::cluster_report(state, ids);

  CHECK(report.at("class_count").get<int>() == static_cast<int>(state.classes.size()));
  CHECK(report.at("description_length").get<double>() == state.description_length);
  const auto& classes = report.at("classes");
  REQUIRE(classes.is_array());
  std::size_t member_total = 0;
  for (const auto& entry : classes) {
    CHECK(entry.contains("id"));
    CHECK(entry.contains("support"));
    CHECK(entry.contains("mean"));
    CHECK(entry.contains("covariance"));
    CHECK(entry.at("members").size() == entry.at("member_ids").size());
    member_total += entry.at("members").size();
    for (const auto& mid : entry.at("member_ids")) {
      CHECK(mid.get<std::string>().rfind("set_", 0) == 0);
    }
  }
  CHECK(member_total == 24);

  CHECK_THROWS_AS(mm::cluster_report(state, {"only_one"}), mm::LengthMismatch);
}
