#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mm/errors.hpp"
#include "mm/inc_gmm.hpp"
#include "mm/rng.hpp"

#include "test_util.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace {

mm::GaussianMixture single_component(const mm::Vector& mean, const mm::Matrix& cov) {
  mm::GaussianMixture mix;
  mix.dim = mean.size();
  mm::GaussianComponent c;
  c.prior = 1.0;
  c.mean = mean;
  c.kind = mm::CovKind::Full;
  c.covariance = cov;
  mix.components.push_back(c);
  return mix;
}

mm::Matrix cluster(mm::Rng& rng, double cx, double cy, double spread, int n) {
  mm::Matrix pts(2, n);
  for (int i = 0; i < n; ++i) {
    pts(0, i) = cx + spread * rng.next_normal();
    pts(1, i) = cy + spread * rng.next_normal();
  }
  return pts;
}

double priors_sum(const mm::GaussianMixture& mix) {
  double s = 0.0;
  for (const auto& c : mix.components) s += c.prior;
  return s;
}

// Midpoint-rule log of the product integral of two 1-D Gaussian densities.
double quad_log_product(double mu_a, double var_a, double mu_b, double var_b) {
  const double sd = std::sqrt(std::max(var_a, var_b));
  const double lo = std::min(mu_a, mu_b) - 12.0 * sd;
  const double hi = std::max(mu_a, mu_b) + 12.0 * sd;
  const int n = 400000;
  const double dx = (hi - lo) / n;
  auto pdf = [](double x, double mu, double var) {
    return std::exp(-0.5 * (x - mu) * (x - mu) / var) / std::sqrt(2.0 * mm::kPi * var);
  };
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = lo + (i + 0.5) * dx;
    acc += pdf(x, mu_a, var_a) * pdf(x, mu_b, var_b);
  }
  return std::log(acc * dx);
}

mm::GaussianComponent comp1d(double mean, double var) {
  mm::GaussianComponent c;
  c.prior = 1.0;
  c.mean = mm::Vector::Constant(1, mean);
  c.kind = mm::CovKind::Full;
  c.covariance = mm::Matrix::Constant(1, 1, var);
  return c;
}

}  // namespace

TEST_CASE("the seed fit consumes the stream prefix and snapshots it") {
  mm::Rng rng(311);
  const mm::Matrix data = cluster(rng, 1.0, 2.0, 0.3, 60);
  const mm::IncGmmState state = mm::init_incremental(data, mm::Rng(1));
  CHECK(state.current.order() >= 1);
  CHECK(state.n_seen == 20.0);
  CHECK(state.n_seen_historical == 20.0);
  CHECK(priors_sum(state.current) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(state.current.evidence.sum() == doctest::Approx(20.0).epsilon(1e-6));
  CHECK(state.historical.order() == state.current.order());

  // Short streams are consumed whole.
  const mm::IncGmmState small = mm::init_incremental(data.leftCols(6), mm::Rng(1));
  CHECK(small.n_seen == 6.0);

  CHECK_THROWS_AS(mm::init_incremental(data.leftCols(1), mm::Rng(1)), mm::TooFewPoints);
}

TEST_CASE("wrapping an existing mixture validates its shape") {
  const mm::GaussianMixture mix =
      single_component((mm::Vector(2) << 0.0, 0.0).finished(), mm::Matrix::Identity(2, 2));
  const mm::IncGmmState state = mm::state_from_mixture(mix, 30.0);
  CHECK(state.n_seen == 30.0);
  CHECK(state.current.evidence(0) == doctest::Approx(30.0).epsilon(1e-12));

  CHECK_THROWS_AS(mm::state_from_mixture(mm::GaussianMixture{}, 10.0), mm::InvalidParams);
  CHECK_THROWS_AS(mm::state_from_mixture(mix, 0.0), mm::InvalidParams);
}

TEST_CASE("fixed-order updates track the exact running moments") {
  mm::Rng rng(312);
  const double e0 = 40.0;
  const mm::Vector mu0 = (mm::Vector(2) << 1.0, -1.0).finished();
  mm::Matrix c0(2, 2);
  c0 << 2.0, 0.3, 0.3, 1.0;
  mm::IncGmmState state = mm::state_from_mixture(single_component(mu0, c0), e0);

  const mm::Matrix pts = cluster(rng, 2.0, 0.0, 1.5, 25);
  for (Eigen::Index i = 0; i < pts.cols(); ++i) mm::fixed_update(state, pts.col(i));

  CHECK(state.n_seen == doctest::Approx(e0 + 25.0).epsilon(1e-12));
  const mm::GaussianComponent& c = state.current.components[0];
  CHECK(c.prior == doctest::Approx(1.0).epsilon(1e-12));

  // Mean is the evidence-weighted average of the prior mean and the batch.
  mm::Vector x_sum = mm::Vector::Zero(2);
  mm::Matrix xx_sum = mm::Matrix::Zero(2, 2);
  for (Eigen::Index i = 0; i < pts.cols(); ++i) {
    x_sum += pts.col(i);
    xx_sum += pts.col(i) * pts.col(i).transpose();
  }
  const double e_new = e0 + 25.0;
  const mm::Vector mu_expect = (e0 * mu0 + x_sum) / e_new;
  CHECK(testutil::max_abs_diff(c.mean, mu_expect) < 1e-9);

  // Second moment identity: E_new (C + mu mu') == E0 (C0 + mu0 mu0') + sum x x'.
  const mm::Matrix second_new = c.covariance + c.mean * c.mean.transpose();
  const mm::Matrix second_expect =
      (e0 * (c0 + mu0 * mu0.transpose()) + xx_sum) / e_new;
  CHECK(testutil::max_abs_diff(second_new, second_expect) < 1e-9);

  CHECK_THROWS_AS(mm::fixed_update(state, mm::Vector::Zero(3)), mm::DimensionMismatch);
}

TEST_CASE("the difference component recovers the data absorbed since the snapshot") {
  mm::Rng rng(313);
  mm::IncGmmState state = mm::state_from_mixture(
      single_component(mm::Vector::Zero(2), mm::Matrix::Identity(2, 2)), 60.0);

  CHECK_THROWS_AS(mm::difference_component(state, 0), mm::NoNewEvidence);
  CHECK_THROWS_AS(mm::difference_component(state, 5), mm::InvalidParams);

  const mm::Matrix pts = cluster(rng, 8.0, 8.0, 0.5, 50);
  for (Eigen::Index i = 0; i < pts.cols(); ++i) mm::fixed_update(state, pts.col(i));

  const mm::GaussianComponent diff = mm::difference_component(state, 0);
  CHECK(diff.prior == doctest::Approx(1.0).epsilon(1e-9));
  const mm::Vector mean = pts.rowwise().mean();
  CHECK(testutil::max_abs_diff(diff.mean, mean) < 1e-9);
  mm::Matrix cov = mm::Matrix::Zero(2, 2);
  for (Eigen::Index i = 0; i < pts.cols(); ++i) {
    const mm::Vector r = pts.col(i) - mean;
    cov += r * r.transpose();
  }
  cov /= 50.0;
  CHECK(testutil::max_abs_diff(diff.covariance, cov) < 1e-8);
}

TEST_CASE("merging identical components saves exactly the complexity term") {
  const mm::GaussianComponent c = comp1d(0.7, 1.3);
  const double delta = mm::expected_dl_delta(c, 100.0, c, 100.0);
  CHECK(delta == doctest::Approx(0.5 * std::log2(200.0)).epsilon(1e-9));

  // In d dimensions the complexity saving is 0.25 d (d+1) log2(n).
  mm::GaussianComponent c2;
  c2.prior = 1.0;
  c2.mean = (mm::Vector(2) << 0.4, -0.2).finished();
  c2.kind = mm::CovKind::Full;
  c2.covariance = (mm::Matrix(2, 2) << 1.0, 0.2, 0.2, 0.8).finished();
  const double delta2 = mm::expected_dl_delta(c2, 64.0, c2, 64.0);
  CHECK(delta2 == doctest::Approx(0.25 * 2.0 * 3.0 * std::log2(128.0)).epsilon(1e-9));
}

TEST_CASE("the expected description-length change matches a quadrature rebuild") {
  const double mu1 = 0.3, v1 = 0.8, n1 = 7.0;
  const double mu2 = 1.7, v2 = 0.5, n2 = 12.0;
  const double w1 = n1 / (n1 + n2);
  const double w2 = n2 / (n1 + n2);
  const double mu_m = w1 * mu1 + w2 * mu2;
  const double vm = w1 * (v1 + (mu1 - mu_m) * (mu1 - mu_m)) + w2 * (v2 + (mu2 - mu_m) * (mu2 - mu_m));

  const double l11 = quad_log_product(mu1, v1, mu1, v1);
  const double l12 = quad_log_product(mu1, v1, mu2, v2);
  const double l22 = quad_log_product(mu2, v2, mu2, v2);
  auto lse = [](double a, double b) {
    const double hi = std::max(a, b);
    return hi + std::log(std::exp(a - hi) + std::exp(b - hi));
  };
  const double ln2 = std::log(2.0);
  const double split = (n1 * lse(std::log(w1) + l11, std::log(w2) + l12) +
                        n2 * lse(std::log(w1) + l12, std::log(w2) + l22)) /
                       ln2;
  const double merged =
      (n1 * quad_log_product(mu_m, vm, mu1, v1) + n2 * quad_log_product(mu_m, vm, mu2, v2)) / ln2;
  const double expected = 0.5 * std::log2(n1 + n2) - split + merged;

  const double actual = mm::expected_dl_delta(comp1d(mu1, v1), n1, comp1d(mu2, v2), n2);
  CHECK(actual == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("well-separated components refuse to merge") {
  const double delta = mm::expected_dl_delta(comp1d(0.0, 1.0), 200.0, comp1d(30.0, 1.0), 200.0);
  CHECK(delta < 0.0);

  CHECK_THROWS_AS(mm::expected_dl_delta(comp1d(0.0, 1.0), 0.5, comp1d(1.0, 1.0), 10.0),
                  mm::InvalidParams);
  mm::GaussianComponent c2;
  c2.prior = 1.0;
  c2.mean = mm::Vector::Zero(2);
  c2.kind = mm::CovKind::Full;
  c2.covariance = mm::Matrix::Identity(2, 2);
  CHECK_THROWS_AS(mm::expected_dl_delta(comp1d(0.0, 1.0), 10.0, c2, 10.0),
                  mm::DimensionMismatch);
}

TEST_CASE("a stationary stream keeps a single component") {
  mm::Rng rng(314);
  const mm::Matrix data = cluster(rng, 1.0, 2.0, 0.3, 220);
  mm::IncGmmState state = mm::init_incremental(data, mm::Rng(2));
  const mm::Rng parent(99);
  for (Eigen::Index i = 20; i < data.cols(); ++i) {
    mm::step(state, data.col(i), parent.split("inc-step"));
    CHECK(priors_sum(state.current) == doctest::Approx(1.0).epsilon(1e-9));
    // A few settling steps may merge an overfit seed; after that the order
    // must hold at one.
    if (i >= 25) CHECK(state.current.order() == 1);
  }
  CHECK(state.n_seen == doctest::Approx(220.0).epsilon(1e-12));
  CHECK(state.current.order() == 1);
  CHECK(testutil::max_abs_diff(state.current.components[0].mean,
                               (mm::Vector(2) << 1.0, 2.0).finished()) < 0.15);
}

TEST_CASE("a shifted second phase splits the model to two components") {
  mm::Rng rng(315);
  mm::IncGmmState state = mm::state_from_mixture(
      single_component(mm::Vector::Zero(2), 0.25 * mm::Matrix::Identity(2, 2)), 150.0);
  const mm::Matrix phase2 = cluster(rng, 8.0, 0.0, 0.5, 120);

  int splits = 0;
  int merges = 0;
  const mm::Rng parent(100);
  for (Eigen::Index i = 0; i < phase2.cols(); ++i) {
    const mm::StepReport report = mm::step(state, phase2.col(i), parent.split("inc-step"));
    splits += report.splits_committed;
    merges += report.merges_committed;
    CHECK(priors_sum(state.current) == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(state.current.order() == 2);
  CHECK(splits >= 1);
  CHECK(merges == 0);

  // One component stays at the origin, the other follows the new cluster.
  double d_origin = 1e9;
  double d_shift = 1e9;
  for (const auto& c : state.current.components) {
    d_origin = std::min(d_origin, c.mean.norm());
    d_shift = std::min(d_shift, (c.mean - (mm::Vector(2) << 8.0, 0.0).finished()).norm());
  }
  CHECK(d_origin < 1.0);
  CHECK(d_shift < 1.0);
}

TEST_CASE("checkpoints round-trip exactly and support resuming mid-stream") {
  mm::Rng rng(316);
  mm::Matrix data(2, 120);
  data.leftCols(60) = cluster(rng, 0.0, 0.0, 0.4, 60);
  data.rightCols(60) = cluster(rng, 6.0, 1.0, 0.4, 60);
  const std::string dir = testutil::scratch_dir("inc_ckpt");
  const mm::Rng parent(101);

  // Full run.
  mm::IncGmmState full = mm::init_incremental(data, mm::Rng(3));
  for (Eigen::Index i = 20; i < 120; ++i) mm::step(full, data.col(i), parent.split("inc-step"));

  // Interrupted run: checkpoint at column 70, reload, continue.
  mm::IncGmmState half = mm::init_incremental(data, mm::Rng(3));
  for (Eigen::Index i = 20; i < 70; ++i) mm::step(half, data.col(i), parent.split("inc-step"));
  mm::save_checkpoint(dir + "/ckpt.json", half);
  mm::IncGmmState resumed = mm::load_checkpoint(dir + "/ckpt.json");
  CHECK(mm::state_to_json(resumed).dump() == mm::state_to_json(half).dump());
  for (Eigen::Index i = 70; i < 120; ++i) mm::step(resumed, data.col(i), parent.split("inc-step"));

  CHECK(mm::state_to_json(resumed).dump() == mm::state_to_json(full).dump());

  // Malformed checkpoints are rejected.
  nlohmann::json j = mm::state_to_json(full);
  j["extra"] = 1;
  CHECK_THROWS_AS(mm::state_from_json(j, "test"), mm::BadConfig);
}

TEST_CASE("synthetic streams have the advertised shape and statistics") {
  mm::Rng rng(317);
  const mm::Matrix ring = mm::synth_radial_gaussian(4000, rng);
  REQUIRE(ring.rows() == 2);
  REQUIRE(ring.cols() == 4000);
  double r_mean = 0.0;
  for (Eigen::Index i = 0; i < ring.cols(); ++i) r_mean += ring.col(i).norm();
  r_mean /= 4000.0;
  CHECK(r_mean == doctest::Approx(5.0).epsilon(0.01));

  const mm::Matrix wave = mm::synth_sinusoid(4000, rng);
  REQUIRE(wave.rows() == 2);
  double resid_mean = 0.0;
  double resid_sq = 0.0;
  for (Eigen::Index i = 0; i < wave.cols(); ++i) {
    CHECK(wave(0, i) >= 0.0);
    CHECK(wave(0, i) < 10.0);
    const double r = wave(1, i) - std::sin(wave(0, i));
    resid_mean += r;
    resid_sq += r * r;
  }
  resid_mean /= 4000.0;
  const double resid_sd = std::sqrt(resid_sq / 4000.0 - resid_mean * resid_mean);
  CHECK(std::abs(resid_mean) < 0.02);
  CHECK(resid_sd == doctest::Approx(0.1).epsilon(0.1));

  CHECK_THROWS_AS(mm::synth_radial_gaussian(0, rng), mm::InvalidParams);
}

TEST_CASE("temporal ordering follows the nearest-neighbor chain from the left") {
  mm::Matrix pts(2, 4);
  pts << 3.0, 0.0, 1.0, 2.0,
         0.0, 0.0, 0.0, 0.0;
  const std::vector<Eigen::Index> order = mm::temporal_order(pts);
  CHECK(order == std::vector<Eigen::Index>{1, 2, 3, 0});

  // Distance ties break toward the lower column index.
  mm::Matrix tie(2, 3);
  tie << 0.0, 1.0, -1.0,
         0.0, 0.0, 0.0;
  // Start at the minimal-x point (index 2), both remaining are 1 and 2 away.
  const std::vector<Eigen::Index> torder = mm::temporal_order(tie);
  CHECK(torder == std::vector<Eigen::Index>{2, 0, 1});
}
