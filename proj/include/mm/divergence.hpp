#pragma once

#include "mm/common.hpp"
#include "mm/errors.hpp"
#include "mm/gmm.hpp"
#include "mm/rng.hpp"

#include <string>
#include <utility>
#include <vector>

namespace mm {

enum class Direction { PToQ, QToP, Rad };

struct DivergenceEstimate {
  double value = 0.0;
  double std_error = 0.0;       // Monte-Carlo standard error; 0 for closed form
  Eigen::Index mc_samples = 0;  // 0 for closed-form results
  Direction direction = Direction::PToQ;
  std::string unit = "nats";    // closed-form normal divergences are in bits
};

// Divergence between two Gaussians, returned in bits:
//   [ ln(|Cq|/|Cp|) + Tr(Cq^-1 Cp) + (mq-mp)' Cq^-1 (mq-mp) - D ] / (2 ln 2)
// Any covariance kind is accepted (factored forms are materialized).
double kl_gaussian(const GaussianComponent& p, const GaussianComponent& q);

// Monte-Carlo divergence between mixtures, in nats:
//   (1/M) sum log( p(x_i) / q(x_i) ),  x_i ~ p
// Densities are floored at 1e-300 before the ratio.  Sampling is chunked with
// per-chunk sub-streams and fixed-order reduction, so the estimate does not
// depend on worker count and is identical per seed.
DivergenceEstimate kl_mc(const GaussianMixture& p, const GaussianMixture& q,
                         Eigen::Index m_samples, const Rng& rng);

inline constexpr Eigen::Index kDefaultMcSamples = 1000;

// Resistor-average combination of the two directed divergences:
// (d_pq^-1 + d_qp^-1)^-1, with 0 whenever either input is 0.
double rad(double d_pq, double d_qp);

// ---------------------------------------------------------------------------
// Density-based set matching
// ---------------------------------------------------------------------------

struct MddOptions {
  int max_components = 5;           // order sweep ceiling for the probe-set fit
  CovKind cov_kind = CovKind::Diagonal;
  Eigen::Index m_samples = kDefaultMcSamples;
  EmOptions em = {};
};

struct RankedLabel {
  std::string label;
  double divergence = 0.0;  // nats
};

// Fits a mixture to the probe set (order chosen by description length) and
// ranks the gallery models by ascending Monte-Carlo divergence probe->model.
std::vector<RankedLabel> mdd_classify(
    const Matrix& probe_data, const std::vector<std::pair<std::string, GaussianMixture>>& gallery,
    const Rng& rng, const MddOptions& opts = {});

}  // namespace mm
