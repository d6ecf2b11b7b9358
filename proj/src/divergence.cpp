#include "mm/divergence.hpp"

#include "mm/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace mm {

double kl_gaussian(const GaussianComponent& p, const GaussianComponent& q) {
  if (p.mean.size() != q.mean.size()) {
    throw DimensionMismatch("kl_gaussian: dimensions " + std::to_string(p.mean.size()) +
                            " vs " + std::to_string(q.mean.size()));
  }
  const Eigen::Index d = p.mean.size();
  const Matrix cp = p.realized_covariance();
  const Matrix cq = q.realized_covariance();
  Eigen::LLT<Matrix> llt_p(cp);
  Eigen::LLT<Matrix> llt_q(cq);
  if (llt_p.info() != Eigen::Success || llt_q.info() != Eigen::Success) {
    throw SingularCovariance("kl_gaussian: covariance not positive definite");
  }
  double logdet_p = 0.0, logdet_q = 0.0;
  const Matrix lp = llt_p.matrixL();
  const Matrix lq = llt_q.matrixL();
  for (Eigen::Index i = 0; i < d; ++i) {
    logdet_p += 2.0 * std::log(lp(i, i));
    logdet_q += 2.0 * std::log(lq(i, i));
  }
  const double trace = llt_q.solve(cp).trace();
  const Vector dm = q.mean - p.mean;
  const double quad = dm.dot(llt_q.solve(dm));
  const double nats = 0.5 * (logdet_q - logdet_p + trace + quad - static_cast<double>(d));
  return nats / kLn2;
}

DivergenceEstimate kl_mc(const GaussianMixture& p, const GaussianMixture& q,
                         Eigen::Index m_samples, const Rng& rng) {
  if (p.dim != q.dim) {
    throw DimensionMismatch("kl_mc: dimensions " + std::to_string(p.dim) + " vs " +
                            std::to_string(q.dim));
  }
  if (m_samples < 1) throw InvalidParams("kl_mc: m_samples must be >= 1");
  constexpr Eigen::Index kChunk = 256;
  constexpr double kDensityFloor = 1e-300;
  const auto chunks = make_chunks(static_cast<size_t>(m_samples), kChunk);
  std::vector<double> sums(chunks.size(), 0.0);
  std::vector<double> sq_sums(chunks.size(), 0.0);
  parallel_chunks(chunks, [&](size_t c, size_t lo, size_t hi) {
    Rng stream = rng.split(static_cast<u64>(c));
    const Eigen::Index n = static_cast<Eigen::Index>(hi - lo);
    const Matrix draws = sample(p, n, stream);
    double acc = 0.0, acc_sq = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const Vector x = draws.col(j);
      const double dp = std::max(std::exp(log_pdf(p, x)), kDensityFloor);
      const double dq = std::max(std::exp(log_pdf(q, x)), kDensityFloor);
      const double r = std::log(dp / dq);
      acc += r;
      acc_sq += r * r;
    }
    sums[c] = acc;
    sq_sums[c] = acc_sq;
  });
  // Fixed-order reduction over chunks.
  double total = 0.0, total_sq = 0.0;
  for (size_t c = 0; c < chunks.size(); ++c) {
    total += sums[c];
    total_sq += sq_sums[c];
  }
  const double m = static_cast<double>(m_samples);
  DivergenceEstimate est;
  est.value = total / m;
  const double var = m > 1 ? std::max(0.0, (total_sq - total * total / m) / (m - 1.0)) : 0.0;
  est.std_error = std::sqrt(var / m);
  est.mc_samples = m_samples;
  est.direction = Direction::PToQ;
  est.unit = "nats";
  return est;
}

double rad(double d_pq, double d_qp) {
  if (d_pq < 0.0 || d_qp < 0.0) {
    throw NegativeInput("rad: directed divergences must be nonnegative");
  }
  if (d_pq == 0.0 || d_qp == 0.0) return 0.0;
  return (d_pq * d_qp) / (d_pq + d_qp);
}

std::vector<RankedLabel> mdd_classify(
    const Matrix& probe_data, const std::vector<std::pair<std::string, GaussianMixture>>& gallery,
    const Rng& rng, const MddOptions& opts) {
  if (gallery.empty()) throw InvalidParams("mdd_classify: empty gallery");
  const MdlSelection probe =
      select_mdl(probe_data, opts.max_components, opts.cov_kind, rng.split("probe-fit"), opts.em);
  std::vector<RankedLabel> ranked(gallery.size());
  for (size_t g = 0; g < gallery.size(); ++g) {
    const DivergenceEstimate est =
        kl_mc(probe.mixture, gallery[g].second, opts.m_samples, rng.split(gallery[g].first));
    ranked[g] = {gallery[g].first, est.value};
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const RankedLabel& a, const RankedLabel& b) {
    return a.divergence < b.divergence;
  });
  return ranked;
}

}  // namespace mm
