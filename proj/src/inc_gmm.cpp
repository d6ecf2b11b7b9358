#include "mm/inc_gmm.hpp"

#include "mm/io.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

namespace mm {

namespace {

Matrix clamp_floor(const Matrix& cov, double floor) {
  Matrix sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() != Eigen::Success) {
    throw SingularCovariance("covariance eigendecomposition failed");
  }
  Vector vals = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
}

GaussianComponent realize_full(const GaussianComponent& c) {
  if (c.kind == CovKind::Full) return c;
  GaussianComponent out;
  out.prior = c.prior;
  out.mean = c.mean;
  out.kind = CovKind::Full;
  out.covariance = c.realized_covariance();
  return out;
}

double log_gaussian(const Vector& x, const Vector& mean, const Matrix& cov) {
  const Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw SingularCovariance("component covariance not positive definite");
  }
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < cov.rows(); ++i) log_det += std::log(llt.matrixL()(i, i));
  log_det *= 2.0;
  const Vector diff = x - mean;
  const double quad = diff.dot(llt.solve(diff));
  return -0.5 * static_cast<double>(cov.rows()) * std::log(2.0 * kPi) - 0.5 * log_det -
         0.5 * quad;
}

Vector responsibilities(const GaussianMixture& mixture, const Vector& x) {
  const Eigen::Index m = mixture.order();
  Vector logs(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const GaussianComponent& c = mixture.components[static_cast<std::size_t>(i)];
    const double lp = c.prior > 0.0 ? std::log(c.prior) : -1e300;
    logs(i) = lp + log_gaussian(x, c.mean, c.realized_covariance());
  }
  const double peak = logs.maxCoeff();
  Vector p = (logs.array() - peak).exp();
  const double total = p.sum();
  if (!(total > 0.0)) {
    // Every component underflowed identically; fall back to the priors.
    for (Eigen::Index i = 0; i < m; ++i) {
      p(i) = mixture.components[static_cast<std::size_t>(i)].prior;
    }
    return p / p.sum();
  }
  return p / total;
}

void ensure_evidence(GaussianMixture& mixture, double n_seen) {
  if (mixture.evidence.size() == mixture.order()) return;
  mixture.evidence = Vector(mixture.order());
  for (Eigen::Index i = 0; i < mixture.order(); ++i) {
    mixture.evidence(i) = mixture.components[static_cast<std::size_t>(i)].prior * n_seen;
  }
}

// log of the Gaussian product integral  int N(x; mu_a, A) N(x; mu_b, B) dx,
// which equals the density of N(mu_b, A + B) evaluated at mu_a.
double log_product_integral(const Vector& mu_a, const Matrix& a, const Vector& mu_b,
                            const Matrix& b) {
  return log_gaussian(mu_a, mu_b, a + b);
}

double log_sum_exp(double a, double b) {
  const double hi = std::max(a, b);
  if (hi == -std::numeric_limits<double>::infinity()) return hi;
  return hi + std::log(std::exp(a - hi) + std::exp(b - hi));
}

}  // namespace

IncGmmState init_incremental(const Matrix& seed_data, const Rng& rng, const IncGmmOptions& opts) {
  if (seed_data.cols() < 2) throw TooFewPoints("seed stream needs at least two points");
  const Eigen::Index take = std::min<Eigen::Index>(seed_data.cols(), opts.seed_points);
  const Matrix prefix = seed_data.leftCols(take);
  const int max_order =
      std::max(1, std::min<int>(opts.seed_max_components, static_cast<int>(take) / 2));
  MdlSelection sel = select_mdl(prefix, max_order, CovKind::Full, rng.split("inc-gmm-seed"));
  IncGmmState state;
  state.current = sel.mixture;
  for (auto& c : state.current.components) c = realize_full(c);
  ensure_evidence(state.current, static_cast<double>(take));
  state.historical = state.current;
  state.n_seen = static_cast<double>(take);
  state.n_seen_historical = state.n_seen;
  return state;
}

IncGmmState state_from_mixture(const GaussianMixture& mixture, double n_seen) {
  if (mixture.order() < 1) throw InvalidParams("state needs a nonempty mixture");
  if (!(n_seen > 0.0)) throw InvalidParams("n_seen must be positive");
  IncGmmState state;
  state.current = mixture;
  for (auto& c : state.current.components) c = realize_full(c);
  ensure_evidence(state.current, n_seen);
  state.historical = state.current;
  state.n_seen = n_seen;
  state.n_seen_historical = n_seen;
  return state;
}

void fixed_update(IncGmmState& state, const Vector& x, double floor) {
  GaussianMixture& g = state.current;
  if (g.dim != x.size()) {
    throw DimensionMismatch("stream point dimension does not match the model");
  }
  ensure_evidence(g, state.n_seen);
  const Vector p = responsibilities(g, x);
  const double n_new = state.n_seen + 1.0;
  for (Eigen::Index i = 0; i < g.order(); ++i) {
    GaussianComponent& c = g.components[static_cast<std::size_t>(i)];
    if (c.kind != CovKind::Full) c = realize_full(c);
    const double e_old = g.evidence(i);
    const double e_new = e_old + p(i);
    if (e_new > 0.0) {
      const Vector mu_new = (c.mean * e_old + x * p(i)) / e_new;
      const Vector dm = c.mean - mu_new;
      const Vector dx = x - mu_new;
      Matrix cov_new =
          (c.covariance * e_old + e_old * (dm * dm.transpose()) + p(i) * (dx * dx.transpose())) /
          e_new;
      c.mean = mu_new;
      c.covariance = clamp_floor(cov_new, floor);
    }
    c.prior = e_new / n_new;
    g.evidence(i) = e_new;
  }
  state.n_seen = n_new;
}

GaussianComponent difference_component(const IncGmmState& state, Eigen::Index i, double floor) {
  const GaussianMixture& cur = state.current;
  const GaussianMixture& hist = state.historical;
  if (i < 0 || i >= cur.order()) throw InvalidParams("component index out of range");
  if (cur.order() != hist.order()) {
    throw InvalidParams("current and historical models have different orders");
  }
  const double e_cur = cur.evidence.size() > 0 ? cur.evidence(i) : 0.0;
  const double e_hist = hist.evidence.size() > 0 ? hist.evidence(i) : 0.0;
  const double e_diff = e_cur - e_hist;
  const double n_diff = state.n_seen - state.n_seen_historical;
  if (!(e_diff > 0.0) || !(n_diff > 0.0)) {
    throw NoNewEvidence("component absorbed no data since the historical snapshot");
  }
  const GaussianComponent c = realize_full(cur.components[static_cast<std::size_t>(i)]);
  const GaussianComponent h = realize_full(hist.components[static_cast<std::size_t>(i)]);

  GaussianComponent out;
  out.kind = CovKind::Full;
  out.prior = e_diff / n_diff;
  out.mean = (c.mean * e_cur - h.mean * e_hist) / e_diff;
  const Matrix second_cur = (c.covariance + c.mean * c.mean.transpose()) * e_cur;
  const Matrix second_hist = (h.covariance + h.mean * h.mean.transpose()) * e_hist;
  const Matrix cov = (second_cur - second_hist) / e_diff - out.mean * out.mean.transpose();
  out.covariance = clamp_floor(cov, floor);
  return out;
}

double expected_dl_delta(const GaussianComponent& p1, double n1, const GaussianComponent& p2,
                         double n2) {
  if (!(n1 >= 1.0) || !(n2 >= 1.0)) throw InvalidParams("component counts must be >= 1");
  if (p1.mean.size() != p2.mean.size()) {
    throw DimensionMismatch("components live in different dimensions");
  }
  const double d = static_cast<double>(p1.mean.size());
  const Matrix c1 = p1.realized_covariance();
  const Matrix c2 = p2.realized_covariance();
  const double w1 = n1 / (n1 + n2);
  const double w2 = n2 / (n1 + n2);
  const Vector mu_m = w1 * p1.mean + w2 * p2.mean;
  const Vector d1 = p1.mean - mu_m;
  const Vector d2 = p2.mean - mu_m;
  const Matrix cm =
      w1 * (c1 + d1 * d1.transpose()) + w2 * (c2 + d2 * d2.transpose());

  const double l11 = log_product_integral(p1.mean, c1, p1.mean, c1);
  const double l12 = log_product_integral(p1.mean, c1, p2.mean, c2);
  const double l22 = log_product_integral(p2.mean, c2, p2.mean, c2);
  const double lw1 = std::log(w1);
  const double lw2 = std::log(w2);
  const double log2_split = (n1 * log_sum_exp(lw1 + l11, lw2 + l12) +
                             n2 * log_sum_exp(lw1 + l12, lw2 + l22)) /
                            kLn2;
  const double lm1 = log_product_integral(mu_m, cm, p1.mean, c1);
  const double lm2 = log_product_integral(mu_m, cm, p2.mean, c2);
  const double log2_merged = (n1 * lm1 + n2 * lm2) / kLn2;

  return 0.25 * d * (d + 1.0) * std::log2(n1 + n2) - log2_split + log2_merged;
}

StepReport step(IncGmmState& state, const Vector& x, const Rng& rng, const IncGmmOptions& opts) {
  (void)rng;
  StepReport report;
  fixed_update(state, x, opts.floor);

  GaussianMixture& cur = state.current;
  const double n_seen = state.n_seen;

  // Split stage: each component whose window since the snapshot carries enough
  // evidence proposes (historical half, difference half); the proposal is
  // committed only when the expected-DL test refuses to merge the halves back.
  std::vector<GaussianComponent> comps;
  std::vector<double> evidence;
  for (Eigen::Index i = 0; i < cur.order(); ++i) {
    const double e_cur = cur.evidence(i);
    const double e_hist =
        state.historical.evidence.size() > 0 ? state.historical.evidence(i) : 0.0;
    const double e_diff = e_cur - e_hist;
    bool committed = false;
    if (cur.order() == state.historical.order() && e_hist >= opts.min_split_evidence &&
        e_diff >= opts.min_split_evidence && n_seen > state.n_seen_historical) {
      const GaussianComponent diff = difference_component(state, i, opts.floor);
      const GaussianComponent hist =
          realize_full(state.historical.components[static_cast<std::size_t>(i)]);
      const double delta =
          expected_dl_delta(hist, std::max(e_hist, 1.0), diff, std::max(e_diff, 1.0));
      if (delta <= 0.0) {
        GaussianComponent old_part = hist;
        old_part.prior = e_hist / n_seen;
        GaussianComponent new_part = diff;
        new_part.prior = e_diff / n_seen;
        comps.push_back(std::move(old_part));
        evidence.push_back(e_hist);
        comps.push_back(std::move(new_part));
        evidence.push_back(e_diff);
        ++report.splits_committed;
        committed = true;
      }
    }
    if (!committed) {
      comps.push_back(cur.components[static_cast<std::size_t>(i)]);
      evidence.push_back(e_cur);
    }
  }
  if (report.splits_committed > 0) {
    cur.components = std::move(comps);
    cur.evidence = Eigen::Map<Vector>(evidence.data(), static_cast<Eigen::Index>(evidence.size()));
  }

  // Merge stage: most-positive expected-DL pair first, until no pair favors
  // merging.  Ties break toward the lowest (i, j).
  for (;;) {
    const Eigen::Index m = cur.order();
    if (m < 2) break;
    double best_delta = 0.0;
    Eigen::Index best_i = -1;
    Eigen::Index best_j = -1;
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = i + 1; j < m; ++j) {
        const double delta = expected_dl_delta(
            cur.components[static_cast<std::size_t>(i)], std::max(cur.evidence(i), 1.0),
            cur.components[static_cast<std::size_t>(j)], std::max(cur.evidence(j), 1.0));
        if (delta > best_delta) {
          best_delta = delta;
          best_i = i;
          best_j = j;
        }
      }
    }
    if (best_i < 0) break;
    GaussianComponent& a = cur.components[static_cast<std::size_t>(best_i)];
    const GaussianComponent& b = cur.components[static_cast<std::size_t>(best_j)];
    const double ea = cur.evidence(best_i);
    const double eb = cur.evidence(best_j);
    const double e_sum = ea + eb;
    const Matrix ca = a.realized_covariance();
    const Matrix cb = b.realized_covariance();
    const Vector mu = (a.mean * ea + b.mean * eb) / e_sum;
    const Vector da = a.mean - mu;
    const Vector db = b.mean - mu;
    const Matrix cov =
        (ea * (ca + da * da.transpose()) + eb * (cb + db * db.transpose())) / e_sum;
    a.kind = CovKind::Full;
    a.mean = mu;
    a.covariance = clamp_floor(cov, opts.floor);
    a.prior = a.prior + b.prior;
    Vector new_evidence(m - 1);
    for (Eigen::Index k = 0, at = 0; k < m; ++k) {
      if (k == best_j) continue;
      new_evidence(at++) = k == best_i ? e_sum : cur.evidence(k);
    }
    cur.components.erase(cur.components.begin() + best_j);
    cur.evidence = new_evidence;
    ++report.merges_committed;
  }

  if (report.order_changed()) {
    state.historical = state.current;
    state.n_seen_historical = state.n_seen;
  }
  return report;
}

nlohmann::json state_to_json(const IncGmmState& state) {
  nlohmann::json j;
  j["current"] = mixture_to_json(state.current);
  j["historical"] = mixture_to_json(state.historical);
  j["n_seen"] = state.n_seen;
  j["n_seen_historical"] = state.n_seen_historical;
  return j;
}

IncGmmState state_from_json(const nlohmann::json& j, const std::string& context) {
  reject_unknown_keys(j, {"current", "historical", "n_seen", "n_seen_historical"}, context);
  IncGmmState state;
  try {
    state.current = mixture_from_json(j.at("current"), context + ".current");
    state.historical = mixture_from_json(j.at("historical"), context + ".historical");
    state.n_seen = j.at("n_seen").get<double>();
    state.n_seen_historical = j.at("n_seen_historical").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad checkpoint " + context + ": " + e.what());
  }
  if (state.current.order() != state.historical.order()) {
    throw ParseError("checkpoint " + context + " has mismatched model orders");
  }
  return state;
}

void save_checkpoint(const std::string& path, const IncGmmState& state) {
  save_json(path, state_to_json(state));
}

IncGmmState load_checkpoint(const std::string& path) {
  return state_from_json(load_json(path), path);
}

Matrix synth_radial_gaussian(Eigen::Index n, Rng& rng) {
  if (n < 1) throw InvalidParams("sample count must be positive");
  Matrix points(2, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = rng.next_normal(5.0, 0.1);
    const double phi = rng.next_normal(0.0, 0.7);
    points(0, i) = r * std::cos(phi);
    points(1, i) = r * std::sin(phi);
  }
  return points;
}

Matrix synth_sinusoid(Eigen::Index n, Rng& rng) {
  if (n < 1) throw InvalidParams("sample count must be positive");
  Matrix points(2, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = rng.next_uniform(0.0, 10.0);
    points(0, i) = x;
    points(1, i) = rng.next_normal(std::sin(x), 0.1);
  }
  return points;
}

std::vector<Eigen::Index> temporal_order(const Matrix& points) {
  const Eigen::Index n = points.cols();
  if (n < 1) throw InvalidParams("point set is empty");
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  std::vector<Eigen::Index> order;
  order.reserve(static_cast<std::size_t>(n));
  Eigen::Index at = 0;
  for (Eigen::Index i = 1; i < n; ++i) {
    if (points(0, i) < points(0, at)) at = i;
  }
  used[static_cast<std::size_t>(at)] = true;
  order.push_back(at);
  for (Eigen::Index taken = 1; taken < n; ++taken) {
    Eigen::Index best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (used[static_cast<std::size_t>(i)]) continue;
      const double dist = (points.col(i) - points.col(at)).norm();
      if (dist < best_dist) {
        best_dist = dist;
        best = i;
      }
    }
    used[static_cast<std::size_t>(best)] = true;
    order.push_back(best);
    at = best;
  }
  return order;
}

}  // namespace mm
