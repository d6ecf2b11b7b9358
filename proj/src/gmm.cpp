#include "mm/gmm.hpp"

#include "mm/io.hpp"
#include "mm/simd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lexicographic column comparison; used to canonicalize data order so fits
// are permutation-invariant, and to sort component means.
bool column_less(const Matrix& m, Eigen::Index a, Eigen::Index b) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (m(r, a) < m(r, b)) return true;
    if (m(r, a) > m(r, b)) return false;
  }
  return false;
}

Matrix sort_columns(const Matrix& data) {
  std::vector<Eigen::Index> order(static_cast<size_t>(data.cols()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return column_less(data, a, b); });
  Matrix sorted(data.rows(), data.cols());
  for (Eigen::Index i = 0; i < data.cols(); ++i) sorted.col(i) = data.col(order[static_cast<size_t>(i)]);
  return sorted;
}

bool vector_less(const Vector& a, const Vector& b) {
  for (Eigen::Index r = 0; r < a.size(); ++r) {
    if (a[r] < b[r]) return true;
    if (a[r] > b[r]) return false;
  }
  return false;
}

// Eigen-clamped covariance: eigenvalues below `floor` are raised to it.
Matrix clamp_covariance(const Matrix& cov, double floor) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  Vector values = eig.eigenvalues().cwiseMax(floor);
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

// Factors a full covariance into the rank-q + isotropic-noise form; the noise
// level is the mean of the discarded eigenvalues.
PpcaFactors factor_ppca(const Matrix& cov, Eigen::Index q, double floor) {
  const Eigen::Index d = cov.rows();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  PpcaFactors f;
  f.basis.resize(d, q);
  f.principal.resize(q);
  double residual = 0.0;
  for (Eigen::Index i = 0; i < d - q; ++i) residual += std::max(eig.eigenvalues()[i], 0.0);
  f.noise = (d > q) ? std::max(residual / static_cast<double>(d - q), floor) : floor;
  for (Eigen::Index i = 0; i < q; ++i) {
    // eigenvalues come back ascending; take the top q in descending order
    const Eigen::Index src = d - 1 - i;
    f.principal[i] = std::max(eig.eigenvalues()[src], std::max(f.noise, floor));
    f.basis.col(i) = eig.eigenvectors().col(src);
  }
  return f;
}

// Prepared per-component evaluator: normalization constant plus whatever the
// covariance kind needs for the quadratic form.
struct Evaluator {
  CovKind kind;
  double log_prior;
  double log_norm;  // -D/2 log(2 pi) - 1/2 log|C|
  Vector mean;
  Vector inv_diag;              // Diagonal
  Matrix chol_lower;            // Full: L with C = L L'
  Matrix basis;                 // Ppca
  Vector inv_principal;         // Ppca
  double inv_noise = 0.0;       // Ppca

  double log_density(const Vector& x) const {
    const Vector y = x - mean;
    double quad = 0.0;
    switch (kind) {
      case CovKind::Diagonal:
        quad = y.cwiseProduct(y).dot(inv_diag);
        break;
      case CovKind::Full: {
        const Vector z = chol_lower.triangularView<Eigen::Lower>().solve(y);
        quad = z.squaredNorm();
        break;
      }
      case CovKind::Ppca: {
        const Vector u = basis.transpose() * y;
        quad = (y.squaredNorm() - u.squaredNorm()) * inv_noise +
               u.cwiseProduct(u).dot(inv_principal);
        break;
      }
    }
    return log_norm - 0.5 * quad;
  }
};

Evaluator make_evaluator(const GaussianComponent& comp) {
  Evaluator ev;
  ev.kind = comp.kind;
  ev.log_prior = comp.prior > 0.0 ? std::log(comp.prior) : -kInf;
  ev.mean = comp.mean;
  const Eigen::Index d = comp.mean.size();
  double logdet = 0.0;
  switch (comp.kind) {
    case CovKind::Diagonal:
      ev.inv_diag = comp.diagonal.cwiseInverse();
      for (Eigen::Index i = 0; i < d; ++i) logdet += std::log(comp.diagonal[i]);
      break;
    case CovKind::Full: {
      Eigen::LLT<Matrix> llt(comp.covariance);
      if (llt.info() != Eigen::Success) {
        throw SingularCovariance("component covariance is not positive definite");
      }
      ev.chol_lower = llt.matrixL();
      for (Eigen::Index i = 0; i < d; ++i) logdet += 2.0 * std::log(ev.chol_lower(i, i));
      break;
    }
    case CovKind::Ppca: {
      const Eigen::Index q = comp.ppca.principal.size();
      ev.basis = comp.ppca.basis;
      ev.inv_principal = comp.ppca.principal.cwiseInverse();
      ev.inv_noise = 1.0 / comp.ppca.noise;
      for (Eigen::Index i = 0; i < q; ++i) logdet += std::log(comp.ppca.principal[i]);
      logdet += static_cast<double>(d - q) * std::log(comp.ppca.noise);
      break;
    }
  }
  ev.log_norm = -0.5 * static_cast<double>(d) * std::log(2.0 * kPi) - 0.5 * logdet;
  return ev;
}

std::vector<Evaluator> make_evaluators(const GaussianMixture& mixture) {
  std::vector<Evaluator> evs;
  evs.reserve(mixture.components.size());
  for (const auto& c : mixture.components) evs.push_back(make_evaluator(c));
  return evs;
}

}  // namespace

Matrix GaussianComponent::realized_covariance() const {
  const Eigen::Index d = mean.size();
  switch (kind) {
    case CovKind::Diagonal:
      return diagonal.asDiagonal();
    case CovKind::Full:
      return covariance;
    case CovKind::Ppca: {
      Matrix c = ppca.noise * Matrix::Identity(d, d);
      const Vector excess = (ppca.principal.array() - ppca.noise).max(0.0).matrix();
      c += ppca.basis * excess.asDiagonal() * ppca.basis.transpose();
      return c;
    }
  }
  return Matrix();
}

std::string cov_kind_name(CovKind kind) {
  switch (kind) {
    case CovKind::Diagonal: return "diagonal";
    case CovKind::Full: return "full";
    case CovKind::Ppca: return "ppca";
  }
  return "full";
}

CovKind cov_kind_parse(const std::string& name) {
  if (name == "diagonal") return CovKind::Diagonal;
  if (name == "full") return CovKind::Full;
  if (name == "ppca") return CovKind::Ppca;
  throw InvalidParams("unknown covariance kind '" + name + "'");
}

void canonicalize(GaussianMixture& mixture) {
  const size_t m = mixture.components.size();
  std::vector<size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return vector_less(mixture.components[a].mean, mixture.components[b].mean);
  });
  std::vector<GaussianComponent> sorted;
  sorted.reserve(m);
  Vector evidence(mixture.evidence.size());
  for (size_t i = 0; i < m; ++i) {
    sorted.push_back(std::move(mixture.components[order[i]]));
    if (mixture.evidence.size() > 0) evidence[static_cast<Eigen::Index>(i)] = mixture.evidence[static_cast<Eigen::Index>(order[i])];
  }
  mixture.components = std::move(sorted);
  mixture.evidence = std::move(evidence);
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

KmeansResult fit_kmeans(const Matrix& data, int k, Rng& rng, int restarts, int max_iters) {
  const Eigen::Index n = data.cols();
  const Eigen::Index d = data.rows();
  if (n < k) throw TooFewPoints("k-means needs at least " + std::to_string(k) + " points, got " +
                                std::to_string(n));
  KmeansResult best;
  best.inertia = kInf;
  for (int restart = 0; restart < restarts; ++restart) {
    Rng stream = rng.split(static_cast<u64>(restart) + 1);
    const auto seeds = stream.sample_without_replacement(static_cast<size_t>(n),
                                                         static_cast<size_t>(k));
    Matrix centroids(d, k);
    for (int c = 0; c < k; ++c) centroids.col(c) = data.col(static_cast<Eigen::Index>(seeds[static_cast<size_t>(c)]));
    std::vector<int> labels(static_cast<size_t>(n), -1);
    bool empty_cluster = false;
    for (int iter = 0; iter < max_iters; ++iter) {
      bool changed = false;
      for (Eigen::Index j = 0; j < n; ++j) {
        int arg = 0;
        double dmin = kInf;
        for (int c = 0; c < k; ++c) {
          const double dist = simd::squared_distance(data.col(j).data(), centroids.col(c).data(),
                                                     static_cast<size_t>(d));
          if (dist < dmin) {
            dmin = dist;
            arg = c;
          }
        }
        if (labels[static_cast<size_t>(j)] != arg) {
          labels[static_cast<size_t>(j)] = arg;
          changed = true;
        }
      }
      Matrix sums = Matrix::Zero(d, k);
      std::vector<Eigen::Index> counts(static_cast<size_t>(k), 0);
      for (Eigen::Index j = 0; j < n; ++j) {
        sums.col(labels[static_cast<size_t>(j)]) += data.col(j);
        ++counts[static_cast<size_t>(labels[static_cast<size_t>(j)])];
      }
      empty_cluster = false;
      for (int c = 0; c < k; ++c) {
        if (counts[static_cast<size_t>(c)] == 0) {
          empty_cluster = true;
          break;
        }
        centroids.col(c) = sums.col(c) / static_cast<double>(counts[static_cast<size_t>(c)]);
      }
      if (empty_cluster || !changed) break;
    }
    if (empty_cluster) continue;
    double inertia = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      inertia += simd::squared_distance(data.col(j).data(),
                                        centroids.col(labels[static_cast<size_t>(j)]).data(),
                                        static_cast<size_t>(d));
    }
    if (inertia < best.inertia) {
      best.inertia = inertia;
      best.labels = labels;
      best.centroids = centroids;
    }
  }
  if (!std::isfinite(best.inertia)) {
    throw DegenerateCluster("every k-means restart produced an empty cluster (k = " +
                            std::to_string(k) + ")");
  }
  return best;
}

// ---------------------------------------------------------------------------
// EM
// ---------------------------------------------------------------------------

namespace {

// Responsibilities and data log-likelihood under the current parameters.
struct EStep {
  Matrix resp;  // M x N
  double loglik = 0.0;
};

EStep e_step(const GaussianMixture& mixture, const Matrix& data) {
  const auto evs = make_evaluators(mixture);
  const Eigen::Index m = mixture.order();
  const Eigen::Index n = data.cols();
  EStep out;
  out.resp.resize(m, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Vector x = data.col(j);
    double peak = -kInf;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double lp = evs[static_cast<size_t>(i)].log_prior +
                        evs[static_cast<size_t>(i)].log_density(x);
      out.resp(i, j) = lp;
      peak = std::max(peak, lp);
    }
    double total = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) total += std::exp(out.resp(i, j) - peak);
    const double log_total = peak + std::log(total);
    out.loglik += log_total;
    for (Eigen::Index i = 0; i < m; ++i) out.resp(i, j) = std::exp(out.resp(i, j) - log_total);
  }
  return out;
}

void m_step(GaussianMixture& mixture, const Matrix& data, const Matrix& resp,
            const EmOptions& opts) {
  const Eigen::Index m = mixture.order();
  const Eigen::Index n = data.cols();
  const Eigen::Index d = data.rows();
  for (Eigen::Index i = 0; i < m; ++i) {
    GaussianComponent& comp = mixture.components[static_cast<size_t>(i)];
    const double mass = resp.row(i).sum();
    if (!(mass > 1e-12)) {
      throw DegenerateCluster("component " + std::to_string(i) +
                              " lost all responsibility mass during EM");
    }
    comp.prior = mass / static_cast<double>(n);
    Vector mean = Vector::Zero(d);
    for (Eigen::Index j = 0; j < n; ++j) mean += resp(i, j) * data.col(j);
    mean /= mass;
    comp.mean = mean;
    Matrix cov = Matrix::Zero(d, d);
    for (Eigen::Index j = 0; j < n; ++j) {
      const Vector y = data.col(j) - mean;
      cov.selfadjointView<Eigen::Lower>().rankUpdate(y, resp(i, j));
    }
    cov = Matrix(cov.selfadjointView<Eigen::Lower>());
    cov /= mass;
    switch (comp.kind) {
      case CovKind::Diagonal:
        comp.diagonal = cov.diagonal().cwiseMax(opts.floor);
        break;
      case CovKind::Full:
        comp.covariance = clamp_covariance(cov, opts.floor);
        break;
      case CovKind::Ppca:
        comp.ppca = factor_ppca(cov, std::min<Eigen::Index>(opts.ppca_rank, d), opts.floor);
        break;
    }
  }
}

GaussianMixture init_from_kmeans(const Matrix& data, int n_components, CovKind kind,
                                 const Rng& rng, const EmOptions& opts) {
  Rng kmeans_rng = rng.split("kmeans-init");
  const KmeansResult km =
      fit_kmeans(data, n_components, kmeans_rng, opts.kmeans_restarts, opts.kmeans_iters);
  const Eigen::Index n = data.cols();
  const Eigen::Index d = data.rows();
  GaussianMixture mixture;
  mixture.dim = d;
  for (int c = 0; c < n_components; ++c) {
    GaussianComponent comp;
    comp.kind = kind;
    Eigen::Index count = 0;
    Vector mean = Vector::Zero(d);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (km.labels[static_cast<size_t>(j)] == c) {
        mean += data.col(j);
        ++count;
      }
    }
    mean /= static_cast<double>(count);
    Matrix cov = Matrix::Zero(d, d);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (km.labels[static_cast<size_t>(j)] == c) {
        const Vector y = data.col(j) - mean;
        cov += y * y.transpose();
      }
    }
    cov /= static_cast<double>(count);
    comp.prior = static_cast<double>(count) / static_cast<double>(n);
    comp.mean = mean;
    switch (kind) {
      case CovKind::Diagonal:
        comp.diagonal = cov.diagonal().cwiseMax(opts.floor);
        break;
      case CovKind::Full:
        comp.covariance = clamp_covariance(cov, opts.floor);
        break;
      case CovKind::Ppca:
        comp.ppca = factor_ppca(clamp_covariance(cov, opts.floor),
                                std::min<Eigen::Index>(opts.ppca_rank, d), opts.floor);
        break;
    }
    mixture.components.push_back(std::move(comp));
  }
  return mixture;
}

}  // namespace

EmFit fit_em(const Matrix& data, int n_components, CovKind kind, const Rng& rng,
             const EmOptions& opts) {
  if (n_components < 1) throw InvalidParams("fit_em: n_components must be >= 1");
  if (data.cols() < n_components) {
    throw TooFewPoints("fit_em: " + std::to_string(data.cols()) + " points for " +
                       std::to_string(n_components) + " components");
  }
  // Canonical column order makes the fit invariant to input permutation.
  const Matrix sorted = sort_columns(data);
  EmFit fit;
  fit.mixture = init_from_kmeans(sorted, n_components, kind, rng, opts);
  bool converged = false;
  for (int iter = 0; iter < opts.max_iters; ++iter) {
    const EStep e = e_step(fit.mixture, sorted);
    fit.loglik_trace.push_back(e.loglik);
    const size_t t = fit.loglik_trace.size();
    if (t >= 2 && e.loglik - fit.loglik_trace[t - 2] < opts.tol) {
      fit.mixture.evidence = e.resp.rowwise().sum();
      converged = true;
      break;
    }
    m_step(fit.mixture, sorted, e.resp, opts);
  }
  if (!converged) {
    const EStep e = e_step(fit.mixture, sorted);
    fit.loglik_trace.push_back(e.loglik);
    fit.mixture.evidence = e.resp.rowwise().sum();
  }
  canonicalize(fit.mixture);
  return fit;
}

double parameter_count(const GaussianMixture& mixture) {
  const double m = static_cast<double>(mixture.order());
  const double d = static_cast<double>(mixture.dim);
  double count = m - 1.0;  // priors
  for (const auto& comp : mixture.components) {
    count += d;  // mean
    switch (comp.kind) {
      case CovKind::Diagonal:
        count += d;
        break;
      case CovKind::Full:
        count += d * (d + 1.0) / 2.0;
        break;
      case CovKind::Ppca: {
        // orthonormal basis (Stiefel dimension) + principal values + noise
        const double q = static_cast<double>(comp.ppca.principal.size());
        count += d * q - q * (q + 1.0) / 2.0 + q + 1.0;
        break;
      }
    }
  }
  return count;
}

double description_length(const GaussianMixture& mixture, const Matrix& data) {
  const double n = static_cast<double>(data.cols());
  const double loglik = log_pdf_batch(mixture, data).sum();
  return 0.5 * parameter_count(mixture) * std::log2(n) - loglik / kLn2;
}

MdlSelection select_mdl(const Matrix& data, int max_components, CovKind kind, const Rng& rng,
                        const EmOptions& opts) {
  if (max_components < 1) throw InvalidParams("select_mdl: max_components must be >= 1");
  MdlSelection sel;
  sel.description_lengths = Vector::Constant(max_components, kInf);
  std::string last_error = "no order could be fitted";
  for (int m = 1; m <= max_components; ++m) {
    try {
      EmFit fit = fit_em(data, m, kind, rng.split(static_cast<u64>(m)), opts);
      const double dl = description_length(fit.mixture, data);
      sel.description_lengths[m - 1] = dl;
      if (sel.best_order == 0 || dl < sel.description_lengths[sel.best_order - 1]) {
        sel.best_order = m;
        sel.mixture = std::move(fit.mixture);
      }
    } catch (const TooFewPoints& e) {
      last_error = e.what();
    } catch (const DegenerateCluster& e) {
      last_error = e.what();
    }
  }
  if (sel.best_order == 0) throw DegenerateCluster("select_mdl: " + last_error);
  return sel;
}

PpcaMixtureFit fit_ppca_mixture(const Matrix& data, const Rng& rng,
                                const PpcaMixtureOptions& opts) {
  if (data.cols() <= 3) throw TooFewPoints("fit_ppca_mixture: needs more than 3 points");
  const MdlSelection stage1 =
      select_mdl(data, opts.max_components, CovKind::Diagonal, rng.split("stage1"), opts.em);
  // Mean eigenvalue spectrum across components fixes the intrinsic
  // dimensionality at the requested energy.  Eigenvalues of the
  // responsibility-weighted scatter are used (not the axis-aligned variances),
  // so obliquely oriented low-dimensional structure is still detected.
  const Eigen::Index d = data.rows();
  const Eigen::Index n = data.cols();
  const Eigen::Index m = stage1.mixture.order();
  const auto evs = make_evaluators(stage1.mixture);
  Matrix resp(m, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Vector x = data.col(j);
    double peak = -kInf;
    for (Eigen::Index k = 0; k < m; ++k) {
      resp(k, j) =
          evs[static_cast<size_t>(k)].log_prior + evs[static_cast<size_t>(k)].log_density(x);
      peak = std::max(peak, resp(k, j));
    }
    double total_w = 0.0;
    for (Eigen::Index k = 0; k < m; ++k) {
      resp(k, j) = std::exp(resp(k, j) - peak);
      total_w += resp(k, j);
    }
    resp.col(j) /= total_w;
  }
  Vector spectrum = Vector::Zero(d);
  for (Eigen::Index k = 0; k < m; ++k) {
    const double wsum = resp.row(k).sum();
    if (wsum <= 0.0) continue;
    const Vector mean_k = data * resp.row(k).transpose() / wsum;
    const Matrix centered = data.colwise() - mean_k;
    const Matrix cov_k = centered * resp.row(k).asDiagonal() * centered.transpose() / wsum;
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(cov_k);
    spectrum += eig.eigenvalues().reverse().cwiseMax(0.0);
  }
  spectrum /= static_cast<double>(m);
  const double total = spectrum.sum();
  double acc = 0.0;
  Eigen::Index q = d;
  for (Eigen::Index i = 0; i < d; ++i) {
    acc += spectrum[i];
    if (acc >= opts.energy * total) {
      q = i + 1;
      break;
    }
  }
  EmOptions stage2_opts = opts.em;
  stage2_opts.ppca_rank = q;
  EmFit stage2 = fit_em(data, stage1.best_order, CovKind::Ppca, rng.split("stage2"), stage2_opts);
  PpcaMixtureFit fit;
  fit.rank = q;
  fit.stage1_dl = stage1.description_lengths[stage1.best_order - 1];
  fit.stage2_dl = description_length(stage2.mixture, data);
  fit.mixture = std::move(stage2.mixture);
  return fit;
}

// ---------------------------------------------------------------------------
// Evaluation and sampling
// ---------------------------------------------------------------------------

double log_pdf(const GaussianMixture& mixture, const Vector& x) {
  const auto evs = make_evaluators(mixture);
  double peak = -kInf;
  std::vector<double> terms(evs.size());
  for (size_t i = 0; i < evs.size(); ++i) {
    terms[i] = evs[i].log_prior + evs[i].log_density(x);
    peak = std::max(peak, terms[i]);
  }
  if (!std::isfinite(peak)) return -kInf;
  double total = 0.0;
  for (const double t : terms) total += std::exp(t - peak);
  return peak + std::log(total);
}

Vector log_pdf_batch(const GaussianMixture& mixture, const Matrix& data) {
  const auto evs = make_evaluators(mixture);
  Vector out(data.cols());
  for (Eigen::Index j = 0; j < data.cols(); ++j) {
    const Vector x = data.col(j);
    double peak = -kInf;
    std::vector<double> terms(evs.size());
    for (size_t i = 0; i < evs.size(); ++i) {
      terms[i] = evs[i].log_prior + evs[i].log_density(x);
      peak = std::max(peak, terms[i]);
    }
    if (!std::isfinite(peak)) {
      out[j] = -kInf;
      continue;
    }
    double total = 0.0;
    for (const double t : terms) total += std::exp(t - peak);
    out[j] = peak + std::log(total);
  }
  return out;
}

Matrix sample(const GaussianMixture& mixture, Eigen::Index n, Rng& rng) {
  const Eigen::Index d = mixture.dim;
  Matrix out(d, n);
  // Pre-factor full covariances once.
  std::vector<Matrix> chol(mixture.components.size());
  for (size_t i = 0; i < mixture.components.size(); ++i) {
    if (mixture.components[i].kind == CovKind::Full) {
      Eigen::LLT<Matrix> llt(mixture.components[i].covariance);
      if (llt.info() != Eigen::Success) {
        throw SingularCovariance("cannot sample from a non-positive-definite component");
      }
      chol[i] = llt.matrixL();
    }
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    const double u = rng.next_double();
    size_t pick = mixture.components.size() - 1;
    double cdf = 0.0;
    for (size_t i = 0; i < mixture.components.size(); ++i) {
      cdf += mixture.components[i].prior;
      if (u < cdf) {
        pick = i;
        break;
      }
    }
    const GaussianComponent& comp = mixture.components[pick];
    Vector x = comp.mean;
    switch (comp.kind) {
      case CovKind::Diagonal: {
        for (Eigen::Index r = 0; r < d; ++r) {
          x[r] += std::sqrt(comp.diagonal[r]) * rng.next_normal();
        }
        break;
      }
      case CovKind::Full: {
        Vector z(d);
        for (Eigen::Index r = 0; r < d; ++r) z[r] = rng.next_normal();
        x += chol[pick] * z;
        break;
      }
      case CovKind::Ppca: {
        // C = noise I + U diag(principal - noise) U' draws as an isotropic
        // part plus q in-plane excess directions.
        const double noise_sd = std::sqrt(comp.ppca.noise);
        for (Eigen::Index r = 0; r < d; ++r) x[r] += noise_sd * rng.next_normal();
        const Eigen::Index q = comp.ppca.principal.size();
        Vector z(q);
        for (Eigen::Index r = 0; r < q; ++r) {
          z[r] = std::sqrt(std::max(comp.ppca.principal[r] - comp.ppca.noise, 0.0)) *
                 rng.next_normal();
        }
        x += comp.ppca.basis * z;
        break;
      }
    }
    out.col(j) = x;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

nlohmann::json mixture_to_json(const GaussianMixture& mixture) {
  nlohmann::json j;
  j["dim"] = mixture.dim;
  j["components"] = nlohmann::json::array();
  for (const auto& comp : mixture.components) {
    nlohmann::json cj;
    cj["prior"] = comp.prior;
    cj["mean"] = vector_to_json(comp.mean);
    cj["cov_kind"] = cov_kind_name(comp.kind);
    switch (comp.kind) {
      case CovKind::Diagonal:
        cj["cov_payload"] = vector_to_json(comp.diagonal);
        break;
      case CovKind::Full:
        cj["cov_payload"] = matrix_to_json(comp.covariance);
        break;
      case CovKind::Ppca: {
        nlohmann::json pj;
        pj["basis"] = matrix_to_json(comp.ppca.basis);
        pj["principal"] = vector_to_json(comp.ppca.principal);
        pj["noise"] = comp.ppca.noise;
        cj["cov_payload"] = std::move(pj);
        break;
      }
    }
    j["components"].push_back(std::move(cj));
  }
  if (mixture.evidence.size() > 0) {
    j["evidence"] = vector_to_json(mixture.evidence);
  } else {
    j["evidence"] = nullptr;
  }
  return j;
}

void save_model(const std::string& path, const GaussianMixture& mixture) {
  save_json(path, mixture_to_json(mixture));
}

GaussianMixture mixture_from_json(const nlohmann::json& j, const std::string& path) {
  reject_unknown_keys(j, {"dim", "components", "evidence"}, "model");
  GaussianMixture mixture;
  if (!j.contains("dim") || !j["dim"].is_number_integer()) {
    throw ParseError("model missing integer 'dim': " + path);
  }
  mixture.dim = j["dim"].get<Eigen::Index>();
  if (!j.contains("components") || !j["components"].is_array() || j["components"].empty()) {
    throw ParseError("model needs a non-empty 'components' array: " + path);
  }
  double prior_sum = 0.0;
  for (const auto& cj : j["components"]) {
    reject_unknown_keys(cj, {"prior", "mean", "cov_kind", "cov_payload"}, "model component");
    GaussianComponent comp;
    comp.prior = cj.at("prior").get<double>();
    comp.mean = vector_from_json(cj.at("mean"), "component mean");
    if (comp.mean.size() != mixture.dim) {
      throw ParseError("component mean length != dim in " + path);
    }
    const std::string kind_name = cj.at("cov_kind").get<std::string>();
    try {
      comp.kind = cov_kind_parse(kind_name);
    } catch (const InvalidParams&) {
      throw ParseError("unknown covariance kind '" + kind_name + "' in " + path);
    }
    const auto& payload = cj.at("cov_payload");
    switch (comp.kind) {
      case CovKind::Diagonal:
        comp.diagonal = vector_from_json(payload, "diagonal covariance");
        if (comp.diagonal.size() != mixture.dim) {
          throw ParseError("diagonal covariance length != dim in " + path);
        }
        break;
      case CovKind::Full:
        comp.covariance = matrix_from_json(payload, "full covariance");
        if (comp.covariance.rows() != mixture.dim || comp.covariance.cols() != mixture.dim) {
          throw ParseError("full covariance shape != dim x dim in " + path);
        }
        break;
      case CovKind::Ppca:
        comp.ppca.basis = matrix_from_json(payload.at("basis"), "factored basis");
        comp.ppca.principal = vector_from_json(payload.at("principal"), "principal values");
        comp.ppca.noise = payload.at("noise").get<double>();
        if (comp.ppca.basis.rows() != mixture.dim ||
            comp.ppca.basis.cols() != comp.ppca.principal.size()) {
          throw ParseError("factored covariance shapes inconsistent in " + path);
        }
        if (!(comp.ppca.noise > 0.0)) throw ParseError("noise variance must be positive in " + path);
        break;
    }
    prior_sum += comp.prior;
    mixture.components.push_back(std::move(comp));
  }
  if (std::abs(prior_sum - 1.0) > 1e-9) {
    throw ParseError("component priors sum to " + format_full(prior_sum) + ", expected 1: " + path);
  }
  if (j.contains("evidence") && !j["evidence"].is_null()) {
    mixture.evidence = vector_from_json(j["evidence"], "evidence");
    if (mixture.evidence.size() != mixture.order()) {
      throw ParseError("evidence length != component count in " + path);
    }
  }
  return mixture;
}

GaussianMixture load_model(const std::string& path) {
  return mixture_from_json(load_json(path), path);
}

}  // namespace mm
