#include "mm/illum.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mm/io.hpp"
#include "mm/subspace.hpp"

namespace mm {

std::string pose_name(PoseLabel label) {
  switch (label) {
    case PoseLabel::Left: return "left";
    case PoseLabel::Front: return "front";
    case PoseLabel::Right: return "right";
  }
  return "front";
}

double parallax_measure(const Eigen::Vector2d& eye1, const Eigen::Vector2d& eye2,
                        const Eigen::Vector2d& nostril1, const Eigen::Vector2d& nostril2) {
  const double eye_distance = (eye1 - eye2).norm();
  if (eye_distance < 1e-12) throw CoincidentEyes("parallax_measure: eye points coincide");
  const double eye_mid_x = 0.5 * (eye1.x() + eye2.x());
  const double nostril_mid_x = 0.5 * (nostril1.x() + nostril2.x());
  return (eye_mid_x - nostril_mid_x) / eye_distance;
}

PoseClusterModel fit_pose_clusters(const std::vector<double>& eta_samples) {
  const size_t n = eta_samples.size();
  if (n < 3) throw DegenerateClusters("fit_pose_clusters: needs at least 3 samples");
  std::vector<double> sorted = eta_samples;
  std::sort(sorted.begin(), sorted.end());
  double centers[3] = {sorted[n / 6], sorted[n / 2], sorted[(5 * n) / 6]};
  std::vector<int> assign(n, -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::abs(sorted[i] - centers[0]);
      for (int c = 1; c < 3; ++c) {
        const double d = std::abs(sorted[i] - centers[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    double sums[3] = {0, 0, 0};
    int counts[3] = {0, 0, 0};
    for (size_t i = 0; i < n; ++i) {
      sums[assign[i]] += sorted[i];
      ++counts[assign[i]];
    }
    for (int c = 0; c < 3; ++c) {
      if (counts[c] == 0) throw DegenerateClusters("fit_pose_clusters: empty cluster");
      centers[c] = sums[c] / counts[c];
    }
    if (!changed) break;
  }
  PoseClusterModel model;
  double sq[3] = {0, 0, 0};
  int counts[3] = {0, 0, 0};
  for (size_t i = 0; i < n; ++i) {
    const int c = assign[i];
    sq[c] += (sorted[i] - centers[c]) * (sorted[i] - centers[c]);
    ++counts[c];
  }
  // Clusters come out in ascending-center order because the data was sorted
  // and centers were seeded in order; enforce it anyway.
  int order[3] = {0, 1, 2};
  std::sort(order, order + 3, [&centers](int a, int b) { return centers[a] < centers[b]; });
  for (int c = 0; c < 3; ++c) {
    model.means[c] = centers[order[c]];
    model.stds[c] = std::sqrt(sq[order[c]] / counts[order[c]]);
    if (!(model.stds[c] > 0.0)) {
      throw DegenerateClusters("fit_pose_clusters: cluster has zero spread");
    }
  }
  if (!(model.means[0] < model.means[1] && model.means[1] < model.means[2])) {
    throw DegenerateClusters("fit_pose_clusters: cluster means coincide");
  }
  return model;
}

PoseLabel assign_pose(const PoseClusterModel& model, double eta) {
  int best = 0;
  double best_log = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < 3; ++c) {
    const double z = (eta - model.means[c]) / model.stds[c];
    const double log_density = -0.5 * z * z - std::log(model.stds[c]);
    if (log_density > best_log) {  // ties keep the lower-mean label
      best_log = log_density;
      best = c;
    }
  }
  return static_cast<PoseLabel>(best);
}

IlluminationSubspace learn_illumination_subspace(const std::vector<std::vector<Matrix>>& corpus,
                                                 double energy, PoseLabel pose) {
  if (corpus.empty()) throw SingleIllumination("learn_illumination_subspace: empty corpus");
  bool multi = false;
  for (const auto& person : corpus) {
    int nonempty = 0;
    for (const auto& m : person) {
      if (m.cols() > 0) ++nonempty;
    }
    if (nonempty >= 2) multi = true;
  }
  if (!multi) {
    throw SingleIllumination(
        "learn_illumination_subspace: no person observed under >= 2 conditions");
  }
  Eigen::Index d = 0, total = 0;
  for (const auto& person : corpus) {
    for (const auto& m : person) {
      if (m.cols() == 0) continue;
      if (d == 0) d = m.rows();
      if (m.rows() != d) {
        throw DimensionMismatch("learn_illumination_subspace: frame dimensions differ");
      }
      total += m.cols();
    }
  }
  Matrix centered(d, total);
  Eigen::Index at = 0;
  for (const auto& person : corpus) {
    Vector mean = Vector::Zero(d);
    Eigen::Index count = 0;
    for (const auto& m : person) {
      if (m.cols() == 0) continue;
      mean += m.rowwise().sum();
      count += m.cols();
    }
    if (count == 0) continue;
    mean /= static_cast<double>(count);
    for (const auto& m : person) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) centered.col(at++) = m.col(c) - mean;
    }
  }
  IlluminationSubspace out;
  out.pose = pose;
  try {
    const LinearSubspace sub = pca_subspace_energy(centered, energy, false);
    out.basis = sub.basis;
    out.eigenvalues = sub.eigenvalues;
    out.negligible = sub.eigenvalues.size() == 0 || sub.eigenvalues[0] <= 1e-12;
  } catch (const TooFewPoints&) {
    // Scatter is numerically zero: report a 1-D placeholder and flag it.
    out.basis = Matrix::Zero(d, 1);
    out.basis(0, 0) = 1.0;
    out.eigenvalues = Vector::Zero(1);
    out.negligible = true;
  }
  return out;
}

ReferenceClusterStats factor_reference_cluster(const Matrix& frames, Eigen::Index principal_dim,
                                               double omega) {
  if (frames.cols() < 2) throw TooFewPoints("factor_reference_cluster: needs >= 2 frames");
  if (principal_dim < 1) throw InvalidParams("factor_reference_cluster: principal_dim >= 1");
  const Eigen::Index d = frames.rows();
  ReferenceClusterStats stats;
  stats.mean = frames.rowwise().mean();
  Matrix centered = frames.colwise() - stats.mean;
  Matrix cov = (centered * centered.transpose()) / static_cast<double>(frames.cols());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Eigen::Index q = std::min(principal_dim, d);
  Matrix principal(d, q);
  Vector principal_vals(q);
  for (Eigen::Index i = 0; i < q; ++i) {
    principal_vals[i] = std::max(eig.eigenvalues()[d - 1 - i], 0.0);
    principal.col(i) = eig.eigenvectors().col(d - 1 - i);
  }
  double noise = omega * principal_vals.sum();
  if (!(noise > 0.0)) noise = 1e-12;
  stats.basis.resize(d, d);
  stats.lambdas.resize(d);
  stats.basis.leftCols(q) = principal;
  stats.lambdas.head(q) = principal_vals.cwiseMax(noise);
  if (d > q) {
    // Complement of the principal directions via full QR of the basis.
    Eigen::HouseholderQR<Matrix> qr(principal);
    const Matrix full_q = qr.householderQ() * Matrix::Identity(d, d);
    stats.basis.rightCols(d - q) = full_q.rightCols(d - q);
    stats.lambdas.tail(d - q).setConstant(noise);
  }
  return stats;
}

Vector mahalanobis_illum_correct(const Vector& x, const Matrix& illum_basis,
                                 const ReferenceClusterStats& reference) {
  if (x.size() != illum_basis.rows() || x.size() != reference.basis.rows()) {
    throw DimensionMismatch("mahalanobis_illum_correct: shapes disagree");
  }
  if ((reference.lambdas.array() <= 0.0).any()) {
    throw InvalidParams("mahalanobis_illum_correct: reference eigenvalues must be positive");
  }
  // S = B2 L2^-1 B2'; work with W = L2^-1/2 B2' B so that B' S B = W' W.
  const Vector inv_sqrt = reference.lambdas.cwiseSqrt().cwiseInverse();
  const Matrix w = inv_sqrt.asDiagonal() * (reference.basis.transpose() * illum_basis);
  const Vector residual = inv_sqrt.asDiagonal() * (reference.basis.transpose() * (reference.mean - x));
  const Matrix normal = w.transpose() * w;
  Eigen::LDLT<Matrix> ldlt(normal);
  if (ldlt.info() != Eigen::Success) {
    throw SingularNormalEquations("mahalanobis_illum_correct: decomposition failed");
  }
  const Vector rhs = w.transpose() * residual;
  const Vector a = ldlt.solve(rhs);
  if (!((normal * a - rhs).norm() <= 1e-6 * (rhs.norm() + 1.0))) {
    throw SingularNormalEquations("mahalanobis_illum_correct: normal equations are singular");
  }
  return x + illum_basis * a;
}

double pose_cluster_distance(const Matrix& corrected_frames, const Matrix& reference_frames) {
  if (corrected_frames.cols() == 0 || reference_frames.cols() == 0) {
    throw TooFewPoints("pose_cluster_distance: empty cluster");
  }
  if (corrected_frames.rows() != reference_frames.rows()) {
    throw DimensionMismatch("pose_cluster_distance: frame dimensions differ");
  }
  return (corrected_frames.rowwise().mean() - reference_frames.rowwise().mean()).norm();
}

namespace {

double parzen_density(const std::vector<double>& samples, double bandwidth, double at) {
  double acc = 0.0;
  for (const double s : samples) {
    const double z = (at - s) / bandwidth;
    acc += std::exp(-0.5 * z * z);
  }
  return acc / (static_cast<double>(samples.size()) * bandwidth * std::sqrt(2.0 * kPi));
}

double silverman_bandwidth(std::vector<double> samples, double fallback_scale) {
  const size_t n = samples.size();
  std::sort(samples.begin(), samples.end());
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double var = 0.0;
  for (const double s : samples) var += (s - mean) * (s - mean);
  const double sd = std::sqrt(var / n);
  const double q1 = samples[n / 4];
  const double q3 = samples[(3 * n) / 4];
  const double iqr = q3 - q1;
  double spread = sd;
  if (iqr > 0.0) spread = std::min(spread, iqr / 1.34);
  double h = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
  if (!(h > 0.0)) h = std::max(1e-3 * fallback_scale, 1e-9);
  return h;
}

double rbf_value(const std::vector<RbfTerm>& terms, double d) {
  double acc = 0.0;
  for (const auto& t : terms) {
    const double z = (d - t.center) / t.spread;
    acc += t.weight * std::exp(-0.5 * z * z) / (t.spread * std::sqrt(2.0 * kPi));
  }
  return acc;
}

}  // namespace

LikelihoodRatioModel fit_likelihood_ratio(const std::vector<double>& intra_distances,
                                          const std::vector<double>& inter_distances,
                                          int n_terms, bool monotone) {
  if (intra_distances.empty() || inter_distances.empty()) {
    throw TooFewPoints("fit_likelihood_ratio: both distance lists must be nonempty");
  }
  if (n_terms < 1) throw InvalidParams("fit_likelihood_ratio: n_terms must be >= 1");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const double d : intra_distances) {
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  for (const double d : inter_distances) {
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  if (!(hi > lo)) hi = lo + 1.0;
  const double range = hi - lo;
  const double h_intra = silverman_bandwidth(intra_distances, range);
  const double h_inter = silverman_bandwidth(inter_distances, range);

  // Parzen ratio over a fixed grid; keep its local peaks as fit targets.
  constexpr int kRatioGrid = 512;
  std::vector<double> grid(kRatioGrid), ratio(kRatioGrid);
  for (int k = 0; k < kRatioGrid; ++k) {
    grid[k] = lo + range * static_cast<double>(k) / (kRatioGrid - 1);
    const double num = parzen_density(intra_distances, h_intra, grid[k]);
    const double den = parzen_density(inter_distances, h_inter, grid[k]);
    ratio[k] = num / std::max(den, 1e-12);
  }
  std::vector<int> peaks;
  for (int k = 0; k < kRatioGrid; ++k) {
    const bool left_ok = k == 0 || ratio[k] >= ratio[k - 1];
    const bool right_ok = k + 1 == kRatioGrid || ratio[k] >= ratio[k + 1];
    const bool strict = (k > 0 && ratio[k] > ratio[k - 1]) ||
                        (k + 1 < kRatioGrid && ratio[k] > ratio[k + 1]) || kRatioGrid == 1;
    if (left_ok && right_ok && strict) peaks.push_back(k);
  }
  if (peaks.empty()) peaks.push_back(0);  // flat ratio: anchor one target

  LikelihoodRatioModel model;
  model.monotone = monotone;
  model.domain_lo = lo;
  model.domain_hi = hi;
  const double spread = std::max(0.1 * range, 1e-9);
  model.terms.resize(static_cast<size_t>(n_terms));
  for (int j = 0; j < n_terms; ++j) {
    model.terms[static_cast<size_t>(j)].center =
        n_terms == 1 ? 0.5 * (lo + hi) : lo + range * static_cast<double>(j) / (n_terms - 1);
    model.terms[static_cast<size_t>(j)].spread = spread;
  }
  Matrix design(static_cast<Eigen::Index>(peaks.size()), n_terms);
  Vector target(static_cast<Eigen::Index>(peaks.size()));
  for (size_t p = 0; p < peaks.size(); ++p) {
    target[static_cast<Eigen::Index>(p)] = ratio[static_cast<size_t>(peaks[p])];
    for (int j = 0; j < n_terms; ++j) {
      const auto& t = model.terms[static_cast<size_t>(j)];
      const double z = (grid[static_cast<size_t>(peaks[p])] - t.center) / t.spread;
      design(static_cast<Eigen::Index>(p), j) =
          std::exp(-0.5 * z * z) / (t.spread * std::sqrt(2.0 * kPi));
    }
  }
  const Vector weights = design.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(target);
  for (int j = 0; j < n_terms; ++j) model.terms[static_cast<size_t>(j)].weight = weights[j];

  constexpr int kEnvelopeGrid = 1025;
  model.envelope.resize(kEnvelopeGrid);
  for (int k = 0; k < kEnvelopeGrid; ++k) {
    const double d = lo + range * static_cast<double>(k) / (kEnvelopeGrid - 1);
    model.envelope[k] = std::max(rbf_value(model.terms, d), 0.0);
  }
  if (monotone) {
    for (int k = kEnvelopeGrid - 2; k >= 0; --k) {
      model.envelope[k] = std::max(model.envelope[k], model.envelope[k + 1]);
    }
  }
  return model;
}

double evaluate_lr(const LikelihoodRatioModel& model, double d) {
  if (model.envelope.size() == 0) return std::max(rbf_value(model.terms, d), 0.0);
  const Eigen::Index n = model.envelope.size();
  if (d <= model.domain_lo) return model.envelope[0];
  if (d >= model.domain_hi) return model.envelope[n - 1];
  const double t = (d - model.domain_lo) / (model.domain_hi - model.domain_lo) *
                   static_cast<double>(n - 1);
  const auto k = static_cast<Eigen::Index>(std::floor(t));
  const double frac = t - static_cast<double>(k);
  if (k + 1 >= n) return model.envelope[n - 1];
  return (1.0 - frac) * model.envelope[k] + frac * model.envelope[k + 1];
}

double combined_score(const std::vector<LikelihoodRatioModel>& models,
                      const std::vector<std::optional<double>>& distances) {
  if (models.size() != distances.size()) {
    throw DimensionMismatch("combined_score: one distance slot per model expected");
  }
  double product = 1.0;
  for (size_t i = 0; i < models.size(); ++i) {
    if (distances[i].has_value()) product *= evaluate_lr(models[i], *distances[i]);
  }
  return product;
}

nlohmann::json pose_clusters_to_json(const PoseClusterModel& model) {
  nlohmann::json j;
  j["means"] = {model.means[0], model.means[1], model.means[2]};
  j["stds"] = {model.stds[0], model.stds[1], model.stds[2]};
  return j;
}

PoseClusterModel pose_clusters_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"means", "stds"}, "pose cluster model");
  PoseClusterModel model;
  const auto& means = j.at("means");
  const auto& stds = j.at("stds");
  if (!means.is_array() || !stds.is_array() || means.size() != 3 || stds.size() != 3) {
    throw BadConfig("pose cluster model: means/stds must be length-3 arrays");
  }
  for (int c = 0; c < 3; ++c) {
    model.means[c] = means[static_cast<size_t>(c)].get<double>();
    model.stds[c] = stds[static_cast<size_t>(c)].get<double>();
    if (!(model.stds[c] > 0.0)) throw BadConfig("pose cluster model: stds must be positive");
  }
  if (!(model.means[0] < model.means[1] && model.means[1] < model.means[2])) {
    throw BadConfig("pose cluster model: means must be strictly increasing");
  }
  return model;
}

nlohmann::json likelihood_ratio_to_json(const LikelihoodRatioModel& model) {
  nlohmann::json j;
  nlohmann::json terms = nlohmann::json::array();
  for (const auto& t : model.terms) {
    terms.push_back({{"weight", t.weight}, {"center", t.center}, {"spread", t.spread}});
  }
  j["terms"] = terms;
  j["monotone"] = model.monotone;
  j["domain_lo"] = model.domain_lo;
  j["domain_hi"] = model.domain_hi;
  j["envelope"] = vector_to_json(model.envelope);
  return j;
}

LikelihoodRatioModel likelihood_ratio_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"terms", "monotone", "domain_lo", "domain_hi", "envelope"},
                      "likelihood ratio model");
  LikelihoodRatioModel model;
  for (const auto& t : j.at("terms")) {
    reject_unknown_keys(t, {"weight", "center", "spread"}, "likelihood ratio term");
    RbfTerm term;
    term.weight = t.at("weight").get<double>();
    term.center = t.at("center").get<double>();
    term.spread = t.at("spread").get<double>();
    if (!(term.spread > 0.0)) throw BadConfig("likelihood ratio term: spread must be positive");
    model.terms.push_back(term);
  }
  model.monotone = j.at("monotone").get<bool>();
  model.domain_lo = j.at("domain_lo").get<double>();
  model.domain_hi = j.at("domain_hi").get<double>();
  model.envelope = vector_from_json(j.at("envelope"), "likelihood ratio envelope");
  if (model.monotone) {
    for (Eigen::Index k = 1; k < model.envelope.size(); ++k) {
      if (model.envelope[k] > model.envelope[k - 1] + 1e-12) {
        throw BadConfig("likelihood ratio model: envelope must be non-increasing");
      }
    }
  }
  return model;
}

}  // namespace mm
