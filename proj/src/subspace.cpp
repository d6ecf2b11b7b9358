#include "mm/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mm {

namespace {

constexpr double kRankCut = 1e-12;  // relative eigenvalue cut for rank decisions

void fix_sign_pair(Eigen::Ref<Matrix> a, Eigen::Ref<Matrix> b, Eigen::Index col) {
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    if (std::abs(a(r, col)) > 1e-12) {
      if (a(r, col) < 0.0) {
        a.col(col) = -a.col(col);
        b.col(col) = -b.col(col);
      }
      return;
    }
  }
}

void fix_sign(Eigen::Ref<Matrix> m, Eigen::Index col) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (std::abs(m(r, col)) > 1e-12) {
      if (m(r, col) < 0.0) m.col(col) = -m.col(col);
      return;
    }
  }
}

// Full spectrum (descending) and matching directions of X X'/N, via the Gram
// matrix when the ambient dimension exceeds the sample count.
struct Spectrum {
  Vector values;  // descending
  Matrix dirs;    // D x k
};

Spectrum data_spectrum(const Matrix& x) {
  const Eigen::Index d = x.rows();
  const Eigen::Index n = x.cols();
  Spectrum s;
  if (d <= n) {
    Matrix scatter = (x * x.transpose()) / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(scatter);
    s.values.resize(d);
    s.dirs.resize(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      s.values[i] = eig.eigenvalues()[d - 1 - i];
      s.dirs.col(i) = eig.eigenvectors().col(d - 1 - i);
    }
  } else {
    Matrix gram = (x.transpose() * x) / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
    s.values.resize(n);
    s.dirs.resize(d, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index src = n - 1 - i;
      const double lambda = eig.eigenvalues()[src];
      s.values[i] = lambda;
      if (lambda > 0.0) {
        s.dirs.col(i) = x * eig.eigenvectors().col(src) /
                        std::sqrt(lambda * static_cast<double>(n));
      } else {
        s.dirs.col(i).setZero();
      }
    }
  }
  for (Eigen::Index i = 0; i < s.dirs.cols(); ++i) fix_sign(s.dirs, i);
  return s;
}

LinearSubspace build_subspace(const Matrix& data, bool subtract_mean,
                              const std::function<Eigen::Index(const Vector&)>& pick_dim) {
  if (data.cols() < 2) throw TooFewPoints("pca_subspace: needs at least 2 points");
  LinearSubspace sub;
  sub.sample_count = data.cols();
  Matrix x = data;
  if (subtract_mean) {
    sub.mean = data.rowwise().mean();
    x.colwise() -= sub.mean;
  }
  const Spectrum s = data_spectrum(x);
  const double peak = std::max(s.values.size() ? s.values[0] : 0.0, 0.0);
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < s.values.size(); ++i) {
    if (s.values[i] > kRankCut * std::max(peak, 1.0)) ++rank;
  }
  Eigen::Index want = pick_dim(s.values);
  if (want > rank) {
    sub.truncated = true;
    want = rank;
  }
  if (want < 1) throw TooFewPoints("pca_subspace: data has rank 0");
  sub.basis = s.dirs.leftCols(want);
  sub.eigenvalues = s.values.head(want);
  return sub;
}

}  // namespace

LinearSubspace pca_subspace(const Matrix& data, Eigen::Index dim, bool subtract_mean) {
  if (dim < 1) throw InvalidParams("pca_subspace: dim must be >= 1");
  return build_subspace(data, subtract_mean, [dim](const Vector&) { return dim; });
}

LinearSubspace pca_subspace_energy(const Matrix& data, double energy, bool subtract_mean) {
  if (!(energy > 0.0 && energy <= 1.0)) {
    throw InvalidParams("pca_subspace_energy: energy must be in (0, 1]");
  }
  return build_subspace(data, subtract_mean, [energy](const Vector& values) {
    const double total = values.cwiseMax(0.0).sum();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      acc += std::max(values[i], 0.0);
      if (acc >= energy * total) return i + 1;
    }
    return values.size();
  });
}

PrincipalAngles principal_angles(const LinearSubspace& u1, const LinearSubspace& u2) {
  if (u1.ambient_dim() != u2.ambient_dim()) {
    throw DimensionMismatch("principal_angles: ambient dimensions differ");
  }
  const Matrix product = u1.basis.transpose() * u2.basis;
  Eigen::JacobiSVD<Matrix> svd(product, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Index k = std::min(u1.dim(), u2.dim());
  PrincipalAngles out;
  out.correlations = svd.singularValues().head(k).cwiseMin(1.0).cwiseMax(0.0);
  out.pairs_a = u1.basis * svd.matrixU().leftCols(k);
  out.pairs_b = u2.basis * svd.matrixV().leftCols(k);
  for (Eigen::Index i = 0; i < k; ++i) fix_sign_pair(out.pairs_a, out.pairs_b, i);
  return out;
}

double msm_similarity(const LinearSubspace& u1, const LinearSubspace& u2, int n_angles) {
  if (n_angles < 1) throw InvalidParams("msm_similarity: n_angles must be >= 1");
  const PrincipalAngles pa = principal_angles(u1, u2);
  const Eigen::Index k = std::min<Eigen::Index>(n_angles, pa.correlations.size());
  return pa.correlations.head(k).mean();
}

LinearSubspace constraint_subspace(const std::vector<LinearSubspace>& subspaces,
                                   Eigen::Index retain_dim) {
  if (subspaces.empty()) throw InvalidParams("constraint_subspace: empty input");
  const Eigen::Index d = subspaces.front().ambient_dim();
  double total_count = 0.0;
  Matrix weighted = Matrix::Zero(d, d);
  for (const auto& sub : subspaces) {
    if (sub.ambient_dim() != d) {
      throw DimensionMismatch("constraint_subspace: mixed ambient dimensions");
    }
    const double n_i = static_cast<double>(std::max<Eigen::Index>(sub.sample_count, 1));
    weighted.selfadjointView<Eigen::Lower>().rankUpdate(sub.basis, n_i);
    total_count += n_i;
  }
  weighted = Matrix(weighted.selfadjointView<Eigen::Lower>());
  weighted *= static_cast<double>(subspaces.size()) / total_count;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(weighted);
  // Keep directions with eigenvalue < 1: the classes' subspaces disagree there.
  constexpr double kOneTol = 1e-9;
  std::vector<Eigen::Index> kept;
  for (Eigen::Index i = 0; i < d; ++i) {
    if (eig.eigenvalues()[i] < 1.0 - kOneTol) kept.push_back(i);
  }
  if (kept.empty()) {
    throw AllEigenvaluesLarge("constraint_subspace: no eigenvalue below 1");
  }
  // `kept` is ascending in eigenvalue; truncate to the smallest few if asked.
  if (retain_dim > 0 && static_cast<Eigen::Index>(kept.size()) > retain_dim) {
    kept.resize(static_cast<size_t>(retain_dim));
  }
  LinearSubspace out;
  out.sample_count = static_cast<Eigen::Index>(total_count);
  const Eigen::Index k = static_cast<Eigen::Index>(kept.size());
  out.basis.resize(d, k);
  out.eigenvalues.resize(k);
  // Store descending to match the subspace convention.
  for (Eigen::Index i = 0; i < k; ++i) {
    const Eigen::Index src = kept[static_cast<size_t>(k - 1 - i)];
    out.eigenvalues[i] = std::max(eig.eigenvalues()[src], 0.0);
    out.basis.col(i) = eig.eigenvectors().col(src);
    fix_sign(out.basis, i);
  }
  return out;
}

namespace {

// Coordinates of `basis` in the constraint space, re-orthonormalized by thin
// QR; throws ProjectedRankZero when the projection annihilates the basis.
Matrix project_and_orthonormalize(const Matrix& basis, const LinearSubspace& constraint) {
  const Matrix coords = constraint.basis.transpose() * basis;  // d_c x d
  Eigen::ColPivHouseholderQR<Matrix> qr(coords);
  qr.setThreshold(1e-10);
  const Eigen::Index rank = qr.rank();
  if (rank == 0) {
    throw ProjectedRankZero("projection through the constraint subspace has rank 0");
  }
  const Matrix q = qr.householderQ() * Matrix::Identity(coords.rows(), rank);
  return q;
}

}  // namespace

double cmsm_similarity(const LinearSubspace& u1, const LinearSubspace& u2,
                       const LinearSubspace& constraint, int n_angles) {
  if (u1.ambient_dim() != constraint.ambient_dim() ||
      u2.ambient_dim() != constraint.ambient_dim()) {
    throw DimensionMismatch("cmsm_similarity: constraint lives in a different space");
  }
  LinearSubspace p1, p2;
  p1.basis = project_and_orthonormalize(u1.basis, constraint);
  p2.basis = project_and_orthonormalize(u2.basis, constraint);
  p1.eigenvalues = Vector::Ones(p1.basis.cols());
  p2.eigenvalues = Vector::Ones(p2.basis.cols());
  return msm_similarity(p1, p2, n_angles);
}

// ---------------------------------------------------------------------------
// Boosted angle weighting
// ---------------------------------------------------------------------------

BoostResult boost_angle_weights(const std::vector<Vector>& in_class_sets,
                                const std::vector<Vector>& out_class_sets, int rounds) {
  if (in_class_sets.empty() || out_class_sets.empty()) {
    throw InvalidParams("boost_angle_weights: both training sets must be nonempty");
  }
  const Eigen::Index n_angles = in_class_sets.front().size();
  const size_t n = in_class_sets.size() + out_class_sets.size();
  Matrix samples(n_angles, static_cast<Eigen::Index>(n));
  Vector labels(static_cast<Eigen::Index>(n));  // +1 in-class, -1 out-of-class
  {
    Eigen::Index j = 0;
    for (const auto& v : in_class_sets) {
      if (v.size() != n_angles) throw DimensionMismatch("boost_angle_weights: ragged cosines");
      samples.col(j) = v;
      labels[j] = 1.0;
      ++j;
    }
    for (const auto& v : out_class_sets) {
      if (v.size() != n_angles) throw DimensionMismatch("boost_angle_weights: ragged cosines");
      samples.col(j) = v;
      labels[j] = -1.0;
      ++j;
    }
  }
  // Candidate thresholds per angle: midpoints of the sorted training values.
  std::vector<std::vector<double>> thresholds(static_cast<size_t>(n_angles));
  for (Eigen::Index a = 0; a < n_angles; ++a) {
    std::vector<double> values(samples.row(a).data(), samples.row(a).data() + n);
    // Row data is strided; copy explicitly.
    for (size_t j = 0; j < n; ++j) values[j] = samples(a, static_cast<Eigen::Index>(j));
    std::sort(values.begin(), values.end());
    for (size_t j = 0; j + 1 < n; ++j) {
      if (values[j] < values[j + 1]) {
        thresholds[static_cast<size_t>(a)].push_back(0.5 * (values[j] + values[j + 1]));
      }
    }
    if (thresholds[static_cast<size_t>(a)].empty()) {
      // All values equal: a single vacuous threshold below them.
      thresholds[static_cast<size_t>(a)].push_back(values[0] - 1.0);
    }
  }
  Vector sample_weights = Vector::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n));
  BoostResult result;
  result.weights.weights = Vector::Zero(n_angles);
  Vector strong_votes = Vector::Zero(static_cast<Eigen::Index>(n));
  for (int t = 0; t < rounds; ++t) {
    double best_err = std::numeric_limits<double>::infinity();
    Eigen::Index best_angle = 0;
    double best_threshold = 0.0;
    for (Eigen::Index a = 0; a < n_angles; ++a) {
      for (const double c : thresholds[static_cast<size_t>(a)]) {
        double err = 0.0;
        for (size_t j = 0; j < n; ++j) {
          const double h = samples(a, static_cast<Eigen::Index>(j)) > c ? 1.0 : -1.0;
          if (h != labels[static_cast<Eigen::Index>(j)]) {
            err += sample_weights[static_cast<Eigen::Index>(j)];
          }
        }
        if (err < best_err) {
          best_err = err;
          best_angle = a;
          best_threshold = c;
        }
      }
    }
    if (best_err >= 0.5) {
      // No stump beats chance under the fixed polarity: flag and stop.
      result.weights.not_separable = true;
      break;
    }
    const double eps = std::clamp(best_err, 1e-10, 1.0 - 1e-10);
    const double alpha = 0.5 * std::log((1.0 - eps) / eps);
    result.weights.weights[best_angle] += alpha;
    for (size_t j = 0; j < n; ++j) {
      const Eigen::Index jj = static_cast<Eigen::Index>(j);
      const double h = samples(best_angle, jj) > best_threshold ? 1.0 : -1.0;
      sample_weights[jj] *= std::exp(-alpha * labels[jj] * h);
      strong_votes[jj] += alpha * h;
    }
    sample_weights /= sample_weights.sum();
    double strong_err = 0.0;
    for (size_t j = 0; j < n; ++j) {
      const Eigen::Index jj = static_cast<Eigen::Index>(j);
      const double pred = strong_votes[jj] > 0.0 ? 1.0 : -1.0;
      if (pred != labels[jj]) strong_err += 1.0;
    }
    result.round_training_error.push_back(strong_err / static_cast<double>(n));
    if (best_err == 0.0) break;  // perfectly separated; further rounds change nothing
  }
  if (result.weights.weights.sum() <= 0.0) result.weights.not_separable = true;
  return result;
}

double weighted_angle_similarity(const Vector& correlations, const Vector& weights) {
  const Eigen::Index k = std::min(correlations.size(), weights.size());
  if (k < 1) throw InvalidParams("weighted_angle_similarity: empty inputs");
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    num += weights[i] * correlations[i];
    den += weights[i];
  }
  if (den <= 0.0) throw InvalidParams("weighted_angle_similarity: weights sum to 0");
  return num / (static_cast<double>(k) * den);
}

// ---------------------------------------------------------------------------
// Piece-wise matching
// ---------------------------------------------------------------------------

namespace {

LinearSubspace component_patch(const GaussianComponent& comp) {
  LinearSubspace sub;
  sub.basis = comp.ppca.basis;
  sub.eigenvalues = comp.ppca.principal;
  sub.sample_count = 1;
  return sub;
}

}  // namespace

double bompa_similarity(const FaceSet& set_a, const FaceSet& set_b,
                        const Vector& weights_global, const Vector& weights_local,
                        const Rng& rng, const BompaOptions& opts) {
  if (!(opts.alpha >= 0.0 && opts.alpha <= 1.0)) {
    throw InvalidParams("bompa_similarity: alpha must lie in [0, 1]");
  }
  const LinearSubspace global_a = pca_subspace(set_a.frames, opts.global_dim, false);
  const LinearSubspace global_b = pca_subspace(set_b.frames, opts.global_dim, false);
  const PrincipalAngles global_pa = principal_angles(global_a, global_b);
  const double f_global = weighted_angle_similarity(global_pa.correlations, weights_global);
  double f_local = 0.0;
  if (opts.alpha > 0.0) {
    const PpcaMixtureFit mix_a = fit_ppca_mixture(set_a.frames, rng.split("patches-a"), opts.mixture);
    const PpcaMixtureFit mix_b = fit_ppca_mixture(set_b.frames, rng.split("patches-b"), opts.mixture);
    bool first = true;
    for (const auto& ca : mix_a.mixture.components) {
      for (const auto& cb : mix_b.mixture.components) {
        const PrincipalAngles pa = principal_angles(component_patch(ca), component_patch(cb));
        const double f = weighted_angle_similarity(pa.correlations, weights_local);
        if (first || f > f_local) {
          f_local = f;
          first = false;
        }
      }
    }
  }
  return (1.0 - opts.alpha) * f_global + opts.alpha * f_local;
}

// ---------------------------------------------------------------------------
// Most-probable-mode matching
// ---------------------------------------------------------------------------

MpmmResult mpmm_similarity(const LinearSubspace& s1, const LinearSubspace& s2, double noise) {
  if (s1.ambient_dim() != s2.ambient_dim()) {
    throw DimensionMismatch("mpmm_similarity: ambient dimensions differ");
  }
  if (!(noise > 0.0)) throw InvalidParams("mpmm_similarity: noise must be positive");
  const Eigen::Index d = s1.ambient_dim();
  // C_i^-1 = (1/noise) (I - B_i B_i') + B_i diag(1/lambda_i) B_i'.  The sum
  // A = C1^-1 + C2^-1 acts as (2/noise) I on the complement of
  // span(B1, B2), which cannot hold the smallest eigenvalue whenever a
  // principal eigenvalue exceeds the noise floor, so the eigenproblem is
  // solved inside the span.
  Matrix joint(d, s1.dim() + s2.dim());
  joint << s1.basis, s2.basis;
  Eigen::ColPivHouseholderQR<Matrix> qr(joint);
  qr.setThreshold(1e-10);
  const Eigen::Index r = qr.rank();
  if (r == 0) throw InvalidParams("mpmm_similarity: empty subspaces");
  const Matrix q = qr.householderQ() * Matrix::Identity(d, r);
  auto restricted_inverse = [&](const LinearSubspace& s) {
    const Matrix bq = s.basis.transpose() * q;  // d_i x r
    Matrix a = (Matrix::Identity(r, r) - bq.transpose() * bq) / noise;
    a += bq.transpose() * s.eigenvalues.cwiseInverse().asDiagonal() * bq;
    return a;
  };
  const Matrix a_span = restricted_inverse(s1) + restricted_inverse(s2);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a_span);
  MpmmResult result;
  result.lambda_min = eig.eigenvalues()[0];
  result.mode = q * eig.eigenvectors().col(0);
  for (Eigen::Index i = 0; i < d; ++i) {
    if (std::abs(result.mode[i]) > 1e-12) {
      if (result.mode[i] < 0.0) result.mode = -result.mode;
      break;
    }
  }
  double log_prod = std::log(result.lambda_min);
  for (Eigen::Index i = 0; i < s1.eigenvalues.size(); ++i) log_prod += std::log(s1.eigenvalues[i]);
  for (Eigen::Index i = 0; i < s2.eigenvalues.size(); ++i) log_prod += std::log(s2.eigenvalues[i]);
  result.score = std::exp(-0.5 * log_prod);
  return result;
}

}  // namespace mm
