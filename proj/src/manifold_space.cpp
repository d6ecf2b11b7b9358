#include "mm/manifold_space.hpp"

#include "mm/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mm {

namespace {

constexpr double kLn2 = 0.6931471805599453;

void check_distance_matrix(const Matrix& d, const char* where) {
  if (d.rows() != d.cols() || d.rows() < 1) {
    throw InvalidParams(std::string(where) + ": distance matrix must be square and nonempty");
  }
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    if (d(i, i) != 0.0) {
      throw InvalidParams(std::string(where) + ": distance matrix diagonal must be zero");
    }
    for (Eigen::Index j = i + 1; j < d.cols(); ++j) {
      if (!(d(i, j) >= 0.0) || !(d(j, i) >= 0.0)) {
        throw InvalidParams(std::string(where) + ": distances must be nonnegative");
      }
      if (d(i, j) != d(j, i)) {
        throw InvalidParams(std::string(where) + ": distance matrix must be symmetric");
      }
    }
  }
}

// First nonzero coordinate of each column made positive, for reproducible
// eigenvector orientation.
void fix_column_signs(Matrix& m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const double v = m(r, c);
      if (v != 0.0) {
        if (v < 0.0) m.col(c) = -m.col(c);
        break;
      }
    }
  }
}

std::vector<int> relabel_contiguous(const std::vector<int>& labels) {
  std::vector<int> out(labels.size());
  std::unordered_map<int, int> remap;
  int next = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = remap.find(labels[i]);
    if (it == remap.end()) it = remap.emplace(labels[i], next++).first;
    out[i] = it->second;
  }
  return out;
}

int class_count(const std::vector<int>& assignment) {
  int top = -1;
  for (int a : assignment) top = std::max(top, a);
  return top + 1;
}

struct FittedClass {
  ClassGaussian gaussian;
  std::vector<int> members;
};

FittedClass fit_class_gaussian(const Matrix& points, const std::vector<int>& members,
                               const std::vector<double>& supports, double ridge) {
  FittedClass out;
  out.members = members;
  const Eigen::Index d = points.cols();
  const Eigen::Index n = static_cast<Eigen::Index>(members.size());
  Vector mean = Vector::Zero(d);
  for (int j : members) mean += points.row(j).transpose();
  mean /= static_cast<double>(n);
  Matrix cov = Matrix::Zero(d, d);
  for (int j : members) {
    const Vector r = points.row(j).transpose() - mean;
    cov.noalias() += r * r.transpose();
  }
  cov /= static_cast<double>(n);
  double support = 0.0;
  for (int j : members) support += supports[static_cast<std::size_t>(j)];

  bool regularized = false;
  Eigen::LLT<Matrix> llt(cov);
  int tries = 0;
  while (llt.info() != Eigen::Success && tries < 60) {
    cov += ridge * Matrix::Identity(d, d);
    regularized = true;
    llt.compute(cov);
    ++tries;
  }
  if (llt.info() != Eigen::Success) {
    throw SingularCovariance("class covariance not positive definite even after ridge loading");
  }
  out.gaussian.mean = mean;
  out.gaussian.covariance = cov;
  out.gaussian.support = support;
  out.gaussian.regularized = regularized;
  return out;
}

double log2_gaussian_density(const ClassGaussian& g, const Vector& x) {
  const Eigen::Index d = g.mean.size();
  const Eigen::LLT<Matrix> llt(g.covariance);
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) log_det += std::log(llt.matrixL()(i, i));
  log_det *= 2.0;
  const Vector diff = x - g.mean;
  const double quad = diff.dot(llt.solve(diff));
  const double log_nat =
      -0.5 * static_cast<double>(d) * std::log(2.0 * kPi) - 0.5 * log_det - 0.5 * quad;
  return log_nat / kLn2;
}

std::vector<std::vector<int>> class_members(const std::vector<int>& assignment) {
  std::vector<std::vector<int>> members(static_cast<std::size_t>(class_count(assignment)));
  for (std::size_t j = 0; j < assignment.size(); ++j) {
    members[static_cast<std::size_t>(assignment[j])].push_back(static_cast<int>(j));
  }
  return members;
}

// Per-class data term: member count times the support-weighted mean of the
// per-manifold log2 densities under the class Gaussian.
double weighted_class_loglik(const Matrix& points, const FittedClass& cls,
                             const std::vector<double>& supports) {
  double weighted_sum = 0.0;
  double weight_total = 0.0;
  for (int j : cls.members) {
    const double w = supports[static_cast<std::size_t>(j)];
    weighted_sum += w * log2_gaussian_density(cls.gaussian, points.row(j).transpose());
    weight_total += w;
  }
  return static_cast<double>(cls.members.size()) * weighted_sum / weight_total;
}

double dl_of_assignment(const Matrix& points, const std::vector<int>& assignment,
                        const std::vector<double>& supports, const AnisotropicOptions& opts) {
  const double d = static_cast<double>(points.cols());
  const int n_classes = class_count(assignment);
  const double n_total = std::accumulate(supports.begin(), supports.end(), 0.0);
  const double per_class_params = d + d * (d + 1.0) / 2.0;
  const double n_params = (n_classes - 1.0) + n_classes * per_class_params;
  double dl = 0.5 * n_params * std::log2(std::max(n_total, 2.0));
  for (const auto& members : class_members(assignment)) {
    const FittedClass cls = fit_class_gaussian(points, members, supports, opts.ridge);
    const double wll = weighted_class_loglik(points, cls, supports);
    if (opts.use_printed_dl) {
      // Literal transcription of the alternative bookkeeping: the data term is
      // the geometric-mean likelihood itself rather than its logarithm.
      dl -= std::exp2(std::clamp(wll, -1020.0, 1020.0));
    } else {
      dl -= wll;
    }
  }
  return dl;
}

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(static_cast<std::size_t>(n)) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int a) {
    while (parent[static_cast<std::size_t>(a)] != a) {
      parent[static_cast<std::size_t>(a)] =
          parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
      a = parent[static_cast<std::size_t>(a)];
    }
    return a;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent[static_cast<std::size_t>(b)] = a;
  }
};

}  // namespace

Matrix pairwise_cmsm_matrix(const std::vector<FaceSet>& manifolds,
                            const LinearSubspace& constraint) {
  const Eigen::Index m = static_cast<Eigen::Index>(manifolds.size());
  if (m < 2) throw InvalidParams("pairwise distance matrix needs at least two manifolds");
  std::vector<LinearSubspace> reps(manifolds.size());
  parallel_for(
      manifolds.size(),
      [&](std::size_t i) { reps[i] = pca_subspace(manifolds[i].frames, kMsmSubspaceDim, false); },
      1);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  pairs.reserve(static_cast<std::size_t>(m * (m - 1) / 2));
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) pairs.emplace_back(i, j);
  }
  Matrix d = Matrix::Zero(m, m);
  parallel_for(
      pairs.size(),
      [&](std::size_t k) {
        const auto [i, j] = pairs[k];
        const double s = cmsm_similarity(reps[static_cast<std::size_t>(i)],
                                         reps[static_cast<std::size_t>(j)], constraint);
        d(i, j) = d(j, i) = 1.0 - s;
      },
      1);
  return d;
}

LinearSubspace refine_constraint(const LinearSubspace& generic,
                                 const std::vector<FaceSet>& manifolds, double t_precision,
                                 double t_recall) {
  if (!(t_precision <= t_recall)) {
    throw InvalidParams("high-precision threshold must not exceed the high-recall one");
  }
  const Matrix d = pairwise_cmsm_matrix(manifolds, generic);
  const std::vector<int> high = isotropic_cluster(d, t_precision);
  const std::vector<int> low = isotropic_cluster(d, t_recall);
  const int n_high = class_count(high);
  const int n_low = class_count(low);
  const double m = static_cast<double>(manifolds.size());
  const double alpha = 1.0 - static_cast<double>(n_high - n_low) / (m - 1.0);

  // Corpus-specific constraint from the high-precision provisional classes.
  std::vector<LinearSubspace> class_subspaces;
  Eigen::Index total_frames = 0;
  for (const auto& members : class_members(high)) {
    Eigen::Index cols = 0;
    for (int j : members) cols += manifolds[static_cast<std::size_t>(j)].frames.cols();
    Matrix pooled(manifolds.front().frames.rows(), cols);
    Eigen::Index at = 0;
    for (int j : members) {
      const Matrix& f = manifolds[static_cast<std::size_t>(j)].frames;
      pooled.middleCols(at, f.cols()) = f;
      at += f.cols();
    }
    class_subspaces.push_back(pca_subspace(pooled, kMsmSubspaceDim, false));
    total_frames += cols;
  }
  const LinearSubspace specific = constraint_subspace(class_subspaces, generic.dim());

  // Eigenspace mixing: spectral decomposition of the convex projector
  // combination via the factored form J J' with J = [sqrt(a) Bs, sqrt(1-a) Bg].
  Matrix joint(generic.ambient_dim(), specific.dim() + generic.dim());
  joint.leftCols(specific.dim()) = std::sqrt(alpha) * specific.basis;
  joint.rightCols(generic.dim()) = std::sqrt(1.0 - alpha) * generic.basis;
  Eigen::BDCSVD<Matrix> svd(joint, Eigen::ComputeThinU);
  const Vector sv = svd.singularValues();
  Eigen::Index rank = 0;
  const double peak = sv.size() > 0 ? sv(0) : 0.0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > 1e-9 * std::max(peak, 1.0)) ++rank;
  }
  const Eigen::Index keep = std::min(generic.dim(), rank);
  if (keep < 1) throw RankDeficient("constraint mixing produced an empty eigenspace");

  LinearSubspace out;
  out.basis = svd.matrixU().leftCols(keep);
  fix_column_signs(out.basis);
  out.eigenvalues = sv.head(keep).array().square().cwiseMin(1.0).cwiseMax(0.0);
  out.mean = Vector();
  out.sample_count = total_frames;
  out.truncated = keep < generic.dim();
  return out;
}

Matrix metric_repair(const Matrix& distances) {
  check_distance_matrix(distances, "metric_repair");
  Matrix r = distances;
  const Eigen::Index n = r.rows();
  // Run relaxation sweeps to an exact fixed point so that a second repair is a
  // bit-for-bit no-op even under floating-point rounding.
  bool changed = true;
  while (changed) {
    changed = false;
    for (Eigen::Index k = 0; k < n; ++k) {
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
          const double via = r(i, k) + r(k, j);
          if (via < r(i, j)) {
            r(i, j) = via;
            changed = true;
          }
        }
      }
    }
  }
  return r;
}

ManifoldSpaceEmbedding mds_embed(const Matrix& distances, Eigen::Index e) {
  check_distance_matrix(distances, "mds_embed");
  if (e != -1 && e < 1) throw InvalidParams("embedding dimension must be >= 1 (or -1 for auto)");
  const Eigen::Index n = distances.rows();

  const Matrix d2 = distances.array().square();
  const Matrix j = Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
  Matrix b = -0.5 * j * d2 * j;
  b = 0.5 * (b + b.transpose()).eval();
  const Eigen::SelfAdjointEigenSolver<Matrix> es(b);
  if (es.info() != Eigen::Success) {
    throw SingularCovariance("double-centered Gram matrix eigendecomposition failed");
  }

  const Vector evals = es.eigenvalues();  // ascending
  double positive_mass = 0.0;
  double negative_mass = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (evals(i) > 0.0) positive_mass += evals(i);
    else negative_mass -= evals(i);
  }

  Eigen::Index n_positive = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (evals(i) > 0.0) ++n_positive;
  }

  Eigen::Index dim;
  if (e == -1) {
    dim = 1;
    double cum = 0.0;
    for (Eigen::Index c = 0; c < n_positive; ++c) {
      cum += evals(n - 1 - c);
      dim = c + 1;
      if (cum >= 0.95 * positive_mass) break;
    }
    dim = std::min<Eigen::Index>(dim, 10);
  } else {
    dim = std::min(e, n - 1);
  }
  dim = std::max<Eigen::Index>(1, std::min(dim, std::max<Eigen::Index>(n_positive, 1)));

  ManifoldSpaceEmbedding out;
  out.points = Matrix::Zero(n, dim);
  for (Eigen::Index c = 0; c < dim; ++c) {
    const Eigen::Index idx = n - 1 - c;
    if (evals(idx) <= 0.0) break;
    Vector v = es.eigenvectors().col(idx);
    for (Eigen::Index r = 0; r < n; ++r) {
      if (v(r) != 0.0) {
        if (v(r) < 0.0) v = -v;
        break;
      }
    }
    out.points.col(c) = std::sqrt(evals(idx)) * v;
  }
  out.source_distances = distances;
  const double total_mass = positive_mass + negative_mass;
  out.negative_eigenmass_warning = total_mass > 0.0 && negative_mass / total_mass > 0.2;

  double err = 0.0;
  double norm = 0.0;
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index c = 0; c < n; ++c) {
      const double rec = (out.points.row(a) - out.points.row(c)).norm();
      err += (rec - distances(a, c)) * (rec - distances(a, c));
      norm += distances(a, c) * distances(a, c);
    }
  }
  out.stress = norm > 0.0 ? std::sqrt(err / norm) : 0.0;
  return out;
}

std::vector<int> isotropic_cluster(const Matrix& distances, double threshold) {
  check_distance_matrix(distances, "isotropic_cluster");
  if (!(threshold >= 0.0)) throw InvalidParams("clustering threshold must be nonnegative");
  const int n = static_cast<int>(distances.rows());
  UnionFind uf(n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (distances(i, j) <= threshold) uf.unite(i, j);
    }
  }
  std::vector<int> roots(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) roots[static_cast<std::size_t>(i)] = uf.find(i);
  return relabel_contiguous(roots);
}

double weighted_dl(const ManifoldSpaceEmbedding& embedding, const std::vector<int>& assignment,
                   const std::vector<double>& supports, const AnisotropicOptions& opts) {
  const std::size_t n = static_cast<std::size_t>(embedding.points.rows());
  if (assignment.size() != n || supports.size() != n) {
    throw LengthMismatch("assignment and supports must match the embedding size");
  }
  for (double s : supports) {
    if (!(s > 0.0)) throw InvalidParams("per-manifold supports must be positive");
  }
  return dl_of_assignment(embedding.points, relabel_contiguous(assignment), supports, opts);
}

ClusterState anisotropic_merge(const ManifoldSpaceEmbedding& embedding,
                               const std::vector<int>& seed_assignment,
                               const std::vector<double>& supports,
                               const AnisotropicOptions& opts) {
  const std::size_t n = static_cast<std::size_t>(embedding.points.rows());
  if (seed_assignment.size() != n || supports.size() != n) {
    throw LengthMismatch("seed assignment and supports must match the embedding size");
  }
  for (double s : supports) {
    if (!(s > 0.0)) throw InvalidParams("per-manifold supports must be positive");
  }

  std::vector<int> assignment = relabel_contiguous(seed_assignment);
  double current_dl = dl_of_assignment(embedding.points, assignment, supports, opts);

  for (;;) {
    const int n_classes = class_count(assignment);
    if (n_classes < 2) break;
    double best_delta = std::numeric_limits<double>::infinity();
    int best_a = -1;
    int best_b = -1;
    std::vector<int> best_assignment;
    for (int a = 0; a < n_classes; ++a) {
      for (int b = a + 1; b < n_classes; ++b) {
        std::vector<int> candidate = assignment;
        for (int& c : candidate) {
          if (c == b) c = a;
        }
        candidate = relabel_contiguous(candidate);
        const double dl = dl_of_assignment(embedding.points, candidate, supports, opts);
        const double delta = dl - current_dl;
        if (delta < best_delta) {
          best_delta = delta;
          best_a = a;
          best_b = b;
          best_assignment = std::move(candidate);
        }
      }
    }
    (void)best_a;
    (void)best_b;
    if (best_delta < opts.threshold) {
      assignment = std::move(best_assignment);
      current_dl += best_delta;
    } else {
      break;
    }
  }

  ClusterState state;
  state.assignment = assignment;
  state.supports = supports;
  for (const auto& members : class_members(assignment)) {
    state.classes.push_back(
        fit_class_gaussian(embedding.points, members, supports, opts.ridge).gaussian);
  }
  state.description_length = dl_of_assignment(embedding.points, assignment, supports, opts);
  return state;
}

nlohmann::json cluster_report(const ClusterState& state,
                              const std::vector<std::string>& manifold_ids) {
  if (!manifold_ids.empty() && manifold_ids.size() != state.assignment.size()) {
    throw LengthMismatch("manifold id list does not match the assignment");
  }
  nlohmann::json report;
  report["class_count"] = state.classes.size();
  report["description_length"] = state.description_length;
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < state.classes.size(); ++c) {
    nlohmann::json entry;
    entry["id"] = c;
    nlohmann::json members = nlohmann::json::array();
    nlohmann::json member_ids = nlohmann::json::array();
    for (std::size_t j = 0; j < state.assignment.size(); ++j) {
      if (state.assignment[j] == static_cast<int>(c)) {
        members.push_back(j);
        member_ids.push_back(manifold_ids.empty() ? std::to_string(j) : manifold_ids[j]);
      }
    }
    entry["members"] = members;
    entry["member_ids"] = member_ids;
    const ClassGaussian& g = state.classes[c];
    entry["support"] = g.support;
    entry["regularized"] = g.regularized;
    nlohmann::json mean = nlohmann::json::array();
    for (Eigen::Index i = 0; i < g.mean.size(); ++i) mean.push_back(g.mean(i));
    entry["mean"] = mean;
    nlohmann::json cov = nlohmann::json::array();
    for (Eigen::Index r = 0; r < g.covariance.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index cc = 0; cc < g.covariance.cols(); ++cc) row.push_back(g.covariance(r, cc));
      cov.push_back(row);
    }
    entry["covariance"] = cov;
    classes.push_back(entry);
  }
  report["classes"] = classes;
  return report;
}

}  // namespace mm
