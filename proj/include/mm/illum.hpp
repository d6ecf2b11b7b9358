#pragma once

// Pose-aware illumination normalization: a parallax-based head-pose measure,
// 1-D pose clustering, a learnt illumination subspace, per-frame
// Mahalanobis-constrained correction toward a reference cluster, and a
// monotone RBF likelihood-ratio combiner over per-pose cluster distances.

#include <optional>
#include <string>
#include <vector>

#include "mm/common.hpp"
#include "mm/errors.hpp"

#include <json.hpp>

namespace mm {

enum class PoseLabel { Left = 0, Front = 1, Right = 2 };

std::string pose_name(PoseLabel label);

// Ratio of the horizontal offset between the eye midpoint and the nostril
// midpoint to the inter-eye distance.  Invariant to translation and uniform
// scaling; not invariant to roll.
double parallax_measure(const Eigen::Vector2d& eye1, const Eigen::Vector2d& eye2,
                        const Eigen::Vector2d& nostril1, const Eigen::Vector2d& nostril2);

// Three 1-D Gaussians over the parallax measure, ordered by mean:
// Left < Front < Right.
struct PoseClusterModel {
  double means[3] = {0, 0, 0};
  double stds[3] = {0, 0, 0};
};

// k-means (k = 3, deterministic quantile seeding) over the parallax samples,
// then a Gaussian per cluster.  Throws DegenerateClusters when a cluster ends
// up empty, has zero spread, or two cluster means coincide.
PoseClusterModel fit_pose_clusters(const std::vector<double>& eta_samples);

// Maximum-density assignment; ties resolve to the lower-mean label.
PoseLabel assign_pose(const PoseClusterModel& model, double eta);

// Principal directions of the pooled within-person scatter, retaining
// `energy` of its variance.  `negligible` is set when the scatter is
// numerically zero (the basis then defaults to the first coordinate axis).
struct IlluminationSubspace {
  Matrix basis;        // D x k, orthonormal columns
  Vector eigenvalues;  // descending
  PoseLabel pose = PoseLabel::Front;
  bool negligible = false;
};

// corpus[p][c] holds the frames (D x N columns) of person p under capture
// condition c.  Throws SingleIllumination unless some person has >= 2
// conditions.
IlluminationSubspace learn_illumination_subspace(const std::vector<std::vector<Matrix>>& corpus,
                                                 double energy = 0.9,
                                                 PoseLabel pose = PoseLabel::Front);

// Factored density of a reference frame cluster: an orthonormal basis split
// into a principal part (top `principal_dim` eigenvectors) and its
// complement, whose shared eigenvalue is omega * sum(principal eigenvalues).
struct ReferenceClusterStats {
  Matrix basis;    // D x D orthonormal, principal columns first
  Vector lambdas;  // matching eigenvalues, complement entries all equal
  Vector mean;
};

ReferenceClusterStats factor_reference_cluster(const Matrix& frames, Eigen::Index principal_dim = 6,
                                               double omega = 2.2e-4);

// Moves x along the illumination subspace to the point closest to the
// reference mean under the reference cluster's Mahalanobis metric:
//   a* = (B' S B)^-1 B' S (mean - x),  S = B2 L2^-1 B2'
// and returns x + B a*.  Throws SingularNormalEquations when the normal
// equations are rank-deficient.
Vector mahalanobis_illum_correct(const Vector& x, const Matrix& illum_basis,
                                 const ReferenceClusterStats& reference);

// Euclidean distance between the two cluster means.
double pose_cluster_distance(const Matrix& corrected_frames, const Matrix& reference_frames);

struct RbfTerm {
  double weight = 0.0;
  double center = 0.0;
  double spread = 1.0;
};

// Likelihood ratio of intra- vs inter-personal cluster distances for one
// pose.  `envelope` caches the monotone non-increasing curve sampled over
// [domain_lo, domain_hi]; evaluation interpolates it linearly (clamped), so
// any evaluated grid is non-increasing.
struct LikelihoodRatioModel {
  std::vector<RbfTerm> terms;
  bool monotone = true;
  double domain_lo = 0.0;
  double domain_hi = 1.0;
  Vector envelope;
};

// Parzen-window ratio estimate (Silverman bandwidths), sampled at its local
// peaks, least-squares fitted with `n_terms` Gaussian RBFs (spread = 10% of
// the observed distance range), then upper-enveloped from the right so the
// curve never increases with distance.
LikelihoodRatioModel fit_likelihood_ratio(const std::vector<double>& intra_distances,
                                          const std::vector<double>& inter_distances,
                                          int n_terms = 6, bool monotone = true);

// Nonnegative likelihood ratio at distance d.
double evaluate_lr(const LikelihoodRatioModel& model, double d);

// Product of evaluate_lr over poses with an observed distance; poses with no
// distance are skipped.  Returns 1 when nothing is observed.
double combined_score(const std::vector<LikelihoodRatioModel>& models,
                      const std::vector<std::optional<double>>& distances);

nlohmann::json pose_clusters_to_json(const PoseClusterModel& model);
PoseClusterModel pose_clusters_from_json(const nlohmann::json& j);
nlohmann::json likelihood_ratio_to_json(const LikelihoodRatioModel& model);
LikelihoodRatioModel likelihood_ratio_from_json(const nlohmann::json& j);

}  // namespace mm
