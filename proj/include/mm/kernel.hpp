#pragma once

#include "mm/common.hpp"
#include "mm/dataset.hpp"
#include "mm/errors.hpp"
#include "mm/rng.hpp"

#include <vector>

namespace mm {

// ---------------------------------------------------------------------------
// Kernel PCA with the RBF kernel k(x, y) = exp(-gamma * |x - y|^2)
// ---------------------------------------------------------------------------

struct KpcaModel {
  Matrix support_points;  // D x N
  Matrix alphas;          // N x d, eigenvector coefficients scaled to unit feature-space norm
  Vector eigenvalues;     // d, positive, descending
  Matrix projections;     // d x N, training projections (column j = projection of point j)
  double gamma = 0.380;
  Vector row_means;       // centering statistics of the training kernel matrix
  double grand_mean = 0.0;

  Eigen::Index out_dim() const { return eigenvalues.size(); }
};

inline constexpr double kDefaultKpcaGamma = 0.380;
inline constexpr Eigen::Index kDefaultKpcaDim = 20;

// Double-centers the kernel matrix, eigendecomposes it and keeps the top
// `dim` positive directions (fewer when the centered kernel has lower rank;
// RankDeficient when it has none).
KpcaModel kpca_fit(const Matrix& data, Eigen::Index dim = kDefaultKpcaDim,
                   double gamma = kDefaultKpcaGamma);

Vector kpca_project(const KpcaModel& model, const Vector& x);
Matrix kpca_project_batch(const KpcaModel& model, const Matrix& data);

// Mahalanobis distance of a projected point to the projection-space origin,
// under the training projections' covariance diag(eigenvalues) / N.
double kpca_mahalanobis(const KpcaModel& model, const Vector& projection);

// ---------------------------------------------------------------------------
// RANSAC-robust unfolding
// ---------------------------------------------------------------------------

struct RansacKpcaResult {
  KpcaModel model;             // refit on the best consensus set
  std::vector<bool> inliers;   // per input point: member of the best consensus set
};

// Repeats {draw a minimal subset of dim+1 points, fit, count points whose
// projected Mahalanobis distance to the origin is < threshold}; refits on the
// largest consensus set.  Throws NoConsensus when that set is smaller than
// dim+1.
RansacKpcaResult ransac_kpca(const Matrix& data, Eigen::Index dim, double gamma,
                             double mahal_threshold, int iterations, const Rng& rng);

// ---------------------------------------------------------------------------
// Synthetic affine repopulation
// ---------------------------------------------------------------------------

// Standard deviations of the warp parameters (rotation in radians,
// translation in pixels, skew, scale).
struct AffinePerturbation {
  double sigma_theta = 3.0 * kPi / 180.0;
  double sigma_t = 1.5;
  double sigma_k = 0.05;
  double sigma_s = 0.05;
};

// Appends `per_face` randomly warped copies of every frame.  The warp is
// rotation+translation * skew * scale applied about the image center, with
// parameters drawn from zero-mean normals; bilinear resampling with reflected
// borders.
FaceSet affine_repopulate(const FaceSet& faces, int per_face, const AffinePerturbation& pert,
                          Rng& rng);

// ---------------------------------------------------------------------------
// Robust kernel-space set distance
// ---------------------------------------------------------------------------

struct RobustRadOptions {
  Eigen::Index kpca_dim = kDefaultKpcaDim;
  double gamma = kDefaultKpcaGamma;
  double mahal_threshold = 4.0;
  int ransac_iterations = 50;
  int repopulate_per_face = 0;  // 0 disables synthetic repopulation
  AffinePerturbation pert;
  double gauss_energy = 0.85;   // spectral energy kept by the per-set Gaussian factorization
};

// Set-to-set distance: unfold the (sorted) union with RANSAC-robust kernel
// PCA, keep each set's inliers, optionally repopulate them with affine warps,
// refit on the combined result, project each set and compare the two
// projected Gaussians by the resistor-average of their two directed
// divergences.  Symmetric by construction: the union is sorted and every
// per-set random stream is keyed by the set's content, so swapping the
// arguments cannot change the result.
double robust_kernel_rad(const FaceSet& set_a, const FaceSet& set_b, const Rng& rng,
                         const RobustRadOptions& opts = {});

// Content hash of a matrix (used to key per-set random streams).
u64 hash_matrix(const Matrix& m);

}  // namespace mm
