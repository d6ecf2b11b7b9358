#pragma once

#include "mm/common.hpp"
#include "mm/dataset.hpp"
#include "mm/errors.hpp"
#include "mm/gmm.hpp"
#include "mm/rng.hpp"

#include <vector>

namespace mm {

// ---------------------------------------------------------------------------
// Linear subspaces
// ---------------------------------------------------------------------------

struct LinearSubspace {
  Matrix basis;        // D x d, orthonormal columns
  Vector eigenvalues;  // d, descending, >= 0
  Vector mean;         // size 0 when the fit did not subtract a mean
  Eigen::Index sample_count = 0;
  bool truncated = false;  // requested dimension exceeded the data rank

  Eigen::Index dim() const { return basis.cols(); }
  Eigen::Index ambient_dim() const { return basis.rows(); }
};

inline constexpr Eigen::Index kMsmSubspaceDim = 9;
inline constexpr int kMsmAngles = 3;
inline constexpr Eigen::Index kConstraintDimDefault = 70;

// Top principal directions of X X' / N (subtract_mean=false) or of the data
// covariance (subtract_mean=true).  The basis is truncated to the data rank
// when `dim` exceeds it.
LinearSubspace pca_subspace(const Matrix& data, Eigen::Index dim, bool subtract_mean);
// Same, keeping the smallest dimension whose spectrum holds `energy` of the
// total.
LinearSubspace pca_subspace_energy(const Matrix& data, double energy, bool subtract_mean);

// ---------------------------------------------------------------------------
// Principal angles
// ---------------------------------------------------------------------------

struct PrincipalAngles {
  Vector correlations;  // cosines, descending, clamped to [0,1]
  Matrix pairs_a;       // D x k, principal vectors in span(U1)
  Matrix pairs_b;       // D x k, matched principal vectors in span(U2)
};

// Cosines of the principal angles = singular values of B1' B2; the vector
// pairs are sign-fixed (first nonzero coordinate of each pairs_a column is
// positive, pairs flipped together).
PrincipalAngles principal_angles(const LinearSubspace& u1, const LinearSubspace& u2);

// Mean of the top n_angles correlations.
double msm_similarity(const LinearSubspace& u1, const LinearSubspace& u2,
                      int n_angles = kMsmAngles);

// Eigen-directions of N * sum_i N_i B_i B_i' / sum_i N_i with eigenvalue < 1
// (where the per-class subspaces disagree).  `retain_dim` > 0 keeps only the
// that many smallest-eigenvalue directions.
LinearSubspace constraint_subspace(const std::vector<LinearSubspace>& subspaces,
                                   Eigen::Index retain_dim = -1);

// Projects both bases through the constraint subspace, re-orthonormalizes by
// thin QR and compares with msm_similarity.
double cmsm_similarity(const LinearSubspace& u1, const LinearSubspace& u2,
                       const LinearSubspace& constraint, int n_angles = kMsmAngles);

// ---------------------------------------------------------------------------
// Boosted angle weighting
// ---------------------------------------------------------------------------

struct AngleWeights {
  Vector weights;  // per-angle, nonnegative
  bool not_separable = false;  // no weak learner beat chance during training
};

struct BoostResult {
  AngleWeights weights;
  // Training error of the strong classifier after each boosting round
  // (non-increasing on separable data).
  std::vector<double> round_training_error;
};

// AdaBoost over per-angle threshold stumps (predict in-class when
// cos(theta_i) > C, thresholds scanned over midpoints of the sorted training
// values).  Each item of the training sets is one vector of angle cosines.
BoostResult boost_angle_weights(const std::vector<Vector>& in_class_sets,
                                const std::vector<Vector>& out_class_sets, int rounds = 50);

// Weighted mean correlation as used by the boosted matchers:
//   f = (1/N) * sum_i w_i cos(theta_i) / sum_i w_i,  N = number of angles used
double weighted_angle_similarity(const Vector& correlations, const Vector& weights);

// ---------------------------------------------------------------------------
// Piece-wise (global + local patch) matching
// ---------------------------------------------------------------------------

struct BompaOptions {
  double alpha = 0.5;                 // mix between global and best-local terms
  Eigen::Index global_dim = kMsmSubspaceDim;
  PpcaMixtureOptions mixture = {};    // local patches come from factored mixtures
};

// (1-alpha) * f(global principal angles) + alpha * max over patch pairs of
// f(patch principal angles); patches are the factored components of each
// set's mixture.
double bompa_similarity(const FaceSet& set_a, const FaceSet& set_b,
                        const Vector& weights_global, const Vector& weights_local,
                        const Rng& rng, const BompaOptions& opts = {});

// ---------------------------------------------------------------------------
// Most-probable-mode matching
// ---------------------------------------------------------------------------

struct MpmmResult {
  double score = 0.0;   // (lambda_min * prod principal eigenvalues)^(-1/2)
  Vector mode;          // unit vector maximizing the joint density
  double lambda_min = 0.0;  // smallest eigenvalue of C1^-1 + C2^-1
};

// Both inputs are principal subspaces with their eigenvalues, sharing an
// isotropic noise floor: C_i = noise*(I - B_i B_i') + B_i diag(lambda_i) B_i'.
// The mode is the eigenvector of C1^-1 + C2^-1 with the smallest eigenvalue;
// the score keeps only the data-dependent factors of the joint density peak.
MpmmResult mpmm_similarity(const LinearSubspace& s1, const LinearSubspace& s2, double noise);

}  // namespace mm
