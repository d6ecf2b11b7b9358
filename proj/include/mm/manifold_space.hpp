#pragma once

#include "mm/common.hpp"
#include "mm/dataset.hpp"
#include "mm/errors.hpp"
#include "mm/subspace.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace mm {

// ---------------------------------------------------------------------------
// Set-to-set distance matrix
// ---------------------------------------------------------------------------

// Symmetric zero-diagonal matrix of 1 - cmsm_similarity between every pair of
// appearance manifolds; each manifold is represented by the principal subspace
// of its raw frame vectors.  Pairs are evaluated in parallel with a fixed
// partition, so the result does not depend on the worker count.
Matrix pairwise_cmsm_matrix(const std::vector<FaceSet>& manifolds,
                            const LinearSubspace& constraint);

// ---------------------------------------------------------------------------
// Constraint refinement
// ---------------------------------------------------------------------------

// Bootstraps a corpus-specific constraint subspace from a generic one:
//  1. cluster the manifolds at a high-precision and a high-recall distance
//     threshold (t_precision <= t_recall), giving N_h and N_l classes;
//  2. set the confidence  alpha = 1 - (N_h - N_l) / (M - 1)  in the
//     data-specific estimate;
//  3. build that estimate from the high-precision provisional classes (pooled
//     frames per class -> principal subspace -> constraint_subspace with the
//     generic dimension);
//  4. return the top eigenvectors of
//       alpha * Bs Bs' + (1 - alpha) * Bg Bg'
//     truncated to the generic constraint's dimension.
LinearSubspace refine_constraint(const LinearSubspace& generic,
                                 const std::vector<FaceSet>& manifolds,
                                 double t_precision, double t_recall);

// ---------------------------------------------------------------------------
// Metric repair and embedding
// ---------------------------------------------------------------------------

// Shortest-path completion (Floyd-Warshall) of a symmetric nonnegative
// zero-diagonal dissimilarity matrix.  Output <= input element-wise, satisfies
// the triangle inequality exactly, and is an exact fixed point: repairing a
// repaired matrix changes nothing.
Matrix metric_repair(const Matrix& distances);

struct ManifoldSpaceEmbedding {
  Matrix points;            // M x e, one row per manifold
  double stress = 0.0;      // relative Frobenius error of distance reconstruction
  Matrix source_distances;  // the input distance matrix
  // More than 20% of the double-centered spectral mass was negative: the
  // dissimilarities are far from Euclidean and the embedding is lossy.
  bool negative_eigenmass_warning = false;
};

// Classical multi-dimensional scaling: double-center -0.5 * J D^2 J and embed
// on the top-e positive eigenvalues.  e = -1 picks the smallest dimension
// capturing 95% of the positive eigenmass, capped at 10.
ManifoldSpaceEmbedding mds_embed(const Matrix& distances, Eigen::Index e = -1);

// ---------------------------------------------------------------------------
// Clustering in the embedded space
// ---------------------------------------------------------------------------

// Transitive closure of the pairwise relation D(i,j) <= threshold: connected
// components of the threshold graph, labelled contiguously from 0 in order of
// first occurrence.
std::vector<int> isotropic_cluster(const Matrix& distances, double threshold);

struct ClassGaussian {
  Vector mean;
  Matrix covariance;
  double support = 0.0;      // total per-manifold support of the members
  bool regularized = false;  // ridge was needed to keep the covariance usable
};

struct ClusterState {
  std::vector<int> assignment;        // per-manifold class id, contiguous from 0
  std::vector<ClassGaussian> classes;
  std::vector<double> supports;       // per-manifold sample counts n(j)
  double description_length = 0.0;    // weighted DL of the final model
};

struct AnisotropicOptions {
  double threshold = -20.0;   // merge while the DL change is below this
  bool use_printed_dl = false;  // alternative DL bookkeeping (see weighted_dl)
  double ridge = 1e-6;        // diagonal loading for degenerate class scatter
};

// Weighted description length of a hard-assigned Gaussian-per-class model in
// the embedding space.  The default form is
//   DL_w = 0.5 * N_E * log2(n_total) - C * sum_j n(j) log2 p(m_j) / sum_j n(j)
// with N_E the free parameter count and C the class count; use_printed_dl
// replaces the weighted mean by the plain sum of weighted log-likelihoods.
double weighted_dl(const ManifoldSpaceEmbedding& embedding,
                   const std::vector<int>& assignment,
                   const std::vector<double>& supports,
                   const AnisotropicOptions& opts = {});

// Agglomerative refinement of a seed assignment: fit one Gaussian per class,
// repeatedly merge the pair with the most negative DL change while that change
// stays below opts.threshold, refitting after every merge.  Ties break on the
// lowest (i, j) pair.
ClusterState anisotropic_merge(const ManifoldSpaceEmbedding& embedding,
                               const std::vector<int>& seed_assignment,
                               const std::vector<double>& supports,
                               const AnisotropicOptions& opts = {});

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

// Per-class members, supports and Gaussian parameters, plus the final DL.
nlohmann::json cluster_report(const ClusterState& state,
                              const std::vector<std::string>& manifold_ids);

}  // namespace mm
