#pragma once

// Sequence-to-sequence recognition that is learnt to be robust to lighting:
// frames of one sequence are pose-matched to another over geodesic structure,
// re-lit by local linear reconstruction, and the residual difference-of-logs
// samples are scored under a mixture model of generic illumination effects.

#include <vector>

#include "mm/common.hpp"
#include "mm/dataset.hpp"
#include "mm/errors.hpp"
#include "mm/gmm.hpp"
#include "mm/rng.hpp"

namespace mm {

// All-pairs geodesic distances over the symmetrized K-nearest-neighbour graph
// of a point list.  `neighbors[i]` holds i's K nearest points (ascending
// Euclidean distance, excluding i); `dist` is completed by the Floyd-Warshall
// recurrence and is finite everywhere (construction throws otherwise).
struct GeodesicGraph {
  Eigen::Index n = 0;
  int k = 0;
  Matrix dist;
  std::vector<std::vector<Eigen::Index>> neighbors;
};

// Connected-component labels (0-based, by lowest member index) of the
// symmetrized K-NN graph.
std::vector<int> knn_components(const std::vector<Vector>& vectors, int k);

// Throws DisconnectedGraph when the K-NN graph has more than one component.
GeodesicGraph build_geodesics(const std::vector<Vector>& vectors, int k);

// Flattened distance-transformed edge map of a frame; nearby head poses give
// nearby signatures while lighting mostly cancels.
Vector pose_signature(const Matrix& image);

struct GaConfig {
  int population = 20;
  int elite = 2;
  double mutation = 0.05;
  double migration = 0.20;
  double crossover = 0.80;
  int max_generations = 200;
};

struct PoseMatch {
  std::vector<Eigen::Index> mapping;  // frame i of sequence 1 -> mapping[i] in sequence 2
  double fitness = 0.0;
  double matching_term = 0.0;
  double regularization_term = 0.0;
  std::vector<double> fitness_trace;  // best fitness after each generation
};

// Genetic search for the pose correspondence minimizing
//   sum_j ||s1_j - s2_c(j)||^2
//     + omega * sum_j sum_k  geo2(c(j), c(nbr_k(j))) / geo1(j, nbr_k(j)),
// where nbr_k(j) ranges over j's stored nearest neighbours.  Zero geodesic
// denominators are clamped to the smallest nonzero geodesic of sequence 1.
// Elitism makes the best fitness non-increasing across generations; results
// are deterministic for a given rng.
PoseMatch ga_pose_match(const std::vector<Vector>& sigs1, const std::vector<Vector>& sigs2,
                        const GeodesicGraph& geo1, const GeodesicGraph& geo2, double omega,
                        const GaConfig& cfg, const Rng& rng);

// Convex-affine reconstruction weights: minimize
// ||target - sum_k alpha_k * sig_k|| subject to sum alpha = 1.  When the
// reduced normal system is singular the weights fall back to uniform 1/K and
// `fallback_uniform` is set.
struct ReilluminationWeights {
  Vector alphas;  // length K, sums to 1
  bool fallback_uniform = false;
};

ReilluminationWeights reillumination_weights(const Vector& target_sig,
                                             const std::vector<Vector>& neighbor_sigs);

// Applies the signature-space weights to the neighbour frames.
Vector fine_reilluminate(const Vector& target_sig, const std::vector<Vector>& neighbor_sigs,
                         const std::vector<Vector>& neighbor_frames);

// Per-frame difference of logs: column i = log(a_i + eps) - log(b_i + eps).
Matrix sim_samples(const Matrix& frames_a, const Matrix& frames_b, double log_epsilon = 1.0 / 255.0);

struct GsimConfig {
  int knn_k = 8;
  double omega = 1.0;
  double log_epsilon = 1.0 / 255.0;
  GaConfig ga;
  PpcaMixtureOptions mixture;
};

struct GsimModel {
  GaussianMixture mixture;
  double log_epsilon = 1.0 / 255.0;
  GsimConfig config;  // settings the model was trained with, reused at match time
};

// Re-lights one sequence with another: pose-matches seq1 onto seq2, then
// reconstructs every seq1 frame from its match's neighbourhood in seq2.
// Returns one synthesized frame per seq1 frame (as columns).
Matrix reilluminate_sequence(const FaceSet& seq1, const FaceSet& seq2, const GsimConfig& cfg,
                             const Rng& rng);

// corpus[p][c]: sequence of person p under capture condition c.  Pools the
// difference-of-log samples of every ordered same-person condition pair and
// fits the factored mixture.  Throws SingleIllumination when no person has
// two usable conditions.
GsimModel train_gsim(const std::vector<std::vector<FaceSet>>& corpus, const GsimConfig& cfg,
                     const Rng& rng);

// Mean log-density of the top ceil(top_fraction * N) difference-of-log
// samples obtained by re-lighting `novel` with `gallery_seq`.
double robust_similarity(const FaceSet& novel, const FaceSet& gallery_seq, const GsimModel& model,
                         const Rng& rng, double top_fraction = 0.15);

void save_gsim(const std::string& path, const GsimModel& model);
GsimModel load_gsim(const std::string& path);

}  // namespace mm
