#pragma once

#include "mm/common.hpp"
#include "mm/errors.hpp"
#include "mm/rng.hpp"

#include <string>
#include <vector>

#include <json.hpp>

namespace mm {

// ---------------------------------------------------------------------------
// Mixture model types
// ---------------------------------------------------------------------------

enum class CovKind { Diagonal, Full, Ppca };

std::string cov_kind_name(CovKind kind);
CovKind cov_kind_parse(const std::string& name);

// Low-rank-plus-noise factorization: the realized covariance is
//   C = noise * I + basis * diag(principal - noise) * basis'
// with `basis` D x q orthonormal and `principal` the top-q eigenvalues of C.
struct PpcaFactors {
  Matrix basis;      // D x q, orthonormal columns
  Vector principal;  // q principal eigenvalues of C (all >= noise)
  double noise = 0.0;
};

struct GaussianComponent {
  double prior = 1.0;
  Vector mean;
  CovKind kind = CovKind::Full;
  Vector diagonal;    // kind == Diagonal: per-coordinate variances
  Matrix covariance;  // kind == Full
  PpcaFactors ppca;   // kind == Ppca

  // The covariance as an explicit D x D matrix, whatever the kind.
  Matrix realized_covariance() const;
};

struct GaussianMixture {
  Eigen::Index dim = 0;
  std::vector<GaussianComponent> components;
  // Per-component accumulated responsibility mass E_i = sum_j p(i|x_j);
  // size 0 when not populated.
  Vector evidence;

  Eigen::Index order() const { return static_cast<Eigen::Index>(components.size()); }
};

// Sorts components by lexicographically compared means (evidence follows the
// permutation) so that serialized models are reproducible.
void canonicalize(GaussianMixture& mixture);

// ---------------------------------------------------------------------------
// Estimation
// ---------------------------------------------------------------------------

struct KmeansResult {
  std::vector<int> labels;
  Matrix centroids;  // D x k
  double inertia = 0.0;
};

// Best-inertia k-means over `restarts` seeded restarts; restarts that end
// with an empty cluster are discarded.  Throws DegenerateCluster if every
// restart fails, TooFewPoints if fewer points than clusters.
KmeansResult fit_kmeans(const Matrix& data, int k, Rng& rng, int restarts = 10,
                        int max_iters = 100);

struct EmOptions {
  int max_iters = 300;
  double tol = 1e-6;           // convergence when the log-likelihood gain drops below
  double floor = 1e-6;         // lower bound on eigen/diagonal covariance values
  int kmeans_restarts = 10;
  int kmeans_iters = 100;
  Eigen::Index ppca_rank = 1;  // rank q when kind == Ppca
};

struct EmFit {
  GaussianMixture mixture;
  // Data log-likelihood after every EM iteration (natural log); the fit
  // guarantees this sequence is non-decreasing.
  std::vector<double> loglik_trace;
};

// Expectation-Maximization with k-means initialization.  Data is D x N, one
// observation per column; the fit is invariant to column order.
EmFit fit_em(const Matrix& data, int n_components, CovKind kind, const Rng& rng,
             const EmOptions& opts = {});

// Number of free parameters of the mixture (enters the description length).
double parameter_count(const GaussianMixture& mixture);

// Two-part description length in bits:
//   L = 1/2 * parameter_count * log2(N) - log2 P(data | mixture)
double description_length(const GaussianMixture& mixture, const Matrix& data);

struct MdlSelection {
  GaussianMixture mixture;
  Vector description_lengths;  // entry m-1 = DL of the m-component fit (+inf if it failed)
  int best_order = 0;
};

// Fits 1..max_components and keeps the description-length minimizer.
MdlSelection select_mdl(const Matrix& data, int max_components, CovKind kind, const Rng& rng,
                        const EmOptions& opts = {});

struct PpcaMixtureOptions {
  int max_components = 3;
  double energy = 0.95;  // spectral energy retained when choosing the rank
  EmOptions em = {};
};

struct PpcaMixtureFit {
  GaussianMixture mixture;
  Eigen::Index rank = 0;   // intrinsic dimensionality found in stage 1
  double stage1_dl = 0.0;  // description length of the diagonal fit
  double stage2_dl = 0.0;  // description length of the factored refit
};

// Two-stage estimation: a diagonal mixture selected by description length
// fixes the component count and (via its mean eigenvalue spectrum) the
// intrinsic rank; the data is then refit with rank-q factored components.
PpcaMixtureFit fit_ppca_mixture(const Matrix& data, const Rng& rng,
                                const PpcaMixtureOptions& opts = {});

// ---------------------------------------------------------------------------
// Evaluation and sampling
// ---------------------------------------------------------------------------

double log_pdf(const GaussianMixture& mixture, const Vector& x);
Vector log_pdf_batch(const GaussianMixture& mixture, const Matrix& data);

// n draws, one per column; component chosen by prior, then a normal draw.
Matrix sample(const GaussianMixture& mixture, Eigen::Index n, Rng& rng);

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

void save_model(const std::string& path, const GaussianMixture& mixture);
GaussianMixture load_model(const std::string& path);

// JSON form used by save_model/load_model; `context` names the source in
// parse errors.
nlohmann::json mixture_to_json(const GaussianMixture& mixture);
GaussianMixture mixture_from_json(const nlohmann::json& j, const std::string& context);

}  // namespace mm
