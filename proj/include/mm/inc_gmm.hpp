#pragma once

#include "mm/common.hpp"
#include "mm/errors.hpp"
#include "mm/gmm.hpp"
#include "mm/rng.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace mm {

// ---------------------------------------------------------------------------
// Streaming mixture state
// ---------------------------------------------------------------------------

// Live model plus the oldest snapshot with the same component count
// ("historical").  The stretch of data absorbed since that snapshot is what
// the order-change tests inspect; components of the two models correspond
// one-to-one by index.
struct IncGmmState {
  GaussianMixture current;     // evidence holds the running E_i
  GaussianMixture historical;  // evidence frozen at snapshot time
  double n_seen = 0.0;
  double n_seen_historical = 0.0;
};

struct IncGmmOptions {
  int seed_points = 20;             // stream prefix used by the batch seed fit
  int seed_max_components = 5;      // order cap of the seed model selection
  double min_split_evidence = 1.0;  // evidence needed on each side of a split
  double floor = 1e-6;              // eigenvalue floor keeping covariances usable
};

// Batch seed: description-length model selection over the first columns of
// the stream; both current and historical start from that fit.
IncGmmState init_incremental(const Matrix& seed_data, const Rng& rng,
                             const IncGmmOptions& opts = {});

// Wraps an existing mixture; evidence defaults to prior * n_seen when the
// mixture does not carry any.
IncGmmState state_from_mixture(const GaussianMixture& mixture, double n_seen);

// ---------------------------------------------------------------------------
// Update machinery
// ---------------------------------------------------------------------------

// One-point update at fixed order: responsibilities of x under the current
// model drive closed-form prior/mean/covariance updates, evidence grows by
// the responsibilities, the count by one.  Priors keep summing to one.
void fixed_update(IncGmmState& state, const Vector& x, double floor = 1e-6);

// Prior, mean and covariance of the data absorbed by component i since the
// historical snapshot, recovered as the moment difference of the current and
// historical component.  Throws NoNewEvidence when nothing was absorbed.
GaussianComponent difference_component(const IncGmmState& state, Eigen::Index i,
                                       double floor = 1e-6);

// Expected description-length change (bits) of explaining n1 draws of p1 and
// n2 draws of p2 with one moment-matched merged Gaussian instead of the
// two-component mixture; positive favors the merge.  Expectations of the data
// likelihood use the closed-form Gaussian product integral.
double expected_dl_delta(const GaussianComponent& p1, double n1, const GaussianComponent& p2,
                         double n2);

struct StepReport {
  int splits_committed = 0;
  int merges_committed = 0;
  bool order_changed() const { return splits_committed > 0 || merges_committed > 0; }
};

// Full streaming step: fixed-order update; then per-component split proposals
// built from the difference components, committed only when the merge test
// keeps the two halves apart; then pairwise expected-DL merging of the
// surviving components.  Any committed change resets the historical snapshot
// to the new model, otherwise the snapshot ages.
StepReport step(IncGmmState& state, const Vector& x, const Rng& rng,
                const IncGmmOptions& opts = {});

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

nlohmann::json state_to_json(const IncGmmState& state);
IncGmmState state_from_json(const nlohmann::json& j, const std::string& context);
void save_checkpoint(const std::string& path, const IncGmmState& state);
IncGmmState load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Synthetic streams
// ---------------------------------------------------------------------------

// 2-D ring segment: radius ~ N(5, 0.1), angle ~ N(0, 0.7), both std devs.
Matrix synth_radial_gaussian(Eigen::Index n, Rng& rng);
// Noisy sinusoid: x ~ U(0, 10), y ~ N(sin x, 0.1).
Matrix synth_sinusoid(Eigen::Index n, Rng& rng);
// Temporal ordering of a point set: start at the minimal-x point, then
// repeatedly append the nearest yet-unused neighbor (ties on distance break
// toward the lower column index).
std::vector<Eigen::Index> temporal_order(const Matrix& points);

}  // namespace mm
