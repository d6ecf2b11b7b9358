#pragma once

// Data-adaptive mixing of two similarity channels (e.g. raw appearance vs a
// band-pass filtered representation).  A mixing weight alpha is learnt as a
// function of the confusion margin observed on a labelled corpus, then applied
// at match time as a convex combination of the per-channel similarities.

#include <functional>

#include "mm/common.hpp"
#include "mm/errors.hpp"

#include <json.hpp>

namespace mm {

enum class Channel { Raw, Filtered };

// Density over (alpha, margin) bins.  values(k, m) is the mass at
// alpha = k*alpha_step, margin = m*mu_step; entries are nonnegative and
// sum(values) * alpha_step * mu_step == 1 after learning.
struct JointDensityGrid {
  Matrix values;
  double alpha_step = 0.02;
  double mu_step = 0.02;
};

// Piecewise-linear mixing weight as a function of the margin abscissa.
struct AlphaFunction {
  Vector abscissae;  // strictly increasing, in [0, 1]
  Vector alphas;     // in [0, 1]; non-decreasing when monotone is set
  bool monotone = false;
};

// similarity(channel, person_a, illum_a, person_b, illum_b) in [0, 1].
// Comparisons are between the sequence of person_a recorded under illum_a and
// the sequence of person_b recorded under illum_b, within one channel.
using CorpusSimilarity =
    std::function<double(Channel, int person_a, int illum_a, int person_b, int illum_b)>;

struct FusionTrainOptions {
  int n_persons = 0;
  int n_illuminations = 0;
  double grid_step = 0.02;        // shared by both axes
  bool sigmoid_update = false;    // accumulate sig(gain*delta)-0.5 instead of delta
  double sigmoid_gain = 10.0;
  double smoothing_sigma = 0.05;  // in domain units (axis spans [0, 1])
};

// Simulates matching every (person, illumination-pair) episode of the corpus,
// scores each candidate mixing weight by the identity-separation it achieves,
// and accumulates the scores over a (weight, margin) grid.  The grid starts
// uniform, is smoothed, clamped at zero and normalized to unit integral.
JointDensityGrid learn_joint_density(const CorpusSimilarity& similarity,
                                     const FusionTrainOptions& opts);

// Per-margin argmax over the weight axis (ties resolved toward the smaller
// weight).  With enforce_monotone the curve is replaced by its running maximum
// and then smoothed with a centered window-3 moving average, which preserves
// monotonicity.
AlphaFunction extract_alpha_function(const JointDensityGrid& density, bool enforce_monotone);

// Linear interpolation of the mixing weight at `mu` (clamped to the grid).
double alpha_at(const AlphaFunction& fn, double mu);

// (1 - alpha)*raw + alpha*filtered with alpha = alpha_at(fn, mu).
double fused_similarity(double raw, double filtered, double mu, const AlphaFunction& fn);

// Least-squares fit of the one-parameter curve (1+e^a)/(1+e^(a/rho)) to the
// learnt weighting function; returns the parameter a.  eval_alpha_sigmoid
// evaluates the fitted curve (0 at rho = 0 by continuity, 1 at rho = 1).
double fit_alpha_sigmoid(const AlphaFunction& fn);
double eval_alpha_sigmoid(double a, double rho);

nlohmann::json alpha_function_to_json(const AlphaFunction& fn);
AlphaFunction alpha_function_from_json(const nlohmann::json& j);

}  // namespace mm
