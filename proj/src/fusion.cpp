#include "mm/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>
#include <vector>

#include "mm/filters.hpp"
#include "mm/io.hpp"

namespace mm {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::Index nearest_bin(double value, double step, Eigen::Index n_bins) {
  const auto k = static_cast<Eigen::Index>(std::llround(value / step));
  return std::clamp<Eigen::Index>(k, 0, n_bins - 1);
}

}  // namespace

JointDensityGrid learn_joint_density(const CorpusSimilarity& similarity,
                                     const FusionTrainOptions& opts) {
  if (opts.n_persons < 2 || opts.n_illuminations < 2) {
    throw InsufficientCorpus("learn_joint_density: needs >= 2 persons and >= 2 illuminations");
  }
  if (!(opts.grid_step > 0.0 && opts.grid_step <= 0.5)) {
    throw InvalidParams("learn_joint_density: grid_step must lie in (0, 0.5]");
  }
  JointDensityGrid grid;
  grid.alpha_step = opts.grid_step;
  grid.mu_step = opts.grid_step;
  const auto n_alpha = static_cast<Eigen::Index>(std::llround(1.0 / opts.grid_step)) + 1;
  const Eigen::Index n_mu = n_alpha;
  grid.values = Matrix::Ones(n_alpha, n_mu);  // uniform start

  // One contribution per (person, ordered illumination pair, alpha bin).
  // Contributions are sorted by target bin and value before accumulation so
  // the result is exactly invariant to person relabeling.
  std::vector<std::tuple<Eigen::Index, Eigen::Index, double>> updates;
  for (int p = 0; p < opts.n_persons; ++p) {
    for (int i = 0; i < opts.n_illuminations; ++i) {
      for (int j = 0; j < opts.n_illuminations; ++j) {
        if (i == j) continue;
        const double raw_match = similarity(Channel::Raw, p, i, p, j);
        const double flt_match = similarity(Channel::Filtered, p, i, p, j);
        double raw_imp = -std::numeric_limits<double>::infinity();
        std::vector<double> flt_imps;
        std::vector<double> raw_imps;
        for (int q = 0; q < opts.n_persons; ++q) {
          if (q == p) continue;
          raw_imps.push_back(similarity(Channel::Raw, p, i, q, j));
          flt_imps.push_back(similarity(Channel::Filtered, p, i, q, j));
          raw_imp = std::max(raw_imp, raw_imps.back());
        }
        // Margin of the raw channel on this episode: how far the correct match
        // leads the closest impostor.
        const double mu = std::clamp(raw_match - raw_imp, 0.0, 1.0);
        const Eigen::Index mu_bin = nearest_bin(mu, grid.mu_step, n_mu);
        for (Eigen::Index k = 0; k < n_alpha; ++k) {
          const double alpha = static_cast<double>(k) * grid.alpha_step;
          double worst = std::numeric_limits<double>::infinity();
          for (size_t q = 0; q < raw_imps.size(); ++q) {
            const double sep = alpha * (flt_match - flt_imps[q]) +
                               (1.0 - alpha) * (raw_match - raw_imps[q]);
            worst = std::min(worst, sep);
          }
          const double delta =
              opts.sigmoid_update ? sigmoid(opts.sigmoid_gain * worst) - 0.5 : worst;
          updates.emplace_back(k, mu_bin, delta);
        }
      }
    }
  }
  std::sort(updates.begin(), updates.end());
  for (const auto& [k, m, delta] : updates) grid.values(k, m) += delta;

  const double sigma_bins = opts.smoothing_sigma / opts.grid_step;
  grid.values = gaussian_blur(grid.values, sigma_bins);
  grid.values = grid.values.cwiseMax(0.0);
  const double mass = grid.values.sum() * grid.alpha_step * grid.mu_step;
  if (mass <= 0.0) {
    grid.values.setOnes();
    grid.values /= grid.values.sum() * grid.alpha_step * grid.mu_step;
  } else {
    grid.values /= mass;
  }
  return grid;
}

AlphaFunction extract_alpha_function(const JointDensityGrid& density, bool enforce_monotone) {
  const Eigen::Index n_alpha = density.values.rows();
  const Eigen::Index n_mu = density.values.cols();
  if (n_alpha < 1 || n_mu < 1) throw InvalidParams("extract_alpha_function: empty density");
  AlphaFunction fn;
  fn.abscissae.resize(n_mu);
  fn.alphas.resize(n_mu);
  for (Eigen::Index m = 0; m < n_mu; ++m) {
    fn.abscissae[m] = static_cast<double>(m) * density.mu_step;
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < n_alpha; ++k) {
      if (density.values(k, m) > density.values(best, m)) best = k;  // ties keep smaller alpha
    }
    fn.alphas[m] = static_cast<double>(best) * density.alpha_step;
  }
  if (enforce_monotone) {
    double running = fn.alphas[0];
    for (Eigen::Index m = 0; m < n_mu; ++m) {
      running = std::max(running, fn.alphas[m]);
      fn.alphas[m] = running;
    }
    Vector smoothed(n_mu);
    for (Eigen::Index m = 0; m < n_mu; ++m) {
      double acc = fn.alphas[m];
      int count = 1;
      if (m > 0) {
        acc += fn.alphas[m - 1];
        ++count;
      }
      if (m + 1 < n_mu) {
        acc += fn.alphas[m + 1];
        ++count;
      }
      smoothed[m] = acc / count;
    }
    fn.alphas = smoothed;  // window-3 average of a non-decreasing curve stays non-decreasing
    fn.monotone = true;
  }
  return fn;
}

double alpha_at(const AlphaFunction& fn, double mu) {
  const Eigen::Index n = fn.abscissae.size();
  if (n < 1) throw InvalidParams("alpha_at: empty function");
  if (n == 1 || mu <= fn.abscissae[0]) return fn.alphas[0];
  if (mu >= fn.abscissae[n - 1]) return fn.alphas[n - 1];
  Eigen::Index hi = 1;
  while (fn.abscissae[hi] < mu) ++hi;
  const double x0 = fn.abscissae[hi - 1];
  const double x1 = fn.abscissae[hi];
  const double t = (mu - x0) / (x1 - x0);
  return (1.0 - t) * fn.alphas[hi - 1] + t * fn.alphas[hi];
}

double fused_similarity(double raw, double filtered, double mu, const AlphaFunction& fn) {
  const double alpha = alpha_at(fn, mu);
  return (1.0 - alpha) * raw + alpha * filtered;
}

double eval_alpha_sigmoid(double a, double rho) {
  if (rho <= 0.0) return 0.0;
  const double expo = a / rho;
  if (expo > 700.0) return 0.0;
  return (1.0 + std::exp(a)) / (1.0 + std::exp(expo));
}

double fit_alpha_sigmoid(const AlphaFunction& fn) {
  auto objective = [&fn](double a) {
    double sse = 0.0;
    for (Eigen::Index i = 0; i < fn.abscissae.size(); ++i) {
      const double r = eval_alpha_sigmoid(a, fn.abscissae[i]) - fn.alphas[i];
      sse += r * r;
    }
    return sse;
  };
  // Golden-section search over the single positive parameter.
  constexpr double kInvPhi = 0.6180339887498949;
  double lo = 1e-3, hi = 60.0;
  double x1 = hi - kInvPhi * (hi - lo);
  double x2 = lo + kInvPhi * (hi - lo);
  double f1 = objective(x1), f2 = objective(x2);
  while (hi - lo > 1e-6) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - kInvPhi * (hi - lo);
      f1 = objective(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + kInvPhi * (hi - lo);
      f2 = objective(x2);
    }
  }
  return 0.5 * (lo + hi);
}

nlohmann::json alpha_function_to_json(const AlphaFunction& fn) {
  nlohmann::json j;
  j["abscissae"] = vector_to_json(fn.abscissae);
  j["alphas"] = vector_to_json(fn.alphas);
  j["monotone"] = fn.monotone;
  return j;
}

AlphaFunction alpha_function_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"abscissae", "alphas", "monotone"}, "alpha function");
  AlphaFunction fn;
  fn.abscissae = vector_from_json(j.at("abscissae"), "alpha function abscissae");
  fn.alphas = vector_from_json(j.at("alphas"), "alpha function alphas");
  fn.monotone = j.at("monotone").get<bool>();
  if (fn.abscissae.size() != fn.alphas.size() || fn.abscissae.size() < 1) {
    throw BadConfig("alpha function: abscissae/alphas length mismatch");
  }
  for (Eigen::Index i = 1; i < fn.abscissae.size(); ++i) {
    if (!(fn.abscissae[i] > fn.abscissae[i - 1])) {
      throw BadConfig("alpha function: abscissae must be strictly increasing");
    }
    if (fn.monotone && fn.alphas[i] < fn.alphas[i - 1] - 1e-12) {
      throw BadConfig("alpha function: marked monotone but ordinates decrease");
    }
  }
  return fn;
}

}  // namespace mm
