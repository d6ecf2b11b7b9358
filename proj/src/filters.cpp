#include "mm/filters.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace mm {

namespace {

// ---------------------------------------------------------------------------
// Separable correlation with reflected boundaries
// ---------------------------------------------------------------------------

// Reflects an out-of-range index into [0, n) (border pixels not duplicated).
Eigen::Index reflect(Eigen::Index i, Eigen::Index n) {
  if (n == 1) return 0;
  const Eigen::Index period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

// Correlates every row (axis = 0 -> horizontal pass) or every column
// (axis = 1 -> vertical pass) with `kernel`, whose center is at index radius.
Matrix correlate_1d(const Matrix& image, const std::vector<double>& kernel, int axis) {
  const Eigen::Index radius = static_cast<Eigen::Index>(kernel.size() / 2);
  Matrix out(image.rows(), image.cols());
  if (axis == 0) {
    for (Eigen::Index r = 0; r < image.rows(); ++r) {
      for (Eigen::Index c = 0; c < image.cols(); ++c) {
        double acc = 0.0;
        for (Eigen::Index k = -radius; k <= radius; ++k) {
          acc += image(r, reflect(c + k, image.cols())) * kernel[static_cast<size_t>(k + radius)];
        }
        out(r, c) = acc;
      }
    }
  } else {
    for (Eigen::Index c = 0; c < image.cols(); ++c) {
      for (Eigen::Index r = 0; r < image.rows(); ++r) {
        double acc = 0.0;
        for (Eigen::Index k = -radius; k <= radius; ++k) {
          acc += image(reflect(r + k, image.rows()), c) * kernel[static_cast<size_t>(k + radius)];
        }
        out(r, c) = acc;
      }
    }
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[static_cast<size_t>(i + radius)] = v;
    total += v;
  }
  for (double& v : kernel) v /= total;
  return kernel;
}

// Sampled first derivative of the normalized Gaussian; odd, zero-sum.  Under
// correlation a ramp of slope s responds with approximately s.
std::vector<double> gaussian_derivative_kernel(double sigma) {
  const auto g = gaussian_kernel(sigma);
  const int radius = static_cast<int>(g.size() / 2);
  std::vector<double> kernel(g.size());
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<size_t>(i + radius)] = (i / (sigma * sigma)) * g[static_cast<size_t>(i + radius)];
  }
  return kernel;
}

// Sampled second derivative of the normalized Gaussian, adjusted to zero sum
// so that constant images respond with exactly zero.
std::vector<double> gaussian_second_derivative_kernel(double sigma) {
  const auto g = gaussian_kernel(sigma);
  const int radius = static_cast<int>(g.size() / 2);
  std::vector<double> kernel(g.size());
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double s2 = sigma * sigma;
    const double v = ((i * i - s2) / (s2 * s2)) * g[static_cast<size_t>(i + radius)];
    kernel[static_cast<size_t>(i + radius)] = v;
    total += v;
  }
  const double mean = total / static_cast<double>(kernel.size());
  for (double& v : kernel) v -= mean;
  return kernel;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw InvalidParams(message);
}

// ---------------------------------------------------------------------------
// Edge map + exact Euclidean distance transform
// ---------------------------------------------------------------------------

Matrix sobel_magnitude(const Matrix& image) {
  Matrix mag(image.rows(), image.cols());
  for (Eigen::Index r = 0; r < image.rows(); ++r) {
    for (Eigen::Index c = 0; c < image.cols(); ++c) {
      auto at = [&](Eigen::Index dr, Eigen::Index dc) {
        return image(reflect(r + dr, image.rows()), reflect(c + dc, image.cols()));
      };
      const double gx = (at(-1, 1) + 2 * at(0, 1) + at(1, 1)) -
                        (at(-1, -1) + 2 * at(0, -1) + at(1, -1));
      const double gy = (at(1, -1) + 2 * at(1, 0) + at(1, 1)) -
                        (at(-1, -1) + 2 * at(-1, 0) + at(-1, 1));
      mag(r, c) = std::hypot(gx, gy);
    }
  }
  return mag;
}

// One-dimensional squared-distance transform (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
  const int n = static_cast<int>(f.size());
  std::vector<int> v(static_cast<size_t>(n));
  std::vector<double> z(static_cast<size_t>(n) + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    for (;;) {
      const int p = v[static_cast<size_t>(k)];
      s = ((f[static_cast<size_t>(q)] + q * q) - (f[static_cast<size_t>(p)] + p * p)) /
          (2.0 * q - 2.0 * p);
      if (s <= z[static_cast<size_t>(k)]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<size_t>(k)] = q;
    z[static_cast<size_t>(k)] = s;
    z[static_cast<size_t>(k) + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<size_t>(k) + 1] < q) ++k;
    const int p = v[static_cast<size_t>(k)];
    d[static_cast<size_t>(q)] = (q - p) * static_cast<double>(q - p) + f[static_cast<size_t>(p)];
  }
}

}  // namespace

Matrix distance_transform(const Matrix& edges) {
  const Eigen::Index h = edges.rows();
  const Eigen::Index w = edges.cols();
  const double sentinel = std::hypot(static_cast<double>(h), static_cast<double>(w));
  bool any_edge = false;
  // A large finite stand-in for "no parabola here".  True infinities break the
  // lower-envelope recurrence (inf - inf = NaN and -inf intersections walk the
  // stack index below zero); a finite constant keeps every intersection finite
  // while still losing to every real squared distance.
  const double far_away = 1e12;
  Matrix sq(h, w);
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < w; ++c) {
      const bool on = edges(r, c) != 0.0;
      any_edge = any_edge || on;
      sq(r, c) = on ? 0.0 : far_away;
    }
  }
  if (!any_edge) return Matrix::Constant(h, w, sentinel);
  // Columns first, then rows, on squared distances.
  std::vector<double> f(static_cast<size_t>(h)), d(static_cast<size_t>(h));
  for (Eigen::Index c = 0; c < w; ++c) {
    for (Eigen::Index r = 0; r < h; ++r) f[static_cast<size_t>(r)] = sq(r, c);
    edt_1d(f, d);
    for (Eigen::Index r = 0; r < h; ++r) sq(r, c) = d[static_cast<size_t>(r)];
  }
  std::vector<double> fr(static_cast<size_t>(w)), dr(static_cast<size_t>(w));
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < w; ++c) fr[static_cast<size_t>(c)] = sq(r, c);
    edt_1d(fr, dr);
    for (Eigen::Index c = 0; c < w; ++c) sq(r, c) = dr[static_cast<size_t>(c)];
  }
  return sq.array().sqrt().matrix();
}

Matrix gaussian_blur(const Matrix& image, double sigma) {
  require(sigma > 0.0, "gaussian_blur: sigma must be positive");
  const auto kernel = gaussian_kernel(sigma);
  return correlate_1d(correlate_1d(image, kernel, 0), kernel, 1);
}

Matrix feather_mask(const Matrix& mask, double decay) {
  require(decay > 0.0, "feather_mask: decay must be positive");
  // exp(-r^2/decay) is the Gaussian with sigma = sqrt(decay/2); the separable
  // blur already normalizes the kernel to unit sum.
  return gaussian_blur(mask, std::sqrt(decay / 2.0));
}

FilterKind FilterKind::parse(const std::string& name) {
  FilterKind kind;
  if (name == "raw") kind.tag = FilterTag::Raw;
  else if (name == "hp") kind.tag = FilterTag::Hp;
  else if (name == "qi") kind.tag = FilterTag::Qi;
  else if (name == "ed") kind.tag = FilterTag::Ed;
  else if (name == "lg") kind.tag = FilterTag::Lg;
  else if (name == "dx") kind.tag = FilterTag::Dx;
  else if (name == "dy") kind.tag = FilterTag::Dy;
  else if (name == "bandpass") kind.tag = FilterTag::Bandpass;
  else throw InvalidParams("unknown filter '" + name + "'");
  return kind;
}

std::string FilterKind::name() const {
  switch (tag) {
    case FilterTag::Raw: return "raw";
    case FilterTag::Hp: return "hp";
    case FilterTag::Qi: return "qi";
    case FilterTag::Ed: return "ed";
    case FilterTag::Lg: return "lg";
    case FilterTag::Dx: return "dx";
    case FilterTag::Dy: return "dy";
    case FilterTag::Bandpass: return "bandpass";
  }
  return "raw";
}

Matrix apply_filter(const FilterKind& kind, const Matrix& image) {
  if (!image.allFinite()) throw InvalidParams("apply_filter: image has non-finite entries");
  switch (kind.tag) {
    case FilterTag::Raw:
      return image;
    case FilterTag::Hp: {
      require(kind.hp_sigma > 0.0, "HP: hp_sigma must be positive");
      return image - gaussian_blur(image, kind.hp_sigma);
    }
    case FilterTag::Qi: {
      require(kind.hp_sigma > 0.0, "QI: hp_sigma must be positive");
      const Matrix low = gaussian_blur(image, kind.hp_sigma);
      const Matrix high = image - low;
      Matrix out(image.rows(), image.cols());
      for (Eigen::Index r = 0; r < image.rows(); ++r) {
        for (Eigen::Index c = 0; c < image.cols(); ++c) {
          double den = low(r, c);
          if (kind.qi_guard > 0.0) {
            if (std::abs(den) < kind.qi_guard) {
              den = (den < 0.0 ? -kind.qi_guard : kind.qi_guard);
            }
          } else if (std::abs(den) < 1e-12) {
            throw DenominatorUnderflow("QI: low-pass denominator vanished at (" +
                                       std::to_string(r) + "," + std::to_string(c) + ")");
          }
          out(r, c) = high(r, c) / den;
        }
      }
      return out;
    }
    case FilterTag::Bandpass: {
      require(kind.band_w1 > 0.0 && kind.band_w2 > 0.0, "BANDPASS: widths must be positive");
      require(kind.band_w1 < kind.band_w2, "BANDPASS: requires W1 < W2");
      return gaussian_blur(image, kind.band_w1) - gaussian_blur(image, kind.band_w2);
    }
    case FilterTag::Lg: {
      require(kind.lg_sigma > 0.0, "LG: lg_sigma must be positive");
      const auto g = gaussian_kernel(kind.lg_sigma);
      const auto gxx = gaussian_second_derivative_kernel(kind.lg_sigma);
      return correlate_1d(correlate_1d(image, gxx, 0), g, 1) +
             correlate_1d(correlate_1d(image, g, 0), gxx, 1);
    }
    case FilterTag::Dx: {
      require(kind.deriv_sigma > 0.0, "DX: deriv_sigma must be positive");
      const auto g = gaussian_kernel(kind.deriv_sigma);
      const auto dg = gaussian_derivative_kernel(kind.deriv_sigma);
      return correlate_1d(correlate_1d(image, dg, 0), g, 1);
    }
    case FilterTag::Dy: {
      require(kind.deriv_sigma > 0.0, "DY: deriv_sigma must be positive");
      const auto g = gaussian_kernel(kind.deriv_sigma);
      const auto dg = gaussian_derivative_kernel(kind.deriv_sigma);
      return correlate_1d(correlate_1d(image, g, 0), dg, 1);
    }
    case FilterTag::Ed: {
      require(kind.edge_percentile > 0.0 && kind.edge_percentile < 100.0,
              "ED: edge_percentile must be in (0, 100)");
      const Matrix mag = sobel_magnitude(image);
      std::vector<double> values(mag.data(), mag.data() + mag.size());
      std::sort(values.begin(), values.end());
      const size_t idx = static_cast<size_t>(
          std::floor(kind.edge_percentile / 100.0 * static_cast<double>(values.size() - 1)));
      const double threshold = values[idx];
      Matrix edges = (mag.array() > threshold).cast<double>();
      if (edges.sum() == 0.0 && threshold > 0.0) {
        edges = (mag.array() >= threshold).cast<double>();
      }
      return distance_transform(edges);
    }
  }
  throw InvalidParams("apply_filter: unknown tag");
}

// ---------------------------------------------------------------------------
// Gamma correction
// ---------------------------------------------------------------------------

namespace {

// Golden-section search with parabolic interpolation steps (Brent's method)
// for a 1-D minimum in [lo, hi].
double brent_minimize(double lo, double hi, double tol,
                      const std::function<double(double)>& f) {
  const double golden = 0.3819660112501051;  // 2 - phi
  double a = lo, b = hi;
  double x = a + golden * (b - a);
  double w = x, v = x;
  double fx = f(x), fw = fx, fv = fx;
  double d = 0.0, e = 0.0;
  for (int iter = 0; iter < 200; ++iter) {
    const double m = 0.5 * (a + b);
    const double tol1 = tol * std::abs(x) + 1e-12;
    const double tol2 = 2.0 * tol1;
    if (std::abs(x - m) <= tol2 - 0.5 * (b - a)) break;
    bool use_golden = true;
    if (std::abs(e) > tol1) {
      // Parabola through x, v, w.
      const double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      q = std::abs(q);
      const double e_prev = e;
      e = d;
      if (std::abs(p) < std::abs(0.5 * q * e_prev) && p > q * (a - x) && p < q * (b - x)) {
        d = p / q;
        const double u = x + d;
        if (u - a < tol2 || b - u < tol2) d = (x < m ? tol1 : -tol1);
        use_golden = false;
      }
    }
    if (use_golden) {
      e = (x < m ? b : a) - x;
      d = golden * e;
    }
    const double u = (std::abs(d) >= tol1) ? x + d : x + (d > 0 ? tol1 : -tol1);
    const double fu = f(u);
    if (fu <= fx) {
      if (u < x) b = x; else a = x;
      v = w; fv = fw;
      w = x; fw = fx;
      x = u; fx = fu;
    } else {
      if (u < x) a = u; else b = u;
      if (fu <= fw || w == x) {
        v = w; fv = fw;
        w = u; fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u; fv = fu;
      }
    }
  }
  return x;
}

constexpr double kGammaLo = 0.1;
constexpr double kGammaHi = 7.9;
constexpr double kGammaTol = 1e-4;

// Fits gamma over the masked pixels (mask empty = all pixels).
double fit_gamma(const Matrix& image, const Matrix& canonical,
                 const std::vector<std::pair<Eigen::Index, Eigen::Index>>& pixels) {
  std::vector<double> log_i(pixels.size()), target(pixels.size());
  for (size_t k = 0; k < pixels.size(); ++k) {
    log_i[k] = std::log(image(pixels[k].first, pixels[k].second));
    target[k] = canonical(pixels[k].first, pixels[k].second);
  }
  auto objective = [&](double gamma) {
    double acc = 0.0;
    for (size_t k = 0; k < pixels.size(); ++k) {
      const double diff = std::exp(gamma * log_i[k]) - target[k];
      acc += diff * diff;
    }
    return acc;
  };
  return brent_minimize(kGammaLo, kGammaHi, kGammaTol, objective);
}

void check_positive(const Matrix& image, const char* which) {
  for (Eigen::Index r = 0; r < image.rows(); ++r) {
    for (Eigen::Index c = 0; c < image.cols(); ++c) {
      if (!(image(r, c) > 0.0)) {
        throw NonPositivePixels(std::string(which) + " has a non-positive pixel at (" +
                                std::to_string(r) + "," + std::to_string(c) + ")");
      }
    }
  }
}

}  // namespace

GammaResult gamma_correct(const Matrix& image, const Matrix& canonical) {
  if (image.rows() != canonical.rows() || image.cols() != canonical.cols()) {
    throw ShapeMismatch("gamma_correct: image and canonical shapes differ");
  }
  check_positive(image, "image");
  check_positive(canonical, "canonical");
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pixels;
  pixels.reserve(static_cast<size_t>(image.size()));
  for (Eigen::Index r = 0; r < image.rows(); ++r) {
    for (Eigen::Index c = 0; c < image.cols(); ++c) pixels.emplace_back(r, c);
  }
  GammaResult result;
  result.gamma = fit_gamma(image, canonical, pixels);
  result.corrected = image.array().pow(result.gamma).matrix();
  return result;
}

Matrix region_gamma_correct(const Matrix& image, const Matrix& canonical,
                            const Eigen::MatrixXi& regions, double blur_sigma) {
  if (image.rows() != canonical.rows() || image.cols() != canonical.cols() ||
      image.rows() != regions.rows() || image.cols() != regions.cols()) {
    throw ShapeMismatch("region_gamma_correct: shapes differ");
  }
  require(blur_sigma > 0.0, "region_gamma_correct: blur_sigma must be positive");
  check_positive(image, "image");
  check_positive(canonical, "canonical");
  const int n_regions = regions.maxCoeff() + 1;
  if (regions.minCoeff() < 0) throw InvalidParams("region ids must be nonnegative");
  std::vector<std::vector<std::pair<Eigen::Index, Eigen::Index>>> members(
      static_cast<size_t>(n_regions));
  for (Eigen::Index r = 0; r < regions.rows(); ++r) {
    for (Eigen::Index c = 0; c < regions.cols(); ++c) {
      members[static_cast<size_t>(regions(r, c))].emplace_back(r, c);
    }
  }
  std::vector<double> gamma(static_cast<size_t>(n_regions));
  for (int id = 0; id < n_regions; ++id) {
    if (members[static_cast<size_t>(id)].empty()) {
      throw EmptyRegion("region " + std::to_string(id) + " has no pixels");
    }
    gamma[static_cast<size_t>(id)] = fit_gamma(image, canonical, members[static_cast<size_t>(id)]);
  }
  Matrix gamma_map(image.rows(), image.cols());
  for (Eigen::Index r = 0; r < regions.rows(); ++r) {
    for (Eigen::Index c = 0; c < regions.cols(); ++c) {
      gamma_map(r, c) = gamma[static_cast<size_t>(regions(r, c))];
    }
  }
  const Matrix smoothed = gaussian_blur(gamma_map, blur_sigma);
  Matrix out(image.rows(), image.cols());
  for (Eigen::Index r = 0; r < image.rows(); ++r) {
    for (Eigen::Index c = 0; c < image.cols(); ++c) {
      out(r, c) = std::pow(image(r, c), smoothed(r, c));
    }
  }
  return out;
}

}  // namespace mm
