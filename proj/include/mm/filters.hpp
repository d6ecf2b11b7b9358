#pragma once

#include "mm/common.hpp"
#include "mm/errors.hpp"

#include <string>

namespace mm {

// Quasi illumination-invariant image transforms.  Images are H x W matrices
// in [0,1]; row index is the vertical axis, column index the horizontal one.
enum class FilterTag { Raw, Hp, Qi, Ed, Lg, Dx, Dy, Bandpass };

struct FilterKind {
  FilterTag tag = FilterTag::Raw;

  double hp_sigma = 1.5;        // high-pass width; also the high-pass embedded in QI
  double band_w1 = 2.3;         // band-pass narrow width
  double band_w2 = 6.2;         // band-pass wide width
  double lg_sigma = 3.0;        // Laplacian-of-Gaussian width
  double deriv_sigma = 6.0;     // directional-derivative width
  double edge_percentile = 90;  // gradient-magnitude percentile for the edge map
  double qi_guard = 1e-3;       // |denominator| clamp for QI; <= 0 disables the guard

  // Parses one of raw|hp|qi|ed|lg|dx|dy|bandpass (throws InvalidParams).
  static FilterKind parse(const std::string& name);
  std::string name() const;
};

// Filter semantics:
//   RAW      identity
//   HP       X - X*G(hp_sigma)
//   QI       HP ./ (X - HP), i.e. high-pass over low-pass, guarded denominator
//   BANDPASS X*G(band_w1) - X*G(band_w2)
//   LG       X * laplacian(G(lg_sigma))
//   DX, DY   X * d/dx G(deriv_sigma), X * d/dy G(deriv_sigma)
//   ED       Euclidean distance transform of a Sobel gradient-magnitude edge
//            map thresholded at edge_percentile
Matrix apply_filter(const FilterKind& kind, const Matrix& image);

// Separable Gaussian smoothing, kernel truncated at 4*sigma and normalized to
// unit sum, reflected boundaries.
Matrix gaussian_blur(const Matrix& image, double sigma);

// Convolves a {0,1} mask with the normalized kernel exp(-r^2/decay); output in
// [0,1], equal to 1 deep inside the mask.
Matrix feather_mask(const Matrix& mask, double decay = 8.0);

// Exact Euclidean distance transform: distance from each pixel to the nearest
// nonzero pixel of `edges`.  When `edges` has no nonzero pixel every output
// entry is the unattainable sentinel hypot(H, W) (the image diagonal).
Matrix distance_transform(const Matrix& edges);

// Gamma correction against a canonical image: gamma minimizes
// sum((I^g - C)^2) over [0.1, 7.9] (golden section with parabolic steps,
// tolerance 1e-4); corrected = I^gamma.  Throws NonPositivePixels when either
// image has an entry <= 0.
struct GammaResult {
  Matrix corrected;
  double gamma = 1.0;
};
GammaResult gamma_correct(const Matrix& image, const Matrix& canonical);

// Per-region gamma correction: region ids must densely cover 0..max(regions);
// the per-pixel exponent map is smoothed with G(blur_sigma) before
// exponentiation.
Matrix region_gamma_correct(const Matrix& image, const Matrix& canonical,
                            const Eigen::MatrixXi& regions, double blur_sigma = 2.0);

}  // namespace mm
