#include "mm/kernel.hpp"

#include "mm/simd.hpp"

#include "mm/divergence.hpp"
#include "mm/gmm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace mm {

namespace {

constexpr double kEigenvalueCut = 1e-9;  // positivity cut on centered-kernel eigenvalues

Matrix rbf_kernel_matrix(const Matrix& data, double gamma) {
  const Eigen::Index n = data.cols();
  Matrix k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double sq = simd::squared_distance(data.col(i).data(), data.col(j).data(),
                                               static_cast<size_t>(data.rows()));
      const double v = std::exp(-gamma * sq);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

// Fixes eigenvector sign: first coordinate of magnitude above tolerance is
// made positive, so models are reproducible across runs.
void fix_sign(Eigen::Ref<Vector> u) {
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    if (std::abs(u[i]) > 1e-12) {
      if (u[i] < 0.0) u = -u;
      return;
    }
  }
}

}  // namespace

u64 hash_matrix(const Matrix& m) {
  u64 h = 1469598103934665603ULL;
  auto mix = [&h](const unsigned char* bytes, size_t n) {
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  const auto rows = static_cast<u64>(m.rows());
  const auto cols = static_cast<u64>(m.cols());
  mix(reinterpret_cast<const unsigned char*>(&rows), sizeof(rows));
  mix(reinterpret_cast<const unsigned char*>(&cols), sizeof(cols));
  mix(reinterpret_cast<const unsigned char*>(m.data()), sizeof(double) * static_cast<size_t>(m.size()));
  return h;
}

KpcaModel kpca_fit(const Matrix& data, Eigen::Index dim, double gamma) {
  if (gamma <= 0.0) throw InvalidParams("kpca_fit: gamma must be positive");
  if (dim < 1) throw InvalidParams("kpca_fit: dim must be >= 1");
  const Eigen::Index n = data.cols();
  if (n < 1) throw InvalidParams("kpca_fit: empty data");
  const Matrix k = rbf_kernel_matrix(data, gamma);
  const Vector row_means = k.rowwise().mean();
  const double grand_mean = k.mean();
  // Double centering: K~ = K - 1K/N - K1/N + 11'K11'/N^2.
  Matrix centered = k;
  centered.colwise() -= row_means;
  centered.rowwise() -= row_means.transpose();
  centered.array() += grand_mean;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(centered);
  Eigen::Index available = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (eig.eigenvalues()[i] > kEigenvalueCut) ++available;
  }
  if (available == 0) {
    throw RankDeficient("kpca_fit: centered kernel matrix has no positive eigenvalues");
  }
  const Eigen::Index d = std::min(std::min(dim, available), n);
  KpcaModel model;
  model.support_points = data;
  model.gamma = gamma;
  model.row_means = row_means;
  model.grand_mean = grand_mean;
  model.eigenvalues.resize(d);
  model.alphas.resize(n, d);
  model.projections.resize(d, n);
  for (Eigen::Index i = 0; i < d; ++i) {
    const Eigen::Index src = n - 1 - i;  // solver returns ascending order
    const double lambda = eig.eigenvalues()[src];
    Vector u = eig.eigenvectors().col(src);
    fix_sign(u);
    model.eigenvalues[i] = lambda;
    model.alphas.col(i) = u / std::sqrt(lambda);
    model.projections.row(i) = std::sqrt(lambda) * u.transpose();
  }
  return model;
}

Vector kpca_project(const KpcaModel& model, const Vector& x) {
  const Eigen::Index n = model.support_points.cols();
  Vector kx(n);
  for (Eigen::Index m = 0; m < n; ++m) {
    const double sq = simd::squared_distance(x.data(), model.support_points.col(m).data(),
                                             static_cast<size_t>(x.size()));
    kx[m] = std::exp(-model.gamma * sq);
  }
  const double kx_mean = kx.mean();
  const Vector centered = kx - Vector::Constant(n, kx_mean) - model.row_means +
                          Vector::Constant(n, model.grand_mean);
  return model.alphas.transpose() * centered;
}

Matrix kpca_project_batch(const KpcaModel& model, const Matrix& data) {
  Matrix out(model.out_dim(), data.cols());
  for (Eigen::Index j = 0; j < data.cols(); ++j) out.col(j) = kpca_project(model, data.col(j));
  return out;
}

double kpca_mahalanobis(const KpcaModel& model, const Vector& projection) {
  const double n = static_cast<double>(model.support_points.cols());
  double acc = 0.0;
  for (Eigen::Index i = 0; i < projection.size(); ++i) {
    acc += projection[i] * projection[i] * n / model.eigenvalues[i];
  }
  return std::sqrt(acc);
}

RansacKpcaResult ransac_kpca(const Matrix& data, Eigen::Index dim, double gamma,
                             double mahal_threshold, int iterations, const Rng& rng) {
  if (iterations < 1) throw InvalidParams("ransac_kpca: iterations must be >= 1");
  const Eigen::Index n = data.cols();
  const size_t subset_size = static_cast<size_t>(std::min<Eigen::Index>(dim + 1, n));
  std::vector<Eigen::Index> best_consensus;
  for (int it = 0; it < iterations; ++it) {
    Rng stream = rng.split(static_cast<u64>(it) + 1);
    const auto picked = stream.sample_without_replacement(static_cast<size_t>(n), subset_size);
    Matrix subset(data.rows(), static_cast<Eigen::Index>(picked.size()));
    for (size_t i = 0; i < picked.size(); ++i) {
      subset.col(static_cast<Eigen::Index>(i)) = data.col(static_cast<Eigen::Index>(picked[i]));
    }
    KpcaModel trial;
    try {
      trial = kpca_fit(subset, dim, gamma);
    } catch (const RankDeficient&) {
      continue;  // degenerate draw (all points coincide)
    }
    std::vector<Eigen::Index> consensus;
    for (Eigen::Index j = 0; j < n; ++j) {
      const Vector proj = kpca_project(trial, data.col(j));
      if (kpca_mahalanobis(trial, proj) < mahal_threshold) consensus.push_back(j);
    }
    if (consensus.size() > best_consensus.size()) best_consensus = std::move(consensus);
  }
  if (best_consensus.size() < subset_size) {
    throw NoConsensus("ransac_kpca: best consensus has " + std::to_string(best_consensus.size()) +
                      " points, need " + std::to_string(subset_size));
  }
  Matrix refit_data(data.rows(), static_cast<Eigen::Index>(best_consensus.size()));
  for (size_t i = 0; i < best_consensus.size(); ++i) {
    refit_data.col(static_cast<Eigen::Index>(i)) = data.col(best_consensus[i]);
  }
  RansacKpcaResult result;
  result.model = kpca_fit(refit_data, dim, gamma);
  result.inliers.assign(static_cast<size_t>(n), false);
  for (const Eigen::Index j : best_consensus) result.inliers[static_cast<size_t>(j)] = true;
  return result;
}

// ---------------------------------------------------------------------------
// Affine repopulation
// ---------------------------------------------------------------------------

namespace {

double reflect_continuous(double x, double n) {
  if (n <= 1.0) return 0.0;
  const double period = 2.0 * (n - 1.0);
  x = std::fmod(x, period);
  if (x < 0.0) x += period;
  return x <= n - 1.0 ? x : period - x;
}

double bilinear_sample(const Matrix& image, double y, double x) {
  y = reflect_continuous(y, static_cast<double>(image.rows()));
  x = reflect_continuous(x, static_cast<double>(image.cols()));
  const Eigen::Index y0 = static_cast<Eigen::Index>(std::floor(y));
  const Eigen::Index x0 = static_cast<Eigen::Index>(std::floor(x));
  const Eigen::Index y1 = std::min(y0 + 1, image.rows() - 1);
  const Eigen::Index x1 = std::min(x0 + 1, image.cols() - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  return (1.0 - fy) * ((1.0 - fx) * image(y0, x0) + fx * image(y0, x1)) +
         fy * ((1.0 - fx) * image(y1, x0) + fx * image(y1, x1));
}

}  // namespace

FaceSet affine_repopulate(const FaceSet& faces, int per_face, const AffinePerturbation& pert,
                          Rng& rng) {
  if (per_face < 0) throw InvalidParams("affine_repopulate: per_face must be >= 0");
  FaceSet out = faces;
  if (per_face == 0) return out;
  const Eigen::Index n = faces.size();
  out.frames.conservativeResize(Eigen::NoChange, n * (1 + per_face));
  out.temporal = false;  // synthetic frames break the acquisition-time ordering
  const double cy = (faces.height - 1) / 2.0;
  const double cx = (faces.width - 1) / 2.0;
  Eigen::Index write = n;
  for (Eigen::Index f = 0; f < n; ++f) {
    const Matrix source = faces.frame_image(f);
    for (int copy = 0; copy < per_face; ++copy) {
      const double theta = rng.next_normal(0.0, pert.sigma_theta);
      const double tx = rng.next_normal(0.0, pert.sigma_t);
      const double ty = rng.next_normal(0.0, pert.sigma_t);
      const double skew = rng.next_normal(0.0, pert.sigma_k);
      const double sx = rng.next_normal(0.0, pert.sigma_s);
      const double sy = rng.next_normal(0.0, pert.sigma_s);
      // Forward warp about the center: rotation * skew * scale, then
      // translation.  Destination pixels pull from the inverse map.
      Eigen::Matrix2d warp;
      warp << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
      Eigen::Matrix2d shear;
      shear << 1.0, skew, 0.0, 1.0;
      Eigen::Matrix2d scale;
      scale << 1.0 + sx, 0.0, 0.0, 1.0 + sy;
      const Eigen::Matrix2d forward = warp * shear * scale;
      const Eigen::Matrix2d inverse = forward.inverse();
      Matrix dest(faces.height, faces.width);
      for (Eigen::Index r = 0; r < dest.rows(); ++r) {
        for (Eigen::Index c = 0; c < dest.cols(); ++c) {
          const double px = static_cast<double>(c) - cx - tx;
          const double py = static_cast<double>(r) - cy - ty;
          const double sx_src = inverse(0, 0) * px + inverse(0, 1) * py + cx;
          const double sy_src = inverse(1, 0) * px + inverse(1, 1) * py + cy;
          dest(r, c) = bilinear_sample(source, sy_src, sx_src);
        }
      }
      out.frames.col(write++) = flatten(dest);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Robust kernel-space set distance
// ---------------------------------------------------------------------------

namespace {

// Mean and eigenvalue-floored covariance of projected points, with the
// covariance compressed to the leading directions holding `energy` of the
// spectrum plus an isotropic noise floor, then materialized.
GaussianComponent projected_gaussian(const Matrix& proj, double energy) {
  const Eigen::Index d = proj.rows();
  const Eigen::Index n = proj.cols();
  GaussianComponent g;
  g.kind = CovKind::Full;
  g.mean = proj.rowwise().mean();
  Matrix cov = Matrix::Zero(d, d);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Vector y = proj.col(j) - g.mean;
    cov += y * y.transpose();
  }
  cov /= static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  // Keep the smallest leading block holding `energy` of the total spectrum.
  const double total = eig.eigenvalues().cwiseMax(0.0).sum();
  double acc = 0.0;
  Eigen::Index q = d;
  for (Eigen::Index i = 0; i < d; ++i) {
    acc += std::max(eig.eigenvalues()[d - 1 - i], 0.0);
    if (acc >= energy * total) {
      q = i + 1;
      break;
    }
  }
  double residual = 0.0;
  for (Eigen::Index i = 0; i < d - q; ++i) residual += std::max(eig.eigenvalues()[i], 0.0);
  const double noise = std::max(d > q ? residual / static_cast<double>(d - q) : 0.0, 1e-6);
  Matrix realized = noise * Matrix::Identity(d, d);
  for (Eigen::Index i = 0; i < q; ++i) {
    const Eigen::Index src = d - 1 - i;
    const double excess = std::max(eig.eigenvalues()[src] - noise, 0.0);
    realized += excess * eig.eigenvectors().col(src) * eig.eigenvectors().col(src).transpose();
  }
  g.covariance = realized;
  return g;
}

}  // namespace

double robust_kernel_rad(const FaceSet& set_a, const FaceSet& set_b, const Rng& rng,
                         const RobustRadOptions& opts) {
  if (set_a.size() == 0 || set_b.size() == 0) {
    throw InvalidParams("robust_kernel_rad: both sets must be nonempty");
  }
  if (set_a.dim() != set_b.dim()) {
    throw DimensionMismatch("robust_kernel_rad: sets live in different dimensions");
  }
  const Eigen::Index na = set_a.size();
  const Eigen::Index nb = set_b.size();
  // Sorted union with provenance; sorting (and content-keyed sub-streams
  // below) makes the distance exactly symmetric in its arguments.
  struct Entry {
    Eigen::Index source;  // 0 = set_a, 1 = set_b
    Eigen::Index index;
  };
  std::vector<Entry> entries;
  entries.reserve(static_cast<size_t>(na + nb));
  for (Eigen::Index j = 0; j < na; ++j) entries.push_back({0, j});
  for (Eigen::Index j = 0; j < nb; ++j) entries.push_back({1, j});
  auto frame_of = [&](const Entry& e) {
    return e.source == 0 ? set_a.frames.col(e.index) : set_b.frames.col(e.index);
  };
  std::sort(entries.begin(), entries.end(), [&](const Entry& x, const Entry& y) {
    const auto fx = frame_of(x);
    const auto fy = frame_of(y);
    for (Eigen::Index r = 0; r < fx.size(); ++r) {
      if (fx[r] < fy[r]) return true;
      if (fx[r] > fy[r]) return false;
    }
    return false;
  });
  Matrix union_data(set_a.dim(), na + nb);
  for (size_t i = 0; i < entries.size(); ++i) {
    union_data.col(static_cast<Eigen::Index>(i)) = frame_of(entries[i]);
  }
  const RansacKpcaResult unfold =
      ransac_kpca(union_data, opts.kpca_dim, opts.gamma, opts.mahal_threshold,
                  opts.ransac_iterations, rng.split("ransac"));
  // Per-set inlier subsets (in each set's original frame order).
  std::vector<std::vector<Eigen::Index>> kept(2);
  for (size_t i = 0; i < entries.size(); ++i) {
    if (unfold.inliers[i]) {
      kept[static_cast<size_t>(entries[i].source)].push_back(entries[i].index);
    }
  }
  std::array<FaceSet, 2> inlier_sets;
  const std::array<const FaceSet*, 2> sources = {&set_a, &set_b};
  for (int s = 0; s < 2; ++s) {
    const auto& keep = kept[static_cast<size_t>(s)];
    if (keep.empty()) {
      throw NoConsensus(std::string("robust_kernel_rad: no inliers left in set ") +
                        (s == 0 ? "A" : "B"));
    }
    std::vector<Eigen::Index> sorted_keep = keep;
    std::sort(sorted_keep.begin(), sorted_keep.end());
    FaceSet inl = *sources[static_cast<size_t>(s)];
    inl.frames.resize(inl.dim(), static_cast<Eigen::Index>(sorted_keep.size()));
    for (size_t i = 0; i < sorted_keep.size(); ++i) {
      inl.frames.col(static_cast<Eigen::Index>(i)) =
          sources[static_cast<size_t>(s)]->frames.col(sorted_keep[i]);
    }
    if (opts.repopulate_per_face > 0) {
      Rng repop = rng.split(hash_matrix(inl.frames));
      inl = affine_repopulate(inl, opts.repopulate_per_face, opts.pert, repop);
    }
    inlier_sets[static_cast<size_t>(s)] = std::move(inl);
  }
  // Final unfolding on the (sorted) combined inlier data.
  Matrix combined(set_a.dim(), inlier_sets[0].size() + inlier_sets[1].size());
  combined << inlier_sets[0].frames, inlier_sets[1].frames;
  Matrix combined_sorted = combined;
  {
    std::vector<Eigen::Index> order(static_cast<size_t>(combined.cols()));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) {
      for (Eigen::Index r = 0; r < combined.rows(); ++r) {
        if (combined(r, x) < combined(r, y)) return true;
        if (combined(r, x) > combined(r, y)) return false;
      }
      return false;
    });
    for (Eigen::Index i = 0; i < combined.cols(); ++i) {
      combined_sorted.col(i) = combined.col(order[static_cast<size_t>(i)]);
    }
  }
  const KpcaModel final_model = kpca_fit(combined_sorted, opts.kpca_dim, opts.gamma);
  const Matrix proj_a = kpca_project_batch(final_model, inlier_sets[0].frames);
  const Matrix proj_b = kpca_project_batch(final_model, inlier_sets[1].frames);
  const GaussianComponent ga = projected_gaussian(proj_a, opts.gauss_energy);
  const GaussianComponent gb = projected_gaussian(proj_b, opts.gauss_energy);
  return rad(kl_gaussian(ga, gb), kl_gaussian(gb, ga));
}

}  // namespace mm
