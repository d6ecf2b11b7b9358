#include "mm/gsim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "mm/filters.hpp"
#include "mm/io.hpp"
#include "mm/parallel.hpp"

namespace mm {

namespace {

// Adjacency of the symmetrized K-NN relation plus each node's own neighbour
// list (ascending distance, ties broken by index).
struct KnnEdges {
  std::vector<std::vector<Eigen::Index>> neighbors;
  std::vector<std::vector<Eigen::Index>> adjacency;
};

KnnEdges knn_edges(const std::vector<Vector>& vectors, int k) {
  const auto n = static_cast<Eigen::Index>(vectors.size());
  KnnEdges out;
  out.neighbors.resize(vectors.size());
  out.adjacency.resize(vectors.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<std::pair<double, Eigen::Index>> order;
    order.reserve(vectors.size() - 1);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      order.emplace_back((vectors[i] - vectors[j]).norm(), j);
    }
    std::sort(order.begin(), order.end());
    for (int t = 0; t < k; ++t) out.neighbors[i].push_back(order[static_cast<size_t>(t)].second);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (const Eigen::Index j : out.neighbors[i]) {
      out.adjacency[i].push_back(j);
      out.adjacency[j].push_back(i);
    }
  }
  return out;
}

std::vector<int> component_labels(const std::vector<std::vector<Eigen::Index>>& adjacency) {
  const size_t n = adjacency.size();
  std::vector<int> label(n, -1);
  int next = 0;
  std::vector<Eigen::Index> stack;
  for (size_t s = 0; s < n; ++s) {
    if (label[s] != -1) continue;
    label[s] = next;
    stack.push_back(static_cast<Eigen::Index>(s));
    while (!stack.empty()) {
      const Eigen::Index at = stack.back();
      stack.pop_back();
      for (const Eigen::Index j : adjacency[static_cast<size_t>(at)]) {
        if (label[static_cast<size_t>(j)] == -1) {
          label[static_cast<size_t>(j)] = next;
          stack.push_back(j);
        }
      }
    }
    ++next;
  }
  return label;
}

}  // namespace

std::vector<int> knn_components(const std::vector<Vector>& vectors, int k) {
  if (vectors.empty()) return {};
  if (k < 1 || static_cast<size_t>(k) >= vectors.size()) {
    throw InvalidParams("knn_components: need 1 <= k < point count");
  }
  return component_labels(knn_edges(vectors, k).adjacency);
}

GeodesicGraph build_geodesics(const std::vector<Vector>& vectors, int k) {
  const auto n = static_cast<Eigen::Index>(vectors.size());
  if (n < 2) throw TooFewPoints("build_geodesics: needs at least 2 points");
  if (k < 1 || k >= n) throw InvalidParams("build_geodesics: need 1 <= k < point count");
  KnnEdges edges = knn_edges(vectors, k);
  const std::vector<int> labels = component_labels(edges.adjacency);
  const int n_components = 1 + *std::max_element(labels.begin(), labels.end());
  if (n_components > 1) {
    throw DisconnectedGraph("build_geodesics: neighbour graph has " +
                            std::to_string(n_components) + " components");
  }
  GeodesicGraph graph;
  graph.n = n;
  graph.k = k;
  graph.neighbors = std::move(edges.neighbors);
  const double inf = std::numeric_limits<double>::infinity();
  graph.dist = Matrix::Constant(n, n, inf);
  for (Eigen::Index i = 0; i < n; ++i) graph.dist(i, i) = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (const Eigen::Index j : graph.neighbors[static_cast<size_t>(i)]) {
      const double w = (vectors[static_cast<size_t>(i)] - vectors[static_cast<size_t>(j)]).norm();
      graph.dist(i, j) = std::min(graph.dist(i, j), w);
      graph.dist(j, i) = graph.dist(i, j);
    }
  }
  for (Eigen::Index mid = 0; mid < n; ++mid) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double di = graph.dist(i, mid);
      if (di == inf) continue;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double through = di + graph.dist(mid, j);
        if (through < graph.dist(i, j)) graph.dist(i, j) = through;
      }
    }
  }
  return graph;
}

Vector pose_signature(const Matrix& image) {
  FilterKind kind;
  kind.tag = FilterTag::Ed;
  const Matrix transformed = apply_filter(kind, image);
  return Eigen::Map<const Vector>(transformed.data(), transformed.size());
}

namespace {

struct FitnessContext {
  const Matrix* pair_cost;  // N1 x N2 squared signature distances
  const GeodesicGraph* geo2;
  // Precomputed (source frame, neighbour frame, inverse domain geodesic).
  std::vector<std::array<Eigen::Index, 2>> reg_pairs;
  std::vector<double> reg_inv_weights;
  double omega = 0.0;
};

double match_term(const FitnessContext& ctx, const std::vector<Eigen::Index>& genes) {
  double acc = 0.0;
  for (size_t j = 0; j < genes.size(); ++j) {
    acc += (*ctx.pair_cost)(static_cast<Eigen::Index>(j), genes[j]);
  }
  return acc;
}

double reg_term(const FitnessContext& ctx, const std::vector<Eigen::Index>& genes) {
  double acc = 0.0;
  for (size_t t = 0; t < ctx.reg_pairs.size(); ++t) {
    const auto [j, nbr] = ctx.reg_pairs[t];
    acc += ctx.geo2->dist(genes[static_cast<size_t>(j)], genes[static_cast<size_t>(nbr)]) *
           ctx.reg_inv_weights[t];
  }
  return acc;
}

double fitness_of(const FitnessContext& ctx, const std::vector<Eigen::Index>& genes) {
  return match_term(ctx, genes) + ctx.omega * reg_term(ctx, genes);
}

}  // namespace

PoseMatch ga_pose_match(const std::vector<Vector>& sigs1, const std::vector<Vector>& sigs2,
                        const GeodesicGraph& geo1, const GeodesicGraph& geo2, double omega,
                        const GaConfig& cfg, const Rng& rng) {
  const auto n1 = static_cast<Eigen::Index>(sigs1.size());
  const auto n2 = static_cast<Eigen::Index>(sigs2.size());
  if (n1 < 1 || n2 < 1) throw TooFewPoints("ga_pose_match: empty sequence");
  if (geo1.n != n1 || geo2.n != n2) {
    throw DimensionMismatch("ga_pose_match: geodesic graphs do not match the sequences");
  }
  if (cfg.population < 1 || cfg.elite < 0 || cfg.elite > cfg.population ||
      cfg.max_generations < 0) {
    throw InvalidParams("ga_pose_match: bad population configuration");
  }

  Matrix pair_cost(n1, n2);
  for (Eigen::Index i = 0; i < n1; ++i) {
    for (Eigen::Index j = 0; j < n2; ++j) {
      pair_cost(i, j) = (sigs1[static_cast<size_t>(i)] - sigs2[static_cast<size_t>(j)]).squaredNorm();
    }
  }
  FitnessContext ctx;
  ctx.pair_cost = &pair_cost;
  ctx.geo2 = &geo2;
  ctx.omega = omega;
  // Smallest nonzero geodesic of the domain sequence clamps the inverse
  // weights so duplicate frames cannot blow the regularizer up.
  double clamp = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n1; ++i) {
    for (Eigen::Index j = i + 1; j < n1; ++j) {
      if (geo1.dist(i, j) > 0.0) clamp = std::min(clamp, geo1.dist(i, j));
    }
  }
  if (!std::isfinite(clamp)) clamp = 1.0;
  for (Eigen::Index j = 0; j < n1; ++j) {
    for (const Eigen::Index nbr : geo1.neighbors[static_cast<size_t>(j)]) {
      ctx.reg_pairs.push_back({j, nbr});
      ctx.reg_inv_weights.push_back(1.0 / std::max(geo1.dist(j, nbr), clamp));
    }
  }

  Rng work = rng.split("pose-match-ga");
  const auto pop_size = static_cast<size_t>(cfg.population);
  std::vector<std::vector<Eigen::Index>> population(pop_size);
  // One greedy seed (independent per-frame best match); the rest random.
  population[0].resize(static_cast<size_t>(n1));
  for (Eigen::Index j = 0; j < n1; ++j) {
    Eigen::Index best = 0;
    pair_cost.row(j).minCoeff(&best);
    population[0][static_cast<size_t>(j)] = best;
  }
  for (size_t p = 1; p < pop_size; ++p) {
    population[p].resize(static_cast<size_t>(n1));
    for (Eigen::Index j = 0; j < n1; ++j) {
      population[p][static_cast<size_t>(j)] =
          static_cast<Eigen::Index>(work.next_index(static_cast<u64>(n2)));
    }
  }

  std::vector<double> fitness(pop_size);
  auto evaluate = [&]() {
    parallel_for(pop_size, [&](size_t p) { fitness[p] = fitness_of(ctx, population[p]); });
  };
  evaluate();

  PoseMatch best;
  best.fitness = std::numeric_limits<double>::infinity();
  auto update_best = [&]() {
    for (size_t p = 0; p < pop_size; ++p) {
      if (fitness[p] < best.fitness) {
        best.fitness = fitness[p];
        best.mapping = population[p];
      }
    }
    best.fitness_trace.push_back(best.fitness);
  };
  update_best();

  const int n_migrants = static_cast<int>(std::lround(cfg.migration * cfg.population));
  for (int gen = 0; gen < cfg.max_generations; ++gen) {
    std::vector<size_t> order(pop_size);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&fitness](size_t a, size_t b) { return fitness[a] < fitness[b]; });
    std::vector<std::vector<Eigen::Index>> next;
    next.reserve(pop_size);
    for (int e = 0; e < cfg.elite && next.size() < pop_size; ++e) {
      next.push_back(population[order[static_cast<size_t>(e)]]);
    }
    for (int m = 0; m < n_migrants && next.size() < pop_size; ++m) {
      std::vector<Eigen::Index> fresh(static_cast<size_t>(n1));
      for (Eigen::Index j = 0; j < n1; ++j) {
        fresh[static_cast<size_t>(j)] = static_cast<Eigen::Index>(work.next_index(static_cast<u64>(n2)));
      }
      next.push_back(std::move(fresh));
    }
    // Rank-based roulette: rank r gets weight (population - r).
    const double total_weight = 0.5 * static_cast<double>(pop_size) * (pop_size + 1);
    auto pick_parent = [&]() -> const std::vector<Eigen::Index>& {
      double ticket = work.next_double() * total_weight;
      for (size_t r = 0; r < pop_size; ++r) {
        const double w = static_cast<double>(pop_size - r);
        if (ticket < w) return population[order[r]];
        ticket -= w;
      }
      return population[order[pop_size - 1]];
    };
    while (next.size() < pop_size) {
      const auto& parent_a = pick_parent();
      const auto& parent_b = pick_parent();
      std::vector<Eigen::Index> child(static_cast<size_t>(n1));
      if (work.next_double() < cfg.crossover) {
        for (Eigen::Index j = 0; j < n1; ++j) {
          const bool from_a = work.next_double() < 0.5;
          child[static_cast<size_t>(j)] =
              from_a ? parent_a[static_cast<size_t>(j)] : parent_b[static_cast<size_t>(j)];
        }
      } else {
        child = parent_a;
      }
      for (Eigen::Index j = 0; j < n1; ++j) {
        if (work.next_double() < cfg.mutation) {
          child[static_cast<size_t>(j)] = static_cast<Eigen::Index>(work.next_index(static_cast<u64>(n2)));
        }
      }
      next.push_back(std::move(child));
    }
    population = std::move(next);
    evaluate();
    update_best();
  }
  best.matching_term = match_term(ctx, best.mapping);
  best.regularization_term = reg_term(ctx, best.mapping);
  best.fitness = best.matching_term + omega * best.regularization_term;
  return best;
}

ReilluminationWeights reillumination_weights(const Vector& target_sig,
                                             const std::vector<Vector>& neighbor_sigs) {
  const auto k = static_cast<Eigen::Index>(neighbor_sigs.size());
  if (k < 1) throw TooFewPoints("reillumination_weights: needs at least one neighbour");
  for (const auto& sig : neighbor_sigs) {
    if (sig.size() != target_sig.size()) {
      throw DimensionMismatch("reillumination_weights: signature dimensions differ");
    }
  }
  ReilluminationWeights out;
  out.alphas = Vector::Zero(k);
  if (k == 1) {
    out.alphas[0] = 1.0;
    return out;
  }
  // With alpha_1 eliminated by the sum-to-one constraint, the stationarity
  // conditions are R a = t over the remaining K-1 weights.
  Matrix r(k - 1, k - 1);
  Vector t(k - 1);
  const Vector& first = neighbor_sigs[0];
  for (Eigen::Index j = 0; j < k - 1; ++j) {
    const Vector dj = first - neighbor_sigs[static_cast<size_t>(j + 1)];
    t[j] = dj.dot(first - target_sig);
    for (Eigen::Index c = 0; c < k - 1; ++c) {
      r(j, c) = dj.dot(first - neighbor_sigs[static_cast<size_t>(c + 1)]);
    }
  }
  const Eigen::FullPivLU<Matrix> lu(r);
  bool ok = lu.isInvertible();
  Vector tail;
  if (ok) {
    tail = lu.solve(t);
    ok = tail.allFinite() && (r * tail - t).norm() <= 1e-8 * (t.norm() + 1.0);
  }
  if (!ok) {
    out.alphas.setConstant(1.0 / static_cast<double>(k));
    out.fallback_uniform = true;
    return out;
  }
  out.alphas.tail(k - 1) = tail;
  out.alphas[0] = 1.0 - tail.sum();
  return out;
}

Vector fine_reilluminate(const Vector& target_sig, const std::vector<Vector>& neighbor_sigs,
                         const std::vector<Vector>& neighbor_frames) {
  if (neighbor_sigs.size() != neighbor_frames.size()) {
    throw DimensionMismatch("fine_reilluminate: one frame per signature expected");
  }
  const ReilluminationWeights w = reillumination_weights(target_sig, neighbor_sigs);
  Vector out = Vector::Zero(neighbor_frames[0].size());
  for (size_t j = 0; j < neighbor_frames.size(); ++j) {
    if (neighbor_frames[j].size() != out.size()) {
      throw DimensionMismatch("fine_reilluminate: frame dimensions differ");
    }
    out += w.alphas[static_cast<Eigen::Index>(j)] * neighbor_frames[j];
  }
  return out;
}

Matrix sim_samples(const Matrix& frames_a, const Matrix& frames_b, double log_epsilon) {
  if (frames_a.rows() != frames_b.rows() || frames_a.cols() != frames_b.cols()) {
    throw ShapeMismatch("sim_samples: frame blocks must have identical shape");
  }
  return ((frames_a.array() + log_epsilon).log() - (frames_b.array() + log_epsilon).log()).matrix();
}

namespace {

std::vector<Vector> sequence_signatures(const FaceSet& set) {
  std::vector<Vector> sigs(static_cast<size_t>(set.frames.cols()));
  parallel_for(sigs.size(), [&](size_t i) {
    sigs[i] = pose_signature(set.frame_image(static_cast<Eigen::Index>(i)));
  });
  return sigs;
}

// Trivial one-node graph used when a sequence is too short for K-NN.
GeodesicGraph singleton_graph() {
  GeodesicGraph g;
  g.n = 1;
  g.k = 0;
  g.dist = Matrix::Zero(1, 1);
  g.neighbors.resize(1);
  return g;
}

GeodesicGraph clamped_geodesics(const std::vector<Vector>& sigs, int k) {
  if (sigs.size() < 2) return singleton_graph();
  const int k_eff = std::min<int>(k, static_cast<int>(sigs.size()) - 1);
  return build_geodesics(sigs, std::max(1, k_eff));
}

}  // namespace

Matrix reilluminate_sequence(const FaceSet& seq1, const FaceSet& seq2, const GsimConfig& cfg,
                             const Rng& rng) {
  if (seq1.frames.cols() == 0 || seq2.frames.cols() == 0) {
    throw TooFewPoints("reilluminate_sequence: empty sequence");
  }
  if (seq1.frames.rows() != seq2.frames.rows()) {
    throw DimensionMismatch("reilluminate_sequence: frame dimensions differ");
  }
  const std::vector<Vector> sigs1 = sequence_signatures(seq1);
  const std::vector<Vector> sigs2 = sequence_signatures(seq2);
  const GeodesicGraph geo1 = clamped_geodesics(sigs1, cfg.knn_k);
  const GeodesicGraph geo2 = clamped_geodesics(sigs2, cfg.knn_k);
  const PoseMatch match =
      ga_pose_match(sigs1, sigs2, geo1, geo2, cfg.omega, cfg.ga, rng.split("pose-match"));
  const auto n2 = static_cast<size_t>(seq2.frames.cols());
  Matrix out(seq1.frames.rows(), seq1.frames.cols());
  parallel_for(static_cast<size_t>(seq1.frames.cols()), [&](size_t i) {
    const Eigen::Index matched = match.mapping[i];
    // Reconstruction support: the matched frame first, then its nearest
    // neighbours, K frames in total.
    std::vector<Vector> sigs, frames;
    sigs.push_back(sigs2[static_cast<size_t>(matched)]);
    frames.push_back(seq2.frames.col(matched));
    const auto& nbrs = geo2.neighbors[static_cast<size_t>(matched)];
    for (size_t t = 0; t < nbrs.size() && sigs.size() < std::min<size_t>(n2, static_cast<size_t>(cfg.knn_k)); ++t) {
      sigs.push_back(sigs2[static_cast<size_t>(nbrs[t])]);
      frames.push_back(seq2.frames.col(nbrs[t]));
    }
    out.col(static_cast<Eigen::Index>(i)) =
        fine_reilluminate(sigs1[i], sigs, frames);
  });
  return out;
}

GsimModel train_gsim(const std::vector<std::vector<FaceSet>>& corpus, const GsimConfig& cfg,
                     const Rng& rng) {
  struct PairTask {
    size_t person, from, to;
  };
  std::vector<PairTask> tasks;
  for (size_t p = 0; p < corpus.size(); ++p) {
    for (size_t a = 0; a < corpus[p].size(); ++a) {
      if (corpus[p][a].frames.cols() == 0) continue;
      for (size_t b = 0; b < corpus[p].size(); ++b) {
        if (a == b || corpus[p][b].frames.cols() == 0) continue;
        tasks.push_back({p, a, b});
      }
    }
  }
  if (tasks.empty()) {
    throw SingleIllumination("train_gsim: no person has two usable capture conditions");
  }
  std::vector<Matrix> blocks(tasks.size());
  parallel_for(tasks.size(), [&](size_t t) {
    const auto& task = tasks[t];
    const FaceSet& from = corpus[task.person][task.from];
    const FaceSet& to = corpus[task.person][task.to];
    const u64 stream = (static_cast<u64>(task.person) << 32) |
                       (static_cast<u64>(task.from) << 16) | static_cast<u64>(task.to);
    const Matrix reillum = reilluminate_sequence(from, to, cfg, rng.split("train").split(stream));
    blocks[t] = sim_samples(from.frames, reillum, cfg.log_epsilon);
  });
  Eigen::Index total = 0;
  for (const auto& b : blocks) total += b.cols();
  Matrix pooled(blocks[0].rows(), total);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    pooled.middleCols(at, b.cols()) = b;
    at += b.cols();
  }
  GsimModel model;
  model.log_epsilon = cfg.log_epsilon;
  model.config = cfg;
  model.mixture = fit_ppca_mixture(pooled, rng.split("gsim-fit"), cfg.mixture).mixture;
  return model;
}

double robust_similarity(const FaceSet& novel, const FaceSet& gallery_seq, const GsimModel& model,
                         const Rng& rng, double top_fraction) {
  if (!(top_fraction > 0.0 && top_fraction <= 1.0)) {
    throw InvalidParams("robust_similarity: top_fraction must lie in (0, 1]");
  }
  const Matrix reillum = reilluminate_sequence(novel, gallery_seq, model.config, rng.split("match"));
  const Matrix diffs = sim_samples(novel.frames, reillum, model.log_epsilon);
  Vector ll = log_pdf_batch(model.mixture, diffs);
  std::sort(ll.data(), ll.data() + ll.size(), std::greater<double>());
  const auto keep = static_cast<Eigen::Index>(
      std::ceil(top_fraction * static_cast<double>(ll.size())));
  return ll.head(std::max<Eigen::Index>(keep, 1)).mean();
}

void save_gsim(const std::string& path, const GsimModel& model) {
  nlohmann::json j;
  j["mixture"] = mixture_to_json(model.mixture);
  j["log_epsilon"] = model.log_epsilon;
  j["knn_k"] = model.config.knn_k;
  j["omega"] = model.config.omega;
  j["ga"] = {{"population", model.config.ga.population},
             {"elite", model.config.ga.elite},
             {"mutation", model.config.ga.mutation},
             {"migration", model.config.ga.migration},
             {"crossover", model.config.ga.crossover},
             {"max_generations", model.config.ga.max_generations}};
  save_json(path, j);
}

GsimModel load_gsim(const std::string& path) {
  const nlohmann::json j = load_json(path);
  reject_unknown_keys(j, {"mixture", "log_epsilon", "knn_k", "omega", "ga"}, "gsim model");
  GsimModel model;
  model.mixture = mixture_from_json(j.at("mixture"), path);
  model.log_epsilon = j.at("log_epsilon").get<double>();
  model.config.log_epsilon = model.log_epsilon;
  model.config.knn_k = j.at("knn_k").get<int>();
  model.config.omega = j.at("omega").get<double>();
  const auto& ga = j.at("ga");
  reject_unknown_keys(ga, {"population", "elite", "mutation", "migration", "crossover", "max_generations"},
                      "gsim ga settings");
  model.config.ga.population = ga.at("population").get<int>();
  model.config.ga.elite = ga.at("elite").get<int>();
  model.config.ga.mutation = ga.at("mutation").get<double>();
  model.config.ga.migration = ga.at("migration").get<double>();
  model.config.ga.crossover = ga.at("crossover").get<double>();
  model.config.ga.max_generations = ga.at("max_generations").get<int>();
  return model;
}

}  // namespace mm
