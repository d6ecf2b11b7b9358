// Batch command-line front end for the manifold-match toolkit.
//
// Subcommands: synth | fit | match | recognize | cluster | eval | stream.
// Configuration comes from a JSON file (--config) plus flag overrides; flags
// win over the file, and the MM_SEED environment variable overrides both for
// the seed.  Every command writes its artifacts under --out and prints a JSON
// report to stdout; errors leave a machine-readable JSON object on stderr and
// a nonzero exit code.  Identical config + seed produce byte-identical
// artifacts regardless of --jobs.

#include "mm/dataset.hpp"
#include "mm/divergence.hpp"
#include "mm/errors.hpp"
#include "mm/eval.hpp"
#include "mm/filters.hpp"
#include "mm/gmm.hpp"
#include "mm/gsim.hpp"
#include "mm/inc_gmm.hpp"
#include "mm/io.hpp"
#include "mm/kernel.hpp"
#include "mm/manifold_space.hpp"
#include "mm/parallel.hpp"
#include "mm/rng.hpp"
#include "mm/subspace.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

const std::vector<std::string> kCommands = {"synth",   "fit",  "match", "recognize",
                                            "cluster", "eval", "stream"};

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  json j = mm::load_json(path);
  if (!j.is_object()) throw mm::BadConfig("config root must be a JSON object: " + path);
  std::vector<std::string> allowed = {"seed", "jobs", "out"};
  allowed.insert(allowed.end(), kCommands.begin(), kCommands.end());
  mm::reject_unknown_keys(j, allowed, "config");
  return j;
}

json config_section(const json& config, const std::string& name,
                    const std::vector<std::string>& allowed) {
  if (!config.contains(name)) return json::object();
  const json& sec = config.at(name);
  if (!sec.is_object()) throw mm::BadConfig("config." + name + " must be an object");
  mm::reject_unknown_keys(sec, allowed, "config." + name);
  return sec;
}

template <class T>
T cfg(const json& sec, const std::string& key, T fallback) {
  if (!sec.contains(key)) return fallback;
  try {
    return sec.at(key).get<T>();
  } catch (const json::exception& e) {
    throw mm::BadConfig("config key '" + key + "': " + e.what());
  }
}

std::vector<std::string> cfg_strings(const json& sec, const std::string& key) {
  if (!sec.contains(key)) return {};
  try {
    return sec.at(key).get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw mm::BadConfig("config key '" + key + "': " + e.what());
  }
}

mm::u64 parse_u64(const std::string& text, const std::string& what) {
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(text.c_str(), &end, 10);
  if (errno != 0 || end == text.c_str() || *end != '\0') {
    throw mm::BadConfig(what + " is not a valid unsigned integer: '" + text + "'");
  }
  return static_cast<mm::u64>(v);
}

std::string join2(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void ensure_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw mm::IoError("cannot create output directory '" + out + "': " + ec.message());
}

std::string hex_u64(mm::u64 v) {
  std::ostringstream o;
  o << "0x" << std::hex << std::setw(16) << std::setfill('0') << v;
  return o.str();
}

void emit_report(const json& report) { std::cout << report.dump(2) << "\n"; }

// ---------------------------------------------------------------------------
// Subspace persistence (constraint models)
// ---------------------------------------------------------------------------

json subspace_to_json(const mm::LinearSubspace& s) {
  json j;
  j["basis"] = mm::matrix_to_json(s.basis);
  j["eigenvalues"] = mm::vector_to_json(s.eigenvalues);
  j["mean"] = s.mean.size() > 0 ? mm::vector_to_json(s.mean) : json(nullptr);
  j["sample_count"] = s.sample_count;
  j["truncated"] = s.truncated;
  return j;
}

mm::LinearSubspace subspace_from_json(const json& j, const std::string& context) {
  mm::reject_unknown_keys(j, {"basis", "eigenvalues", "mean", "sample_count", "truncated"},
                          context);
  mm::LinearSubspace s;
  try {
    s.basis = mm::matrix_from_json(j.at("basis"), context + ".basis");
    s.eigenvalues = mm::vector_from_json(j.at("eigenvalues"), context + ".eigenvalues");
    if (j.contains("mean") && !j.at("mean").is_null()) {
      s.mean = mm::vector_from_json(j.at("mean"), context + ".mean");
    }
    s.sample_count = j.at("sample_count").get<Eigen::Index>();
    s.truncated = j.at("truncated").get<bool>();
  } catch (const json::exception& e) {
    throw mm::ParseError("bad subspace model " + context + ": " + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Corpus loading and filtering
// ---------------------------------------------------------------------------

std::vector<mm::FaceSet> load_manifest_sets(const std::string& manifest_path) {
  const mm::SequenceManifest manifest = mm::load_manifest(manifest_path);
  std::vector<mm::FaceSet> sets;
  for (const auto& person : manifest.persons) {
    for (const auto& seq : person.sequences) {
      sets.push_back(mm::load_face_set(manifest, person.person_id, seq.sequence_id));
    }
  }
  if (sets.empty()) throw mm::BadManifest("manifest lists no sequences: " + manifest_path);
  return sets;
}

std::vector<mm::FaceSet> load_corpus_sets(const std::string& corpus_path) {
  const mm::VectorCorpus corpus = mm::load_vector_corpus(corpus_path);
  std::vector<mm::FaceSet> sets;
  for (const auto& info : corpus.sets) {
    mm::FaceSet s;
    s.frames = mm::load_matrix(join2(corpus.root_path, info.path));
    s.person_id = info.label;
    s.sequence_id = info.set_id;
    sets.push_back(std::move(s));
  }
  if (sets.empty()) throw mm::BadManifest("vector corpus lists no sets: " + corpus_path);
  return sets;
}

mm::FilterKind parse_cli_filter(const std::string& name) {
  static const std::vector<std::string> allowed = {"raw", "hp", "qi", "ed", "lg", "dx", "dy"};
  if (std::find(allowed.begin(), allowed.end(), name) == allowed.end()) {
    throw mm::BadConfig("unsupported filter '" + name + "' (use raw|hp|qi|ed|lg|dx|dy)");
  }
  return mm::FilterKind::parse(name);
}

mm::FaceSet filter_set(const mm::FaceSet& s, const mm::FilterKind& kind) {
  if (kind.tag == mm::FilterTag::Raw) return s;
  if (s.height <= 0 || s.width <= 0) {
    throw mm::BadConfig("filter '" + kind.name() + "' needs image-shaped sets");
  }
  mm::FaceSet out = s;
  for (Eigen::Index i = 0; i < s.frames.cols(); ++i) {
    const mm::Matrix img = mm::unflatten(s.frames.col(i), s.height, s.width);
    out.frames.col(i) = mm::flatten(mm::apply_filter(kind, img));
  }
  return out;
}

std::vector<mm::FaceSet> filter_sets(std::vector<mm::FaceSet> sets, const mm::FilterKind& kind) {
  for (auto& s : sets) s = filter_set(s, kind);
  return sets;
}

// ---------------------------------------------------------------------------
// Similarity factory
// ---------------------------------------------------------------------------

const std::vector<std::string> kMethods = {"mdd", "krad", "msm", "cmsm", "bompa", "mpmm", "gsim"};

struct MethodSettings {
  std::string method = "msm";
  Eigen::Index subspace_dim = mm::kMsmSubspaceDim;
  double mpmm_noise = 1e-2;
  double bompa_alpha = 0.5;
  Eigen::Index mc_samples = mm::kDefaultMcSamples;
  int mdd_max_components = 5;
  std::optional<mm::LinearSubspace> constraint;
  std::shared_ptr<mm::GsimModel> gsim;
  mm::Rng rng{0};
};

MethodSettings resolve_method_settings(const json& sec, const std::string& method_flag,
                                       const mm::Rng& rng) {
  MethodSettings ms;
  ms.method = method_flag.empty() ? cfg<std::string>(sec, "method", "msm") : method_flag;
  if (std::find(kMethods.begin(), kMethods.end(), ms.method) == kMethods.end()) {
    throw mm::BadConfig("unknown method '" + ms.method +
                        "' (use mdd|krad|msm|cmsm|bompa|mpmm|gsim)");
  }
  ms.subspace_dim = cfg<Eigen::Index>(sec, "subspace_dim", mm::kMsmSubspaceDim);
  ms.mpmm_noise = cfg<double>(sec, "noise", 1e-2);
  ms.bompa_alpha = cfg<double>(sec, "alpha", 0.5);
  ms.mc_samples = cfg<Eigen::Index>(sec, "mc_samples", mm::kDefaultMcSamples);
  ms.mdd_max_components = cfg<int>(sec, "max_components", 5);
  ms.rng = rng;
  const std::string constraint_path = cfg<std::string>(sec, "constraint", "");
  if (!constraint_path.empty()) {
    ms.constraint = subspace_from_json(mm::load_json(constraint_path), constraint_path);
  }
  const std::string gsim_path = cfg<std::string>(sec, "gsim_model", "");
  if (!gsim_path.empty()) {
    ms.gsim = std::make_shared<mm::GsimModel>(mm::load_gsim(gsim_path));
  }
  if (ms.method == "cmsm" && !ms.constraint) {
    throw mm::BadConfig("method cmsm needs a 'constraint' model path");
  }
  if (ms.method == "gsim" && !ms.gsim) {
    throw mm::BadConfig("method gsim needs a 'gsim_model' path");
  }
  return ms;
}

// Content-addressed caches keep per-set fits reusable across pairs; every
// random stream is keyed by the set content, so results do not depend on
// evaluation order.
mm::SetSimilarity make_similarity(const MethodSettings& ms) {
  struct Cache {
    std::mutex mu;
    std::map<mm::u64, mm::LinearSubspace> subspaces;
    std::map<mm::u64, mm::GaussianMixture> mixtures;
  };
  auto cache = std::make_shared<Cache>();
  auto st = std::make_shared<MethodSettings>(ms);

  auto subspace_of = [cache, st](const mm::FaceSet& s, bool subtract_mean) {
    const mm::u64 key = mm::hash_matrix(s.frames) ^ (subtract_mean ? 0x1ULL : 0x0ULL);
    {
      std::lock_guard<std::mutex> lock(cache->mu);
      auto it = cache->subspaces.find(key);
      if (it != cache->subspaces.end()) return it->second;
    }
    mm::LinearSubspace sub = mm::pca_subspace(s.frames, st->subspace_dim, subtract_mean);
    std::lock_guard<std::mutex> lock(cache->mu);
    return cache->subspaces.emplace(key, std::move(sub)).first->second;
  };
  auto mixture_of = [cache, st](const mm::FaceSet& s) {
    const mm::u64 key = mm::hash_matrix(s.frames);
    {
      std::lock_guard<std::mutex> lock(cache->mu);
      auto it = cache->mixtures.find(key);
      if (it != cache->mixtures.end()) return it->second;
    }
    mm::MdlSelection sel = mm::select_mdl(s.frames, st->mdd_max_components, mm::CovKind::Diagonal,
                                          st->rng.split(key));
    std::lock_guard<std::mutex> lock(cache->mu);
    return cache->mixtures.emplace(key, std::move(sel.mixture)).first->second;
  };

  if (ms.method == "msm") {
    return [subspace_of, st](const mm::FaceSet& g, const mm::FaceSet& p) {
      return mm::msm_similarity(subspace_of(g, false), subspace_of(p, false));
    };
  }
  if (ms.method == "cmsm") {
    return [subspace_of, st](const mm::FaceSet& g, const mm::FaceSet& p) {
      return mm::cmsm_similarity(subspace_of(g, false), subspace_of(p, false), *st->constraint);
    };
  }
  if (ms.method == "mpmm") {
    return [subspace_of, st](const mm::FaceSet& g, const mm::FaceSet& p) {
      return mm::mpmm_similarity(subspace_of(g, true), subspace_of(p, true), st->mpmm_noise).score;
    };
  }
  if (ms.method == "bompa") {
    return [st](const mm::FaceSet& g, const mm::FaceSet& p) {
      mm::BompaOptions opts;
      opts.alpha = st->bompa_alpha;
      opts.global_dim = st->subspace_dim;
      const mm::Vector w = mm::Vector::Ones(st->subspace_dim);
      return mm::bompa_similarity(g, p, w, w, st->rng.split("bompa"), opts);
    };
  }
  if (ms.method == "mdd") {
    return [mixture_of, st](const mm::FaceSet& g, const mm::FaceSet& p) {
      const mm::GaussianMixture gm = mixture_of(g);
      const mm::GaussianMixture pm = mixture_of(p);
      const mm::u64 hg = mm::hash_matrix(g.frames);
      const mm::u64 hp = mm::hash_matrix(p.frames);
      const auto fwd =
          mm::kl_mc(pm, gm, st->mc_samples, st->rng.split(hp ^ (hg * 0x9e3779b97f4a7c15ULL)));
      const auto bwd =
          mm::kl_mc(gm, pm, st->mc_samples, st->rng.split(hg ^ (hp * 0x9e3779b97f4a7c15ULL)));
      return -mm::rad(fwd.value, bwd.value);
    };
  }
  if (ms.method == "krad") {
    return [st](const mm::FaceSet& g, const mm::FaceSet& p) {
      return -mm::robust_kernel_rad(g, p, st->rng.split("krad"));
    };
  }
  // gsim
  return [st](const mm::FaceSet& g, const mm::FaceSet& p) {
    return mm::robust_similarity(p, g, *st->gsim, st->rng.split("gsim-match"));
  };
}

// ---------------------------------------------------------------------------
// synth generators
// ---------------------------------------------------------------------------

mm::u64 fnv_combine(mm::u64 h, mm::u64 v) {
  for (int b = 0; b < 8; ++b) {
    h ^= (v >> (8 * b)) & 0xffULL;
    h *= 1099511628211ULL;
  }
  return h;
}

json synth_points(const std::string& generator, const std::string& out, Eigen::Index count,
                  mm::Rng& rng) {
  mm::Matrix pts = generator == "radial-gaussian" ? mm::synth_radial_gaussian(count, rng)
                                                  : mm::synth_sinusoid(count, rng);
  const std::vector<Eigen::Index> order = mm::temporal_order(pts);
  mm::Matrix ordered(pts.rows(), pts.cols());
  for (Eigen::Index i = 0; i < pts.cols(); ++i) ordered.col(i) = pts.col(order[static_cast<std::size_t>(i)]);

  mm::save_matrix(join2(out, "points.csv"), ordered);
  std::ostringstream stream_csv;
  for (Eigen::Index i = 0; i < ordered.cols(); ++i) {
    for (Eigen::Index r = 0; r < ordered.rows(); ++r) {
      if (r > 0) stream_csv << ",";
      stream_csv << mm::format_full(ordered(r, i));
    }
    stream_csv << "\n";
  }
  mm::write_text_file(join2(out, "stream.csv"), stream_csv.str());

  mm::VectorCorpus corpus;
  corpus.root_path = out;
  corpus.sets.push_back({"stream", generator, "points.csv"});
  mm::save_vector_corpus(join2(out, "corpus.json"), corpus);

  json report;
  report["command"] = "synth";
  report["generator"] = generator;
  report["count"] = ordered.cols();
  report["checksum"] = hex_u64(mm::hash_matrix(ordered));
  report["out"] = out;
  return report;
}

json synth_blobs(const json& sec, const std::string& out, mm::Rng& rng) {
  const int classes = cfg<int>(sec, "classes", 2);
  const int sets_per_class = cfg<int>(sec, "sets_per_class", 4);
  const int points_per_set = cfg<int>(sec, "points_per_set", 40);
  const int dim = cfg<int>(sec, "dim", 20);
  const double separation = cfg<double>(sec, "separation", 10.0);
  const double spread = cfg<double>(sec, "spread", 3.0);
  const double jitter = cfg<double>(sec, "jitter", 0.1);
  if (classes < 1 || sets_per_class < 1 || points_per_set < 1 || dim < 1) {
    throw mm::BadConfig("blob corpus parameters must be positive");
  }
  const int block = std::max(1, dim / (2 * std::max(classes, 1)));
  if (classes * block > dim) throw mm::BadConfig("blob corpus dim too small for the class count");

  mm::VectorCorpus corpus;
  corpus.root_path = out;
  mm::u64 checksum = 1469598103934665603ULL;
  for (int c = 0; c < classes; ++c) {
    for (int k = 0; k < sets_per_class; ++k) {
      mm::Matrix m = mm::Matrix::Zero(dim, points_per_set);
      for (int p = 0; p < points_per_set; ++p) {
        for (int d = 0; d < dim; ++d) m(d, p) = jitter * rng.next_normal();
        m(c * block, p) += separation;
        for (int b = 0; b < block; ++b) m(c * block + b, p) += spread * rng.next_normal();
      }
      const std::string name =
          "set_" + std::to_string(c) + "_" + std::to_string(k) + ".csv";
      mm::save_matrix(join2(out, name), m);
      corpus.sets.push_back(
          {"set" + std::to_string(c) + "_" + std::to_string(k), "class" + std::to_string(c), name});
      checksum = fnv_combine(checksum, mm::hash_matrix(m));
    }
  }
  mm::save_vector_corpus(join2(out, "corpus.json"), corpus);

  json report;
  report["command"] = "synth";
  report["generator"] = "blobs";
  report["classes"] = classes;
  report["sets"] = classes * sets_per_class;
  report["checksum"] = hex_u64(checksum);
  report["out"] = out;
  return report;
}

json synth_lit_faces(const json& sec, const std::string& out, mm::Rng& rng) {
  const int persons = cfg<int>(sec, "persons", 3);
  const int conditions = cfg<int>(sec, "conditions", 2);
  const int frames = cfg<int>(sec, "frames", 12);
  const int height = cfg<int>(sec, "height", 16);
  const int width = cfg<int>(sec, "width", 16);
  if (persons < 1 || conditions < 1 || frames < 1 || height < 4 || width < 4) {
    throw mm::BadConfig("face corpus parameters out of range");
  }
  // Directional multiplicative lighting fields, one preset per condition.
  const std::vector<std::array<double, 3>> presets = {
      {1.0, 0.0, 0.0},   {0.55, 0.8, 0.0}, {0.55, 0.0, 0.8},
      {0.55, -0.8, 0.0}, {0.55, 0.0, -0.8}, {0.4, 0.5, 0.5}};

  mm::SequenceManifest manifest;
  manifest.root_path = out;
  manifest.height = height;
  manifest.width = width;

  mm::u64 checksum = 1469598103934665603ULL;
  for (int p = 0; p < persons; ++p) {
    mm::Matrix noise(height, width);
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) noise(r, c) = rng.next_normal();
    }
    mm::Matrix base = mm::gaussian_blur(noise, 2.5);
    const double lo = base.minCoeff();
    const double hi = base.maxCoeff();
    base = ((base.array() - lo) / std::max(hi - lo, 1e-12) * 0.6 + 0.2).matrix();

    mm::PersonInfo person;
    person.person_id = "p" + std::to_string(p);
    for (int c = 0; c < conditions; ++c) {
      const auto& preset = presets[static_cast<std::size_t>(c) % presets.size()];
      mm::SequenceInfo seq;
      seq.sequence_id = "c" + std::to_string(c);
      seq.illumination_tag = "cond" + std::to_string(c);
      for (int t = 0; t < frames; ++t) {
        const double phase = 2.0 * mm::kPi * t / frames;
        const int dx = static_cast<int>(std::lround(2.0 * std::sin(phase)));
        const int dy = static_cast<int>(std::lround(2.0 * std::cos(phase)));
        mm::Matrix frame(height, width);
        for (int r = 0; r < height; ++r) {
          for (int cc = 0; cc < width; ++cc) {
            const int sr = std::clamp(r - dy, 0, height - 1);
            const int sc = std::clamp(cc - dx, 0, width - 1);
            const double gx = width > 1 ? (2.0 * cc / (width - 1.0) - 1.0) : 0.0;
            const double gy = height > 1 ? (2.0 * r / (height - 1.0) - 1.0) : 0.0;
            const double light =
                std::clamp(preset[0] + preset[1] * gx + preset[2] * gy, 0.25, 1.3);
            const double v = base(sr, sc) * light + 0.01 * rng.next_normal();
            frame(r, cc) = std::clamp(v, 0.0, 1.0);
          }
        }
        std::ostringstream name;
        name << "faces/p" << p << "/c" << c << "/f" << std::setw(3) << std::setfill('0') << t
             << ".pgm";
        ensure_out_dir(join2(out, "faces/p" + std::to_string(p) + "/c" + std::to_string(c)));
        mm::encode_pgm(join2(out, name.str()), frame);
        seq.frame_paths.push_back(name.str());
        checksum = fnv_combine(checksum, mm::hash_matrix(frame));
      }
      person.sequences.push_back(std::move(seq));
    }
    manifest.persons.push_back(std::move(person));
  }
  mm::save_manifest(join2(out, "manifest.json"), manifest);

  json report;
  report["command"] = "synth";
  report["generator"] = "lit-faces";
  report["persons"] = persons;
  report["conditions"] = conditions;
  report["frames"] = frames;
  report["checksum"] = hex_u64(checksum);
  report["out"] = out;
  return report;
}

// ---------------------------------------------------------------------------
// Command implementations
// ---------------------------------------------------------------------------

int cmd_synth(const json& sec, const std::string& generator_flag, Eigen::Index count_flag,
              const std::string& out, mm::Rng& rng) {
  const std::string generator =
      generator_flag.empty() ? cfg<std::string>(sec, "generator", "") : generator_flag;
  if (generator.empty()) {
    throw mm::BadConfig("synth needs a generator (radial-gaussian|sinusoid|blobs|lit-faces)");
  }
  json report;
  if (generator == "radial-gaussian" || generator == "sinusoid") {
    Eigen::Index count = count_flag > 0 ? count_flag : cfg<Eigen::Index>(sec, "count", 0);
    if (count <= 0) count = generator == "radial-gaussian" ? 100 : 80;
    report = synth_points(generator, out, count, rng);
  } else if (generator == "blobs") {
    report = synth_blobs(sec, out, rng);
  } else if (generator == "lit-faces") {
    report = synth_lit_faces(sec, out, rng);
  } else {
    throw mm::BadConfig("unknown generator '" + generator + "'");
  }
  mm::save_json(join2(out, "synth_report.json"), report);
  emit_report(report);
  return 0;
}

int cmd_fit(const json& sec, const std::string& input_flag, const std::string& model_flag,
            const std::string& filter_flag, const std::string& out, const mm::Rng& rng) {
  const std::string model = model_flag.empty() ? cfg<std::string>(sec, "model", "mdl-full")
                                               : model_flag;
  json report;
  report["command"] = "fit";
  report["model"] = model;

  if (model == "constraint") {
    const std::string manifest = cfg<std::string>(sec, "manifest", "");
    if (manifest.empty()) throw mm::BadConfig("fit model 'constraint' needs a manifest");
    const std::string filter_name =
        filter_flag.empty() ? cfg<std::string>(sec, "filter", "raw") : filter_flag;
    const auto sets = filter_sets(load_manifest_sets(manifest), parse_cli_filter(filter_name));
    const Eigen::Index dim = cfg<Eigen::Index>(sec, "subspace_dim", mm::kMsmSubspaceDim);
    std::vector<mm::LinearSubspace> subspaces;
    subspaces.reserve(sets.size());
    for (const auto& s : sets) subspaces.push_back(mm::pca_subspace(s.frames, dim, false));
    const Eigen::Index retain = cfg<Eigen::Index>(sec, "retain_dim", -1);
    const mm::LinearSubspace constraint = mm::constraint_subspace(subspaces, retain);
    const std::string output = cfg<std::string>(sec, "output", "constraint.json");
    mm::save_json(join2(out, output), subspace_to_json(constraint));
    report["dim"] = constraint.dim();
    report["ambient_dim"] = constraint.ambient_dim();
    report["path"] = join2(out, output);
    emit_report(report);
    return 0;
  }

  const std::string input = input_flag.empty() ? cfg<std::string>(sec, "input", "") : input_flag;
  if (input.empty()) throw mm::BadConfig("fit needs an input matrix path");
  const mm::Matrix data = mm::load_matrix(input);
  const int max_components = cfg<int>(sec, "max_components", 5);
  const std::string output = cfg<std::string>(sec, "output", "model.json");

  if (model == "mdl-full" || model == "mdl-diag") {
    const mm::CovKind kind = model == "mdl-full" ? mm::CovKind::Full : mm::CovKind::Diagonal;
    const mm::MdlSelection sel = mm::select_mdl(data, max_components, kind, rng.split("fit"));
    mm::save_model(join2(out, output), sel.mixture);
    report["order"] = sel.best_order;
    report["description_length"] = sel.description_lengths(sel.best_order - 1);
    report["path"] = join2(out, output);
  } else if (model == "ppca") {
    mm::PpcaMixtureOptions opts;
    opts.max_components = max_components;
    opts.energy = cfg<double>(sec, "energy", 0.95);
    const mm::PpcaMixtureFit fit = mm::fit_ppca_mixture(data, rng.split("fit"), opts);
    mm::save_model(join2(out, output), fit.mixture);
    report["order"] = fit.mixture.order();
    report["rank"] = fit.rank;
    report["stage1_dl"] = fit.stage1_dl;
    report["stage2_dl"] = fit.stage2_dl;
    report["path"] = join2(out, output);
  } else {
    throw mm::BadConfig("unknown fit model '" + model +
                        "' (use mdl-full|mdl-diag|ppca|constraint)");
  }
  emit_report(report);
  return 0;
}

int cmd_match(const json& sec, const std::string& manifest_flag, const std::string& method_flag,
              const std::string& filter_flag, const std::string& out, const mm::Rng& rng) {
  const std::string filter_name =
      filter_flag.empty() ? cfg<std::string>(sec, "filter", "raw") : filter_flag;
  const mm::FilterKind kind = parse_cli_filter(filter_name);

  mm::FaceSet set_a;
  mm::FaceSet set_b;
  const std::string input_a = cfg<std::string>(sec, "input_a", "");
  if (!input_a.empty()) {
    set_a.frames = mm::load_matrix(input_a);
    set_a.sequence_id = "a";
    set_b.frames = mm::load_matrix(cfg<std::string>(sec, "input_b", ""));
    set_b.sequence_id = "b";
  } else {
    const std::string manifest_path =
        manifest_flag.empty() ? cfg<std::string>(sec, "manifest", "") : manifest_flag;
    if (manifest_path.empty()) {
      throw mm::BadConfig("match needs either input_a/input_b matrices or a manifest");
    }
    const mm::SequenceManifest manifest = mm::load_manifest(manifest_path);
    set_a = mm::load_face_set(manifest, cfg<std::string>(sec, "person_a", ""),
                              cfg<std::string>(sec, "sequence_a", ""));
    set_b = mm::load_face_set(manifest, cfg<std::string>(sec, "person_b", ""),
                              cfg<std::string>(sec, "sequence_b", ""));
  }
  set_a = filter_set(set_a, kind);
  set_b = filter_set(set_b, kind);

  const MethodSettings ms = resolve_method_settings(sec, method_flag, rng);
  const mm::SetSimilarity sim = make_similarity(ms);
  const double similarity = sim(set_a, set_b);

  json report;
  report["command"] = "match";
  report["method"] = ms.method;
  report["filter"] = filter_name;
  report["similarity"] = similarity;
  if (ms.method == "mdd" || ms.method == "krad") report["distance"] = -similarity;
  mm::save_json(join2(out, "match.json"), report);
  emit_report(report);
  return 0;
}

int cmd_recognize(const json& sec, const std::string& manifest_flag,
                  const std::string& method_flag, const std::string& filter_flag,
                  const std::string& out, const mm::Rng& rng) {
  const std::string manifest_path =
      manifest_flag.empty() ? cfg<std::string>(sec, "manifest", "") : manifest_flag;
  if (manifest_path.empty()) throw mm::BadConfig("recognize needs a manifest");
  const std::string filter_name =
      filter_flag.empty() ? cfg<std::string>(sec, "filter", "raw") : filter_flag;
  const std::string train_tag = cfg<std::string>(sec, "train_tag", "");
  const std::string test_tag = cfg<std::string>(sec, "test_tag", "");
  if (train_tag.empty() || test_tag.empty()) {
    throw mm::BadConfig("recognize needs train_tag and test_tag");
  }

  const auto sets = filter_sets(load_manifest_sets(manifest_path), parse_cli_filter(filter_name));
  std::vector<const mm::FaceSet*> gallery;
  std::vector<const mm::FaceSet*> probes;
  for (const auto& s : sets) {
    if (s.illumination_tag == train_tag) gallery.push_back(&s);
    if (s.illumination_tag == test_tag) probes.push_back(&s);
  }
  auto by_id = [](const mm::FaceSet* a, const mm::FaceSet* b) {
    if (a->person_id != b->person_id) return a->person_id < b->person_id;
    return a->sequence_id < b->sequence_id;
  };
  std::sort(gallery.begin(), gallery.end(), by_id);
  std::sort(probes.begin(), probes.end(), by_id);
  if (gallery.empty() || probes.empty()) {
    throw mm::BadConfig("no gallery or probe sequences carry the requested tags");
  }

  const MethodSettings ms = resolve_method_settings(sec, method_flag, rng);
  const mm::SetSimilarity sim = make_similarity(ms);

  std::vector<std::vector<double>> scores(probes.size(),
                                          std::vector<double>(gallery.size(), 0.0));
  mm::parallel_for(
      probes.size(),
      [&](std::size_t p) {
        for (std::size_t g = 0; g < gallery.size(); ++g) {
          scores[p][g] = sim(*gallery[g], *probes[p]);
        }
      },
      1);

  json probe_reports = json::array();
  int correct = 0;
  std::ostringstream csv;
  csv << "person,sequence,predicted,correct\n";
  for (std::size_t p = 0; p < probes.size(); ++p) {
    std::vector<std::size_t> order(gallery.size());
    for (std::size_t g = 0; g < gallery.size(); ++g) order[g] = g;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return scores[p][x] > scores[p][y];
    });
    const std::string predicted = gallery[order[0]]->person_id;
    const bool ok = predicted == probes[p]->person_id;
    correct += ok ? 1 : 0;
    json ranked = json::array();
    for (std::size_t g : order) {
      ranked.push_back({{"person", gallery[g]->person_id},
                        {"sequence", gallery[g]->sequence_id},
                        {"score", scores[p][g]}});
    }
    probe_reports.push_back({{"person", probes[p]->person_id},
                             {"sequence", probes[p]->sequence_id},
                             {"predicted", predicted},
                             {"correct", ok},
                             {"ranked", ranked}});
    csv << probes[p]->person_id << "," << probes[p]->sequence_id << "," << predicted << ","
        << (ok ? 1 : 0) << "\n";
  }

  json report;
  report["command"] = "recognize";
  report["method"] = ms.method;
  report["filter"] = filter_name;
  report["train_tag"] = train_tag;
  report["test_tag"] = test_tag;
  report["probes"] = probe_reports;
  report["rate"] = static_cast<double>(correct) / static_cast<double>(probes.size());
  mm::save_json(join2(out, "recognition.json"), report);
  mm::write_text_file(join2(out, "recognition.csv"), csv.str());
  emit_report(report);
  return 0;
}

int cmd_cluster(const json& sec, const std::string& corpus_flag, const std::string& filter_flag,
                const std::string& out, const mm::Rng& rng) {
  (void)rng;
  const std::string corpus_path =
      corpus_flag.empty() ? cfg<std::string>(sec, "corpus", "") : corpus_flag;
  const std::string manifest_path = cfg<std::string>(sec, "manifest", "");
  std::vector<mm::FaceSet> sets;
  if (!corpus_path.empty()) {
    sets = load_corpus_sets(corpus_path);
  } else if (!manifest_path.empty()) {
    sets = load_manifest_sets(manifest_path);
  } else {
    throw mm::BadConfig("cluster needs a vector corpus or a manifest");
  }
  const std::string filter_name =
      filter_flag.empty() ? cfg<std::string>(sec, "filter", "raw") : filter_flag;
  sets = filter_sets(std::move(sets), parse_cli_filter(filter_name));
  if (sets.size() < 2) throw mm::BadConfig("cluster needs at least two sets");

  const Eigen::Index dim = cfg<Eigen::Index>(sec, "subspace_dim", mm::kMsmSubspaceDim);
  mm::LinearSubspace constraint;
  const std::string constraint_path = cfg<std::string>(sec, "constraint", "");
  if (!constraint_path.empty()) {
    constraint = subspace_from_json(mm::load_json(constraint_path), constraint_path);
  } else {
    std::vector<mm::LinearSubspace> subspaces;
    subspaces.reserve(sets.size());
    for (const auto& s : sets) subspaces.push_back(mm::pca_subspace(s.frames, dim, false));
    constraint = mm::constraint_subspace(subspaces, cfg<Eigen::Index>(sec, "retain_dim", -1));
  }

  const mm::Matrix distances = mm::pairwise_cmsm_matrix(sets, constraint);
  const mm::Matrix repaired = mm::metric_repair(distances);
  const mm::ManifoldSpaceEmbedding embedding =
      mm::mds_embed(repaired, cfg<Eigen::Index>(sec, "embed_dim", -1));
  const double threshold = cfg<double>(sec, "threshold", 0.5);
  const std::vector<int> seeds = mm::isotropic_cluster(repaired, threshold);
  std::vector<double> supports;
  supports.reserve(sets.size());
  for (const auto& s : sets) supports.push_back(static_cast<double>(s.frames.cols()));

  mm::AnisotropicOptions opts;
  opts.threshold = cfg<bool>(sec, "anisotropic", true)
                       ? cfg<double>(sec, "dl_threshold", -20.0)
                       : -std::numeric_limits<double>::infinity();
  opts.ridge = cfg<double>(sec, "ridge", 1e-6);
  const mm::ClusterState state = mm::anisotropic_merge(embedding, seeds, supports, opts);

  std::vector<std::string> ids;
  ids.reserve(sets.size());
  for (const auto& s : sets) ids.push_back(s.person_id + "/" + s.sequence_id);
  json clusters = mm::cluster_report(state, ids);

  mm::save_matrix(join2(out, "distances.csv"), distances);
  mm::save_matrix(join2(out, "repaired.csv"), repaired);
  mm::save_matrix(join2(out, "embedding.csv"), embedding.points);
  mm::save_json(join2(out, "clusters.json"), clusters);

  json report;
  report["command"] = "cluster";
  report["sets"] = sets.size();
  report["classes"] = clusters["class_count"];
  report["assignment"] = state.assignment;
  report["isotropic_classes"] = 1 + *std::max_element(seeds.begin(), seeds.end());
  report["stress"] = embedding.stress;
  report["negative_eigenmass_warning"] = embedding.negative_eigenmass_warning;
  report["out"] = out;
  emit_report(report);
  return 0;
}

int cmd_eval(const json& sec, const std::string& manifest_flag, const std::string& method_flag,
             const std::string& filter_flag, const std::string& out, const mm::Rng& rng) {
  const std::string manifest_path =
      manifest_flag.empty() ? cfg<std::string>(sec, "manifest", "") : manifest_flag;
  if (manifest_path.empty()) throw mm::BadConfig("eval needs a manifest");
  const std::string filter_name =
      filter_flag.empty() ? cfg<std::string>(sec, "filter", "raw") : filter_flag;
  const auto sets = filter_sets(load_manifest_sets(manifest_path), parse_cli_filter(filter_name));

  const MethodSettings ms = resolve_method_settings(sec, method_flag, rng);
  const mm::SetSimilarity sim = make_similarity(ms);

  mm::ProtocolOptions popts;
  popts.train_tags = cfg_strings(sec, "train_tags");
  popts.test_tags = cfg_strings(sec, "test_tags");
  popts.skip_same_tag = cfg<bool>(sec, "skip_same_tag", true);
  const mm::ProtocolResult result = mm::run_protocol(sets, sim, popts);

  json report = mm::protocol_to_json(result);
  report["command"] = "eval";
  report["method"] = ms.method;
  report["filter"] = filter_name;
  mm::save_json(join2(out, "protocol.json"), report);
  mm::write_text_file(join2(out, "protocol.csv"), mm::protocol_to_csv(result));
  emit_report(report);
  return 0;
}

std::vector<mm::Vector> read_stream_csv(const std::string& path) {
  const std::string text = mm::read_text_file(path);
  std::vector<mm::Vector> points;
  std::istringstream lines(text);
  std::string line;
  Eigen::Index dim = -1;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> values;
    std::istringstream fields(line);
    std::string field;
    while (std::getline(fields, field, ',')) {
      char* end = nullptr;
      const double v = std::strtod(field.c_str(), &end);
      if (end == field.c_str() || *end != '\0') {
        throw mm::ParseError("bad number '" + field + "' at " + path + ":" +
                             std::to_string(line_no));
      }
      values.push_back(v);
    }
    if (values.empty()) continue;
    if (dim < 0) dim = static_cast<Eigen::Index>(values.size());
    if (dim != static_cast<Eigen::Index>(values.size())) {
      throw mm::ParseError("ragged stream row at " + path + ":" + std::to_string(line_no));
    }
    points.push_back(Eigen::Map<mm::Vector>(values.data(), dim));
  }
  if (points.empty()) throw mm::ParseError("stream file is empty: " + path);
  return points;
}

int cmd_stream(const json& sec, const std::string& input_flag, const std::string& resume_flag,
               const std::string& out, const mm::Rng& rng) {
  const std::string input = input_flag.empty() ? cfg<std::string>(sec, "input", "") : input_flag;
  if (input.empty()) throw mm::BadConfig("stream needs an input CSV (one vector per line)");
  const std::vector<mm::Vector> points = read_stream_csv(input);

  mm::IncGmmOptions opts;
  opts.seed_points = cfg<int>(sec, "seed_points", 20);
  opts.seed_max_components = cfg<int>(sec, "max_components", 5);
  opts.min_split_evidence = cfg<double>(sec, "min_split_evidence", 1.0);
  opts.floor = cfg<double>(sec, "floor", 1e-6);

  const std::string resume =
      resume_flag.empty() ? cfg<std::string>(sec, "resume", "") : resume_flag;
  mm::IncGmmState state;
  std::size_t start = 0;
  if (!resume.empty()) {
    state = mm::load_checkpoint(resume);
    start = static_cast<std::size_t>(std::llround(state.n_seen));
    if (start > points.size()) {
      throw mm::BadConfig("checkpoint has seen more points than the stream contains");
    }
  } else {
    mm::Matrix all(points.front().size(), static_cast<Eigen::Index>(points.size()));
    for (std::size_t i = 0; i < points.size(); ++i) {
      all.col(static_cast<Eigen::Index>(i)) = points[i];
    }
    state = mm::init_incremental(all, rng, opts);
    start = static_cast<std::size_t>(std::llround(state.n_seen));
  }

  int splits = 0;
  int merges = 0;
  for (std::size_t i = start; i < points.size(); ++i) {
    const mm::StepReport rep = mm::step(state, points[i], rng.split("inc-step"), opts);
    splits += rep.splits_committed;
    merges += rep.merges_committed;
  }

  const std::string checkpoint = cfg<std::string>(sec, "checkpoint", "checkpoint.json");
  const std::string model_output = cfg<std::string>(sec, "model_output", "model.json");
  mm::save_checkpoint(join2(out, checkpoint), state);
  mm::save_model(join2(out, model_output), state.current);

  json report;
  report["command"] = "stream";
  report["points"] = points.size();
  report["consumed"] = points.size() - start;
  report["order"] = state.current.order();
  report["splits"] = splits;
  report["merges"] = merges;
  report["n_seen"] = state.n_seen;
  report["checkpoint"] = join2(out, checkpoint);
  report["model"] = join2(out, model_output);
  emit_report(report);
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

struct SubFlags {
  CLI::App* app = nullptr;
  CLI::Option* seed = nullptr;
  CLI::Option* jobs = nullptr;
  CLI::Option* out = nullptr;
};

int run_cli(int argc, char** argv) {
  CLI::App app{"manifold-match: set-to-set pattern matching toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_flag = "";
  mm::u64 seed_flag = 0;
  int jobs_flag = 0;
  std::string method_flag;
  std::string filter_flag;
  std::string generator_flag;
  Eigen::Index count_flag = 0;
  std::string input_flag;
  std::string model_flag;
  std::string manifest_flag;
  std::string corpus_flag;
  std::string resume_flag;

  std::map<std::string, SubFlags> subs;
  for (const auto& name : kCommands) {
    CLI::App* s = app.add_subcommand(name, "");
    SubFlags f;
    f.app = s;
    s->add_option("--config", config_path, "JSON config file");
    f.seed = s->add_option("--seed", seed_flag, "random seed (MM_SEED overrides)");
    f.jobs = s->add_option("--jobs", jobs_flag, "worker thread cap");
    f.out = s->add_option("--out", out_flag, "output directory");
    subs[name] = f;
  }
  subs["synth"].app->add_option("--generator", generator_flag,
                                "radial-gaussian|sinusoid|blobs|lit-faces");
  subs["synth"].app->add_option("--count", count_flag, "points to generate");
  subs["fit"].app->add_option("--input", input_flag, "input matrix CSV");
  subs["fit"].app->add_option("--model", model_flag, "mdl-full|mdl-diag|ppca|constraint");
  subs["fit"].app->add_option("--filter", filter_flag, "raw|hp|qi|ed|lg|dx|dy");
  for (const auto& name : {"match", "recognize", "eval"}) {
    subs[name].app->add_option("--method", method_flag, "mdd|krad|msm|cmsm|bompa|mpmm|gsim");
    subs[name].app->add_option("--filter", filter_flag, "raw|hp|qi|ed|lg|dx|dy");
    subs[name].app->add_option("--manifest", manifest_flag, "sequence manifest path");
  }
  subs["cluster"].app->add_option("--corpus", corpus_flag, "vector corpus path");
  subs["cluster"].app->add_option("--filter", filter_flag, "raw|hp|qi|ed|lg|dx|dy");
  subs["stream"].app->add_option("--input", input_flag, "stream CSV, one vector per line");
  subs["stream"].app->add_option("--resume", resume_flag, "checkpoint to resume from");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    json err;
    err["error"] = "BadConfig";
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 2;
  }

  std::string command;
  for (const auto& name : kCommands) {
    if (subs[name].app->parsed()) command = name;
  }
  const SubFlags& f = subs[command];

  const json config = load_config_file(config_path);

  mm::u64 seed = cfg<mm::u64>(config, "seed", 0);
  if (f.seed->count() > 0) seed = seed_flag;
  if (const char* env = std::getenv("MM_SEED")) seed = parse_u64(env, "MM_SEED");

  int jobs = cfg<int>(config, "jobs", 0);
  if (f.jobs->count() > 0) jobs = jobs_flag;
  if (jobs <= 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  mm::set_max_jobs(jobs);

  std::string out = cfg<std::string>(config, "out", ".");
  if (f.out->count() > 0) out = out_flag;
  ensure_out_dir(out);

  mm::Rng rng(seed);

  static const std::map<std::string, std::vector<std::string>> kSectionKeys = {
      {"synth",
       {"generator", "count", "classes", "sets_per_class", "points_per_set", "dim", "separation",
        "spread", "jitter", "persons", "conditions", "frames", "height", "width"}},
      {"fit",
       {"input", "model", "max_components", "energy", "manifest", "filter", "subspace_dim",
        "retain_dim", "output"}},
      {"match",
       {"manifest", "person_a", "sequence_a", "person_b", "sequence_b", "input_a", "input_b",
        "method", "filter", "constraint", "gsim_model", "subspace_dim", "noise", "alpha",
        "mc_samples", "max_components"}},
      {"recognize",
       {"manifest", "method", "filter", "train_tag", "test_tag", "constraint", "gsim_model",
        "subspace_dim", "noise", "alpha", "mc_samples", "max_components"}},
      {"cluster",
       {"corpus", "manifest", "filter", "constraint", "subspace_dim", "retain_dim", "threshold",
        "anisotropic", "dl_threshold", "embed_dim", "ridge"}},
      {"eval",
       {"manifest", "method", "filter", "constraint", "gsim_model", "train_tags", "test_tags",
        "skip_same_tag", "subspace_dim", "noise", "alpha", "mc_samples", "max_components"}},
      {"stream",
       {"input", "resume", "seed_points", "max_components", "min_split_evidence", "floor",
        "checkpoint", "model_output"}},
  };
  const json sec = config_section(config, command, kSectionKeys.at(command));

  if (command == "synth") return cmd_synth(sec, generator_flag, count_flag, out, rng);
  if (command == "fit") return cmd_fit(sec, input_flag, model_flag, filter_flag, out, rng);
  if (command == "match") return cmd_match(sec, manifest_flag, method_flag, filter_flag, out, rng);
  if (command == "recognize") {
    return cmd_recognize(sec, manifest_flag, method_flag, filter_flag, out, rng);
  }
  if (command == "cluster") return cmd_cluster(sec, corpus_flag, filter_flag, out, rng);
  if (command == "eval") return cmd_eval(sec, manifest_flag, method_flag, filter_flag, out, rng);
  return cmd_stream(sec, input_flag, resume_flag, out, rng);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const mm::Error& e) {
    json err;
    err["error"] = e.code();
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    json err;
    err["error"] = "Internal";
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
}
