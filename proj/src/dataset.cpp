#include "mm/dataset.hpp"

#include "mm/io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mm {

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

const PersonInfo* SequenceManifest::find_person(const std::string& person_id) const {
  for (const auto& p : persons) {
    if (p.person_id == person_id) return &p;
  }
  return nullptr;
}

const SequenceInfo* SequenceManifest::find_sequence(const std::string& person_id,
                                                    const std::string& sequence_id) const {
  const PersonInfo* person = find_person(person_id);
  if (!person) return nullptr;
  for (const auto& s : person->sequences) {
    if (s.sequence_id == sequence_id) return &s;
  }
  return nullptr;
}

SequenceManifest load_manifest(const std::string& path) {
  const nlohmann::json j = load_json(path);
  reject_unknown_keys(j, {"root_path", "persons", "height", "width"}, "manifest");
  SequenceManifest m;
  if (!j.contains("root_path") || !j["root_path"].is_string()) {
    throw BadManifest("manifest missing string 'root_path': " + path);
  }
  m.root_path = j["root_path"].get<std::string>();
  if (j.contains("height")) m.height = j["height"].get<int>();
  if (j.contains("width")) m.width = j["width"].get<int>();
  if (!j.contains("persons") || !j["persons"].is_array()) {
    throw BadManifest("manifest missing array 'persons': " + path);
  }
  for (const auto& pj : j["persons"]) {
    reject_unknown_keys(pj, {"person_id", "sequences"}, "manifest person");
    PersonInfo person;
    if (!pj.contains("person_id") || !pj["person_id"].is_string()) {
      throw BadManifest("person entry missing 'person_id' in " + path);
    }
    person.person_id = pj["person_id"].get<std::string>();
    if (!pj.contains("sequences") || !pj["sequences"].is_array()) {
      throw BadManifest("person '" + person.person_id + "' missing 'sequences' in " + path);
    }
    for (const auto& sj : pj["sequences"]) {
      reject_unknown_keys(sj, {"sequence_id", "frame_paths", "illumination_tag"},
                          "manifest sequence");
      SequenceInfo seq;
      if (!sj.contains("sequence_id") || !sj["sequence_id"].is_string()) {
        throw BadManifest("sequence entry missing 'sequence_id' in " + path);
      }
      seq.sequence_id = sj["sequence_id"].get<std::string>();
      if (sj.contains("illumination_tag")) {
        seq.illumination_tag = sj["illumination_tag"].get<std::string>();
      }
      if (!sj.contains("frame_paths") || !sj["frame_paths"].is_array()) {
        throw BadManifest("sequence '" + seq.sequence_id + "' missing 'frame_paths' in " + path);
      }
      for (const auto& fj : sj["frame_paths"]) {
        if (!fj.is_string()) throw BadManifest("frame_paths entries must be strings in " + path);
        seq.frame_paths.push_back(fj.get<std::string>());
      }
      person.sequences.push_back(std::move(seq));
    }
    m.persons.push_back(std::move(person));
  }
  // Uniqueness of (person, sequence) pairs.
  for (const auto& p : m.persons) {
    for (size_t a = 0; a < p.sequences.size(); ++a) {
      for (size_t b = a + 1; b < p.sequences.size(); ++b) {
        if (p.sequences[a].sequence_id == p.sequences[b].sequence_id) {
          throw BadManifest("duplicate sequence '" + p.sequences[a].sequence_id +
                            "' for person '" + p.person_id + "' in " + path);
        }
      }
    }
  }
  return m;
}

void save_manifest(const std::string& path, const SequenceManifest& manifest) {
  nlohmann::json j;
  j["root_path"] = manifest.root_path;
  if (manifest.height > 0) j["height"] = manifest.height;
  if (manifest.width > 0) j["width"] = manifest.width;
  j["persons"] = nlohmann::json::array();
  for (const auto& p : manifest.persons) {
    nlohmann::json pj;
    pj["person_id"] = p.person_id;
    pj["sequences"] = nlohmann::json::array();
    for (const auto& s : p.sequences) {
      nlohmann::json sj;
      sj["sequence_id"] = s.sequence_id;
      sj["illumination_tag"] = s.illumination_tag;
      sj["frame_paths"] = s.frame_paths;
      pj["sequences"].push_back(std::move(sj));
    }
    j["persons"].push_back(std::move(pj));
  }
  save_json(path, j);
}

// ---------------------------------------------------------------------------
// Image codecs
// ---------------------------------------------------------------------------

namespace {

bool ends_with_ci(const std::string& text, const std::string& suffix) {
  if (text.size() < suffix.size()) return false;
  for (size_t i = 0; i < suffix.size(); ++i) {
    const char a = static_cast<char>(std::tolower(text[text.size() - suffix.size() + i]));
    if (a != suffix[i]) return false;
  }
  return true;
}

// Reads the next whitespace/comment-delimited token of a PGM header.
std::string next_pnm_token(std::istream& in, const std::string& path) {
  std::string token;
  for (;;) {
    const int c = in.get();
    if (c == EOF) {
      if (token.empty()) throw DecodeError("truncated header: " + path);
      return token;
    }
    if (c == '#') {  // comment to end of line
      std::string rest;
      std::getline(in, rest);
      if (!token.empty()) return token;
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) return token;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
}

Matrix decode_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  const std::string magic = next_pnm_token(in, path);
  if (magic != "P5" && magic != "P2") {
    throw DecodeError("unsupported PNM magic '" + magic + "' (8-bit grayscale only): " + path);
  }
  long width = 0, height = 0, maxval = 0;
  try {
    width = std::stol(next_pnm_token(in, path));
    height = std::stol(next_pnm_token(in, path));
    maxval = std::stol(next_pnm_token(in, path));
  } catch (const std::exception&) {
    throw DecodeError("bad header numbers: " + path);
  }
  if (width <= 0 || height <= 0) throw DecodeError("bad dimensions: " + path);
  if (maxval != 255) throw DecodeError("only maxval 255 supported: " + path);
  Matrix image(height, width);
  if (magic == "P5") {
    // Binary: exactly one whitespace byte after maxval, then raster.
    std::vector<unsigned char> raster(static_cast<size_t>(width) * height);
    in.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
    if (in.gcount() != static_cast<std::streamsize>(raster.size())) {
      throw DecodeError("truncated raster: " + path);
    }
    for (long r = 0; r < height; ++r) {
      for (long c = 0; c < width; ++c) {
        image(r, c) = raster[static_cast<size_t>(r) * width + c] / 255.0;
      }
    }
  } else {
    for (long r = 0; r < height; ++r) {
      for (long c = 0; c < width; ++c) {
        long v = 0;
        try {
          v = std::stol(next_pnm_token(in, path));
        } catch (const std::exception&) {
          throw DecodeError("bad sample value: " + path);
        }
        if (v < 0 || v > 255) throw DecodeError("sample out of range: " + path);
        image(r, c) = v / 255.0;
      }
    }
  }
  return image;
}

Matrix decode_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open: " + path);
  png_byte header[8];
  if (std::fread(header, 1, 8, fp) != 8 || png_sig_cmp(header, 0, 8)) {
    std::fclose(fp);
    throw DecodeError("not a PNG file: " + path);
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw DecodeError("libpng initialization failed: " + path);
  }
  std::vector<png_bytep> row_ptrs;
  std::vector<png_byte> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw DecodeError("corrupt PNG data: " + path);
  }
  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int color_type = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  if (color_type != PNG_COLOR_TYPE_GRAY || bit_depth != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw DecodeError("only 8-bit grayscale PNG supported: " + path);
  }
  pixels.resize(static_cast<size_t>(width) * height);
  row_ptrs.resize(height);
  for (png_uint_32 r = 0; r < height; ++r) {
    row_ptrs[r] = pixels.data() + static_cast<size_t>(r) * width;
  }
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  Matrix image(height, width);
  for (png_uint_32 r = 0; r < height; ++r) {
    for (png_uint_32 c = 0; c < width; ++c) {
      image(r, c) = pixels[static_cast<size_t>(r) * width + c] / 255.0;
    }
  }
  return image;
}

}  // namespace

Matrix decode_image(const std::string& path) {
  if (ends_with_ci(path, ".pgm")) return decode_pgm(path);
  if (ends_with_ci(path, ".png")) return decode_png(path);
  throw DecodeError("unsupported image extension (PGM/PNG only): " + path);
}

void encode_pgm(const std::string& path, const Matrix& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "P5\n" << image.cols() << " " << image.rows() << "\n255\n";
  for (Eigen::Index r = 0; r < image.rows(); ++r) {
    for (Eigen::Index c = 0; c < image.cols(); ++c) {
      const double clamped = std::min(1.0, std::max(0.0, image(r, c)));
      const int v = static_cast<int>(std::lround(clamped * 255.0));
      out.put(static_cast<char>(static_cast<unsigned char>(v)));
    }
  }
  out.flush();
  if (!out) throw IoError("write failure: " + path);
}

Vector flatten(const Matrix& image) {
  return Eigen::Map<const Vector>(image.data(), image.size());
}

Matrix unflatten(const Vector& v, int height, int width) {
  if (static_cast<Eigen::Index>(height) * width != v.size()) {
    throw ShapeMismatch("cannot reshape " + std::to_string(v.size()) + " values to " +
                        std::to_string(height) + "x" + std::to_string(width));
  }
  return Eigen::Map<const Matrix>(v.data(), height, width);
}

// ---------------------------------------------------------------------------
// FaceSet loading
// ---------------------------------------------------------------------------

Matrix FaceSet::frame_image(Eigen::Index i) const {
  return unflatten(frames.col(i), height, width);
}

namespace {

std::string join_path(const std::string& root, const std::string& rel) {
  if (root.empty() || root == ".") return rel;
  if (!rel.empty() && rel.front() == '/') return rel;
  if (!root.empty() && root.back() == '/') return root + rel;
  return root + "/" + rel;
}

}  // namespace

FaceSet load_face_set(const SequenceManifest& manifest, const std::string& person_id,
                      const std::string& sequence_id) {
  const SequenceInfo* seq = manifest.find_sequence(person_id, sequence_id);
  if (!seq) {
    throw MissingSequence("no sequence '" + sequence_id + "' for person '" + person_id + "'");
  }
  if (seq->frame_paths.empty()) {
    throw MissingSequence("sequence '" + sequence_id + "' of person '" + person_id +
                          "' has no frames");
  }
  FaceSet set;
  set.person_id = person_id;
  set.sequence_id = sequence_id;
  set.illumination_tag = seq->illumination_tag;
  set.temporal = true;
  int expect_h = manifest.height;
  int expect_w = manifest.width;
  for (size_t i = 0; i < seq->frame_paths.size(); ++i) {
    const std::string full = join_path(manifest.root_path, seq->frame_paths[i]);
    const Matrix image = decode_image(full);
    if (expect_h == 0) {
      expect_h = static_cast<int>(image.rows());
      expect_w = static_cast<int>(image.cols());
    }
    if (image.rows() != expect_h || image.cols() != expect_w) {
      throw ShapeMismatch("frame '" + full + "' is " + std::to_string(image.rows()) + "x" +
                          std::to_string(image.cols()) + ", expected " +
                          std::to_string(expect_h) + "x" + std::to_string(expect_w));
    }
    if (i == 0) set.frames.resize(static_cast<Eigen::Index>(expect_h) * expect_w,
                                  static_cast<Eigen::Index>(seq->frame_paths.size()));
    set.frames.col(static_cast<Eigen::Index>(i)) = flatten(image);
  }
  set.height = expect_h;
  set.width = expect_w;
  return set;
}

// ---------------------------------------------------------------------------
// Point-set corpora
// ---------------------------------------------------------------------------

VectorCorpus load_vector_corpus(const std::string& path) {
  const nlohmann::json j = load_json(path);
  reject_unknown_keys(j, {"root_path", "sets"}, "vector corpus");
  VectorCorpus corpus;
  if (!j.contains("root_path") || !j["root_path"].is_string()) {
    throw BadManifest("vector corpus missing 'root_path': " + path);
  }
  corpus.root_path = j["root_path"].get<std::string>();
  if (!j.contains("sets") || !j["sets"].is_array()) {
    throw BadManifest("vector corpus missing 'sets': " + path);
  }
  for (const auto& sj : j["sets"]) {
    reject_unknown_keys(sj, {"set_id", "label", "path"}, "vector corpus set");
    VectorSetInfo info;
    if (!sj.contains("set_id") || !sj.contains("label") || !sj.contains("path")) {
      throw BadManifest("set entries need set_id, label, path: " + path);
    }
    info.set_id = sj["set_id"].get<std::string>();
    info.label = sj["label"].get<std::string>();
    info.path = sj["path"].get<std::string>();
    corpus.sets.push_back(std::move(info));
  }
  return corpus;
}

void save_vector_corpus(const std::string& path, const VectorCorpus& corpus) {
  nlohmann::json j;
  j["root_path"] = corpus.root_path;
  j["sets"] = nlohmann::json::array();
  for (const auto& s : corpus.sets) {
    nlohmann::json sj;
    sj["set_id"] = s.set_id;
    sj["label"] = s.label;
    sj["path"] = s.path;
    j["sets"].push_back(std::move(sj));
  }
  save_json(path, j);
}

}  // namespace mm
