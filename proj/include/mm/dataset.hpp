#pragma once

#include "mm/common.hpp"
#include "mm/errors.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mm {

// ---------------------------------------------------------------------------
// Sequence corpora
// ---------------------------------------------------------------------------

struct SequenceInfo {
  std::string sequence_id;
  std::vector<std::string> frame_paths;  // relative to manifest root_path
  std::string illumination_tag;
};

struct PersonInfo {
  std::string person_id;
  std::vector<SequenceInfo> sequences;
};

// Corpus layout descriptor, stored as JSON at the corpus root.  Optional
// height/width pin the expected frame shape; when absent the first decoded
// frame of each set fixes it.
struct SequenceManifest {
  std::string root_path;
  std::vector<PersonInfo> persons;
  int height = 0;  // 0 = take from first frame
  int width = 0;

  const PersonInfo* find_person(const std::string& person_id) const;
  const SequenceInfo* find_sequence(const std::string& person_id,
                                    const std::string& sequence_id) const;
};

SequenceManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const SequenceManifest& manifest);

// An ordered collection of equal-size frames, one per column, flattened
// column-major with entries in [0,1].
struct FaceSet {
  Matrix frames;  // D x N, D = height*width
  int height = 0;
  int width = 0;
  bool temporal = false;  // true when column order reflects acquisition time
  std::string person_id;
  std::string sequence_id;
  std::string illumination_tag;

  Eigen::Index dim() const { return frames.rows(); }
  Eigen::Index size() const { return frames.cols(); }
  Matrix frame_image(Eigen::Index i) const;  // H x W view of column i
};

FaceSet load_face_set(const SequenceManifest& manifest, const std::string& person_id,
                      const std::string& sequence_id);

// ---------------------------------------------------------------------------
// Image codecs (8-bit grayscale PGM and PNG; color inputs rejected)
// ---------------------------------------------------------------------------

// Returns an H x W matrix with values pixel/255.0.
Matrix decode_image(const std::string& path);
// Writes binary 8-bit PGM; values are clamped to [0,1] and scaled by 255.
void encode_pgm(const std::string& path, const Matrix& image);

// Column-major flattening used throughout the toolkit.
Vector flatten(const Matrix& image);
Matrix unflatten(const Vector& v, int height, int width);

// ---------------------------------------------------------------------------
// Point-set corpora (synthetic generators write these: a JSON manifest next
// to one CSV matrix per set, each column one observation)
// ---------------------------------------------------------------------------

struct VectorSetInfo {
  std::string set_id;
  std::string label;  // planted class or person id
  std::string path;   // CSV matrix, relative to the manifest
};

struct VectorCorpus {
  std::string root_path;
  std::vector<VectorSetInfo> sets;
};

VectorCorpus load_vector_corpus(const std::string& path);
void save_vector_corpus(const std::string& path, const VectorCorpus& corpus);

}  // namespace mm
