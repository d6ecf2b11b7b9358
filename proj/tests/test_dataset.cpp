#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mm/dataset.hpp"
#include "mm/errors.hpp"
#include "mm/io.hpp"
#include "mm/rng.hpp"

#include "test_util.hpp"

#include <cmath>
#include <filesystem>
#include <string>

namespace fs = std::filesystem;

namespace {

mm::Matrix random_image(mm::Rng& rng, int h, int w) {
  mm::Matrix img(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) img(r, c) = rng.next_double();
  }
  return img;
}

// Builds a two-person corpus of PGM frames plus its manifest on disk.
mm::SequenceManifest write_small_corpus(const std::string& dir, mm::Rng& rng, int h, int w) {
  mm::SequenceManifest manifest;
  manifest.root_path = dir;
  manifest.height = h;
  manifest.width = w;
  for (int p = 0; p < 2; ++p) {
    mm::PersonInfo person;
    person.person_id = "person" + std::to_string(p);
    for (int s = 0; s < 2; ++s) {
      mm::SequenceInfo seq;
      seq.sequence_id = "seq" + std::to_string(s);
      seq.illumination_tag = "light" + std::to_string(s);
      for (int f = 0; f < 3; ++f) {
        const std::string rel =
            "p" + std::to_string(p) + "_s" + std::to_string(s) + "_f" + std::to_string(f) + ".pgm";
        mm::encode_pgm(dir + "/" + rel, random_image(rng, h, w));
        seq.frame_paths.push_back(rel);
      }
      person.sequences.push_back(seq);
    }
    manifest.persons.push_back(person);
  }
  mm::save_manifest(dir + "/manifest.json", manifest);
  return manifest;
}

}  // namespace

TEST_CASE("pgm encode/decode round trip quantizes to 8 bits") {
  const std::string dir = testutil::scratch_dir("dataset_pgm");
  mm::Rng rng(11);
  const mm::Matrix img = random_image(rng, 9, 13);
  mm::encode_pgm(dir + "/img.pgm", img);
  const mm::Matrix back = mm::decode_image(dir + "/img.pgm");
  REQUIRE(back.rows() == img.rows());
  REQUIRE(back.cols() == img.cols());
  for (Eigen::Index r = 0; r < img.rows(); ++r) {
    for (Eigen::Index c = 0; c < img.cols(); ++c) {
      const double expected = std::round(img(r, c) * 255.0) / 255.0;
      CHECK(back(r, c) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("pgm encoding clamps out-of-range values") {
  const std::string dir = testutil::scratch_dir("dataset_clamp");
  mm::Matrix img(1, 3);
  img << -0.5, 0.5, 1.5;
  mm::encode_pgm(dir + "/c.pgm", img);
  const mm::Matrix back = mm::decode_image(dir + "/c.pgm");
  CHECK(back(0, 0) == 0.0);
  CHECK(back(0, 1) == doctest::Approx(std::round(0.5 * 255.0) / 255.0));
  CHECK(back(0, 2) == 1.0);
}

TEST_CASE("decode rejects files that are not images") {
  const std::string dir = testutil::scratch_dir("dataset_garbage");
  mm::write_text_file(dir + "/junk.pgm", "this is not an image");
  CHECK_THROWS_AS(mm::decode_image(dir + "/junk.pgm"), mm::DecodeError);
  CHECK_THROWS_AS(mm::decode_image(dir + "/missing.png"), mm::IoError);
}

TEST_CASE("flatten and unflatten are mutually inverse") {
  mm::Rng rng(12);
  const mm::Matrix img = random_image(rng, 6, 4);
  const mm::Vector flat = mm::flatten(img);
  REQUIRE(flat.size() == 24);
  const mm::Matrix back = mm::unflatten(flat, 6, 4);
  CHECK(testutil::max_abs_diff(img, back) == 0.0);
  // Column-major layout: the first H entries are the first column.
  for (int r = 0; r < 6; ++r) CHECK(flat[r] == img(r, 0));
}

TEST_CASE("manifest save/load round trip") {
  const std::string dir = testutil::scratch_dir("dataset_manifest");
  mm::Rng rng(13);
  const mm::SequenceManifest manifest = write_small_corpus(dir, rng, 8, 8);
  const mm::SequenceManifest back = mm::load_manifest(dir + "/manifest.json");
  CHECK(back.root_path == manifest.root_path);
  CHECK(back.height == manifest.height);
  CHECK(back.width == manifest.width);
  REQUIRE(back.persons.size() == 2);
  CHECK(back.persons[0].person_id == "person0");
  REQUIRE(back.persons[0].sequences.size() == 2);
  CHECK(back.persons[0].sequences[1].illumination_tag == "light1");
  CHECK(back.persons[0].sequences[1].frame_paths.size() == 3);

  CHECK(back.find_person("person1") != nullptr);
  CHECK(back.find_person("nobody") == nullptr);
  CHECK(back.find_sequence("person1", "seq0") != nullptr);
  CHECK(back.find_sequence("person1", "seq9") == nullptr);
}

TEST_CASE("manifests with unknown keys are rejected") {
  const std::string dir = testutil::scratch_dir("dataset_badmanifest");
  mm::write_text_file(dir + "/manifest.json",
                      "{\"root_path\":\".\",\"persons\":[],\"surprise\":1}");
  CHECK_THROWS_AS(mm::load_manifest(dir + "/manifest.json"), mm::BadConfig);
}

TEST_CASE("face sets load with identity, shape and pixel data") {
  const std::string dir = testutil::scratch_dir("dataset_faceset");
  mm::Rng rng(14);
  const mm::SequenceManifest manifest = write_small_corpus(dir, rng, 8, 10);
  const mm::FaceSet set = mm::load_face_set(manifest, "person0", "seq1");
  CHECK(set.person_id == "person0");
  CHECK(set.sequence_id == "seq1");
  CHECK(set.illumination_tag == "light1");
  CHECK(set.height == 8);
  CHECK(set.width == 10);
  CHECK(set.dim() == 80);
  CHECK(set.size() == 3);
  // frame_image unflattens the stored column.
  const mm::Matrix f0 = set.frame_image(0);
  CHECK(testutil::max_abs_diff(f0, mm::unflatten(set.frames.col(0), 8, 10)) == 0.0);
  for (Eigen::Index c = 0; c < set.frames.cols(); ++c) {
    CHECK(set.frames.col(c).minCoeff() >= 0.0);
    CHECK(set.frames.col(c).maxCoeff() <= 1.0);
  }
}

TEST_CASE("unknown sequences raise MissingSequence") {
  const std::string dir = testutil::scratch_dir("dataset_missing");
  mm::Rng rng(15);
  const mm::SequenceManifest manifest = write_small_corpus(dir, rng, 8, 8);
  CHECK_THROWS_AS(mm::load_face_set(manifest, "person0", "seq7"), mm::MissingSequence);
  CHECK_THROWS_AS(mm::load_face_set(manifest, "person7", "seq0"), mm::MissingSequence);
}

TEST_CASE("frames that disagree with the declared shape raise ShapeMismatch") {
  const std::string dir = testutil::scratch_dir("dataset_shape");
  mm::Rng rng(16);
  mm::SequenceManifest manifest = write_small_corpus(dir, rng, 8, 8);
  // Overwrite one frame with the wrong size.
  mm::encode_pgm(dir + "/p0_s0_f1.pgm", random_image(rng, 4, 4));
  CHECK_THROWS_AS(mm::load_face_set(manifest, "person0", "seq0"), mm::ShapeMismatch);
}

TEST_CASE("vector corpus descriptor round trips") {
  const std::string dir = testutil::scratch_dir("dataset_corpus");
  mm::VectorCorpus corpus;
  corpus.root_path = dir;
  corpus.sets.push_back({"s0", "classA", "s0.csv"});
  corpus.sets.push_back({"s1", "classB", "s1.csv"});
  mm::save_vector_corpus(dir + "/corpus.json", corpus);
  const mm::VectorCorpus back = mm::load_vector_corpus(dir + "/corpus.json");
  CHECK(back.root_path == dir);
  REQUIRE(back.sets.size() == 2);
  CHECK(back.sets[0].set_id == "s0");
  CHECK(back.sets[1].label == "classB");
  CHECK(back.sets[1].path == "s1.csv");
}
