#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mm/gmm.hpp"
#include "mm/io.hpp"

#include <json.hpp>

#include <cstdlib>
#include <string>
#include <sys/wait.h>

#include "test_util.hpp"

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string g_io_dir;

CliResult run_cli(const std::string& args, const std::string& env_prefix = "") {
  static int counter = 0;
  if (g_io_dir.empty()) g_io_dir = testutil::scratch_dir("cli_io");
  const std::string out_f = g_io_dir + "/out" + std::to_string(counter);
  const std::string err_f = g_io_dir + "/err" + std::to_string(counter);
  ++counter;
  std::string cmd;
  if (!env_prefix.empty()) cmd += env_prefix + " ";
  cmd += "\"" MM_CLI_PATH "\" " + args + " >" + out_f + " 2>" + err_f;
  const int rc = std::system(cmd.c_str());
  CliResult res;
  res.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  res.out = mm::read_text_file(out_f);
  res.err = mm::read_text_file(err_f);
  return res;
}

nlohmann::json parse_report(const CliResult& res) {
  REQUIRE(res.code == 0);
  return nlohmann::json::parse(res.out);
}

}  // namespace

TEST_CASE("synth runs are reproducible byte for byte under the same seed") {
  const std::string d1 = testutil::scratch_dir("cli_synth1");
  const std::string d2 = testutil::scratch_dir("cli_synth2");
  const CliResult r1 =
      run_cli("synth --generator radial-gaussian --seed 5 --count 60 --out " + d1);
  const CliResult r2 =
      run_cli("synth --generator radial-gaussian --seed 5 --count 60 --out " + d2);
  const nlohmann::json j1 = parse_report(r1);
  const nlohmann::json j2 = parse_report(r2);
  CHECK(j1.at("checksum") == j2.at("checksum"));
  CHECK(mm::read_text_file(d1 + "/points.csv") == mm::read_text_file(d2 + "/points.csv"));
  CHECK(mm::read_text_file(d1 + "/stream.csv") == mm::read_text_file(d2 + "/stream.csv"));

  // A different seed changes the data.
  const std::string d3 = testutil::scratch_dir("cli_synth3");
  const CliResult r3 =
      run_cli("synth --generator radial-gaussian --seed 6 --count 60 --out " + d3);
  CHECK(parse_report(r3).at("checksum") != j1.at("checksum"));
}

TEST_CASE("the MM_SEED environment variable beats the seed flag") {
  const std::string d1 = testutil::scratch_dir("cli_env1");
  const std::string d2 = testutil::scratch_dir("cli_env2");
  const CliResult enved = run_cli(
      "synth --generator radial-gaussian --seed 9 --count 40 --out " + d1, "MM_SEED=5");
  const CliResult plain =
      run_cli("synth --generator radial-gaussian --seed 5 --count 40 --out " + d2);
  CHECK(parse_report(enved).at("checksum") == parse_report(plain).at("checksum"));

  const CliResult garbage = run_cli(
      "synth --generator radial-gaussian --count 5 --out " + d1, "MM_SEED=5notanumber");
  CHECK(garbage.code != 0);
}

TEST_CASE("synthetic blob corpora cluster back into their classes") {
  const std::string synth_dir = testutil::scratch_dir("cli_blobs");
  const std::string cluster_dir = testutil::scratch_dir("cli_cluster");
  const CliResult made = run_cli("synth --generator blobs --seed 3 --out " + synth_dir);
  parse_report(made);

  const CliResult clustered =
      run_cli("cluster --corpus " + synth_dir + "/corpus.json --seed 3 --out " + cluster_dir);
  const nlohmann::json report = parse_report(clustered);
  CHECK(report.at("sets").get<int>() == 8);
  CHECK(report.at("classes").get<int>() == 2);
  CHECK(report.at("assignment").size() == 8);
  CHECK(mm::read_text_file(cluster_dir + "/distances.csv").size() > 0);
  CHECK(mm::read_text_file(cluster_dir + "/embedding.csv").size() > 0);
  const nlohmann::json clusters =
      nlohmann::json::parse(mm::read_text_file(cluster_dir + "/clusters.json"));
  CHECK(clusters.at("class_count").get<int>() == 2);
}

TEST_CASE("fit selects a mixture model from synthesized points") {
  const std::string synth_dir = testutil::scratch_dir("cli_fit_in");
  const std::string fit_dir = testutil::scratch_dir("cli_fit_out");
  parse_report(run_cli("synth --generator radial-gaussian --seed 7 --count 120 --out " + synth_dir));

  const CliResult fitted = run_cli("fit --input " + synth_dir + "/points.csv --seed 7 --out " +
                                   fit_dir + " --model mdl-full");
  const nlohmann::json report = parse_report(fitted);
  CHECK(report.at("order").get<int>() >= 1);
  const mm::GaussianMixture model = mm::load_model(fit_dir + "/model.json");
  CHECK(model.dim == 2);
  CHECK(model.order() == report.at("order").get<int>());
}

TEST_CASE("matching a point set against itself is a perfect msm match") {
  const std::string synth_dir = testutil::scratch_dir("cli_match_in");
  const std::string match_dir = testutil::scratch_dir("cli_match_out");
  parse_report(run_cli("synth --generator blobs --seed 4 --out " + synth_dir));

  nlohmann::json cfg;
  cfg["match"]["input_a"] = synth_dir + "/set_0_0.csv";
  cfg["match"]["input_b"] = synth_dir + "/set_0_0.csv";
  cfg["match"]["method"] = "msm";
  const std::string cfg_path = synth_dir + "/match_cfg.json";
  mm::save_json(cfg_path, cfg);

  const CliResult matched =
      run_cli("match --config " + cfg_path + " --seed 4 --out " + match_dir);
  const nlohmann::json report = parse_report(matched);
  CHECK(report.at("method") == "msm");
  CHECK(report.at("similarity").get<double>() > 0.999);
  const nlohmann::json saved =
      nlohmann::json::parse(mm::read_text_file(match_dir + "/match.json"));
  CHECK(saved.at("similarity") == report.at("similarity"));
}

TEST_CASE("recognition across synthetic lighting conditions") {
  const std::string faces_dir = testutil::scratch_dir("cli_faces");
  const std::string rec_dir = testutil::scratch_dir("cli_rec");
  parse_report(run_cli("synth --generator lit-faces --seed 11 --out " + faces_dir));

  nlohmann::json cfg;
  cfg["recognize"]["manifest"] = faces_dir + "/manifest.json";
  cfg["recognize"]["method"] = "msm";
  cfg["recognize"]["train_tag"] = "cond0";
  cfg["recognize"]["test_tag"] = "cond1";
  const std::string cfg_path = faces_dir + "/rec_cfg.json";
  mm::save_json(cfg_path, cfg);

  const CliResult rec = run_cli("recognize --config " + cfg_path + " --seed 1 --out " + rec_dir);
  const nlohmann::json report = parse_report(rec);
  CHECK(report.at("rate").get<double>() >= 2.0 / 3.0);
  const nlohmann::json full =
      nlohmann::json::parse(mm::read_text_file(rec_dir + "/recognition.json"));
  CHECK(full.at("probes").size() == 3);
  for (const auto& probe : full.at("probes")) {
    CHECK(probe.contains("person"));
    CHECK(probe.contains("predicted"));
    CHECK(probe.contains("ranked"));
  }
  const std::string csv = mm::read_text_file(rec_dir + "/recognition.csv");
  CHECK(csv.rfind("person,sequence,predicted,correct\n", 0) == 0);

  // The report is identical at any worker count.
  const std::string rec1 = testutil::scratch_dir("cli_rec_j1");
  const std::string rec4 = testutil::scratch_dir("cli_rec_j4");
  run_cli("recognize --config " + cfg_path + " --seed 1 --jobs 1 --out " + rec1);
  run_cli("recognize --config " + cfg_path + " --seed 1 --jobs 4 --out " + rec4);
  CHECK(mm::read_text_file(rec1 + "/recognition.json") ==
        mm::read_text_file(rec4 + "/recognition.json"));
}

TEST_CASE("the evaluation protocol writes json and csv reports") {
  const std::string faces_dir = testutil::scratch_dir("cli_eval_faces");
  const std::string eval_dir = testutil::scratch_dir("cli_eval_out");
  parse_report(run_cli("synth --generator lit-faces --seed 12 --out " + faces_dir));

  nlohmann::json cfg;
  cfg["eval"]["manifest"] = faces_dir + "/manifest.json";
  cfg["eval"]["method"] = "msm";
  const std::string cfg_path = faces_dir + "/eval_cfg.json";
  mm::save_json(cfg_path, cfg);

  const CliResult ev = run_cli("eval --config " + cfg_path + " --seed 2 --out " + eval_dir);
  const nlohmann::json report = parse_report(ev);
  CHECK(report.at("mean_rate").get<double>() >= 0.0);
  CHECK(report.at("mean_rate").get<double>() <= 1.0);
  CHECK(report.at("pairs").size() == 2);

  const nlohmann::json saved =
      nlohmann::json::parse(mm::read_text_file(eval_dir + "/protocol.json"));
  CHECK(saved.at("pairs") == report.at("pairs"));
  const std::string csv = mm::read_text_file(eval_dir + "/protocol.csv");
  CHECK(csv.rfind("train/test", 0) == 0);
}

TEST_CASE("an interrupted stream resumes to the same checkpoint") {
  const std::string synth_dir = testutil::scratch_dir("cli_stream_in");
  parse_report(run_cli("synth --generator sinusoid --seed 13 --count 80 --out " + synth_dir));
  const std::string stream_csv = synth_dir + "/stream.csv";

  const std::string full_dir = testutil::scratch_dir("cli_stream_full");
  parse_report(run_cli("stream --input " + stream_csv + " --seed 21 --out " + full_dir));

  // Cut the stream after 50 points and process the first chunk.
  const std::string all = mm::read_text_file(stream_csv);
  std::string head;
  int lines = 0;
  for (char c : all) {
    head += c;
    if (c == '\n' && ++lines == 50) break;
  }
  const std::string part_csv = synth_dir + "/stream_part.csv";
  mm::write_text_file(part_csv, head);
  const std::string part_dir = testutil::scratch_dir("cli_stream_part");
  const nlohmann::json part_report =
      parse_report(run_cli("stream --input " + part_csv + " --seed 21 --out " + part_dir));
  CHECK(part_report.at("points").get<int>() == 50);

  // Resume over the full stream from the checkpoint.
  const std::string resume_dir = testutil::scratch_dir("cli_stream_resume");
  const nlohmann::json resume_report = parse_report(
      run_cli("stream --input " + stream_csv + " --resume " + part_dir +
              "/checkpoint.json --seed 21 --out " + resume_dir));
  CHECK(resume_report.at("n_seen").get<double>() == 80.0);

  CHECK(mm::read_text_file(resume_dir + "/checkpoint.json") ==
        mm::read_text_file(full_dir + "/checkpoint.json"));
  CHECK(mm::read_text_file(resume_dir + "/model.json") ==
        mm::read_text_file(full_dir + "/model.json"));
}

TEST_CASE("bad invocations fail with structured errors") {
  // Unknown flag: usage error, exit 2, machine-readable stderr.
  const CliResult bad_flag = run_cli("synth --bogus 1");
  CHECK(bad_flag.code == 2);
  CHECK(nlohmann::json::parse(bad_flag.err).at("error") == "BadConfig");

  // Unknown subcommand.
  const CliResult bad_cmd = run_cli("frobnicate");
  CHECK(bad_cmd.code == 2);

  // No subcommand at all.
  const CliResult none = run_cli("");
  CHECK(none.code == 2);

  // Missing input file: runtime error, exit 1, coded error report.
  const std::string dir = testutil::scratch_dir("cli_errs");
  const CliResult missing = run_cli("fit --input " + dir + "/nope.csv --out " + dir);
  CHECK(missing.code == 1);
  CHECK(nlohmann::json::parse(missing.err).at("error") == "IoError");

  // Unknown config keys are rejected.
  nlohmann::json cfg;
  cfg["synth"]["generator"] = "radial-gaussian";
  cfg["synth"]["bogus_key"] = 1;
  const std::string cfg_path = dir + "/bad_cfg.json";
  mm::save_json(cfg_path, cfg);
  const CliResult bad_cfg = run_cli("synth --config " + cfg_path + " --out " + dir);
  CHECK(bad_cfg.code == 1);
  CHECK(nlohmann::json::parse(bad_cfg.err).at("error") == "BadConfig");

  // Help exits cleanly and lists the subcommands.
  const CliResult help = run_cli("--help");
  CHECK(help.code == 0);
  CHECK(help.out.find("synth") != std::string::npos);
  CHECK(help.out.find("stream") != std::string::npos);
}
