#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fscil/cli.hpp"
#include "fscil/config.hpp"
#include "fscil/train.hpp"

using namespace fscil;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"fscil"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

/// Collects std::cout/std::cerr during a command so test output stays clean
/// and the text is assertable.
struct Capture {
  std::ostringstream out, err;
  std::streambuf* old_out = std::cout.rdbuf(out.rdbuf());
  std::streambuf* old_err = std::cerr.rdbuf(err.rdbuf());
  ~Capture() {
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
  }
};

ExperimentConfig cli_config(uint64_t seed = 77) {
  ExperimentConfig c;
  c.dataset.num_classes = 6;
  c.dataset.samples_per_class = 24;
  c.dataset.test_per_class = 8;
  c.dataset.image_size = 8;
  c.dataset.separation = 3.0;
  c.dataset.noise = 0.4;
  c.protocol.base_classes = 4;
  c.protocol.ways = 1;
  c.protocol.sessions = 2;
  c.protocol.shots = 3;
  c.train.strategy = "joint_standard";
  c.train.epochs = 2;
  c.train.batch_size = 16;
  c.train.lr = 0.05;
  c.train.backbone_depth = 8;
  c.train.backbone_width = 4;
  c.seed = seed;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("fscil_cli_" + name);
  fs::remove_all(d);
  return d;
}

fs::path write_config(const ExperimentConfig& c, const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("fscil_cli_" + name + ".json");
  atomic_write_json(p, render_experiment_config(c));
  return p;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("train runs a config end to end and refuses silent reuse") {
    ExperimentConfig c = cli_config();
    fs::path run_dir = fresh_dir("train_run");
    c.output_dir = run_dir.string();
    fs::path cfg = write_config(c, "train");
    {
      Capture cap;
      CHECK(run_cli({"train", "--config", cfg.string()}) == 0);
      CHECK(cap.out.str().find("session 2") != std::string::npos);
    }
    CHECK(fs::exists(run_dir / "run.json"));
    {
      Capture cap;
      CHECK(run_cli({"train", "--config", cfg.string()}) == 2);  // dir already used
      CHECK(run_cli({"train", "--config", cfg.string(), "--resume"}) == 0);
    }
  }

  TEST_CASE("same config and seed reproduce the metrics files") {
    ExperimentConfig c = cli_config();
    fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
    fs::path cfg = write_config(c, "det");
    Capture cap;
    CHECK(run_cli({"train", "--config", cfg.string(), "--output", a.string()}) == 0);
    CHECK(run_cli({"train", "--config", cfg.string(), "--output", b.string()}) == 0);
    for (int s = 0; s < 3; ++s) {
      fs::path rel = fs::path("sessions") / ("s" + std::to_string(s) + ".json");
      json ja = load_json_file(a / rel), jb = load_json_file(b / rel);
      ja.erase("seconds");
      jb.erase("seconds");
      for (auto* j : {&ja, &jb})
        for (auto& snap : (*j)["snapshots"]) snap.erase("seconds");
      CHECK(ja == jb);
    }
  }

  TEST_CASE("config problems exit with the config code") {
    json raw = render_experiment_config(cli_config());
    raw["train"]["plugins"] = json::array();
    json cmo = {{"category", "resampling"}, {"name", "cmo"}, {"params", json::object()}};
    raw["train"]["plugins"].push_back(cmo);
    raw["train"]["plugins"].push_back(cmo);  // duplicate category
    raw["train"]["strategy"] = "joint_imbalance";
    fs::path p = fs::temp_directory_path() / "fscil_cli_dup.json";
    atomic_write_json(p, raw);
    Capture cap;
    CHECK(run_cli({"train", "--config", p.string()}) == 2);
    CHECK(cap.err.str().find("config error") != std::string::npos);
    CHECK(run_cli({"train", "--config", "/nonexistent/cfg.json"}) == 2);  // unreadable file
    CHECK(run_cli({"train", "--config", p.string(), "--bogus-flag"}) == 2);
    CHECK(run_cli({"train"}) == 2);  // --config is required
    CHECK(run_cli({}) == 2);         // a subcommand is required
    CHECK(run_cli({"--help"}) == 0);
  }

  TEST_CASE("training failure exits with the runtime code") {
    ExperimentConfig c = cli_config();
    c.train.lr = 1e9;  // diverges within two epochs
    c.output_dir = fresh_dir("blowup").string();
    fs::path cfg = write_config(c, "blowup");
    Capture cap;
    CHECK(run_cli({"train", "--config", cfg.string()}) == 4);
    CHECK(cap.err.str().find("error") != std::string::npos);
  }

  TEST_CASE("scale flag shrinks the run and bad factors are rejected") {
    ExperimentConfig c = cli_config();
    c.train.epochs = 4;
    fs::path run_dir = fresh_dir("scaled");
    c.output_dir = run_dir.string();
    fs::path cfg = write_config(c, "scale");
    Capture cap;
    CHECK(run_cli({"train", "--config", cfg.string(), "--scale", "0.5"}) == 0);
    json snap = load_json_file(run_dir / "config.json");
    CHECK(snap["train"]["epochs"] == 2);
    CHECK(snap["dataset"]["samples_per_class"] == 12);
    CHECK(run_cli({"train", "--config", cfg.string(), "--scale", "1.5"}) == 2);
  }

  TEST_CASE("output root redirects relative run directories") {
    fs::path root = fresh_dir("root");
    ExperimentConfig c = cli_config();
    c.output_dir = "nested/run";
    fs::path cfg = write_config(c, "root");
    REQUIRE(setenv("FSCIL_OUTPUT_ROOT", root.c_str(), 1) == 0);
    Capture cap;
    int rc = run_cli({"train", "--config", cfg.string()});
    unsetenv("FSCIL_OUTPUT_ROOT");
    CHECK(rc == 0);
    CHECK(fs::exists(root / "nested/run/run.json"));
  }

  TEST_CASE("search emits records plus a ranked index and resumes") {
    ExperimentConfig c = cli_config();
    c.search = SearchConfig{};
    c.search->trials = 3;
    c.search->technique = "cmo";
    fs::path dir = fresh_dir("search");
    c.output_dir = dir.string();
    fs::path cfg = write_config(c, "search");
    {
      Capture cap;
      CHECK(run_cli({"search", "--config", cfg.string(), "--workers", "2"}) == 0);
      CHECK(cap.out.str().find("3 complete, 0 failed") != std::string::npos);
    }
    for (int t = 0; t < 3; ++t)
      CHECK(fs::exists(dir / "trials" / ("t" + std::to_string(t) + ".json")));
    json idx = load_json_file(dir / "search.json");
    CHECK(idx["metric"] == "a_acc");
    CHECK(idx["ranking"].size() == 3);
    CHECK(idx["top"].size() == 3);

    std::string before = file_bytes(dir / "trials" / "t1.json");
    {
      Capture cap;
      CHECK(run_cli({"search", "--config", cfg.string()}) == 2);  // refuses without --resume
      CHECK(run_cli({"search", "--config", cfg.string(), "--resume"}) == 0);
    }
    CHECK(file_bytes(dir / "trials" / "t1.json") == before);
  }

  TEST_CASE("metric flag reranks the same records") {
    ExperimentConfig c = cli_config();
    c.search = SearchConfig{};
    c.search->trials = 3;
    c.search->technique = "cmo";
    fs::path dir = fresh_dir("rerank");
    c.output_dir = dir.string();
    fs::path cfg = write_config(c, "rerank");
    Capture cap;
    CHECK(run_cli({"search", "--config", cfg.string()}) == 0);
    CHECK(run_cli({"search", "--config", cfg.string(), "--resume", "--metric", "gacc"}) == 0);
    json idx = load_json_file(dir / "search.json");
    CHECK(idx["metric"] == "g_acc");
    // the emitted order must equal an independent sort of the record values
    std::vector<std::pair<double, int>> want;
    for (int t = 0; t < 3; ++t) {
      json rec = load_json_file(dir / "trials" / ("t" + std::to_string(t) + ".json"));
      want.emplace_back(-rec["metrics"]["gacc"].get<double>(), t);
    }
    std::sort(want.begin(), want.end());
    for (size_t i = 0; i < want.size(); ++i)
      CHECK(idx["ranking"][i] == want[i].second);
    CHECK(run_cli({"search", "--config", cfg.string(), "--resume", "--metric", "loss"}) == 2);
  }

  TEST_CASE("search without a search block is a config error") {
    ExperimentConfig c = cli_config();
    fs::path cfg = write_config(c, "nosearch");
    Capture cap;
    CHECK(run_cli({"search", "--config", cfg.string(), "--output",
                   fresh_dir("nosearch_out").string()}) == 2);
  }

  TEST_CASE("report and inspect work off run directories") {
    ExperimentConfig c = cli_config();
    fs::path run_a = fresh_dir("rep") / "a";
    fs::path run_b = fresh_dir("rep2") / "b";
    c.output_dir = run_a.string();
    fs::path cfg_a = write_config(c, "rep_a");
    ExperimentConfig c2 = cli_config(78);  // different protocol
    c2.output_dir = run_b.string();
    fs::path cfg_b = write_config(c2, "rep_b");
    fs::path out = fresh_dir("rep_out");
    Capture cap;
    CHECK(run_cli({"train", "--config", cfg_a.string()}) == 0);
    CHECK(run_cli({"train", "--config", cfg_b.string()}) == 0);
    CHECK(run_cli({"report", run_a.string(), "--output", out.string()}) == 0);
    CHECK(fs::exists(out / "table.csv"));
    CHECK(fs::exists(out / "resource_curves.png"));
    CHECK(run_cli({"report", run_a.string(), run_b.string(), "--output",
                   fresh_dir("rep_mixed").string()}) == 3);
    cap.out.str("");
    CHECK(run_cli({"inspect", run_a.string()}) == 0);
    CHECK(cap.out.str().find("strategy joint_standard") != std::string::npos);
    CHECK(run_cli({"inspect", fresh_dir("rep_nothing").string()}) == 3);
  }
}
