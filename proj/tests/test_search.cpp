#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fscil/common.hpp"
#include "fscil/config.hpp"
#include "fscil/rng.hpp"
#include "fscil/search.hpp"
#include "fscil/train.hpp"

using namespace fscil;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ExperimentConfig search_base() {
  ExperimentConfig c;
  c.dataset.num_classes = 6;
  c.dataset.samples_per_class = 20;
  c.dataset.test_per_class = 6;
  c.dataset.image_size = 8;
  c.dataset.separation = 3.0;
  c.dataset.noise = 0.4;
  c.protocol.base_classes = 4;
  c.protocol.ways = 1;
  c.protocol.sessions = 2;
  c.protocol.shots = 3;
  c.train.epochs = 2;
  c.train.batch_size = 16;
  c.train.lr = 0.05;
  c.train.backbone_depth = 8;
  c.train.backbone_width = 4;
  c.seed = 123;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("fscil_search_" + name);
  fs::remove_all(d);
  return d;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

TrialRecord fake_record(int trial, double a_acc, double g_acc, bool complete = true) {
  TrialRecord r;
  r.trial = trial;
  r.technique = "cmo";
  r.category = "resampling";
  r.params = json{{"beta", 1.0}};
  r.status = complete ? "complete" : "failed";
  if (!complete) r.error = "synthetic failure";
  r.last.acc.overall = a_acc;
  r.last.gacc = g_acc;
  return r;
}

json record_without_seconds(const TrialRecord& r) {
  json j = trial_record_json(r);
  j.erase("seconds");
  return j;
}

}  // namespace

TEST_SUITE("search") {

TEST_CASE("built-in spaces are valid and unknown techniques are rejected") {
  for (const std::string t :
       {"cmo", "balanced_batch", "balanced_softmax", "class_balanced", "imbsam"}) {
    SearchSpace s = default_search_space(t);
    CHECK(s.technique == t);
    CHECK_FALSE(s.category.empty());
  }
  CHECK(default_search_space("cmo").category == "resampling");
  CHECK(default_search_space("balanced_softmax").category == "reweighting");
  CHECK(default_search_space("imbsam").category == "optimizer");
  CHECK_THROWS_AS(default_search_space("mixup"), ConfigError);
}

TEST_CASE("malformed spaces are rejected") {
  SearchSpace s = default_search_space("cmo");
  s.params[0].lo = 2.0;
  s.params[0].hi = 0.1;
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = default_search_space("cmo");
  s.params[0].lo = 0.0;  // log-uniform needs positive bounds
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = default_search_space("class_balanced");
  s.params[0].choices.clear();
  CHECK_THROWS_AS(s.validate(), ConfigError);

  s = default_search_space("imbsam");
  s.params[0].target = "dataset";
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("sampling is deterministic and respects bounds") {
  SearchSpace cmo = default_search_space("cmo");
  Rng a(42), b(42);
  CHECK(sample_params(cmo, a) == sample_params(cmo, b));

  Rng r(7);
  for (int i = 0; i < 200; ++i) {
    double beta = sample_params(cmo, r).at("beta").get<double>();
    CHECK(beta >= 0.1);
    CHECK(beta <= 2.0);
  }
  SearchSpace cb = default_search_space("class_balanced");
  for (int i = 0; i < 50; ++i) {
    double v = sample_params(cb, r).at("beta").get<double>();
    CHECK((v == 0.9 || v == 0.99 || v == 0.999 || v == 0.9999));
  }
  SearchSpace none = default_search_space("balanced_batch");
  CHECK(sample_params(none, r) == json::object());
}

TEST_CASE("trial configs wire the technique in and validate") {
  ExperimentConfig base = search_base();
  SearchSpace bs = default_search_space("balanced_softmax");
  json sampled = {{"lr", 0.2}, {"weight_decay", 1e-3}};
  ExperimentConfig c = trial_config(base, bs, sampled, 999);
  CHECK(c.seed == 999);
  CHECK(c.train.strategy == "joint_imbalance");
  CHECK(c.train.lr == doctest::Approx(0.2));
  CHECK(c.train.weight_decay == doctest::Approx(1e-3));
  REQUIRE(c.train.plugins.size() == 1);
  CHECK(c.train.plugins[0].name == "balanced_softmax");

  SearchSpace cmo = default_search_space("cmo");
  ExperimentConfig c2 = trial_config(base, cmo, json{{"beta", 0.5}}, 1);
  CHECK(c2.train.plugins[0].number("beta") == doctest::Approx(0.5));
  CHECK(c2.train.lr == base.train.lr);
}

TEST_CASE("trial records serialize both outcomes") {
  TrialRecord ok = fake_record(3, 0.8, 0.7);
  ok.seed = 555;
  ok.seconds = 1.5;
  TrialRecord back = trial_record_from_json(trial_record_json(ok));
  CHECK(back.trial == 3);
  CHECK(back.seed == 555);
  CHECK(back.status == "complete");
  CHECK(back.last.acc.overall == 0.8);
  CHECK(back.last.gacc == 0.7);

  TrialRecord bad = fake_record(4, 0, 0, false);
  TrialRecord bad_back = trial_record_from_json(trial_record_json(bad));
  CHECK(bad_back.status == "failed");
  CHECK(bad_back.error == "synthetic failure");
  CHECK_FALSE(bad_back.metric_value("a_acc").has_value());
}

TEST_CASE("random search runs, reproduces itself, and resumes") {
  ExperimentConfig base = search_base();
  SearchSpace space = default_search_space("cmo");

  fs::path dir_a = fresh_dir("run_a");
  std::vector<TrialRecord> ra = run_random_search(base, space, 3, dir_a);
  REQUIRE(ra.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(ra[i].trial == i);
    CHECK(ra[i].status == "complete");
    double beta = ra[i].params.at("beta").get<double>();
    CHECK(beta >= 0.1);
    CHECK(beta <= 2.0);
    CHECK(fs::exists(dir_a / "trials" / ("t" + std::to_string(i) + ".json")));
  }
  CHECK(ra[0].params != ra[1].params);
  CHECK(fs::exists(dir_a / "search.json"));

  // Same master seed in a fresh directory: identical samples and metrics.
  fs::path dir_b = fresh_dir("run_b");
  std::vector<TrialRecord> rb = run_random_search(base, space, 3, dir_b);
  for (int i = 0; i < 3; ++i) CHECK(record_without_seconds(ra[i]) == record_without_seconds(rb[i]));

  // Restarting with more trials leaves finished records untouched.
  fs::path t0 = dir_a / "trials" / "t0.json";
  fs::path t1 = dir_a / "trials" / "t1.json";
  std::string t0_bytes = file_bytes(t0);
  std::string t1_bytes = file_bytes(t1);
  std::vector<TrialRecord> rc = run_random_search(base, space, 4, dir_a);
  REQUIRE(rc.size() == 4);
  CHECK(file_bytes(t0) == t0_bytes);
  CHECK(file_bytes(t1) == t1_bytes);
  CHECK(rc[3].status == "complete");
  CHECK(fs::exists(dir_a / "trials" / "t3.json"));
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("parallel workers give the serial result") {
  ExperimentConfig base = search_base();
  SearchSpace space = default_search_space("imbsam");
  fs::path serial = fresh_dir("serial");
  fs::path parallel = fresh_dir("parallel");
  std::vector<TrialRecord> rs = run_random_search(base, space, 4, serial, 1);
  std::vector<TrialRecord> rp = run_random_search(base, space, 4, parallel, 3);
  REQUIRE(rs.size() == rp.size());
  for (size_t i = 0; i < rs.size(); ++i)
    CHECK(record_without_seconds(rs[i]) == record_without_seconds(rp[i]));
  fs::remove_all(serial);
  fs::remove_all(parallel);
}

TEST_CASE("diverging trials are recorded as failed and the search continues") {
  ExperimentConfig base = search_base();
  SearchSpace doomed;
  doomed.technique = "balanced_softmax";
  doomed.category = "reweighting";
  doomed.params = {{"lr", "train", ParamKind::Choice, 0, 0, {1e9}}};

  fs::path dir = fresh_dir("doomed");
  std::vector<TrialRecord> recs = run_random_search(base, doomed, 2, dir);
  REQUIRE(recs.size() == 2);
  for (const auto& r : recs) {
    CHECK(r.status == "failed");
    CHECK_FALSE(r.error.empty());
  }
  std::string why;
  CHECK(select_top(recs, "a_acc", 1, &why).empty());
  CHECK(why == "all 2 trials failed");
  fs::remove_all(dir);

  // Mixed space: sane and diverging step sizes; outcome follows the sample.
  SearchSpace mixed = doomed;
  mixed.params[0].choices = {0.05, 1e9};
  fs::path mdir = fresh_dir("mixed");
  std::vector<TrialRecord> mixed_recs = run_random_search(base, mixed, 6, mdir);
  int ok = 0, bad = 0;
  for (const auto& r : mixed_recs) {
    double lr = r.params.at("lr").get<double>();
    if (lr == 0.05) {
      CHECK(r.status == "complete");
      ++ok;
    } else {
      CHECK(r.status == "failed");
      ++bad;
    }
  }
  CHECK(ok > 0);
  CHECK(bad > 0);
  std::vector<TrialRecord> top = select_top(mixed_recs, "a_acc", 6);
  CHECK(static_cast<int>(top.size()) == ok);
  fs::remove_all(mdir);
}

TEST_CASE("selection ranks by the chosen metric with stable ties") {
  std::vector<TrialRecord> recs = {fake_record(0, 0.3, 0.6), fake_record(1, 0.5, 0.2),
                                   fake_record(2, 0.4, 0.4)};
  std::vector<TrialRecord> top = select_top(recs, "a_acc", 1);
  REQUIRE(top.size() == 1);
  CHECK(top[0].trial == 1);

  // The two metrics order these records differently.
  top = select_top(recs, "g_acc", 3);
  REQUIRE(top.size() == 3);
  CHECK(top[0].trial == 0);
  CHECK(top[1].trial == 2);
  CHECK(top[2].trial == 1);

  // Aliases map to the same metrics.
  CHECK(select_top(recs, "aacc", 1)[0].trial == 1);
  CHECK(select_top(recs, "gacc", 1)[0].trial == 0);
  CHECK_THROWS_AS(select_top(recs, "f1", 1), ConfigError);

  std::vector<TrialRecord> tied = {fake_record(7, 0.5, 0.5), fake_record(2, 0.5, 0.5),
                                   fake_record(5, 0.1, 0.1)};
  top = select_top(tied, "a_acc", 2);
  REQUIRE(top.size() == 2);
  CHECK(top[0].trial == 2);  // tie broken by lower trial id
  CHECK(top[1].trial == 7);

  std::vector<TrialRecord> seven;
  for (int i = 0; i < 7; ++i) seven.push_back(fake_record(i, 0.1 * i, 0.1 * i));
  top = select_top(seven, "a_acc", 5);
  REQUIRE(top.size() == 5);
  for (int i = 1; i < 5; ++i)
    CHECK(top[i - 1].last.acc.overall >= top[i].last.acc.overall);

  std::string why;
  std::vector<TrialRecord> failed = {fake_record(0, 0, 0, false), fake_record(1, 0, 0, false)};
  CHECK(select_top(failed, "a_acc", 3, &why).empty());
  CHECK(why == "all 2 trials failed");
  top = select_top(recs, "a_acc", 9, &why);
  CHECK(top.size() == 3);
  CHECK(why == "only 3 of the requested 9 records rank");
}

TEST_CASE("winning techniques compose into one benchmark config") {
  ExperimentConfig base = search_base();

  TrialRecord cmo_win = fake_record(2, 0.8, 0.7);
  cmo_win.params = json{{"beta", 0.63}};
  TechniqueSelection r = selection_from(default_search_space("cmo"), cmo_win);
  CHECK(r.plugin_params == json{{"beta", 0.63}});
  CHECK(r.train_overrides == json::object());

  TrialRecord bs_win = fake_record(4, 0.82, 0.71);
  bs_win.technique = "balanced_softmax";
  bs_win.category = "reweighting";
  bs_win.params = json{{"lr", 0.13}, {"weight_decay", 2e-4}};
  TechniqueSelection w = selection_from(default_search_space("balanced_softmax"), bs_win);
  CHECK(w.plugin_params == json::object());
  CHECK(w.train_overrides == bs_win.params);

  TrialRecord sam_win = fake_record(9, 0.85, 0.74);
  sam_win.technique = "imbsam";
  sam_win.category = "optimizer";
  sam_win.params = json{{"rho", 0.07}};
  TechniqueSelection o = selection_from(default_search_space("imbsam"), sam_win);

  // Declaration order should not matter; plugins come out canonical.
  ExperimentConfig bench = compose_benchmark(base, {o, w, r});
  CHECK(bench.train.strategy == "joint_imbalance");
  REQUIRE(bench.train.plugins.size() == 3);
  CHECK(bench.train.plugins[0].name == "cmo");
  CHECK(bench.train.plugins[0].number("beta") == doctest::Approx(0.63));
  CHECK(bench.train.plugins[1].name == "balanced_softmax");
  CHECK(bench.train.plugins[2].name == "imbsam");
  CHECK(bench.train.plugins[2].number("rho") == doctest::Approx(0.07));
  CHECK(bench.train.lr == doctest::Approx(0.13));
  CHECK(bench.train.weight_decay == doctest::Approx(2e-4));
  CHECK_FALSE(bench.search.has_value());

  ExperimentConfig plain = compose_benchmark(base, {});
  CHECK(plain.train.strategy == "joint_standard");
  CHECK(plain.train.plugins.empty());

  TechniqueSelection r2 = r;
  r2.technique = "balanced_batch";
  r2.plugin_params = json::object();
  CHECK_THROWS_AS(compose_benchmark(base, {r, r2}), ConfigError);

  TechniqueSelection alien = r;
  alien.category = "distillation";
  CHECK_THROWS_AS(compose_benchmark(base, {alien}), ConfigError);

  // The composed config must actually run.
  RunOptions opts;
  opts.run_dir = fresh_dir("composed");
  opts.last_session = 0;
  RunRecord run = run_training(bench, load_dataset(bench), opts);
  CHECK(run.status == "complete");
  fs::remove_all(opts.run_dir);
}

TEST_CASE("the ablation ladder grows one category per step") {
  ExperimentConfig base = search_base();
  TechniqueSelection r{"resampling", "cmo", json{{"beta", 1.0}}, json::object()};
  TechniqueSelection w{"reweighting", "balanced_softmax", json::object(), json::object()};
  TechniqueSelection o{"optimizer", "imbsam", json{{"rho", 0.05}}, json::object()};

  std::vector<ExperimentConfig> ladder = ablation_ladder(base, {w, o, r});
  REQUIRE(ladder.size() == 4);
  CHECK(ladder[0].train.strategy == "joint_standard");
  CHECK(ladder[0].train.plugins.empty());
  REQUIRE(ladder[1].train.plugins.size() == 1);
  CHECK(ladder[1].train.plugins[0].name == "cmo");
  REQUIRE(ladder[2].train.plugins.size() == 2);
  CHECK(ladder[2].train.plugins[1].name == "balanced_softmax");
  REQUIRE(ladder[3].train.plugins.size() == 3);
  CHECK(ladder[3].train.plugins[2].name == "imbsam");

  std::vector<ExperimentConfig> partial = ablation_ladder(base, {o});
  REQUIRE(partial.size() == 2);
  CHECK(partial[1].train.plugins[0].name == "imbsam");
}

}  // TEST_SUITE
