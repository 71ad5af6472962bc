#include "fscil/search.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <thread>

#include "fscil/common.hpp"
#include "fscil/train.hpp"

namespace fscil {

namespace fs = std::filesystem;
using nlohmann::json;

void SearchSpace::validate() const {
  if (technique.empty()) throw ConfigError("search space: empty technique name");
  for (const auto& p : params) {
    if (p.name.empty()) throw ConfigError("search space: unnamed param");
    if (p.target != "plugin" && p.target != "train")
      throw ConfigError("search space: param " + p.name + ": target must be plugin or train");
    switch (p.kind) {
      case ParamKind::Uniform:
      case ParamKind::LogUniform:
        if (!std::isfinite(p.lo) || !std::isfinite(p.hi))
          throw ConfigError("search space: param " + p.name + ": bounds must be finite");
        if (p.lo > p.hi)
          throw ConfigError("search space: param " + p.name + ": lo exceeds hi");
        if (p.kind == ParamKind::LogUniform && p.lo <= 0)
          throw ConfigError("search space: param " + p.name +
                            ": log-uniform bounds must be positive");
        break;
      case ParamKind::Choice:
        if (p.choices.empty())
          throw ConfigError("search space: param " + p.name + ": empty choice list");
        for (double c : p.choices)
          if (!std::isfinite(c))
            throw ConfigError("search space: param " + p.name + ": choices must be finite");
        break;
    }
  }
}

SearchSpace default_search_space(const std::string& technique) {
  SearchSpace s;
  s.technique = technique;
  if (technique == "cmo") {
    s.category = "resampling";
    s.params = {{"beta", "plugin", ParamKind::LogUniform, 0.1, 2.0, {}}};
  } else if (technique == "balanced_batch") {
    s.category = "resampling";  // no knobs of its own; trials differ by seed
  } else if (technique == "balanced_softmax") {
    s.category = "reweighting";  // counts-driven, so search the optimizer knobs
    s.params = {{"lr", "train", ParamKind::LogUniform, 0.01, 0.5, {}},
                {"weight_decay", "train", ParamKind::LogUniform, 1e-5, 1e-2, {}}};
  } else if (technique == "class_balanced") {
    s.category = "reweighting";
    s.params = {{"beta", "plugin", ParamKind::Choice, 0, 0, {0.9, 0.99, 0.999, 0.9999}}};
  } else if (technique == "imbsam") {
    s.category = "optimizer";
    s.params = {{"rho", "plugin", ParamKind::LogUniform, 0.01, 0.5, {}}};
  } else {
    throw ConfigError("search: unknown technique \"" + technique + "\"");
  }
  s.validate();
  return s;
}

json sample_params(const SearchSpace& space, Rng& rng) {
  json out = json::object();
  for (const auto& p : space.params) {
    double v = 0.0;
    switch (p.kind) {
      case ParamKind::Uniform:
        v = rng.uniform(p.lo, p.hi);
        break;
      case ParamKind::LogUniform:
        v = std::exp(rng.uniform(std::log(p.lo), std::log(p.hi)));
        break;
      case ParamKind::Choice:
        v = p.choices[rng.uniform_int(p.choices.size())];
        break;
    }
    out[p.name] = v;
  }
  return out;
}

ExperimentConfig trial_config(const ExperimentConfig& base, const SearchSpace& space,
                              const json& sampled, uint64_t trial_seed) {
  ExperimentConfig c = base;
  c.seed = trial_seed;
  c.train.strategy = "joint_imbalance";
  PluginConfig plugin;
  plugin.category = space.category;
  plugin.name = space.technique;
  for (const auto& p : space.params) {
    double v = sampled.at(p.name).get<double>();
    if (p.target == "plugin") {
      plugin.params[p.name] = v;
    } else if (p.name == "lr") {
      c.train.lr = v;
    } else if (p.name == "weight_decay") {
      c.train.weight_decay = v;
    } else {
      throw ContractError("search: no train field named " + p.name);
    }
  }
  c.train.plugins = {plugin};
  validate_config(c);
  return c;
}

std::optional<double> TrialRecord::metric_value(const std::string& metric) const {
  if (status != "complete") return std::nullopt;
  if (metric == "a_acc") return last.acc.overall;
  if (metric == "g_acc") return last.gacc;
  throw ConfigError("search: unknown metric \"" + metric + "\"");
}

std::string canonical_metric(const std::string& name) {
  if (name == "a_acc" || name == "aacc") return "a_acc";
  if (name == "g_acc" || name == "gacc") return "g_acc";
  throw ConfigError("search: metric must be a_acc or g_acc, got \"" + name + "\"");
}

json trial_record_json(const TrialRecord& r) {
  return json{{"trial", r.trial},
              {"technique", r.technique},
              {"category", r.category},
              {"params", r.params},
              {"seed", r.seed},
              {"status", r.status},
              {"error", r.error},
              {"seconds", r.seconds},
              {"metrics", r.status == "complete" ? session_metrics_json(r.last) : json()}};
}

TrialRecord trial_record_from_json(const json& j) {
  TrialRecord r;
  r.trial = j.at("trial");
  r.technique = j.at("technique");
  r.category = j.at("category");
  r.params = j.at("params");
  r.seed = j.at("seed").get<uint64_t>();
  r.status = j.at("status");
  r.error = j.at("error");
  r.seconds = j.at("seconds");
  if (!j.at("metrics").is_null()) r.last = session_metrics_from_json(j.at("metrics"));
  return r;
}

namespace {

TrialRecord execute_trial(const ExperimentConfig& base, const SearchSpace& space, int id,
                          const fs::path& trial_dir) {
  TrialRecord rec;
  rec.trial = id;
  rec.technique = space.technique;
  rec.category = space.category;
  rec.seed = derive_seed(base.seed, "search/trial=" + std::to_string(id));
  Rng sampler(derive_seed(base.seed, "search/sample/trial=" + std::to_string(id)));
  rec.params = sample_params(space, sampler);

  auto t0 = std::chrono::steady_clock::now();
  try {
    ExperimentConfig cfg = trial_config(base, space, rec.params, rec.seed);
    // A leftover directory without a record file is a crashed attempt;
    // start it over rather than resuming unknown state.
    fs::remove_all(trial_dir);
    RunOptions opts;
    opts.run_dir = trial_dir;
    RunRecord run = run_training(cfg, load_dataset(cfg), opts);
    if (run.sessions.empty()) throw TrainingError("trial produced no sessions");
    rec.last = run.sessions.back().metrics;
    rec.status = "complete";
  } catch (const std::exception& e) {
    rec.status = "failed";
    rec.error = e.what();
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

}  // namespace

std::vector<TrialRecord> run_random_search(const ExperimentConfig& base, const SearchSpace& space,
                                           int trials, const fs::path& out_dir, int workers) {
  if (trials < 1) throw ConfigError("search: trials must be >= 1");
  space.validate();
  fs::create_directories(out_dir / "trials");

  std::vector<TrialRecord> records(trials);
  std::vector<char> todo(trials, 0);
  for (int id = 0; id < trials; ++id) {
    fs::path record_file = out_dir / "trials" / ("t" + std::to_string(id) + ".json");
    todo[id] = 1;
    if (fs::exists(record_file)) {
      try {
        std::ifstream in(record_file);
        json j;
        in >> j;
        records[id] = trial_record_from_json(j);
        todo[id] = 0;
      } catch (const std::exception&) {
        // Unreadable record: treat the trial as never run.
      }
    }
  }

  std::atomic<int> cursor{0};
  auto work = [&] {
    for (;;) {
      int id = cursor.fetch_add(1);
      if (id >= trials) return;
      if (!todo[id]) continue;
      fs::path trial_dir = out_dir / "trials" / ("t" + std::to_string(id));
      records[id] = execute_trial(base, space, id, trial_dir);
      atomic_write_json(out_dir / "trials" / ("t" + std::to_string(id) + ".json"),
                        trial_record_json(records[id]));
    }
  };
  const int n_workers = std::max(1, std::min(workers, trials));
  if (n_workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  json index;
  index["technique"] = space.technique;
  index["category"] = space.category;
  index["trials"] = trials;
  index["seed"] = base.seed;
  json rows = json::array();
  int failed = 0;
  for (const auto& r : records) {
    if (r.status == "failed") ++failed;
    json row = {{"trial", r.trial}, {"status", r.status}, {"params", r.params}};
    row["a_acc"] = r.status == "complete" ? json(r.last.acc.overall) : json();
    row["g_acc"] =
        r.status == "complete" && r.last.gacc ? json(*r.last.gacc) : json();
    rows.push_back(std::move(row));
  }
  index["records"] = std::move(rows);
  index["failed"] = failed;
  atomic_write_json(out_dir / "search.json", index);
  return records;
}

std::vector<TrialRecord> select_top(const std::vector<TrialRecord>& records,
                                    const std::string& metric, int k, std::string* diagnostic) {
  const std::string m = canonical_metric(metric);
  std::vector<const TrialRecord*> ranked;
  int failed = 0;
  for (const auto& r : records) {
    if (r.status != "complete") {
      ++failed;
      continue;
    }
    if (r.metric_value(m)) ranked.push_back(&r);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [&](const TrialRecord* a, const TrialRecord* b) {
    double va = *a->metric_value(m), vb = *b->metric_value(m);
    if (va != vb) return va > vb;
    return a->trial < b->trial;
  });
  std::vector<TrialRecord> out;
  for (const TrialRecord* r : ranked) {
    if (static_cast<int>(out.size()) >= k) break;
    out.push_back(*r);
  }
  if (diagnostic) {
    if (out.empty())
      *diagnostic = records.empty() ? "no trial records"
                    : failed == static_cast<int>(records.size())
                        ? "all " + std::to_string(failed) + " trials failed"
                        : "no record defines metric " + m;
    else if (static_cast<int>(out.size()) < k)
      *diagnostic = "only " + std::to_string(out.size()) + " of the requested " +
                    std::to_string(k) + " records rank";
    else
      diagnostic->clear();
  }
  return out;
}

TechniqueSelection selection_from(const SearchSpace& space, const TrialRecord& rec) {
  TechniqueSelection sel;
  sel.category = space.category;
  sel.technique = space.technique;
  for (const auto& p : space.params) {
    if (!rec.params.contains(p.name))
      throw ContractError("selection: record lacks sampled param " + p.name);
    if (p.target == "plugin")
      sel.plugin_params[p.name] = rec.params.at(p.name);
    else
      sel.train_overrides[p.name] = rec.params.at(p.name);
  }
  return sel;
}

namespace {

const std::vector<std::string>& category_order() {
  static const std::vector<std::string> order = {"resampling", "reweighting", "optimizer"};
  return order;
}

}  // namespace

ExperimentConfig compose_benchmark(const ExperimentConfig& base,
                                   const std::vector<TechniqueSelection>& picks) {
  std::map<std::string, const TechniqueSelection*> by_category;
  for (const auto& p : picks) {
    if (!by_category.emplace(p.category, &p).second)
      throw ConfigError("compose: two techniques selected for category " + p.category);
  }
  ExperimentConfig c = base;
  c.search.reset();
  c.train.plugins.clear();
  c.train.strategy = picks.empty() ? "joint_standard" : "joint_imbalance";
  for (const auto& cat : category_order()) {
    auto it = by_category.find(cat);
    if (it == by_category.end()) continue;
    const TechniqueSelection& sel = *it->second;
    PluginConfig plugin;
    plugin.category = sel.category;
    plugin.name = sel.technique;
    plugin.params = sel.plugin_params;
    c.train.plugins.push_back(std::move(plugin));
    for (auto field = sel.train_overrides.begin(); field != sel.train_overrides.end(); ++field) {
      if (field.key() == "lr")
        c.train.lr = field.value().get<double>();
      else if (field.key() == "weight_decay")
        c.train.weight_decay = field.value().get<double>();
      else
        throw ContractError("compose: no train field named " + field.key());
    }
    by_category.erase(it);
  }
  if (!by_category.empty())
    throw ConfigError("compose: unknown category " + by_category.begin()->first);
  validate_config(c);
  return c;
}

std::vector<ExperimentConfig> ablation_ladder(const ExperimentConfig& base,
                                              const std::vector<TechniqueSelection>& picks) {
  // Cumulative prefixes in canonical order; duplicates surface via compose.
  std::vector<TechniqueSelection> ordered;
  for (const auto& cat : category_order())
    for (const auto& p : picks)
      if (p.category == cat) ordered.push_back(p);
  if (ordered.size() != picks.size())
    throw ConfigError("ablation: selection with unknown category");
  std::vector<ExperimentConfig> out;
  for (size_t n = 0; n <= ordered.size(); ++n)
    out.push_back(compose_benchmark(
        base, std::vector<TechniqueSelection>(ordered.begin(), ordered.begin() + n)));
  return out;
}

}  // namespace fscil
