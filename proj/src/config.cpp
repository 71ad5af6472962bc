#include "fscil/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "fscil/common.hpp"
#include "fscil/nn.hpp"
#include "fscil/rng.hpp"

namespace fscil {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw ConfigError("config: " + where + ": " + what);
}

void check_object(const json& j, const std::string& where) {
  if (!j.is_object()) bad(where, "expected an object");
}

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) bad(where, "unknown key \"" + it.key() + "\"");
  }
}

int get_int(const json& j, const std::string& where, const std::string& key, int def) {
  if (!j.contains(key)) return def;
  const json& v = j.at(key);
  if (!v.is_number_integer()) bad(where, "\"" + key + "\" must be an integer");
  return v.get<int>();
}

uint64_t get_u64(const json& j, const std::string& where, const std::string& key, uint64_t def) {
  if (!j.contains(key)) return def;
  const json& v = j.at(key);
  if (!v.is_number_unsigned() && !v.is_number_integer())
    bad(where, "\"" + key + "\" must be a nonnegative integer");
  if (v.is_number_integer() && !v.is_number_unsigned() && v.get<int64_t>() < 0)
    bad(where, "\"" + key + "\" must be a nonnegative integer");
  return v.get<uint64_t>();
}

double get_double(const json& j, const std::string& where, const std::string& key, double def) {
  if (!j.contains(key)) return def;
  const json& v = j.at(key);
  if (!v.is_number()) bad(where, "\"" + key + "\" must be a number");
  return v.get<double>();
}

std::string get_string(const json& j, const std::string& where, const std::string& key,
                       const std::string& def) {
  if (!j.contains(key)) return def;
  const json& v = j.at(key);
  if (!v.is_string()) bad(where, "\"" + key + "\" must be a string");
  return v.get<std::string>();
}

bool get_bool(const json& j, const std::string& where, const std::string& key, bool def) {
  if (!j.contains(key)) return def;
  const json& v = j.at(key);
  if (!v.is_boolean()) bad(where, "\"" + key + "\" must be a boolean");
  return v.get<bool>();
}

std::vector<int> get_int_list(const json& j, const std::string& where, const std::string& key) {
  std::vector<int> out;
  if (!j.contains(key)) return out;
  const json& v = j.at(key);
  if (!v.is_array()) bad(where, "\"" + key + "\" must be a list of integers");
  for (const auto& e : v) {
    if (!e.is_number_integer()) bad(where, "\"" + key + "\" must be a list of integers");
    out.push_back(e.get<int>());
  }
  return out;
}

struct ParamField {
  const char* key;
  bool is_int;
  double def;
};

struct PluginSchema {
  const char* name;
  const char* category;
  std::vector<ParamField> fields;
};

const std::vector<PluginSchema>& plugin_schemas() {
  static const std::vector<PluginSchema> schemas = {
      {"cmo", "resampling", {{"beta", false, 1.0}, {"cooldown", true, 3.0}}},
      {"balanced_batch", "resampling", {}},
      {"balanced_softmax", "reweighting", {}},
      {"class_balanced", "reweighting", {{"beta", false, 0.999}}},
      {"imbsam", "optimizer", {{"rho", false, 0.05}, {"tail_threshold", true, 0.0}}},
  };
  return schemas;
}

const PluginSchema* find_schema(const std::string& name) {
  for (const auto& s : plugin_schemas())
    if (name == s.name) return &s;
  return nullptr;
}

void validate_plugin(const PluginConfig& p) {
  const PluginSchema* schema = find_schema(p.name);
  if (!schema) bad("train.plugins", "unknown plugin \"" + p.name + "\"");
  if (p.category != schema->category)
    bad("train.plugins", "plugin \"" + p.name + "\" belongs to category \"" + schema->category +
                             "\", not \"" + p.category + "\"");
  if (!p.params.is_object()) bad("train.plugins", "params must be an object");
  std::set<std::string> allowed;
  for (const auto& f : schema->fields) allowed.insert(f.key);
  check_keys(p.params, "train.plugins." + p.name + ".params", allowed);
  for (const auto& f : schema->fields) {
    if (!p.params.contains(f.key)) continue;
    const json& v = p.params.at(f.key);
    if (f.is_int && !v.is_number_integer())
      bad("train.plugins." + p.name, std::string("\"") + f.key + "\" must be an integer");
    if (!v.is_number())
      bad("train.plugins." + p.name, std::string("\"") + f.key + "\" must be a number");
  }
  if (p.name == "cmo") {
    if (p.number("beta") <= 0) bad("train.plugins.cmo", "beta must be > 0");
    if (p.integer("cooldown") < 0) bad("train.plugins.cmo", "cooldown must be >= 0");
  } else if (p.name == "class_balanced") {
    double b = p.number("beta");
    if (b < 0.0 || b >= 1.0) bad("train.plugins.class_balanced", "beta must be in [0, 1)");
  } else if (p.name == "imbsam") {
    if (p.number("rho") <= 0) bad("train.plugins.imbsam", "rho must be > 0");
    if (p.integer("tail_threshold") < 0)
      bad("train.plugins.imbsam", "tail_threshold must be >= 0");
  }
}

/// Fills unspecified params with schema defaults so rendering is canonical.
void normalize_plugin(PluginConfig& p) {
  const PluginSchema* schema = find_schema(p.name);
  json full = json::object();
  for (const auto& f : schema->fields) {
    if (p.params.contains(f.key))
      full[f.key] = p.params.at(f.key);
    else if (f.is_int)
      full[f.key] = static_cast<int>(f.def);
    else
      full[f.key] = f.def;
  }
  p.params = std::move(full);
}

DatasetConfig parse_dataset(const json& j) {
  const std::string where = "dataset";
  check_object(j, where);
  check_keys(j, where,
             {"name", "root", "augment", "num_classes", "samples_per_class", "test_per_class",
              "image_size", "channels", "separation", "noise"});
  DatasetConfig d;
  d.name = get_string(j, where, "name", d.name);
  d.root = get_string(j, where, "root", d.root);
  d.augment = get_bool(j, where, "augment", d.augment);
  d.num_classes = get_int(j, where, "num_classes", d.num_classes);
  d.samples_per_class = get_int(j, where, "samples_per_class", d.samples_per_class);
  d.test_per_class = get_int(j, where, "test_per_class", d.test_per_class);
  d.image_size = get_int(j, where, "image_size", d.image_size);
  d.channels = get_int(j, where, "channels", d.channels);
  d.separation = get_double(j, where, "separation", d.separation);
  d.noise = get_double(j, where, "noise", d.noise);
  return d;
}

ProtocolBlock parse_protocol(const json& j) {
  const std::string where = "protocol";
  check_object(j, where);
  check_keys(j, where,
             {"base_classes", "ways", "sessions", "shots", "val_fraction", "class_order"});
  ProtocolBlock p;
  p.base_classes = get_int(j, where, "base_classes", p.base_classes);
  p.ways = get_int(j, where, "ways", p.ways);
  p.sessions = get_int(j, where, "sessions", p.sessions);
  p.shots = get_int(j, where, "shots", p.shots);
  p.val_fraction = get_double(j, where, "val_fraction", p.val_fraction);
  p.class_order = get_string(j, where, "class_order", p.class_order);
  return p;
}

TrainConfig parse_train(const json& j) {
  const std::string where = "train";
  check_object(j, where);
  check_keys(j, where,
             {"strategy", "epochs", "batch_size", "lr", "lr_milestones", "lr_decay",
              "weight_decay", "momentum", "backbone_depth", "backbone_width", "head",
              "init_temperature", "checkpoint_epochs", "incr_epochs", "incr_lr_scale",
              "plugins"});
  TrainConfig t;
  t.strategy = get_string(j, where, "strategy", t.strategy);
  t.epochs = get_int(j, where, "epochs", t.epochs);
  t.batch_size = get_int(j, where, "batch_size", t.batch_size);
  t.lr = get_double(j, where, "lr", t.lr);
  t.lr_milestones = get_int_list(j, where, "lr_milestones");
  t.lr_decay = get_double(j, where, "lr_decay", t.lr_decay);
  t.weight_decay = get_double(j, where, "weight_decay", t.weight_decay);
  t.momentum = get_double(j, where, "momentum", t.momentum);
  t.backbone_depth = get_int(j, where, "backbone_depth", t.backbone_depth);
  t.backbone_width = get_int(j, where, "backbone_width", t.backbone_width);
  t.head = get_string(j, where, "head", t.head);
  t.init_temperature = get_double(j, where, "init_temperature", t.init_temperature);
  t.checkpoint_epochs = get_int_list(j, where, "checkpoint_epochs");
  t.incr_epochs = get_int(j, where, "incr_epochs", t.incr_epochs);
  t.incr_lr_scale = get_double(j, where, "incr_lr_scale", t.incr_lr_scale);
  if (j.contains("plugins")) {
    const json& ps = j.at("plugins");
    if (!ps.is_array()) bad(where, "\"plugins\" must be a list");
    for (const auto& pj : ps) {
      check_object(pj, "train.plugins");
      check_keys(pj, "train.plugins", {"category", "name", "params"});
      PluginConfig p;
      p.category = get_string(pj, "train.plugins", "category", "");
      p.name = get_string(pj, "train.plugins", "name", "");
      if (pj.contains("params")) p.params = pj.at("params");
      validate_plugin(p);
      normalize_plugin(p);
      t.plugins.push_back(std::move(p));
    }
  }
  return t;
}

SearchConfig parse_search(const json& j) {
  const std::string where = "search";
  check_object(j, where);
  check_keys(j, where, {"trials", "technique", "metric", "top_k"});
  SearchConfig s;
  s.trials = get_int(j, where, "trials", s.trials);
  s.technique = get_string(j, where, "technique", s.technique);
  s.metric = get_string(j, where, "metric", s.metric);
  s.top_k = get_int(j, where, "top_k", s.top_k);
  return s;
}

ReportConfig parse_report(const json& j) {
  const std::string where = "report";
  check_object(j, where);
  check_keys(j, where, {"session_table", "confusion_heatmaps", "resource_curves", "cka_grid"});
  ReportConfig r;
  r.session_table = get_bool(j, where, "session_table", r.session_table);
  r.confusion_heatmaps = get_bool(j, where, "confusion_heatmaps", r.confusion_heatmaps);
  r.resource_curves = get_bool(j, where, "resource_curves", r.resource_curves);
  r.cka_grid = get_bool(j, where, "cka_grid", r.cka_grid);
  return r;
}

void require_ascending(const std::vector<int>& v, int lo, int hi, const std::string& what) {
  int prev = lo - 1;
  for (int e : v) {
    if (e < lo || e > hi)
      throw ValidationError("config: " + what + " entry " + std::to_string(e) +
                            " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    if (e <= prev) throw ValidationError("config: " + what + " must be strictly ascending");
    prev = e;
  }
}

std::vector<int> scaled_epoch_list(const std::vector<int>& v, double scale, int max_epoch) {
  std::vector<int> out;
  for (int e : v) {
    int s = std::max(1, static_cast<int>(std::lround(e * scale)));
    s = std::min(s, max_epoch);
    if (out.empty() || s > out.back()) out.push_back(s);
  }
  return out;
}

}  // namespace

double PluginConfig::number(const std::string& key) const {
  if (params.contains(key)) return params.at(key).get<double>();
  if (const PluginSchema* s = find_schema(name))
    for (const auto& f : s->fields)
      if (key == f.key) return f.def;
  throw ContractError("plugin " + name + ": no param " + key);
}

int PluginConfig::integer(const std::string& key) const {
  if (params.contains(key)) return params.at(key).get<int>();
  if (const PluginSchema* s = find_schema(name))
    for (const auto& f : s->fields)
      if (key == f.key && f.is_int) return static_cast<int>(f.def);
  throw ContractError("plugin " + name + ": no param " + key);
}

const PluginConfig* TrainConfig::plugin(const std::string& category) const {
  for (const auto& p : plugins)
    if (p.category == category) return &p;
  return nullptr;
}

double TrainConfig::lr_at_epoch(int e) const {
  double out = lr;
  for (int m : lr_milestones)
    if (m < e) out *= lr_decay;
  return out;
}

ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  check_object(j, "top level");
  check_keys(j, "top level",
             {"dataset", "protocol", "train", "search", "report", "output_dir", "seed"});
  ExperimentConfig c;
  if (j.contains("dataset")) c.dataset = parse_dataset(j.at("dataset"));
  if (j.contains("protocol")) c.protocol = parse_protocol(j.at("protocol"));
  if (j.contains("train")) c.train = parse_train(j.at("train"));
  if (j.contains("search")) c.search = parse_search(j.at("search"));
  if (j.contains("report")) c.report = parse_report(j.at("report"));
  c.output_dir = get_string(j, "top level", "output_dir", c.output_dir);
  c.seed = get_u64(j, "top level", "seed", c.seed);
  validate_config(c);
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  return parse_experiment_config(j);
}

nlohmann::json render_experiment_config(const ExperimentConfig& c) {
  json j;
  j["dataset"] = {{"name", c.dataset.name},
                  {"root", c.dataset.root},
                  {"augment", c.dataset.augment},
                  {"num_classes", c.dataset.num_classes},
                  {"samples_per_class", c.dataset.samples_per_class},
                  {"test_per_class", c.dataset.test_per_class},
                  {"image_size", c.dataset.image_size},
                  {"channels", c.dataset.channels},
                  {"separation", c.dataset.separation},
                  {"noise", c.dataset.noise}};
  j["protocol"] = {{"base_classes", c.protocol.base_classes},
                   {"ways", c.protocol.ways},
                   {"sessions", c.protocol.sessions},
                   {"shots", c.protocol.shots},
                   {"val_fraction", c.protocol.val_fraction},
                   {"class_order", c.protocol.class_order}};
  json plugins = json::array();
  for (const auto& p : c.train.plugins) {
    PluginConfig canon = p;
    if (find_schema(p.name)) normalize_plugin(canon);
    plugins.push_back({{"category", canon.category}, {"name", canon.name},
                       {"params", canon.params}});
  }
  j["train"] = {{"strategy", c.train.strategy},
                {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"lr", c.train.lr},
                {"lr_milestones", c.train.lr_milestones},
                {"lr_decay", c.train.lr_decay},
                {"weight_decay", c.train.weight_decay},
                {"momentum", c.train.momentum},
                {"backbone_depth", c.train.backbone_depth},
                {"backbone_width", c.train.backbone_width},
                {"head", c.train.head},
                {"init_temperature", c.train.init_temperature},
                {"checkpoint_epochs", c.train.checkpoint_epochs},
                {"incr_epochs", c.train.incr_epochs},
                {"incr_lr_scale", c.train.incr_lr_scale},
                {"plugins", plugins}};
  if (c.search) {
    j["search"] = {{"trials", c.search->trials},
                   {"technique", c.search->technique},
                   {"metric", c.search->metric},
                   {"top_k", c.search->top_k}};
  }
  j["report"] = {{"session_table", c.report.session_table},
                 {"confusion_heatmaps", c.report.confusion_heatmaps},
                 {"resource_curves", c.report.resource_curves},
                 {"cka_grid", c.report.cka_grid}};
  j["output_dir"] = c.output_dir;
  j["seed"] = c.seed;
  return j;
}

void save_experiment_config(const std::filesystem::path& path, const ExperimentConfig& c) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("config: cannot write " + tmp.string());
    out << render_experiment_config(c).dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

void validate_train_config(const TrainConfig& t) {
  static const std::set<std::string> strategies = {"joint_standard", "joint_imbalance",
                                                   "incr_prototype", "incr_finetune"};
  if (!strategies.count(t.strategy))
    throw ValidationError("config: train.strategy \"" + t.strategy + "\" unknown");
  if (t.epochs < 1) throw ValidationError("config: train.epochs must be >= 1");
  if (t.batch_size < 1) throw ValidationError("config: train.batch_size must be >= 1");
  if (!(t.lr > 0)) throw ValidationError("config: train.lr must be > 0");
  if (!(t.lr_decay > 0 && t.lr_decay <= 1))
    throw ValidationError("config: train.lr_decay must be in (0, 1]");
  if (t.weight_decay < 0) throw ValidationError("config: train.weight_decay must be >= 0");
  if (t.momentum < 0 || t.momentum >= 1)
    throw ValidationError("config: train.momentum must be in [0, 1)");
  BackboneConfig bc;
  bc.depth = t.backbone_depth;
  bc.width = t.backbone_width;
  bc.blocks_per_stage();  // throws on a malformed depth
  if (t.backbone_width < 1) throw ValidationError("config: train.backbone_width must be >= 1");
  if (t.head != "linear" && t.head != "cosine")
    throw ValidationError("config: train.head must be linear or cosine");
  if (!(t.init_temperature > 0))
    throw ValidationError("config: train.init_temperature must be > 0");
  require_ascending(t.lr_milestones, 1, t.epochs, "train.lr_milestones");
  require_ascending(t.checkpoint_epochs, 1, t.epochs, "train.checkpoint_epochs");
  if (t.incr_epochs < 1) throw ValidationError("config: train.incr_epochs must be >= 1");
  if (t.incr_lr_scale < 0) throw ValidationError("config: train.incr_lr_scale must be >= 0");
  if (!t.plugins.empty() && !t.is_joint())
    throw ValidationError("config: plugins are only valid for joint strategies");
  if (t.strategy == "incr_prototype" && t.head != "cosine")
    throw ValidationError("config: incr_prototype requires the cosine head");
  std::set<std::string> seen_categories;
  for (const auto& p : t.plugins) {
    validate_plugin(p);
    if (!seen_categories.insert(p.category).second)
      throw ConfigError("config: plugin category \"" + p.category + "\" given twice");
  }
}

void validate_config(const ExperimentConfig& c) {
  const DatasetConfig& d = c.dataset;
  if (d.name != "synthetic" && d.name != "cifar100" && d.name != "image_folder")
    throw ValidationError("config: dataset.name \"" + d.name + "\" unknown");
  int classes_hint = 0;
  if (d.name == "synthetic") {
    if (d.num_classes < 2) throw ValidationError("config: dataset.num_classes must be >= 2");
    if (d.samples_per_class < 1)
      throw ValidationError("config: dataset.samples_per_class must be >= 1");
    if (d.test_per_class < 1) throw ValidationError("config: dataset.test_per_class must be >= 1");
    if (d.image_size < 4) throw ValidationError("config: dataset.image_size must be >= 4");
    if (d.channels < 1) throw ValidationError("config: dataset.channels must be >= 1");
    if (!(d.separation > 0)) throw ValidationError("config: dataset.separation must be > 0");
    if (d.noise < 0) throw ValidationError("config: dataset.noise must be >= 0");
    classes_hint = d.num_classes;
  } else {
    if (d.root.empty()) throw ValidationError("config: dataset.root required for " + d.name);
    if (d.name == "cifar100") classes_hint = 100;
  }

  const ProtocolBlock& p = c.protocol;
  if (p.base_classes < 1) throw ValidationError("config: protocol.base_classes must be >= 1");
  if (p.ways < 1) throw ValidationError("config: protocol.ways must be >= 1");
  if (p.sessions < 0) throw ValidationError("config: protocol.sessions must be >= 0");
  if (p.shots < 1) throw ValidationError("config: protocol.shots must be >= 1");
  if (p.val_fraction < 0 || p.val_fraction >= 1)
    throw ValidationError("config: protocol.val_fraction must be in [0, 1)");
  if (p.class_order != "ascending" && p.class_order != "seeded_permutation")
    throw ValidationError("config: protocol.class_order must be ascending or seeded_permutation");
  if (classes_hint > 0 && p.base_classes + p.ways * p.sessions > classes_hint)
    throw ValidationError("config: protocol needs " +
                          std::to_string(p.base_classes + p.ways * p.sessions) +
                          " classes but the dataset has " + std::to_string(classes_hint));

  validate_train_config(c.train);

  if (c.search) {
    const SearchConfig& s = *c.search;
    if (s.trials < 1) throw ValidationError("config: search.trials must be >= 1");
    if (!find_schema(s.technique))
      throw ValidationError("config: search.technique \"" + s.technique + "\" unknown");
    if (s.metric != "a_acc" && s.metric != "g_acc")
      throw ValidationError("config: search.metric must be a_acc or g_acc");
    if (s.top_k < 1) throw ValidationError("config: search.top_k must be >= 1");
  }
  if (c.output_dir.empty()) throw ValidationError("config: output_dir must not be empty");
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return render_experiment_config(a) == render_experiment_config(b);
}

uint64_t config_hash(const ExperimentConfig& c) {
  return derive_seed(0x5eedc0de, render_experiment_config(c).dump());
}

void apply_scale(ExperimentConfig& c, double scale) {
  if (!(scale > 0 && scale <= 1))
    throw ValidationError("config: scale factor must be in (0, 1]");
  if (scale == 1.0) return;
  TrainConfig& t = c.train;
  t.epochs = std::max(1, static_cast<int>(std::lround(t.epochs * scale)));
  t.incr_epochs = std::max(1, static_cast<int>(std::lround(t.incr_epochs * scale)));
  t.lr_milestones = scaled_epoch_list(t.lr_milestones, scale, t.epochs);
  t.checkpoint_epochs = scaled_epoch_list(t.checkpoint_epochs, scale, t.epochs);
  if (c.dataset.name == "synthetic") {
    int floor_train = std::max(10, c.protocol.shots);
    c.dataset.samples_per_class = std::max(
        floor_train, static_cast<int>(std::lround(c.dataset.samples_per_class * scale)));
    c.dataset.test_per_class =
        std::max(5, static_cast<int>(std::lround(c.dataset.test_per_class * scale)));
  }
  validate_config(c);
}

ProtocolConfig protocol_config(const ExperimentConfig& c) {
  ProtocolConfig pc;
  pc.total_classes = c.dataset.name == "synthetic" ? c.dataset.num_classes : 0;
  pc.base_count = c.protocol.base_classes;
  pc.ways = c.protocol.ways;
  pc.num_sessions = c.protocol.sessions;
  pc.shots = c.protocol.shots;
  pc.val_fraction = c.protocol.val_fraction;
  pc.class_order = c.protocol.class_order;
  pc.seed = derive_seed(c.seed, "protocol");
  return pc;
}

DatasetPtr load_dataset(const ExperimentConfig& c) {
  const DatasetConfig& d = c.dataset;
  if (d.name == "synthetic") {
    SyntheticSpec spec;
    spec.classes = d.num_classes;
    for (int k = 0; k < d.num_classes; ++k) spec.train_per_class[k] = d.samples_per_class;
    spec.test_per_class = d.test_per_class;
    spec.channels = d.channels;
    spec.height = d.image_size;
    spec.width = d.image_size;
    spec.separation = d.separation;
    spec.noise = d.noise;
    spec.seed = derive_seed(c.seed, "dataset/synthetic");
    DatasetPtr ds = make_synthetic(spec);
    ds->augment = d.augment;
    return ds;
  }
  DatasetPtr ds;
  if (d.name == "cifar100")
    ds = load_cifar100(d.root);
  else
    ds = load_image_folder_dataset(d.root, std::nullopt);
  ds->augment = d.augment;
  return ds;
}

}  // namespace fscil
