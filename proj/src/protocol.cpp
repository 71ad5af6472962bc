#include "fscil/protocol.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "fscil/common.hpp"
#include "fscil/rng.hpp"

namespace fscil {

std::vector<int> FscilProtocol::seen_classes(int session_index) const {
  if (session_index < 0 || session_index > num_sessions())
    throw ContractError("seen_classes: session index " + std::to_string(session_index) +
                        " outside [0, " + std::to_string(num_sessions()) + "]");
  std::vector<int> out = base_classes;
  for (int s = 0; s < session_index; ++s)
    out.insert(out.end(), sessions[s].begin(), sessions[s].end());
  return out;
}

std::vector<int> FscilProtocol::incremental_classes(int session_index) const {
  std::vector<int> out;
  for (int s = 0; s < session_index && s < num_sessions(); ++s)
    out.insert(out.end(), sessions[s].begin(), sessions[s].end());
  return out;
}

void FscilProtocol::validate() const {
  if (total_classes <= 0) throw ValidationError("protocol: total_classes must be positive");
  if (shots_per_class < 1) throw ValidationError("protocol: shots_per_class must be >= 1");
  if (val_fraction < 0.0 || val_fraction >= 1.0)
    throw ValidationError("protocol: val_fraction must lie in [0, 1)");
  if (base_classes.empty()) throw ValidationError("protocol: base session has no classes");

  std::set<int> all;
  auto add_all = [&](const std::vector<int>& cls, const std::string& where) {
    for (int c : cls) {
      if (c < 0 || c >= total_classes)
        throw ValidationError("protocol: class id " + std::to_string(c) + " in " + where +
                              " outside [0, " + std::to_string(total_classes) + ")");
      if (!all.insert(c).second)
        throw ValidationError("protocol: class id " + std::to_string(c) +
                              " assigned to more than one session (" + where + ")");
    }
  };
  add_all(base_classes, "base");
  size_t way = sessions.empty() ? 0 : sessions[0].size();
  for (size_t s = 0; s < sessions.size(); ++s) {
    if (sessions[s].empty())
      throw ValidationError("protocol: incremental session " + std::to_string(s) + " is empty");
    if (sessions[s].size() != way)
      throw ValidationError("protocol: sessions have unequal way counts (" +
                            std::to_string(sessions[s].size()) + " vs " + std::to_string(way) +
                            ")");
    add_all(sessions[s], "session " + std::to_string(s));
  }
  if (static_cast<int>(all.size()) != total_classes)
    throw ValidationError("protocol: sessions cover " + std::to_string(all.size()) +
                          " classes but total_classes is " + std::to_string(total_classes));
}

uint64_t FscilProtocol::hash() const {
  std::ostringstream os;
  os << total_classes << '|' << shots_per_class << '|' << val_fraction << '|' << seed << "|b:";
  for (int c : base_classes) os << c << ',';
  for (const auto& s : sessions) {
    os << "|s:";
    for (int c : s) os << c << ',';
  }
  return derive_seed(0, os.str());
}

std::string FscilProtocol::manifest() const {
  std::ostringstream os;
  os << "fscil protocol: " << total_classes << " classes, " << num_sessions()
     << " incremental sessions, " << shots_per_class << "-shot, val_fraction " << val_fraction
     << "\n";
  auto list = [&](const std::vector<int>& cls) {
    for (size_t i = 0; i < cls.size(); ++i) os << (i ? " " : "") << cls[i];
  };
  os << "session 0 (base, " << base_classes.size() << " classes): ";
  list(base_classes);
  os << "\n";
  for (int s = 0; s < num_sessions(); ++s) {
    os << "session " << (s + 1) << " (" << sessions[s].size() << "-way): ";
    list(sessions[s]);
    os << "\n";
  }
  return os.str();
}

FscilProtocol build_protocol(const ProtocolConfig& cfg) {
  if (cfg.base_count + cfg.ways * cfg.num_sessions != cfg.total_classes)
    throw ValidationError(
        "protocol: base + ways x sessions != total_classes (" + std::to_string(cfg.base_count) +
        " + " + std::to_string(cfg.ways) + " x " + std::to_string(cfg.num_sessions) +
        " != " + std::to_string(cfg.total_classes) + ")");
  if (cfg.num_sessions > 0 && cfg.ways <= 0)
    throw ValidationError("protocol: ways must be positive when sessions exist");

  std::vector<int> order(cfg.total_classes);
  std::iota(order.begin(), order.end(), 0);
  if (cfg.class_order == "seeded_permutation") {
    Rng rng(derive_seed(cfg.seed, "protocol/class_order"));
    rng.shuffle(order);
  } else if (cfg.class_order != "ascending") {
    throw ValidationError("protocol: unknown class_order '" + cfg.class_order +
                          "' (expected 'ascending' or 'seeded_permutation')");
  }

  FscilProtocol p;
  p.total_classes = cfg.total_classes;
  p.shots_per_class = cfg.shots;
  p.val_fraction = cfg.val_fraction;
  p.seed = cfg.seed;
  p.base_classes.assign(order.begin(), order.begin() + cfg.base_count);
  for (int s = 0; s < cfg.num_sessions; ++s) {
    auto begin = order.begin() + cfg.base_count + static_cast<size_t>(s) * cfg.ways;
    p.sessions.emplace_back(begin, begin + cfg.ways);
  }
  p.validate();
  return p;
}

namespace {

// Canonical per-class shuffle: both the 9:1 split and the K-shot pick use
// the first elements of this ordering.
std::vector<int> shuffled_class_ids(const FscilProtocol& p, const ClassIndexSource& src, int cls,
                                    const char* purpose) {
  if (cls < 0 || cls >= src.source_num_classes())
    throw ContractError("session_view: class " + std::to_string(cls) +
                        " not present in the dataset");
  std::vector<int> ids = src.train_ids_of_class(cls);
  Rng rng(derive_seed(p.seed, std::string(purpose) + "/class/" + std::to_string(cls)));
  rng.shuffle(ids);
  return ids;
}

}  // namespace

SessionView session_view(const FscilProtocol& p, const ClassIndexSource& src, int session_index) {
  p.validate();
  if (session_index < 0 || session_index > p.num_sessions())
    throw ContractError("session_view: session index " + std::to_string(session_index) +
                        " outside [0, " + std::to_string(p.num_sessions()) + "]");

  SessionView view;
  view.session_index = session_index;
  view.seen_classes = p.seen_classes(session_index);

  if (session_index == 0) {
    for (int cls : p.base_classes) {
      auto ids = shuffled_class_ids(p, src, cls, "protocol/base_split");
      auto n = static_cast<long long>(ids.size());
      auto n_val = static_cast<long long>(std::llround(p.val_fraction * static_cast<double>(n)));
      view.train_indices.insert(view.train_indices.end(), ids.begin(), ids.begin() + (n - n_val));
      view.val_indices.insert(view.val_indices.end(), ids.begin() + (n - n_val), ids.end());
    }
  } else {
    const auto& new_classes = p.sessions[session_index - 1];
    for (int cls : new_classes) {
      auto ids = shuffled_class_ids(p, src, cls, "protocol/kshot");
      if (static_cast<int>(ids.size()) < p.shots_per_class)
        throw InsufficientDataError("session " + std::to_string(session_index) + ": class " +
                                    std::to_string(cls) + " has only " +
                                    std::to_string(ids.size()) + " train examples, need " +
                                    std::to_string(p.shots_per_class));
      view.train_indices.insert(view.train_indices.end(), ids.begin(),
                                ids.begin() + p.shots_per_class);
    }
  }
  std::sort(view.train_indices.begin(), view.train_indices.end());
  std::sort(view.val_indices.begin(), view.val_indices.end());
  return view;
}

SessionView accumulated_train_set(const FscilProtocol& p, const ClassIndexSource& src,
                                  int session_index) {
  SessionView acc;
  acc.session_index = session_index;
  acc.seen_classes = p.seen_classes(session_index);  // validates the index
  for (int s = 0; s <= session_index; ++s) {
    SessionView v = session_view(p, src, s);
    acc.train_indices.insert(acc.train_indices.end(), v.train_indices.begin(),
                             v.train_indices.end());
    if (s == 0) acc.val_indices = std::move(v.val_indices);
  }
  std::sort(acc.train_indices.begin(), acc.train_indices.end());
  return acc;
}

std::vector<int> cumulative_test_ids(const FscilProtocol& p, const ClassIndexSource& src,
                                     int session_index) {
  std::vector<int> out;
  for (int cls : p.seen_classes(session_index)) {
    const auto& ids = src.test_ids_of_class(cls);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace fscil
