#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fscil {

/// Session structure of a few-shot class-incremental problem: which classes
/// belong to the base session, which arrive at each incremental session, and
/// how many shots each incremental class provides.
struct FscilProtocol {
  int total_classes = 0;
  std::vector<int> base_classes;
  std::vector<std::vector<int>> sessions;  // incremental sessions, in arrival order
  int shots_per_class = 5;
  double val_fraction = 0.1;  // base session only
  uint64_t seed = 0;

  int num_sessions() const { return static_cast<int>(sessions.size()); }

  /// Classes visible at session i (base plus sessions[0..i-1]).
  std::vector<int> seen_classes(int session_index) const;

  /// Incremental classes visible at session i (everything seen except base).
  std::vector<int> incremental_classes(int session_index) const;

  /// Checks all structural invariants; throws ValidationError on violation.
  void validate() const;

  /// Stable content hash used to detect incompatible run directories.
  uint64_t hash() const;

  /// Human-readable manifest listing every class id per session.
  std::string manifest() const;
};

struct ProtocolConfig {
  int total_classes = 100;
  int base_count = 60;
  int ways = 5;
  int num_sessions = 8;
  int shots = 5;
  double val_fraction = 0.1;
  std::string class_order = "ascending";  // or "seeded_permutation"
  uint64_t seed = 0;
};

FscilProtocol build_protocol(const ProtocolConfig& cfg);

/// Indices visible to a trainer at one session. All indices refer to the
/// underlying dataset's stable example ids; test ids never appear here.
struct SessionView {
  int session_index = 0;
  std::vector<int> seen_classes;
  std::vector<int> train_indices;
  std::vector<int> val_indices;
};

/// Source of per-class example ids. Implemented by the dataset module;
/// kept abstract so the protocol logic stays free of image payloads.
class ClassIndexSource {
 public:
  virtual ~ClassIndexSource() = default;
  virtual int source_num_classes() const = 0;
  virtual const std::vector<int>& train_ids_of_class(int cls) const = 0;
  virtual const std::vector<int>& test_ids_of_class(int cls) const = 0;
};

/// Materializes the protocol against concrete data for one session.
/// Deterministic for fixed (protocol.seed, i). Session 0 splits the base
/// data per class in (1-val_fraction):val_fraction; incremental sessions
/// pick exactly shots_per_class ids per new class.
SessionView session_view(const FscilProtocol& p, const ClassIndexSource& src, int session_index);

/// Union of the train parts of sessions 0..i (joint-training view).
SessionView accumulated_train_set(const FscilProtocol& p, const ClassIndexSource& src,
                                  int session_index);

/// Test ids of all classes seen at session i.
std::vector<int> cumulative_test_ids(const FscilProtocol& p, const ClassIndexSource& src,
                                     int session_index);

}  // namespace fscil
