#pragma once

#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fscil/config.hpp"
#include "fscil/data.hpp"
#include "fscil/metrics.hpp"
#include "fscil/model.hpp"
#include "fscil/protocol.hpp"

namespace fscil {

/// Raised when optimization diverges or a run directory is unusable.
/// The CLI maps this onto the runtime-failure exit code.
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Metrics measured at one scheduled checkpoint epoch.
struct EpochSnapshot {
  int epoch = 0;
  double seconds = 0.0;  // wall-clock within the session up to this point
  std::string checkpoint;
  SessionMetrics metrics;
};

/// Everything one session contributes to the run record.
struct SessionResult {
  int session = 0;
  double seconds = 0.0;
  std::string final_checkpoint;
  SessionMetrics metrics;  // final model over the cumulative test set
  std::vector<double> epoch_losses;
  std::vector<EpochSnapshot> snapshots;
  int cmo_active_epochs = 0;
  int sam_skipped_steps = 0;  // steps whose rare-class gradient had zero norm
};

nlohmann::json session_result_json(const SessionResult& r);
SessionResult session_result_from_json(const nlohmann::json& j);

struct RunRecord {
  nlohmann::json config_snapshot;
  uint64_t protocol_hash = 0;
  std::string strategy;
  std::string status;  // running | interrupted | complete | failed
  std::vector<SessionResult> sessions;
};

struct RunOptions {
  std::filesystem::path run_dir;
  bool resume = false;
  /// Joint sessions are independent retrains, so a run may start late;
  /// incremental strategies must start from session 0 (or resume).
  int first_session = 0;
  int last_session = -1;  // -1: every protocol session
  /// Test hook: stop after this epoch of the first session trained in this
  /// call, leaving a resumable directory behind.
  int interrupt_after_epoch = -1;
};

/// Head slots in protocol arrival order: base classes first, then each
/// session's classes. Seen classes at session i occupy slots [0, slots_at(i)).
struct SlotMap {
  std::vector<int> class_to_slot;  // -1 for classes outside the protocol
  std::vector<int> slot_to_class;
  std::set<int> base_slots;
  std::vector<int> cumulative;  // seen-class count per session

  int slots_at(int session) const { return cumulative.at(session); }
};

SlotMap slot_map(const FscilProtocol& p);

/// Runs the configured strategy across protocol sessions, persisting
/// config snapshot, per-session metrics, checkpoints, and timing under
/// opts.run_dir. Resumable at session granularity, and at checkpoint-epoch
/// granularity within an interrupted session.
RunRecord run_training(const ExperimentConfig& cfg, DatasetPtr ds, const RunOptions& opts);

/// Reads back a persisted run (resume, reporting, inspection).
RunRecord load_run_record(const std::filesystem::path& run_dir);

/// Forward pass in evaluation mode; embeddings as an [N, D] matrix.
Tensor eval_embeddings(Model& m, const EvalView& view, int batch = 256);

/// Final-model evaluation over the view, labels mapped into slot space.
SessionMetrics evaluate_model(Model& m, const EvalView& view, const SlotMap& slots, int session,
                              int batch = 256);

void atomic_write_text(const std::filesystem::path& path, const std::string& text);
void atomic_write_json(const std::filesystem::path& path, const nlohmann::json& j);
/// Strict JSON read: missing file or malformed content raises DataError.
nlohmann::json load_json_file(const std::filesystem::path& path);

}  // namespace fscil
