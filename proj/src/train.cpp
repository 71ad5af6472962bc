#include "fscil/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <memory>

#include "fscil/common.hpp"
#include "fscil/imbalance.hpp"
#include "fscil/rng.hpp"

namespace fscil {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- small persistence helpers ----

void atomic_write_text(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

void atomic_write_json(const fs::path& path, const json& j) {
  atomic_write_text(path, j.dump(2) + "\n");
}

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return j;
}

namespace {

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  out << line << "\n";
}

void write_status(const fs::path& dir, const std::string& state, const std::string& message,
                  const std::vector<int>& completed) {
  atomic_write_json(dir / "status.json",
                    json{{"state", state}, {"message", message},
                         {"completed_sessions", completed}});
}

}  // namespace

// ---- slot mapping ----

SlotMap slot_map(const FscilProtocol& p) {
  SlotMap m;
  m.class_to_slot.assign(p.total_classes, -1);
  auto take = [&](int cls) {
    int s = static_cast<int>(m.slot_to_class.size());
    m.class_to_slot.at(cls) = s;
    m.slot_to_class.push_back(cls);
    return s;
  };
  for (int cls : p.base_classes) m.base_slots.insert(take(cls));
  m.cumulative.push_back(static_cast<int>(m.slot_to_class.size()));
  for (const auto& sess : p.sessions) {
    for (int cls : sess) take(cls);
    m.cumulative.push_back(static_cast<int>(m.slot_to_class.size()));
  }
  return m;
}

// ---- batches ----

namespace {

/// Pad-4 random crop plus horizontal flip. Draw order per example:
/// crop offset y, offset x, flip coin.
void fill_example(float* dst, const float* src, int c, int h, int w, bool augment, Rng& rng) {
  const size_t sz = static_cast<size_t>(c) * h * w;
  if (!augment) {
    std::memcpy(dst, src, sz * sizeof(float));
    return;
  }
  constexpr int pad = 4;
  int dy = static_cast<int>(rng.uniform_int(2 * pad + 1)) - pad;
  int dx = static_cast<int>(rng.uniform_int(2 * pad + 1)) - pad;
  bool flip = rng.uniform_int(2) == 1;
  for (int ch = 0; ch < c; ++ch) {
    const float* sp = src + static_cast<size_t>(ch) * h * w;
    float* dp = dst + static_cast<size_t>(ch) * h * w;
    for (int y = 0; y < h; ++y) {
      int sy = y + dy;
      for (int x = 0; x < w; ++x) {
        int sx = x + dx;
        float v = 0.0f;
        if (sy >= 0 && sy < h && sx >= 0 && sx < w)
          v = sp[static_cast<size_t>(sy) * w + (flip ? w - 1 - sx : sx)];
        dp[static_cast<size_t>(y) * w + x] = v;
      }
    }
  }
}

Tensor load_train_batch(const TrainView& view, const std::vector<int>& ids, bool augment,
                        Rng& rng) {
  const Dataset& ds = view.dataset();
  Tensor t(static_cast<int>(ids.size()), ds.channels, ds.height, ds.width);
  for (size_t i = 0; i < ids.size(); ++i)
    fill_example(t.example(static_cast<int>(i)), view.image(ids[i]), ds.channels, ds.height,
                 ds.width, augment, rng);
  return t;
}

void backprop(Model& m, const Tensor& dlogits) {
  Tensor demb = m.head.backward(dlogits);
  demb.c = demb.c * demb.h * demb.w;  // [N, D] view of the embedding grad
  demb.h = demb.w = 1;
  m.backbone.backward(demb);
}

}  // namespace

Tensor eval_embeddings(Model& m, const EvalView& view, int batch) {
  const Dataset& ds = view.dataset();
  const int n = view.size();
  const int d = m.backbone.embedding_dim();
  Tensor out = Tensor::matrix(n, d);
  for (int at = 0; at < n; at += batch) {
    int bn = std::min(batch, n - at);
    Tensor images(bn, ds.channels, ds.height, ds.width);
    for (int i = 0; i < bn; ++i) {
      const float* src = view.image(view.ids()[at + i]);
      std::memcpy(images.example(i), src, sizeof(float) * ds.example_size());
    }
    Tensor emb = m.backbone.forward(images, false);
    std::memcpy(out.example(at), emb.data(), sizeof(float) * emb.size());
  }
  return out;
}

SessionMetrics evaluate_model(Model& m, const EvalView& view, const SlotMap& slots, int session,
                              int batch) {
  const Dataset& ds = view.dataset();
  const int n = view.size();
  const int n_slots = slots.slots_at(session);
  if (m.head.num_classes() != n_slots)
    throw ContractError("evaluate_model: head covers " + std::to_string(m.head.num_classes()) +
                        " classes, session expects " + std::to_string(n_slots));
  std::vector<int> labels(n), preds(n);
  for (int at = 0; at < n; at += batch) {
    int bn = std::min(batch, n - at);
    Tensor images(bn, ds.channels, ds.height, ds.width);
    for (int i = 0; i < bn; ++i) {
      int id = view.ids()[at + i];
      std::memcpy(images.example(i), view.image(id), sizeof(float) * ds.example_size());
      int slot = slots.class_to_slot.at(view.label(id));
      if (slot < 0 || slot >= n_slots)
        throw ContractError("evaluate_model: test example of an unseen class");
      labels[at + i] = slot;
    }
    ForwardResult fr = forward(m, images, false);
    std::vector<int> p = argmax_predictions(fr.logits);
    std::copy(p.begin(), p.end(), preds.begin() + at);
  }
  return compute_session_metrics(session, labels, preds, n_slots, slots.base_slots);
}

// ---- session record serialization ----

json session_result_json(const SessionResult& r) {
  json snaps = json::array();
  for (const auto& s : r.snapshots)
    snaps.push_back({{"epoch", s.epoch},
                     {"seconds", s.seconds},
                     {"checkpoint", s.checkpoint},
                     {"metrics", session_metrics_json(s.metrics)}});
  return json{{"session", r.session},
              {"seconds", r.seconds},
              {"final_checkpoint", r.final_checkpoint},
              {"metrics", r.final_checkpoint.empty() ? json() : session_metrics_json(r.metrics)},
              {"epoch_losses", r.epoch_losses},
              {"snapshots", snaps},
              {"cmo_active_epochs", r.cmo_active_epochs},
              {"sam_skipped_steps", r.sam_skipped_steps}};
}

SessionResult session_result_from_json(const json& j) {
  SessionResult r;
  r.session = j.at("session");
  r.seconds = j.at("seconds");
  r.final_checkpoint = j.at("final_checkpoint");
  if (!j.at("metrics").is_null()) r.metrics = session_metrics_from_json(j.at("metrics"));
  r.epoch_losses = j.at("epoch_losses").get<std::vector<double>>();
  for (const auto& s : j.at("snapshots")) {
    EpochSnapshot snap;
    snap.epoch = s.at("epoch");
    snap.seconds = s.at("seconds");
    snap.checkpoint = s.at("checkpoint");
    snap.metrics = session_metrics_from_json(s.at("metrics"));
    r.snapshots.push_back(std::move(snap));
  }
  r.cmo_active_epochs = j.at("cmo_active_epochs");
  r.sam_skipped_steps = j.at("sam_skipped_steps");
  return r;
}

// ---- the runner ----

namespace {

class Runner {
 public:
  Runner(const ExperimentConfig& cfg, DatasetPtr ds, const RunOptions& opts)
      : cfg_(cfg), ds_(std::move(ds)), opts_(opts) {}

  RunRecord run();

 private:
  ExperimentConfig cfg_;
  DatasetPtr ds_;
  RunOptions opts_;
  FscilProtocol proto_;
  SlotMap slots_;
  fs::path dir_, ckpt_dir_, sess_dir_;
  bool interrupt_armed_ = false;
  std::vector<int> completed_;

  int slot(int cls) const { return slots_.class_to_slot.at(cls); }

  Model make_model(int session) const {
    BackboneConfig bc{cfg_.train.backbone_depth, cfg_.train.backbone_width, ds_->channels};
    HeadConfig hc;
    hc.kind = head_kind_from_string(cfg_.train.head);
    hc.embedding_dim = bc.embedding_dim();
    hc.num_classes = slots_.slots_at(session);
    hc.init_temperature = cfg_.train.init_temperature;
    return Model(bc, hc);
  }

  json ckpt_meta(int session, int epoch, bool final) const {
    return json{{"session", session},     {"epoch", epoch},
                {"final", final},         {"protocol_hash", proto_.hash()},
                {"seed", cfg_.seed},      {"strategy", cfg_.train.strategy}};
  }

  fs::path epoch_ckpt(int session, int epoch) const {
    return ckpt_dir_ / ("s" + std::to_string(session) + "_e" + std::to_string(epoch) + ".ckpt");
  }
  fs::path final_ckpt(int session) const {
    return ckpt_dir_ / ("s" + std::to_string(session) + "_final.ckpt");
  }
  fs::path session_file(int session) const {
    return sess_dir_ / ("s" + std::to_string(session) + ".json");
  }
  fs::path partial_file(int session) const {
    return sess_dir_ / ("s" + std::to_string(session) + ".partial.json");
  }

  SessionMetrics eval_session(Model& model, int session) {
    EvalView ev(ds_, cumulative_test_ids(proto_, *ds_, session));
    return evaluate_model(model, ev, slots_, session);
  }

  void record_session(RunRecord& rec, SessionResult&& result) {
    append_line(dir_ / "timing.log",
                "session=" + std::to_string(result.session) +
                    " seconds=" + std::to_string(result.seconds) +
                    " epochs=" + std::to_string(result.epoch_losses.size()));
    atomic_write_json(session_file(result.session), session_result_json(result));
    std::error_code ec;
    fs::remove(partial_file(result.session), ec);
    completed_.push_back(result.session);
    rec.sessions.push_back(std::move(result));
  }

  /// Picks up a partially trained session: restores the model and optimizer
  /// from the newest scheduled checkpoint and replays the bookkeeping up to
  /// it. Epoch streams are keyed by (seed, session, epoch), so continuation
  /// reproduces the uninterrupted run exactly.
  int restore_partial(int session, Model& model, SgdOptimizer& opt, SessionResult& carry) {
    if (!opts_.resume || !fs::exists(partial_file(session))) return 0;
    SessionResult stored = session_result_from_json(load_json_file(partial_file(session)));
    int e0 = 0;
    for (const auto& s : stored.snapshots) e0 = std::max(e0, s.epoch);
    if (e0 == 0) return 0;
    load_model_checkpoint(epoch_ckpt(session, e0), model, &opt);
    carry = std::move(stored);
    carry.epoch_losses.resize(e0);
    return e0;
  }

  void divergence_dump(int session, int epoch, int step, double lr, double loss) {
    atomic_write_json(dir_ / "diagnostics.json",
                      json{{"reason", "non-finite training loss"},
                           {"session", session},
                           {"epoch", epoch},
                           {"step", step},
                           {"lr", lr},
                           {"loss", loss}});
    throw TrainingError("training diverged: non-finite loss at session " +
                        std::to_string(session) + ", epoch " + std::to_string(epoch) + " (see " +
                        (dir_ / "diagnostics.json").string() + ")");
  }

  /// Shared mini-batch loop. Returns false when the interrupt hook fired;
  /// `carry` then holds a resumable partial record already flushed to disk.
  bool supervised_train(int session, Model& model, SgdOptimizer& opt, const TrainView& view,
                        int epochs, double lr0, bool use_schedule,
                        const std::vector<PluginConfig>& plugins, SessionResult& carry);

  bool joint_session(RunRecord& rec, int session);
  bool incr_base_session(RunRecord& rec);
  bool prototype_session(RunRecord& rec, int session);
  bool finetune_session(RunRecord& rec, int session);

  Model load_final_model(int session) {
    Model m = make_model(session);
    if (!fs::exists(final_ckpt(session)))
      throw TrainingError("missing checkpoint for session " + std::to_string(session) +
                          "; earlier sessions must run first");
    load_model_checkpoint(final_ckpt(session), m, nullptr);
    return m;
  }
};

bool Runner::supervised_train(int session, Model& model, SgdOptimizer& opt, const TrainView& view,
                              int epochs, double lr0, bool use_schedule,
                              const std::vector<PluginConfig>& plugins, SessionResult& carry) {
  const int n_slots = model.head.num_classes();
  const int batch_size = std::max(1, std::min(cfg_.train.batch_size, view.size()));
  const bool augment = ds_->augment;

  const PluginConfig* p_cmo = nullptr;
  const PluginConfig* p_bbatch = nullptr;
  const PluginConfig* p_bsoftmax = nullptr;
  const PluginConfig* p_cbal = nullptr;
  const PluginConfig* p_sam = nullptr;
  for (const auto& p : plugins) {
    if (p.name == "cmo") p_cmo = &p;
    if (p.name == "balanced_batch") p_bbatch = &p;
    if (p.name == "balanced_softmax") p_bsoftmax = &p;
    if (p.name == "class_balanced") p_cbal = &p;
    if (p.name == "imbsam") p_sam = &p;
  }

  std::vector<double> counts(n_slots, 0.0);
  for (const auto& [cls, cnt] : view.class_counts()) counts[slot(cls)] = cnt;
  std::vector<double> cb_weights;
  if (p_cbal) cb_weights = class_balanced_weights(counts, p_cbal->number("beta"));
  LossOptions base_opts;
  if (p_bsoftmax) base_opts.class_counts = &counts;
  if (p_cbal) base_opts.class_weights = &cb_weights;

  std::unique_ptr<BalancedBatchSampler> bsampler;
  if (p_bbatch) bsampler = std::make_unique<BalancedBatchSampler>(view);
  std::unique_ptr<InverseFrequencySampler> fg_sampler;
  if (p_cmo) fg_sampler = std::make_unique<InverseFrequencySampler>(view);
  const double cmo_beta = p_cmo ? p_cmo->number("beta") : 1.0;
  const int cmo_cooldown = p_cmo ? p_cmo->integer("cooldown") : 0;

  std::set<int> head_slots, tail_slots;
  if (p_sam) {
    int th = p_sam->integer("tail_threshold");
    TailRule rule = th > 0 ? TailRule::by_threshold(th) : TailRule::by_session();
    ClassStats st = class_stats(view, rule, proto_.base_classes);
    for (int c : st.head_classes) head_slots.insert(slot(c));
    for (int c : st.tail_classes) tail_slots.insert(slot(c));
  }
  // An empty rare-class set degenerates to the plain optimizer; taking the
  // plain path keeps the two configurations bit-identical.
  const bool sam_active = p_sam && !tail_slots.empty();
  const double sam_rho = p_sam ? p_sam->number("rho") : 0.0;

  ParamSet params = model.params();
  const std::set<int> ckpt_epochs_set(cfg_.train.checkpoint_epochs.begin(),
                                      cfg_.train.checkpoint_epochs.end());

  int start_epoch = static_cast<int>(carry.epoch_losses.size()) + 1;
  double prior_seconds = carry.seconds;
  auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return prior_seconds +
           std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  const int total_examples = view.size();
  for (int epoch = start_epoch; epoch <= epochs; ++epoch) {
    const double lr = use_schedule ? cfg_.train.lr_at_epoch(epoch) : lr0;
    Rng rng(derive_seed(cfg_.seed, "train/session=" + std::to_string(session) +
                                       "/epoch=" + std::to_string(epoch)));
    const bool cmo_now = p_cmo && epoch <= epochs - cmo_cooldown;
    if (cmo_now) ++carry.cmo_active_epochs;

    std::vector<int> order;
    if (!p_bbatch) {
      order = view.ids();
      rng.shuffle(order);
    }
    const int steps = (total_examples + batch_size - 1) / batch_size;
    double loss_sum = 0.0;
    int example_sum = 0;

    for (int step = 0; step < steps; ++step) {
      std::vector<int> ids;
      if (p_bbatch) {
        ids = bsampler->next_batch(batch_size, rng);
      } else {
        int lo = step * batch_size;
        int hi = std::min(total_examples, lo + batch_size);
        ids.assign(order.begin() + lo, order.begin() + hi);
      }
      const int bn = static_cast<int>(ids.size());
      Tensor images = load_train_batch(view, ids, augment, rng);
      std::vector<int> labels(bn);
      for (int i = 0; i < bn; ++i) labels[i] = slot(view.label(ids[i]));

      Tensor soft_targets;
      bool soft = false;
      if (cmo_now) {
        std::vector<int> fg_ids = fg_sampler->draw_many(bn, rng);
        Tensor fg_images = load_train_batch(view, fg_ids, augment, rng);
        std::vector<int> fg_labels(bn);
        for (int i = 0; i < bn; ++i) fg_labels[i] = slot(view.label(fg_ids[i]));
        MixedBatch mixed =
            cmo_mix(images, labels, fg_images, fg_labels, n_slots, cmo_beta, rng);
        images = std::move(mixed.images);
        soft_targets = std::move(mixed.soft_labels);
        soft = true;
      }

      double loss = 0.0;
      if (sam_active) {
        std::vector<float> w0 = params.gather_values();
        bool first_pass = true;
        SplitGradFn fn = [&](const std::vector<float>& w) {
          params.scatter_values(w);
          model.backbone.set_bn_updates(first_pass);
          first_pass = false;
          ForwardResult fr = forward(model, images, true);
          SplitGrad sg;
          LossOptions head_opts = base_opts;
          head_opts.class_mask = &head_slots;
          params.zero_grads();
          LossResult hl = soft ? softmax_loss(fr.logits, soft_targets, head_opts)
                               : softmax_loss(fr.logits, labels, n_slots, head_opts);
          backprop(model, hl.dlogits);
          sg.head_loss = hl.loss;
          sg.head_grad = params.gather_grads();
          LossOptions tail_opts = base_opts;
          tail_opts.class_mask = &tail_slots;
          params.zero_grads();
          LossResult tl = soft ? softmax_loss(fr.logits, soft_targets, tail_opts)
                               : softmax_loss(fr.logits, labels, n_slots, tail_opts);
          backprop(model, tl.dlogits);
          sg.tail_loss = tl.loss;
          sg.tail_grad = params.gather_grads();
          return sg;
        };
        ImbSamResult r = imbsam_combined_grad(w0, sam_rho, false, fn);
        model.backbone.set_bn_updates(true);
        params.scatter_values(w0);
        params.scatter_grads(r.grad);
        opt.step(params, lr);
        if (r.perturbation_skipped) ++carry.sam_skipped_steps;
        loss = r.head_loss + r.tail_loss;
      } else {
        ForwardResult fr = forward(model, images, true);
        LossResult lres = soft ? softmax_loss(fr.logits, soft_targets, base_opts)
                               : softmax_loss(fr.logits, labels, n_slots, base_opts);
        params.zero_grads();
        backprop(model, lres.dlogits);
        opt.step(params, lr);
        loss = lres.loss;
      }
      if (!std::isfinite(loss)) divergence_dump(session, epoch, step, lr, loss);
      loss_sum += loss * bn;
      example_sum += bn;
    }

    carry.epoch_losses.push_back(loss_sum / std::max(1, example_sum));
    if (!params.all_finite()) divergence_dump(session, epoch, -1, lr, carry.epoch_losses.back());

    bool scheduled = ckpt_epochs_set.count(epoch) > 0 && epoch < epochs;
    if (scheduled) {
      fs::path p = epoch_ckpt(session, epoch);
      save_model_checkpoint(p, model, &opt, ckpt_meta(session, epoch, false));
      EpochSnapshot snap;
      snap.epoch = epoch;
      snap.checkpoint = p.filename().string();
      snap.metrics = eval_session(model, session);
      snap.seconds = elapsed();
      carry.seconds = snap.seconds;
      carry.snapshots.push_back(std::move(snap));
      atomic_write_json(partial_file(session), session_result_json(carry));
    }
    if (interrupt_armed_ && opts_.interrupt_after_epoch == epoch) {
      carry.seconds = elapsed();
      atomic_write_json(partial_file(session), session_result_json(carry));
      return false;
    }
  }
  carry.seconds = elapsed();
  return true;
}

bool Runner::joint_session(RunRecord& rec, int session) {
  SessionView acc = accumulated_train_set(proto_, *ds_, session);
  TrainView view(ds_, acc.train_indices);
  Model model = make_model(session);
  model.init(derive_seed(cfg_.seed, "train/init/session=" + std::to_string(session)));
  SgdOptimizer opt({cfg_.train.momentum, cfg_.train.weight_decay});

  SessionResult result;
  result.session = session;
  restore_partial(session, model, opt, result);
  interrupt_armed_ = opts_.interrupt_after_epoch > 0;
  bool done = supervised_train(session, model, opt, view, cfg_.train.epochs, cfg_.train.lr, true,
                               cfg_.train.plugins, result);
  interrupt_armed_ = false;
  if (!done) return false;

  fs::path p = final_ckpt(session);
  save_model_checkpoint(p, model, &opt, ckpt_meta(session, cfg_.train.epochs, true));
  result.final_checkpoint = p.filename().string();
  result.metrics = eval_session(model, session);
  record_session(rec, std::move(result));
  return true;
}

// Session 0 of the incremental baselines: a plain supervised run on the
// base split, no plugins.
bool Runner::incr_base_session(RunRecord& rec) {
  SessionView sv = session_view(proto_, *ds_, 0);
  TrainView view(ds_, sv.train_indices);
  Model model = make_model(0);
  model.init(derive_seed(cfg_.seed, "train/init/session=0"));
  SgdOptimizer opt({cfg_.train.momentum, cfg_.train.weight_decay});

  SessionResult result;
  result.session = 0;
  restore_partial(0, model, opt, result);
  interrupt_armed_ = opts_.interrupt_after_epoch > 0;
  bool done =
      supervised_train(0, model, opt, view, cfg_.train.epochs, cfg_.train.lr, true, {}, result);
  interrupt_armed_ = false;
  if (!done) return false;

  fs::path p = final_ckpt(0);
  save_model_checkpoint(p, model, &opt, ckpt_meta(0, cfg_.train.epochs, true));
  result.final_checkpoint = p.filename().string();
  result.metrics = eval_session(model, 0);
  record_session(rec, std::move(result));
  return true;
}

bool Runner::prototype_session(RunRecord& rec, int session) {
  auto t0 = std::chrono::steady_clock::now();
  Model model = load_final_model(session - 1);
  SessionView sv = session_view(proto_, *ds_, session);
  TrainView view(ds_, sv.train_indices);
  auto by_class = view.ids_by_class();

  // New classifier rows: mean of the K unit-normalized shot embeddings,
  // in slot order. The cosine head renormalizes at forward time.
  const int d = model.backbone.embedding_dim();
  std::vector<std::vector<float>> protos;
  for (int cls : proto_.sessions.at(session - 1)) {
    auto it = by_class.find(cls);
    if (it == by_class.end())
      throw InsufficientDataError("prototype: no shots for class " + std::to_string(cls));
    const std::vector<int>& shot_ids = it->second;
    Tensor images(static_cast<int>(shot_ids.size()), ds_->channels, ds_->height, ds_->width);
    for (size_t i = 0; i < shot_ids.size(); ++i)
      std::memcpy(images.example(static_cast<int>(i)), view.image(shot_ids[i]),
                  sizeof(float) * ds_->example_size());
    Tensor emb = model.backbone.forward(images, false);
    std::vector<float> mean(d, 0.0f);
    for (int i = 0; i < emb.n; ++i) {
      const float* e = emb.example(i);
      double norm = 0.0;
      for (int k = 0; k < d; ++k) norm += static_cast<double>(e[k]) * e[k];
      float inv = static_cast<float>(1.0 / std::sqrt(norm + 1e-12));
      for (int k = 0; k < d; ++k) mean[k] += e[k] * inv;
    }
    for (int k = 0; k < d; ++k) mean[k] /= static_cast<float>(emb.n);
    protos.push_back(std::move(mean));
  }
  model.head.expand(slots_.slots_at(session), ExpandInit::Prototypes, 0, &protos);

  SessionResult result;
  result.session = session;
  fs::path p = final_ckpt(session);
  save_model_checkpoint(p, model, nullptr, ckpt_meta(session, 0, true));
  result.final_checkpoint = p.filename().string();
  result.metrics = eval_session(model, session);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  record_session(rec, std::move(result));
  return true;
}

bool Runner::finetune_session(RunRecord& rec, int session) {
  Model model = load_final_model(session - 1);
  model.head.expand(slots_.slots_at(session), ExpandInit::Zeros, 0);
  SessionView sv = session_view(proto_, *ds_, session);
  TrainView view(ds_, sv.train_indices);
  SgdOptimizer opt({cfg_.train.momentum, cfg_.train.weight_decay});

  // Few-shot batches are too small to re-estimate normalization statistics,
  // so the running stats stay frozen while grads still flow batch-normed.
  model.backbone.set_bn_updates(false);
  SessionResult result;
  result.session = session;
  restore_partial(session, model, opt, result);
  interrupt_armed_ = opts_.interrupt_after_epoch > 0;
  bool done = supervised_train(session, model, opt, view, cfg_.train.incr_epochs,
                               cfg_.train.lr * cfg_.train.incr_lr_scale, false, {}, result);
  interrupt_armed_ = false;
  model.backbone.set_bn_updates(true);
  if (!done) return false;

  fs::path p = final_ckpt(session);
  save_model_checkpoint(p, model, &opt, ckpt_meta(session, cfg_.train.incr_epochs, true));
  result.final_checkpoint = p.filename().string();
  result.metrics = eval_session(model, session);
  record_session(rec, std::move(result));
  return true;
}

RunRecord Runner::run() {
  validate_config(cfg_);
  dir_ = opts_.run_dir;
  ckpt_dir_ = dir_ / "checkpoints";
  sess_dir_ = dir_ / "sessions";
  fs::create_directories(ckpt_dir_);
  fs::create_directories(sess_dir_);

  ProtocolConfig pc = protocol_config(cfg_);
  pc.total_classes = ds_->num_classes;
  proto_ = build_protocol(pc);
  slots_ = slot_map(proto_);

  if (!ds_->normalized) {
    // Normalization constants come from the base-session train split and
    // stay frozen for every later session.
    SessionView s0 = session_view(proto_, *ds_, 0);
    ds_->normalize_with(s0.train_indices);
  }

  const int last = opts_.last_session < 0 ? proto_.num_sessions() : opts_.last_session;
  if (last > proto_.num_sessions())
    throw ValidationError("run: last_session " + std::to_string(last) + " exceeds protocol (" +
                          std::to_string(proto_.num_sessions()) + " incremental sessions)");
  int first = opts_.first_session;
  if (first < 0 || first > last) throw ContractError("run: bad session range");
  const bool joint = cfg_.train.is_joint();
  if (!joint && first != 0)
    throw ValidationError("run: incremental strategies must start at session 0");

  if (!opts_.resume && fs::exists(dir_ / "status.json"))
    throw ConfigError("run directory " + dir_.string() +
                      " already holds a run; pass resume or use a fresh directory");
  if (opts_.resume && fs::exists(dir_ / "run.json")) {
    json prev = load_json_file(dir_ / "run.json");
    if (prev.at("config_hash").get<uint64_t>() != config_hash(cfg_))
      throw ConfigError("resume: configuration differs from the one stored in " + dir_.string());
  }

  RunRecord rec;
  rec.status = "running";
  rec.config_snapshot = render_experiment_config(cfg_);
  rec.protocol_hash = proto_.hash();
  rec.strategy = cfg_.train.strategy;
  save_experiment_config(dir_ / "config.json", cfg_);
  atomic_write_text(dir_ / "protocol.txt", proto_.manifest());
  atomic_write_json(dir_ / "run.json", json{{"version", 1},
                                            {"strategy", cfg_.train.strategy},
                                            {"seed", cfg_.seed},
                                            {"protocol_hash", proto_.hash()},
                                            {"config_hash", config_hash(cfg_)},
                                            {"sessions_total", last + 1},
                                            {"first_session", first}});
  for (int i = 0; i < first; ++i)
    if (fs::exists(session_file(i))) completed_.push_back(i);
  write_status(dir_, "running", "", completed_);

  auto persist_outputs = [&] {
    std::string jsonl;
    for (const auto& s : rec.sessions) {
      for (const auto& snap : s.snapshots) {
        json row = session_metrics_json(snap.metrics);
        row["epoch"] = snap.epoch;
        row["final"] = false;
        row["seconds"] = snap.seconds;
        row["checkpoint"] = snap.checkpoint;
        jsonl += row.dump() + "\n";
      }
      json row = session_metrics_json(s.metrics);
      row["epoch"] = static_cast<int>(s.epoch_losses.size());
      row["final"] = true;
      row["seconds"] = s.seconds;
      row["checkpoint"] = s.final_checkpoint;
      jsonl += row.dump() + "\n";
    }
    atomic_write_text(dir_ / "metrics.jsonl", jsonl);
  };

  try {
    for (int i = first; i <= last; ++i) {
      if (opts_.resume && fs::exists(session_file(i))) {
        rec.sessions.push_back(session_result_from_json(load_json_file(session_file(i))));
        completed_.push_back(i);
        continue;
      }
      bool done;
      if (joint)
        done = joint_session(rec, i);
      else if (i == 0)
        done = incr_base_session(rec);
      else if (cfg_.train.strategy == "incr_prototype")
        done = prototype_session(rec, i);
      else
        done = finetune_session(rec, i);
      if (!done) {
        rec.status = "interrupted";
        write_status(dir_, "interrupted", "stopped by interrupt_after_epoch", completed_);
        persist_outputs();
        return rec;
      }
      write_status(dir_, "running", "", completed_);
      persist_outputs();
    }
  } catch (const std::exception& e) {
    rec.status = "failed";
    write_status(dir_, "failed", e.what(), completed_);
    persist_outputs();
    throw;
  }
  rec.status = "complete";
  write_status(dir_, "complete", "", completed_);
  persist_outputs();
  return rec;
}

}  // namespace

RunRecord run_training(const ExperimentConfig& cfg, DatasetPtr ds, const RunOptions& opts) {
  Runner runner(cfg, std::move(ds), opts);
  return runner.run();
}

RunRecord load_run_record(const fs::path& run_dir) {
  if (!fs::exists(run_dir / "run.json"))
    throw DataError("not a run directory (missing run.json): " + run_dir.string());
  json run = load_json_file(run_dir / "run.json");
  RunRecord rec;
  rec.protocol_hash = run.at("protocol_hash").get<uint64_t>();
  rec.strategy = run.at("strategy");
  if (fs::exists(run_dir / "config.json")) {
    rec.config_snapshot = load_json_file(run_dir / "config.json");
  }
  if (fs::exists(run_dir / "status.json"))
    rec.status = load_json_file(run_dir / "status.json").at("state");
  for (int i = 0;; ++i) {
    fs::path f = run_dir / "sessions" / ("s" + std::to_string(i) + ".json");
    if (!fs::exists(f)) break;
    rec.sessions.push_back(session_result_from_json(load_json_file(f)));
  }
  return rec;
}

}  // namespace fscil
