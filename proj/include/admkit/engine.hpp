#pragma once

// Serving state machine with certificate-gated, atomic model rotation. One
// serialized event loop: each step() is either a training tick or an
// inference iteration (take one message, advance every in-flight request by
// one layer, commit a pending rotation once nothing old is in flight).

#include <admkit/record.hpp>

#include <deque>
#include <memory>

namespace admkit {

struct ServedModel {
  uint64_t version = 0;
  std::string weights_hash;
  ModelSpec spec;
  std::shared_ptr<const LossGraph<Posit>> graph;
  Params<Posit> params;
  Certificate certificate;
};

// Builds a servable model; throws if the weights do not elaborate cleanly.
inline std::shared_ptr<const ServedModel> make_served(const ModelSpec& spec, const WeightsFile& w, uint64_t version) {
  const Elaboration e = elaborate(w, spec);
  if (!e.ok()) throw Error("weights do not elaborate: " + e.violations.front().to_string());
  auto m = std::make_shared<ServedModel>();
  m->version = version;
  m->weights_hash = w.hash();
  m->spec = spec;
  m->graph = std::make_shared<const LossGraph<Posit>>(build_graph(spec, w));
  m->params = build_params(spec, w);
  m->graph->check_params(m->params);
  m->certificate = e.certificate;
  return m;
}

struct Candidate {
  ModelSpec spec;
  WeightsFile weights;
  VersionRecord record;  // signed; version_id is the candidate's version
};

enum class EngineState { serving, training, certifying, rotating, shut_down };

inline const char* to_string(EngineState s) {
  switch (s) {
    case EngineState::serving:
      return "serving";
    case EngineState::training:
      return "training";
    case EngineState::certifying:
      return "certifying";
    case EngineState::rotating:
      return "rotating";
    case EngineState::shut_down:
      return "shut_down";
  }
  return "?";
}

enum class Refusal { invalid_certificate, unsigned_under_strict_policy, invalid_signature, record_mismatch, busy, shut_down };

inline const char* to_string(Refusal r) {
  switch (r) {
    case Refusal::invalid_certificate:
      return "invalid_certificate";
    case Refusal::unsigned_under_strict_policy:
      return "unsigned_under_strict_policy";
    case Refusal::invalid_signature:
      return "invalid_signature";
    case Refusal::record_mismatch:
      return "record_mismatch";
    case Refusal::busy:
      return "busy";
    case Refusal::shut_down:
      return "shut_down";
  }
  return "?";
}

struct RotationOutcome {
  uint64_t candidate_version = 0;
  bool committed = false;
  std::optional<Refusal> refusal;
  std::string detail;
  uint64_t step = 0;  // loop iteration at which the outcome was decided
};

struct Response {
  uint64_t request_id = 0;
  Multivector<Posit> y;
  uint64_t version = 0;                   // the model that answered
  std::vector<uint64_t> accessed_versions;  // version tag of every weight access
  uint64_t completed_step = 0;
};

struct TraceEntry {
  uint64_t step = 0;
  EngineState state = EngineState::serving;
  uint64_t active_version = 0;
  bool active_certified = false;
};

struct EngineConfig {
  SigningPolicy policy = SigningPolicy::strict;
  std::string public_key_hex;
  // Of every inference + training iterations, the last `training` go to training.
  unsigned inference_ticks = 1;
  unsigned training_ticks = 0;
};

class RotationEngine {
 public:
  // Returns a candidate when training has produced one.
  using Trainer = std::function<std::optional<Candidate>()>;

  RotationEngine(std::shared_ptr<const ServedModel> initial, VersionRecord root, EngineConfig cfg)
      : cfg_(std::move(cfg)), active_(std::move(initial)) {
    if (!active_ || !active_->certificate.valid()) throw Error("initial model lacks a valid certificate");
    chain_.push_back(std::move(root));
    log_state();
  }

  std::optional<uint64_t> submit(Multivector<Posit> x) {
    if (state_ == EngineState::shut_down || closing_) return std::nullopt;
    const uint64_t id = next_request_++;
    inbox_.push_back(Message{Message::request, id, std::move(x), {}});
    ++received_;
    return id;
  }

  void begin_rotation(Candidate c) {
    if (state_ == EngineState::shut_down || closing_) {
      outcomes_.push_back({c.record.version_id, false, Refusal::shut_down, "engine shut down", step_});
      return;
    }
    inbox_.push_back(Message{Message::rotate, 0, {}, std::make_shared<Candidate>(std::move(c))});
  }

  void set_trainer(Trainer t) { trainer_ = std::move(t); }
  void clear_trainer() { trainer_ = nullptr; }

  // Stops accepting work; what is already queued still completes.
  void shutdown() { closing_ = true; }

  void step() {
    if (state_ == EngineState::shut_down) return;
    ++step_;
    const unsigned period = cfg_.inference_ticks + cfg_.training_ticks;
    const bool training_slot = trainer_ && cfg_.training_ticks > 0 && (step_ % period) >= cfg_.inference_ticks;
    if (training_slot) {
      if (auto c = trainer_()) begin_rotation(std::move(*c));
    } else {
      if (!inbox_.empty()) {
        Message m = std::move(inbox_.front());
        inbox_.pop_front();
        handle(std::move(m));
      }
      advance();
      if (pending_ && in_flight_.empty()) commit();
    }
    if (closing_ && idle()) state_ = EngineState::shut_down;
    refresh_state();
    log_state();
  }

  // Steps until no message, request or rotation is outstanding.
  void drain(uint64_t max_steps = 1u << 24) {
    for (uint64_t i = 0; i < max_steps && !idle(); ++i) step();
    if (!idle()) throw Error("engine did not drain");
  }

  bool idle() const { return inbox_.empty() && in_flight_.empty() && buffer_.empty() && !pending_; }

  EngineState state() const { return state_; }
  const ServedModel& active() const { return *active_; }
  std::shared_ptr<const ServedModel> active_ptr() const { return active_; }
  const std::vector<Response>& responses() const { return responses_; }
  const std::vector<RotationOutcome>& outcomes() const { return outcomes_; }
  const std::vector<TraceEntry>& trace() const { return trace_; }
  const std::vector<VersionRecord>& chain() const { return chain_; }
  uint64_t received() const { return received_; }
  uint64_t steps() const { return step_; }
  std::size_t buffered() const { return buffer_.size(); }
  std::size_t in_flight() const { return in_flight_.size(); }
  std::size_t queued_requests() const {
    return static_cast<std::size_t>(
        std::count_if(inbox_.begin(), inbox_.end(), [](const Message& m) { return m.kind == Message::request; }));
  }

  // Hook for persisting committed records.
  void on_commit(std::function<void(const VersionRecord&)> f) { on_commit_ = std::move(f); }

 private:
  struct Message {
    enum Kind { request, rotate } kind;
    uint64_t id;
    Multivector<Posit> x;
    std::shared_ptr<Candidate> candidate;
  };

  struct Work {
    uint64_t id;
    std::shared_ptr<const ServedModel> model;  // pinned at admission
    Multivector<Posit> h;
    std::size_t layer = 0;
    std::size_t k = 0;
    std::vector<uint64_t> accessed;
  };

  void handle(Message m) {
    if (m.kind == Message::request) {
      if (pending_)
        buffer_.push_back(std::move(m));
      else
        admit(m.id, std::move(m.x));
      return;
    }
    certify(std::move(m.candidate));
  }

  void admit(uint64_t id, Multivector<Posit> x) { in_flight_.push_back(Work{id, active_, std::move(x), 0, 0, {}}); }

  void advance() {
    for (auto it = in_flight_.begin(); it != in_flight_.end();) {
      Work& w = *it;
      const auto& layers = w.model->graph->layers();
      if (w.layer < layers.size()) {
        w.accessed.push_back(w.model->version);
        w.h = w.model->graph->apply_layer(w.layer, w.model->params, w.k, std::move(w.h));
        ++w.layer;
      }
      if (w.layer >= layers.size()) {
        responses_.push_back(Response{w.id, std::move(w.h), w.model->version, std::move(w.accessed), step_});
        it = in_flight_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void refuse(const Candidate& c, Refusal r, std::string detail) {
    outcomes_.push_back({c.record.version_id, false, r, std::move(detail), step_});
  }

  void certify(std::shared_ptr<Candidate> c) {
    state_ = EngineState::certifying;
    log_state();
    if (pending_) return refuse(*c, Refusal::busy, "a rotation is already in progress");
    const VersionRecord& r = c->record;
    if (!r.signature) return refuse(*c, Refusal::unsigned_under_strict_policy, "record carries no signature");
    switch (verify_signature(*r.signature, r.signed_bytes(), cfg_.public_key_hex)) {
      case SignatureStatus::valid:
        break;
      case SignatureStatus::unsigned_record:
        if (cfg_.policy == SigningPolicy::strict)
          return refuse(*c, Refusal::unsigned_under_strict_policy, "null signature under strict policy");
        break;
      case SignatureStatus::invalid:
        return refuse(*c, Refusal::invalid_signature, "signature does not verify");
    }
    const Elaboration e = elaborate(c->weights, c->spec);
    if (!e.ok()) return refuse(*c, Refusal::invalid_certificate, e.violations.front().to_string());
    if (!r.certificate.valid()) return refuse(*c, Refusal::invalid_certificate, "record certificate marked invalid");
    if (!(e.certificate == r.certificate))
      return refuse(*c, Refusal::record_mismatch, "record certificate differs from elaboration");
    if (r.weights_hash != c->weights.hash()) return refuse(*c, Refusal::record_mismatch, "weights hash differs");
    if (r.parent_hash != chain_.back().hash()) return refuse(*c, Refusal::record_mismatch, "parent hash is not the head");
    if (r.version_id <= active_->version) return refuse(*c, Refusal::record_mismatch, "version does not increase");
    std::shared_ptr<const ServedModel> next;
    try {
      next = make_served(c->spec, c->weights, r.version_id);
    } catch (const Error& ex) {
      return refuse(*c, Refusal::invalid_certificate, ex.what());
    }
    pending_ = std::move(next);
    pending_record_ = r;
  }

  void commit() {
    active_ = std::move(pending_);
    pending_.reset();
    chain_.push_back(*pending_record_);
    if (on_commit_) on_commit_(*pending_record_);
    outcomes_.push_back({active_->version, true, std::nullopt, "", step_});
    pending_record_.reset();
    for (auto& m : buffer_) admit(m.id, std::move(m.x));
    buffer_.clear();
  }

  void refresh_state() {
    if (state_ == EngineState::shut_down) return;
    if (pending_)
      state_ = EngineState::rotating;
    else if (trainer_ && cfg_.training_ticks > 0)
      state_ = EngineState::training;
    else
      state_ = EngineState::serving;
  }

  void log_state() {
    trace_.push_back({step_, state_, active_->version, active_->certificate.valid()});
  }

  EngineConfig cfg_;
  std::shared_ptr<const ServedModel> active_;
  std::shared_ptr<const ServedModel> pending_;
  std::optional<VersionRecord> pending_record_;
  std::deque<Message> inbox_;
  std::deque<Message> buffer_;
  std::deque<Work> in_flight_;
  std::vector<Response> responses_;
  std::vector<RotationOutcome> outcomes_;
  std::vector<TraceEntry> trace_;
  std::vector<VersionRecord> chain_;
  Trainer trainer_;
  std::function<void(const VersionRecord&)> on_commit_;
  EngineState state_ = EngineState::serving;
  uint64_t next_request_ = 0;
  uint64_t received_ = 0;
  uint64_t step_ = 0;
  bool closing_ = false;
};

}  // namespace admkit
