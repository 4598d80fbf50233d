#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "symsim/costmodel.hpp"
#include "symsim/kvstore.hpp"
#include "symsim/time.hpp"

namespace symsim {

enum class Policy { Recompute, Retain, Swap, Symphony };

const char* policy_name(Policy p);
Policy policy_from(const std::string& name);

enum class PrefillMode { Interleave, DecodeFirst };

struct EngineConfig {
  int max_batch = 64;
  PrefillMode prefill_mode = PrefillMode::Interleave;
  // When positive and a high-priority request is decoding, normal requests
  // are paused (newest first) until the decode step fits the budget.
  double pause_latency_budget_ms = 0.0;
};

struct RequestSpec {
  std::uint32_t session = 0;
  std::uint32_t turn = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t prefill_tokens = 0;  // prompt only, or history + prompt when recomputing
  std::int64_t target_tokens = 0;
  std::int64_t redundant_tokens = 0;  // prefill_tokens - prompt_tokens
  bool high_priority = false;
  bool needs_load = false;  // a cache exists here and may need staging to DEVICE
  Ns arrival = 0;
};

struct FinishedRequest {
  RequestSpec spec;
  Ns admit = 0;         // prefill start
  Ns decode_entry = 0;  // prefill end
  Ns first_token = 0;
  Ns finish = 0;
  Ns load_stall = 0;  // gate wait beyond one pipelined decode step
  int participations = 0;
};

// One node's execution engine. Time advances in quanta: each quantum runs at
// most one prefill followed by one decode step over the batch fixed at the
// step's start. Every decoding request emits one token per participating
// step. Requests whose cache is still loading hold a slot and memory but join
// the batch only once the layerwise pipeline gate passes.
class Engine {
 public:
  Engine(const EngineConfig& cfg, const GpuProfile& gpu, KvStore& store);

  void enqueue(const RequestSpec& spec, Ns now);

  struct Outcome {
    std::vector<FinishedRequest> finished;
    std::vector<ScheduledTransfer> transfers;
    std::optional<Ns> next_wake;
  };

  // Drives the engine at `now`: applies any boundary that falls due, then
  // starts the next quantum if there is runnable work. Safe to call on any
  // state change (idempotent when nothing is due); never idles while a
  // runnable prefill or a nonempty decode batch exists.
  Outcome advance(Ns now);

  int active_count() const;  // prefilling + waiting + decoding + paused
  int queued_count() const { return static_cast<int>(admission_.size()); }
  bool has_live_requests() const;
  Ns total_prefill_busy() const { return prefill_busy_; }

  std::string diagnostics() const;  // queued/waiting state for stall reports

 private:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  enum class Phase { Queued, Prefilling, WaitingCache, Decoding, Paused, Finished };

  struct Req {
    RequestSpec spec;
    Phase phase = Phase::Queued;
    Ns admit = -1;
    Ns decode_entry = -1;
    Ns first_token = -1;
    Ns finish = -1;
    Ns gate = 0;
    Ns load_stall = 0;
    std::int64_t generated = 0;
    int participations = 0;
    std::vector<Ns> layer_ready;
    bool loads_planned = false;
    bool prompt_reserved = false;
    std::int64_t reserved_bytes = 0;
  };

  void apply_prefill(Ns at, Outcome& out);
  void apply_step(Ns at, Outcome& out);
  void try_start(Ns now, Outcome& out);
  bool admit_head(Ns now, Outcome& out);  // loads + reservations for the queue head
  void ensure_room(std::int64_t need, Ns now, Outcome& out);
  Ns step_estimate(int extra) const;

  EngineConfig cfg_;
  GpuProfile gpu_;
  KvStore& store_;

  std::vector<Req> reqs_;
  std::deque<std::size_t> admission_;
  std::vector<std::size_t> decoding_;  // insertion order
  std::vector<std::size_t> waiting_;
  std::vector<std::size_t> paused_;    // pause order; resumed oldest-first

  // Quantum in flight. prefill_boundary_ applies the prefill's effects at its
  // actual end; quantum_end_ applies the decode step.
  Ns prefill_boundary_ = -1;
  Ns quantum_end_ = -1;
  std::size_t q_prefill_ = npos;
  std::vector<std::size_t> q_emitters_;
  Ns q_decode_start_ = 0;

  Ns prefill_busy_ = 0;
};

}  // namespace symsim
