#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "symsim/time.hpp"

namespace symsim {

struct Turn {
  std::int64_t prompt_tokens = 0;
  std::int64_t response_tokens = 0;
  std::int64_t prompt_words = 0;
  std::int64_t response_words = 0;
};

enum class PriorityClass { Normal, High };

struct UserProfile {
  double reading_wpm = 200.0;
  double typing_wpm = 40.0;
};

struct SessionScript {
  std::string session_id;
  std::string model_id = "llama-3.1-8b";
  std::vector<Turn> turns;
  UserProfile user;
  PriorityClass priority = PriorityClass::Normal;

  std::int64_t total_tokens() const;
  // Sum over turns k > 0 of the full history (prompt + response tokens of all
  // earlier turns). This is exactly what a stateless policy re-prefills.
  std::int64_t history_tokens() const;
};

// Wire fields of an advisory request, as a client would send them.
struct AdvisoryFields {
  std::optional<Ns> expected_arrival;  // lead-time bound; absent for chat typing signals
  bool ordered = false;                // reserved, carried but unused
  std::optional<int> priority;
};

enum class EventKind { Advisory, Inference };

// Arrival times in a closed-loop trace cannot be absolute: they depend on
// completions the simulation produces. Each event therefore stores a delta
// from an anchor point of an earlier turn in the same session.
enum class AnchorPoint {
  SlotOpen,        // the session's concurrency slot opens (turn 0 only)
  PrevArrival,     // arrival of anchor_turn (agent advisories)
  PrevCompletion,  // completion of anchor_turn (chat think-time deltas)
};

struct TraceEvent {
  EventKind kind = EventKind::Inference;
  std::uint32_t session_index = 0;
  std::uint32_t turn_index = 0;
  AnchorPoint anchor = AnchorPoint::PrevCompletion;
  std::uint32_t anchor_turn = 0;
  Ns delta = 0;
  AdvisoryFields advisory;
};

struct Trace {
  std::uint64_t seed = 0;
  int concurrency_target = 1;
  std::vector<SessionScript> sessions;  // admission order
  std::vector<TraceEvent> events;
  std::int64_t dropped_advisories = 0;

  double multi_turn_fraction() const;
  std::size_t inference_count() const;
  std::size_t advisory_count() const;
  // Static mean of (inference delta - advisory delta) over advisories sharing
  // an anchor with their inference event, i.e. the designed lead time.
  double mean_advisory_lead_s() const;
};

// Hash of the inference workload (sessions + inference events). Advisory
// overlays and priority classes hash equal on purpose: sweeps over miss
// fraction or priority mix run "the same workload" and must compare cleanly.
std::uint64_t workload_hash(const Trace& trace);

// ---- corpus ----------------------------------------------------------------

// Line-delimited JSON, one record per session:
//   {"session_id": "...", "messages": [{"role": "user"|"assistant",
//                                       "tokens": N, "words": W?}, ...]}
// Roles must alternate starting with "user". A record whose final user
// message has no assistant reply loses that trailing message; a record with
// no complete (user, assistant) pair at all is dropped. Word counts default
// to round(tokens * words_per_token).
std::vector<SessionScript> load_chat_corpus(const std::string& path,
                                            std::size_t max_sessions,
                                            double words_per_token = 0.75);

void write_corpus(const std::string& path, const std::vector<SessionScript>& scripts);

// Synthetic chat corpus with the shape of public chat logs: a configurable
// multi-turn fraction and a heavy upper tail of turn counts.
struct SyntheticSpec {
  int sessions = 1000;
  double multi_turn_fraction = 0.734;
  double mean_extra_turns = 4.0;  // mean turns beyond the first, for multi-turn sessions
  int max_turns = 64;
  double prompt_tokens_median = 60.0;
  double prompt_tokens_sigma = 0.8;   // lognormal shape
  double response_tokens_median = 220.0;
  double response_tokens_sigma = 0.7;
  std::int64_t max_tokens_per_message = 1024;
  bool prefill_heavy = false;  // every turn 1024 prompt / 1 response tokens
  double words_per_token = 0.75;
};

std::vector<SessionScript> synthesize_corpus(const SyntheticSpec& spec, std::uint64_t seed);

// ---- trace generation -------------------------------------------------------

struct SpeedModel {
  double reading_wpm_mean = 200.0;
  double typing_wpm_mean = 40.0;
  double sigma_frac = 0.15;  // stddev as a fraction of the mean
  bool sample = true;        // false: every session gets the means exactly
};

// Closed-loop chat arrivals. Turn 0 anchors to the session's slot opening;
// turn k anchors to completion of turn k-1 with
//   delta = read_time(response words of k-1) + type_time(prompt words of k).
// Per-session speeds are sampled from the normal model (clamped to a tenth
// of the mean) using `seed`. Throws if scripts is empty or concurrency_target
// exceeds the session count.
Trace synthesize_arrivals(std::vector<SessionScript> scripts, int concurrency_target,
                          std::uint64_t seed, const SpeedModel& speeds = {});

// Inserts one advisory per inference turn k > 0 at the moment the user stops
// reading and starts typing (inference delta minus typing time), except for a
// seeded fraction `miss_fraction` of turns, which get none. High-priority
// sessions carry priority = 1 in the advisory payload. Throws if the trace
// already contains advisories.
Trace inject_advisories(Trace trace, double miss_fraction, std::uint64_t seed);

// Marks a seeded fraction of sessions high-priority.
void assign_priorities(std::vector<SessionScript>& scripts, double high_fraction,
                       std::uint64_t seed);

// ---- agent pipelines --------------------------------------------------------

struct AgentStage {
  std::string name;
  std::int64_t prompt_tokens = 0;
  std::int64_t response_tokens = 0;
  double lower_bound_s = 0.0;  // profiled lower bound on the stage's runtime
};

struct AgentGraph {
  std::vector<AgentStage> stages;
  std::vector<std::pair<int, int>> edges;  // (from, to) stage indices
};

// One session ("job") per pipeline execution; stages run in deterministic
// topological order (Kahn, stage-index tiebreak). Each inference turn k > 0
// arrives at completion of turn k-1; each DAG edge (u, v) emits an advisory
// for v's turn anchored at u's arrival with expected_arrival =
// u's lower bound. Throws if the graph is empty or cyclic.
Trace generate_agent_trace(const AgentGraph& graph, int n_jobs, std::uint64_t seed);

// A coding-crew style pipeline: architect -> engineer -> (qa -> engineer) x3,
// unrolled into a chain of 8 stages.
AgentGraph review_cycle_graph();

// ---- trace file I/O ---------------------------------------------------------

// Line-delimited JSON: a header record, one session record per session, then
// one record per event in order.
void write_trace(const std::string& path, const Trace& trace);
Trace read_trace(const std::string& path);

}  // namespace symsim
