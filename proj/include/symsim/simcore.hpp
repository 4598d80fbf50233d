#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <queue>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "symsim/nodemanager.hpp"
#include "symsim/report.hpp"
#include "symsim/scheduler.hpp"
#include "symsim/workload.hpp"

namespace symsim {

struct RunConfig {
  Policy policy = Policy::Symphony;
  int num_nodes = 1;
  GpuProfile gpu;
  LinkProfile links;
  EngineConfig engine;
  std::int64_t device_capacity = 0;         // 0: gpu.hbm_capacity
  std::int64_t host_capacity = 256'000'000'000;
  std::int64_t disk_capacity = -1;          // -1: unbounded
  Ns sample_period = ns_from_ms(250);
  Ns max_sim_time = ns_from_sec(7 * 86400);
  bool record_events = false;   // keep a textual event log in the report
  int invariant_stride = 4096;  // check store budgets every N events (0: off)
};

// Runs one policy over one closed-loop trace. Deterministic: equal inputs
// give byte-identical reports. Throws with per-node diagnostics if the
// cluster livelocks (event queue drains or only idle ticks remain while
// sessions are still open) or exceeds max_sim_time.
RunReport run_simulation(const Trace& trace, const RunConfig& cfg);

// The event loop behind run_simulation, exposed so tests can step it and
// inspect cluster state mid-run.
class Simulation {
 public:
  Simulation(const Trace& trace, const RunConfig& cfg);

  RunReport run();

  // Test hooks.
  const NodeManager& node(int i) const { return *nodes_[i]; }
  const ClusterScheduler& scheduler() const { return scheduler_; }
  Ns now() const { return now_; }
  std::size_t sessions_closed() const { return sessions_closed_; }

 private:
  enum class Ev { Trace, Wake, Transfer, Sample };

  struct Event {
    Ns time = 0;
    std::uint64_t seq = 0;
    Ev kind = Ev::Trace;
    std::uint32_t a = 0;   // trace event index / node
    std::uint64_t b = 0;   // transfer id
    bool operator>(const Event& o) const {
      if (time != o.time) return time > o.time;
      return seq > o.seq;
    }
  };

  void push(Ns time, Ev kind, std::uint32_t a, std::uint64_t b);
  void fire_anchor(std::uint32_t session, AnchorPoint point, std::uint32_t turn, Ns at);
  void open_next_slot(Ns at);
  void handle_trace_event(const TraceEvent& ev, Ns now);
  void handle_advisory(const TraceEvent& ev, Ns now);
  void handle_inference(const TraceEvent& ev, Ns now);
  void start_migration(std::uint32_t session, int from, int to, bool promote_on_arrival,
                       bool high, Ns now);
  void drain_effects(int node, NodeEffects& eff, Ns now);
  void record_finish(int node, const FinishedRequest& f, Ns now);
  void close_session(std::uint32_t session, Ns now);
  void take_sample(Ns now);
  [[noreturn]] void throw_livelock(const std::string& why) const;
  void log_event(const Event& e);

  const Trace& trace_;
  RunConfig cfg_;
  ClusterScheduler scheduler_;
  std::vector<std::unique_ptr<NodeManager>> nodes_;

  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> queue_;
  std::uint64_t next_seq_ = 0;
  Ns now_ = 0;

  // anchor index: (session, point, turn) -> trace event indices waiting on it
  std::map<std::tuple<std::uint32_t, int, std::uint32_t>, std::vector<std::size_t>> anchors_;

  std::size_t next_session_ = 0;     // next session waiting for a slot
  std::size_t sessions_closed_ = 0;
  std::vector<std::uint32_t> turns_done_;
  std::map<std::uint32_t, int> close_waiting_;      // session -> node draining persists
  std::map<std::uint32_t, int> migration_src_;
  std::map<std::uint32_t, std::pair<bool, bool>> promote_on_arrival_;  // (wanted, high)
  std::map<std::uint64_t, Ns> advisory_seen_at_;    // (session<<32|turn) -> time
  std::set<std::pair<int, Ns>> scheduled_wakes_;

  RunReport report_;
  std::vector<std::vector<int>> imbalance_samples_;
  std::uint64_t events_processed_ = 0;
  Ns last_finish_ = 0;
  std::size_t finished_requests_ = 0;
};

}  // namespace symsim
