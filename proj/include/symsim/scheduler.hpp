#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "symsim/engine.hpp"
#include "symsim/time.hpp"

namespace symsim {

// Where a request (or an advisory's plan) was sent and why.
struct RouteDecision {
  int node = -1;
  int prev_owner = -1;     // node that held the cache when the decision was made
  bool consumed_plan = false;
  std::string reason;      // "planned", "sticky", "argmin", "miss", "new"
};

struct RoutingRecord {
  Ns time = 0;
  std::uint32_t session = 0;
  std::uint32_t turn = 0;
  bool advisory = false;
  int node = -1;
  std::string reason;
};

// Cluster-level request router. Node load is the caller-supplied engine load
// (live + queued requests) plus the plans this scheduler has handed out that
// no inference has consumed yet, so back-to-back advisories spread out even
// between engine updates.
class ClusterScheduler {
 public:
  ClusterScheduler(int num_nodes, Policy policy);

  // Plans the landing node for a session's next turn. Symphony only; callers
  // drop advisories for other policies. A repeated advisory for the same
  // session returns the standing plan unchanged.
  RouteDecision route_advisory(std::uint32_t session, std::uint32_t turn, Ns now,
                               const std::vector<int>& engine_load);

  RouteDecision route_inference(std::uint32_t session, std::uint32_t turn, Ns now,
                                const std::vector<int>& engine_load);

  int owner_of(std::uint32_t session) const;
  void set_owner(std::uint32_t session, int node);
  void clear_owner(std::uint32_t session);

  // A cache in flight pins its session's routing to the receiving node until
  // the cluster reports completion; re-routing a cache that is still arriving
  // would strand it mid-copy.
  void note_migration(std::uint32_t session, int dest);
  void migration_done(std::uint32_t session);
  int migrating_to(std::uint32_t session) const;  // -1 when none

  int planned_pending(int node) const { return planned_pending_[node]; }
  int num_nodes() const { return num_nodes_; }

  const std::vector<RoutingRecord>& ledger() const { return ledger_; }

 private:
  int argmin_load(const std::vector<int>& engine_load) const;

  int num_nodes_;
  Policy policy_;
  std::map<std::uint32_t, int> planned_;  // session -> node, consumed once
  std::vector<int> planned_pending_;      // per node
  std::map<std::uint32_t, int> owner_;
  std::map<std::uint32_t, int> migrating_to_;
  std::vector<RoutingRecord> ledger_;
};

// max / median over one load sample (lower median). Samples whose median is
// below 1 carry no signal and report 1 (a balanced cluster).
double load_imbalance(std::vector<int> loads);

struct ImbalanceSummary {
  double mean = 1.0;
  double peak = 1.0;
  int samples = 0;
};

// Aggregates per-sample imbalance over the middle 80% of the run (by sample
// index), skipping idle samples.
ImbalanceSummary summarize_imbalance(const std::vector<std::vector<int>>& samples);

}  // namespace symsim
