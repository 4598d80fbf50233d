#include "symsim/scheduler.hpp"

#include <algorithm>
#include <stdexcept>

namespace symsim {

ClusterScheduler::ClusterScheduler(int num_nodes, Policy policy)
    : num_nodes_(num_nodes), policy_(policy), planned_pending_(num_nodes, 0) {
  if (num_nodes <= 0) throw std::runtime_error("scheduler: need at least one node");
}

int ClusterScheduler::argmin_load(const std::vector<int>& engine_load) const {
  if (static_cast<int>(engine_load.size()) != num_nodes_)
    throw std::logic_error("scheduler: load vector size mismatch");
  int best = 0;
  int best_load = engine_load[0] + planned_pending_[0];
  for (int n = 1; n < num_nodes_; ++n) {
    const int load = engine_load[n] + planned_pending_[n];
    if (load < best_load) {
      best = n;
      best_load = load;
    }
  }
  return best;
}

RouteDecision ClusterScheduler::route_advisory(std::uint32_t session, std::uint32_t turn, Ns now,
                                               const std::vector<int>& engine_load) {
  if (policy_ != Policy::Symphony)
    throw std::logic_error("scheduler: advisories are only routed under symphony");
  RouteDecision d;
  const auto own = owner_.find(session);
  d.prev_owner = own == owner_.end() ? -1 : own->second;
  const auto it = planned_.find(session);
  if (it != planned_.end()) {
    d.node = it->second;
    d.reason = "planned";
  } else {
    const int inbound = migrating_to(session);
    d.node = inbound >= 0 ? inbound : argmin_load(engine_load);
    planned_[session] = d.node;
    planned_pending_[d.node] += 1;
    d.reason = inbound >= 0 ? "inbound" : "argmin";
  }
  ledger_.push_back({now, session, turn, true, d.node, d.reason});
  return d;
}

RouteDecision ClusterScheduler::route_inference(std::uint32_t session, std::uint32_t turn, Ns now,
                                                const std::vector<int>& engine_load) {
  RouteDecision d;
  const auto own = owner_.find(session);
  d.prev_owner = own == owner_.end() ? -1 : own->second;
  switch (policy_) {
    case Policy::Recompute:
      d.node = argmin_load(engine_load);
      d.reason = "argmin";
      break;
    case Policy::Retain:
    case Policy::Swap:
      if (d.prev_owner >= 0) {
        d.node = d.prev_owner;
        d.reason = "sticky";
      } else {
        d.node = argmin_load(engine_load);
        d.reason = "new";
      }
      break;
    case Policy::Symphony: {
      const auto it = planned_.find(session);
      if (it != planned_.end()) {
        d.node = it->second;
        d.consumed_plan = true;
        d.reason = "planned";
        planned_pending_[d.node] -= 1;
        planned_.erase(it);
      } else if (const int inbound = migrating_to(session); inbound >= 0) {
        d.node = inbound;
        d.reason = "inbound";
      } else {
        d.node = argmin_load(engine_load);
        d.reason = d.prev_owner < 0 ? "new" : "miss";
      }
      break;
    }
  }
  ledger_.push_back({now, session, turn, false, d.node, d.reason});
  return d;
}

int ClusterScheduler::owner_of(std::uint32_t session) const {
  const auto it = owner_.find(session);
  return it == owner_.end() ? -1 : it->second;
}

void ClusterScheduler::set_owner(std::uint32_t session, int node) {
  if (node < 0 || node >= num_nodes_) throw std::logic_error("scheduler: owner node out of range");
  owner_[session] = node;
}

void ClusterScheduler::clear_owner(std::uint32_t session) { owner_.erase(session); }

void ClusterScheduler::note_migration(std::uint32_t session, int dest) {
  if (dest < 0 || dest >= num_nodes_)
    throw std::logic_error("scheduler: migration destination out of range");
  if (migrating_to_.count(session))
    throw std::logic_error("scheduler: session already has a cache in flight");
  migrating_to_[session] = dest;
}

void ClusterScheduler::migration_done(std::uint32_t session) { migrating_to_.erase(session); }

int ClusterScheduler::migrating_to(std::uint32_t session) const {
  const auto it = migrating_to_.find(session);
  return it == migrating_to_.end() ? -1 : it->second;
}

double load_imbalance(std::vector<int> loads) {
  if (loads.empty()) return 1.0;
  std::sort(loads.begin(), loads.end());
  const int median = loads[(loads.size() - 1) / 2];
  if (median < 1) return 1.0;
  return static_cast<double>(loads.back()) / static_cast<double>(median);
}

ImbalanceSummary summarize_imbalance(const std::vector<std::vector<int>>& samples) {
  ImbalanceSummary s;
  const std::size_t n = samples.size();
  const std::size_t lo = n / 10;
  const std::size_t hi = n - n / 10;
  double sum = 0;
  for (std::size_t i = lo; i < hi; ++i) {
    std::vector<int> loads = samples[i];
    std::sort(loads.begin(), loads.end());
    if (loads.empty() || loads[(loads.size() - 1) / 2] < 1) continue;
    const double r =
        static_cast<double>(loads.back()) / static_cast<double>(loads[(loads.size() - 1) / 2]);
    sum += r;
    s.peak = std::max(s.peak, r);
    s.samples += 1;
  }
  if (s.samples > 0) s.mean = sum / s.samples;
  return s;
}

}  // namespace symsim
