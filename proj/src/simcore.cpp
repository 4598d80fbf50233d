#include "symsim/simcore.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace symsim {

namespace {
std::vector<int> collect_loads(const std::vector<std::unique_ptr<NodeManager>>& nodes) {
  std::vector<int> loads;
  loads.reserve(nodes.size());
  for (const auto& n : nodes) loads.push_back(n->engine_load());
  return loads;
}
}  // namespace

Simulation::Simulation(const Trace& trace, const RunConfig& cfg)
    : trace_(trace), cfg_(cfg), scheduler_(cfg.num_nodes, cfg.policy) {
  if (trace_.sessions.empty()) throw std::runtime_error("simulation: trace has no sessions");
  if (trace_.concurrency_target < 1 ||
      trace_.concurrency_target > static_cast<int>(trace_.sessions.size()))
    throw std::runtime_error("simulation: concurrency target out of range");
  KvStore::Options kv;
  kv.device_capacity = cfg_.device_capacity;
  // A pure retain cluster has nowhere to spill: its caches sit in device
  // memory until the session ends, which is the point of the baseline.
  kv.host_capacity = cfg_.policy == Policy::Retain ? 0 : cfg_.host_capacity;
  kv.disk_capacity = cfg_.disk_capacity;
  kv.write_behind = cfg_.policy == Policy::Symphony;
  for (int i = 0; i < cfg_.num_nodes; ++i)
    nodes_.push_back(
        std::make_unique<NodeManager>(i, cfg_.policy, cfg_.engine, cfg_.gpu, cfg_.links, kv));
  for (auto& n : nodes_) {
    for (std::size_t s = 0; s < trace_.sessions.size(); ++s)
      n->store().register_session(static_cast<std::uint32_t>(s), trace_.sessions[s].session_id,
                                  trace_.sessions[s].priority);
    n->store().finalize_sessions();
  }
  for (std::size_t i = 0; i < trace_.events.size(); ++i) {
    const TraceEvent& e = trace_.events[i];
    if (e.session_index >= trace_.sessions.size() ||
        e.turn_index >= trace_.sessions[e.session_index].turns.size())
      throw std::runtime_error("simulation: trace event out of range");
    anchors_[{e.session_index, static_cast<int>(e.anchor), e.anchor_turn}].push_back(i);
  }
  turns_done_.assign(trace_.sessions.size(), 0);
  report_.policy = policy_name(cfg_.policy);
  report_.num_nodes = cfg_.num_nodes;
  report_.concurrency = trace_.concurrency_target;
  report_.trace_seed = trace_.seed;
  report_.workload = workload_hash(trace_);
}

void Simulation::push(Ns time, Ev kind, std::uint32_t a, std::uint64_t b) {
  if (time < now_) throw std::logic_error("simulation: event scheduled into the past");
  queue_.push(Event{time, next_seq_++, kind, a, b});
}

void Simulation::fire_anchor(std::uint32_t session, AnchorPoint point, std::uint32_t turn,
                             Ns at) {
  const auto it = anchors_.find({session, static_cast<int>(point), turn});
  if (it == anchors_.end()) return;
  for (std::size_t idx : it->second)
    push(at + trace_.events[idx].delta, Ev::Trace, static_cast<std::uint32_t>(idx), 0);
  anchors_.erase(it);
}

void Simulation::open_next_slot(Ns at) {
  if (next_session_ >= trace_.sessions.size()) return;
  const auto s = static_cast<std::uint32_t>(next_session_++);
  fire_anchor(s, AnchorPoint::SlotOpen, 0, at);
}

void Simulation::log_event(const Event& e) {
  std::ostringstream os;
  os << e.time << ' ' << e.seq << ' ' << static_cast<int>(e.kind) << ' ' << e.a << ' ' << e.b;
  if (e.kind == Ev::Trace) {
    const TraceEvent& t = trace_.events[e.a];
    os << (t.kind == EventKind::Advisory ? " adv s" : " inf s") << t.session_index << ".t"
       << t.turn_index;
  }
  report_.event_log.push_back(os.str());
}

void Simulation::throw_livelock(const std::string& why) const {
  std::ostringstream os;
  os << "simulation stalled: " << why << "; t=" << to_sec(now_) << "s closed="
     << sessions_closed_ << "/" << trace_.sessions.size();
  for (const auto& n : nodes_) {
    os << "\n  node " << n->id() << ": " << n->engine().diagnostics() << " device="
       << n->store().device_used() << "/" << n->store().device_capacity()
       << " host=" << n->store().host_used();
  }
  throw std::runtime_error(os.str());
}

void Simulation::drain_effects(int node, NodeEffects& eff, Ns now) {
  for (const auto& t : eff.transfers)
    push(t.complete_at, Ev::Transfer, static_cast<std::uint32_t>(node), t.id);
  if (eff.engine_wake) {
    const Ns w = *eff.engine_wake;
    if (w < now) throw std::logic_error("simulation: engine wake in the past");
    if (scheduled_wakes_.insert({node, w}).second)
      push(w, Ev::Wake, static_cast<std::uint32_t>(node), 0);
  }
  for (std::uint32_t s : eff.drained_sessions) {
    const auto it = close_waiting_.find(s);
    if (it != close_waiting_.end() && it->second == node) {
      close_waiting_.erase(it);
      close_session(s, now);
    }
  }
  for (std::uint32_t s : eff.migrations_arrived) {
    const int src = migration_src_.at(s);
    nodes_[src]->release_source(s, now);
    migration_src_.erase(s);
    scheduler_.migration_done(s);
    scheduler_.set_owner(s, node);
    const auto po = promote_on_arrival_.find(s);
    if (po != promote_on_arrival_.end()) {
      const bool high = po->second.second;
      promote_on_arrival_.erase(po);
      NodeEffects e2;
      nodes_[node]->advisory_promote(s, high, now, e2);
      drain_effects(node, e2, now);
    }
  }
  for (const auto& f : eff.finished) record_finish(node, f, now);
}

void Simulation::start_migration(std::uint32_t session, int from, int to,
                                 bool promote_on_arrival, bool high, Ns now) {
  nodes_[from]->freeze_source(session);
  scheduler_.note_migration(session, to);
  migration_src_[session] = from;
  if (promote_on_arrival) promote_on_arrival_[session] = {true, high};
  NodeEffects eff;
  nodes_[to]->begin_import(session, nodes_[from]->store().cached_tokens(session), now, eff);
  drain_effects(to, eff, now);
}

void Simulation::handle_advisory(const TraceEvent& ev, Ns now) {
  if (cfg_.policy != Policy::Symphony) {
    report_.advisories_ignored += 1;
    return;
  }
  report_.advisories_processed += 1;
  const std::uint64_t key = (static_cast<std::uint64_t>(ev.session_index) << 32) | ev.turn_index;
  advisory_seen_at_.emplace(key, now);
  const RouteDecision d =
      scheduler_.route_advisory(ev.session_index, ev.turn_index, now, collect_loads(nodes_));
  const bool high = trace_.sessions[ev.session_index].priority == PriorityClass::High ||
                    (ev.advisory.priority && *ev.advisory.priority >= 1);
  const int owner = scheduler_.owner_of(ev.session_index);
  if (owner < 0) return;  // nothing cached yet; the plan alone is the effect
  if (d.node == owner) {
    NodeEffects eff;
    nodes_[d.node]->advisory_promote(ev.session_index, high, now, eff);
    drain_effects(d.node, eff, now);
  } else if (scheduler_.migrating_to(ev.session_index) < 0 &&
             nodes_[owner]->store().has_any_copy(ev.session_index) &&
             !nodes_[owner]->store().is_active(ev.session_index)) {
    // Ship the cache to the planned node ahead of the turn. A still-active
    // session's cache is growing; its move waits for the demand path.
    start_migration(ev.session_index, owner, d.node, true, high, now);
  }
}

void Simulation::handle_inference(const TraceEvent& ev, Ns now) {
  const std::uint32_t s = ev.session_index;
  const std::uint32_t turn = ev.turn_index;
  const SessionScript& script = trace_.sessions[s];
  const std::uint64_t key = (static_cast<std::uint64_t>(s) << 32) | turn;
  const auto adv = advisory_seen_at_.find(key);
  if (adv != advisory_seen_at_.end()) {
    report_.advisory_lead_s.push_back(to_sec(now - adv->second));
    advisory_seen_at_.erase(adv);
  }
  promote_on_arrival_.erase(s);  // the turn is here; admission owns the loads now
  const RouteDecision d = scheduler_.route_inference(s, turn, now, collect_loads(nodes_));
  const int owner = d.prev_owner;
  if (cfg_.policy == Policy::Symphony && owner >= 0 && owner != d.node &&
      scheduler_.migrating_to(s) < 0 && nodes_[owner]->store().has_any_copy(s))
    start_migration(s, owner, d.node, false, false, now);
  std::int64_t history = 0;
  for (std::uint32_t k = 0; k < turn; ++k)
    history += script.turns[k].prompt_tokens + script.turns[k].response_tokens;
  NodeEffects eff;
  nodes_[d.node]->submit(s, turn, script.turns[turn].prompt_tokens, history,
                         script.turns[turn].response_tokens,
                         script.priority == PriorityClass::High, now, eff);
  if (cfg_.policy != Policy::Recompute && scheduler_.owner_of(s) < 0 &&
      scheduler_.migrating_to(s) < 0)
    scheduler_.set_owner(s, d.node);
  drain_effects(d.node, eff, now);
  fire_anchor(s, AnchorPoint::PrevArrival, turn, now);
}

void Simulation::handle_trace_event(const TraceEvent& ev, Ns now) {
  if (ev.kind == EventKind::Advisory)
    handle_advisory(ev, now);
  else
    handle_inference(ev, now);
}

void Simulation::record_finish(int node, const FinishedRequest& f, Ns now) {
  RequestRecord r;
  r.session = f.spec.session;
  r.turn = f.spec.turn;
  r.node = node;
  r.high_priority = f.spec.high_priority;
  r.recomputed = f.spec.redundant_tokens > 0;
  r.prompt_tokens = f.spec.prompt_tokens;
  r.prefill_tokens = f.spec.prefill_tokens;
  r.redundant_tokens = f.spec.redundant_tokens;
  r.target_tokens = f.spec.target_tokens;
  r.arrival = f.spec.arrival;
  r.admit = f.admit;
  r.decode_entry = f.decode_entry;
  r.first_token = f.first_token;
  r.finish = f.finish;
  r.load_stall = f.load_stall;
  r.participations = f.participations;
  report_.records.push_back(r);
  last_finish_ = std::max(last_finish_, f.finish);
  finished_requests_ += 1;

  NodeEffects eff;
  nodes_[node]->finish_cleanup(f.spec.session, now, eff);
  drain_effects(node, eff, now);
  if (cfg_.policy == Policy::Swap && !nodes_[node]->store().has_any_copy(f.spec.session))
    scheduler_.clear_owner(f.spec.session);  // the offload had to drop it

  fire_anchor(f.spec.session, AnchorPoint::PrevCompletion, f.spec.turn, now);

  turns_done_[f.spec.session] += 1;
  if (turns_done_[f.spec.session] == trace_.sessions[f.spec.session].turns.size()) {
    if (cfg_.policy == Policy::Symphony && nodes_[node]->store().pending_persists(f.spec.session) > 0)
      close_waiting_[f.spec.session] = node;  // durability barrier
    else
      close_session(f.spec.session, now);
  }
}

void Simulation::close_session(std::uint32_t session, Ns now) {
  (void)session;
  sessions_closed_ += 1;
  open_next_slot(now);
}

void Simulation::take_sample(Ns now) {
  std::vector<int> loads = collect_loads(nodes_);
  report_.samples.push_back({now, loads});
  imbalance_samples_.push_back(std::move(loads));
  if (sessions_closed_ == trace_.sessions.size()) return;  // let the queue drain
  if (queue_.empty())
    throw_livelock("only the load sampler is runnable while sessions remain open");
  push(now + cfg_.sample_period, Ev::Sample, 0, 0);
}

RunReport Simulation::run() {
  const int c = trace_.concurrency_target;
  for (int i = 0; i < c; ++i) open_next_slot(0);
  push(0, Ev::Sample, 0, 0);

  while (!queue_.empty()) {
    const Event e = queue_.top();
    queue_.pop();
    if (e.time < now_) throw std::logic_error("simulation: time went backwards");
    now_ = e.time;
    if (now_ > cfg_.max_sim_time) throw_livelock("max_sim_time exceeded");
    if (cfg_.record_events) log_event(e);
    events_processed_ += 1;
    if (cfg_.invariant_stride > 0 && events_processed_ % cfg_.invariant_stride == 0)
      for (const auto& n : nodes_) n->store().check_budgets();
    switch (e.kind) {
      case Ev::Trace:
        handle_trace_event(trace_.events[e.a], now_);
        break;
      case Ev::Wake: {
        scheduled_wakes_.erase({static_cast<int>(e.a), e.time});
        NodeEffects eff;
        nodes_[e.a]->on_wake(now_, eff);
        drain_effects(static_cast<int>(e.a), eff, now_);
        break;
      }
      case Ev::Transfer: {
        NodeEffects eff;
        nodes_[e.a]->on_transfer_done(e.b, now_, eff);
        drain_effects(static_cast<int>(e.a), eff, now_);
        break;
      }
      case Ev::Sample:
        take_sample(now_);
        break;
    }
  }

  if (sessions_closed_ != trace_.sessions.size()) throw_livelock("event queue drained");
  for (const auto& n : nodes_) {
    n->store().check_budgets();
    if (n->engine().has_live_requests())
      throw std::logic_error("simulation: engine holds live requests after drain");
  }

  report_.makespan = last_finish_;
  for (const auto& n : nodes_) {
    auto led = n->store().take_ledger();
    report_.transfers.insert(report_.transfers.end(), led.begin(), led.end());
  }
  for (const auto& t : report_.transfers) {
    TrafficTotal& tot = report_.traffic[{t.from, t.to, t.reason}];
    tot.bytes += t.bytes;
    tot.transfers += 1;
  }
  report_.routing = scheduler_.ledger();
  report_.imbalance = summarize_imbalance(imbalance_samples_);
  return std::move(report_);
}

RunReport run_simulation(const Trace& trace, const RunConfig& cfg) {
  Simulation sim(trace, cfg);
  return sim.run();
}

}  // namespace symsim
