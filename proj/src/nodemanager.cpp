#include "symsim/nodemanager.hpp"

#include <stdexcept>

namespace symsim {

namespace {
KvStore::Options with_node(KvStore::Options o, int id) {
  o.node_id = id;
  return o;
}
}  // namespace

NodeManager::NodeManager(int id, Policy policy, const EngineConfig& ecfg, const GpuProfile& gpu,
                         const LinkProfile& links, KvStore::Options kv_opts)
    : id_(id),
      policy_(policy),
      store_(gpu, links, with_node(std::move(kv_opts), id)),
      engine_(ecfg, gpu, store_) {}

void NodeManager::run_engine(Ns now, NodeEffects& eff) {
  Engine::Outcome out = engine_.advance(now);
  for (auto& f : out.finished) eff.finished.push_back(std::move(f));
  for (auto& t : out.transfers) eff.transfers.push_back(t);
  if (out.next_wake) {
    if (!eff.engine_wake || *out.next_wake < *eff.engine_wake) eff.engine_wake = out.next_wake;
  }
}

NodeManager::Submitted NodeManager::submit(std::uint32_t session, std::uint32_t turn,
                                           std::int64_t prompt_tokens,
                                           std::int64_t history_tokens,
                                           std::int64_t target_tokens, bool high_priority, Ns now,
                                           NodeEffects& eff) {
  advisory_seen_.erase(session);
  Submitted s;
  RequestSpec spec;
  spec.session = session;
  spec.turn = turn;
  spec.prompt_tokens = prompt_tokens;
  spec.target_tokens = target_tokens;
  spec.high_priority = high_priority;
  spec.arrival = now;
  if (store_.has_any_copy(session)) {
    spec.prefill_tokens = prompt_tokens;
    spec.redundant_tokens = 0;
    spec.needs_load = !store_.fully_device_resident(session);
  } else {
    spec.prefill_tokens = history_tokens + prompt_tokens;
    spec.redundant_tokens = history_tokens;
    spec.needs_load = false;
    s.recomputed = history_tokens > 0;
  }
  s.prefill_tokens = spec.prefill_tokens;
  s.redundant_tokens = spec.redundant_tokens;
  engine_.enqueue(spec, now);
  run_engine(now, eff);
  return s;
}

void NodeManager::advisory_promote(std::uint32_t session, bool high_priority, Ns now,
                                   NodeEffects& eff) {
  if (!advisory_seen_.insert(session).second) return;
  if (!store_.has_any_copy(session) || store_.fully_device_resident(session)) return;
  const std::int64_t need = store_.bytes_for_promote(session);
  if (store_.device_free() < need) {
    store_.purge_from_device(need - store_.device_free(), now, true, eff.transfers);
    if (high_priority && store_.device_free() < need)
      store_.purge_from_device(need - store_.device_free(), now, false, eff.transfers);
  }
  store_.promote(session, now, eff.transfers);
}

void NodeManager::finish_cleanup(std::uint32_t session, Ns now, NodeEffects& eff) {
  switch (policy_) {
    case Policy::Recompute:
      store_.release_session(session, now);
      break;
    case Policy::Retain:
    case Policy::Symphony:
      break;  // cache stays put (write-behind already persisted symphony's)
    case Policy::Swap:
      store_.offload_session(session, now, eff.transfers);
      break;
  }
}

void NodeManager::on_transfer_done(std::uint64_t transfer_id, Ns now, NodeEffects& eff) {
  const KvStore::ApplyResult res = store_.apply_transfer(transfer_id, now);
  if (res.persists_drained) eff.drained_sessions.push_back(res.session);
  if (res.migration_complete) eff.migrations_arrived.push_back(res.session);
  run_engine(now, eff);
}

void NodeManager::on_wake(Ns now, NodeEffects& eff) { run_engine(now, eff); }

void NodeManager::begin_import(std::uint32_t session, std::int64_t tokens, Ns now,
                               NodeEffects& eff) {
  auto scheduled = store_.import_migration(session, tokens, now);
  for (const auto& t : scheduled) eff.transfers.push_back(t);
}

}  // namespace symsim
