#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "symsim/engine.hpp"
#include "symsim/kvstore.hpp"

namespace symsim {

// Everything a node action produced that the cluster loop must turn into
// events: transfer completions to schedule, finished requests to account,
// and the engine's next self-wake.
struct NodeEffects {
  std::vector<ScheduledTransfer> transfers;
  std::vector<FinishedRequest> finished;
  std::optional<Ns> engine_wake;
  std::vector<std::uint32_t> drained_sessions;    // last pending persist landed
  std::vector<std::uint32_t> migrations_arrived;  // inbound cache fully landed
};

// One inference node: an engine plus its tiered cache. Methods append their
// consequences to a NodeEffects the cluster loop drains.
class NodeManager {
 public:
  NodeManager(int id, Policy policy, const EngineConfig& ecfg, const GpuProfile& gpu,
              const LinkProfile& links, KvStore::Options kv_opts);

  int id() const { return id_; }
  KvStore& store() { return store_; }
  const KvStore& store() const { return store_; }
  const Engine& engine() const { return engine_; }
  int engine_load() const { return engine_.active_count() + engine_.queued_count(); }

  struct Submitted {
    std::int64_t prefill_tokens = 0;
    std::int64_t redundant_tokens = 0;
    bool recomputed = false;  // history was lost and had to be prefixed back in
  };

  // Enqueues one turn. With a local cache the prefill covers the new prompt
  // only; without one (recompute policy, or the cache was dropped) the whole
  // history is prefixed back in as redundant prefill work.
  Submitted submit(std::uint32_t session, std::uint32_t turn, std::int64_t prompt_tokens,
                   std::int64_t history_tokens, std::int64_t target_tokens, bool high_priority,
                   Ns now, NodeEffects& eff);

  // Advisory arrived for a session whose cache lives here: stage it toward
  // DEVICE ahead of the turn. Deduped per session until its next inference.
  void advisory_promote(std::uint32_t session, bool high_priority, Ns now, NodeEffects& eff);

  // Post-completion cache handling for this node's policy.
  void finish_cleanup(std::uint32_t session, Ns now, NodeEffects& eff);

  void on_transfer_done(std::uint64_t transfer_id, Ns now, NodeEffects& eff);
  void on_wake(Ns now, NodeEffects& eff);

  // Migration endpoints (cluster-driven; source keeps serving reads until the
  // receiver has everything, then the cluster calls release_source).
  void freeze_source(std::uint32_t session) { store_.mark_migrating_out(session); }
  void begin_import(std::uint32_t session, std::int64_t tokens, Ns now, NodeEffects& eff);
  void release_source(std::uint32_t session, Ns now) { store_.release_session(session, now); }

 private:
  void run_engine(Ns now, NodeEffects& eff);

  int id_;
  Policy policy_;
  KvStore store_;
  Engine engine_;
  std::set<std::uint32_t> advisory_seen_;
};

}  // namespace symsim
