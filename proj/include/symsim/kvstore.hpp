#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "symsim/costmodel.hpp"
#include "symsim/time.hpp"
#include "symsim/workload.hpp"

namespace symsim {

enum class Tier : unsigned { Device = 0, Host = 1, Disk = 2 };

const char* tier_name(Tier t);

enum class TransferReason { Prefetch, Demand, Purge, Persist, Migrate };

const char* reason_name(TransferReason r);

struct BlockKey {
  std::uint32_t session = 0;
  std::uint16_t layer = 0;
  std::uint32_t block_index = 0;
};

// Candidate view used by the eviction order. `session_bytes` is the owning
// session's total cache footprint across all layers (full-block accounting).
struct BlockMeta {
  BlockKey key;
  std::string session_id;
  std::int64_t session_bytes = 0;
  bool pinned = false;
};

// Deterministic eviction priority: later layers first (they are needed last
// by a layerwise reload), then smaller sessions (cheapest to restage), then
// higher block indices, then lexicographically smaller session_id. Throws if
// any candidate is pinned.
std::vector<BlockMeta> evict_order(std::vector<BlockMeta> candidates);

// One row of the transfer ledger. `time` is the completion time; purges of
// already-persisted blocks complete instantly.
struct TransferRecord {
  Ns time = 0;
  int node = 0;
  std::uint32_t session = 0;
  std::uint16_t layer_lo = 0;
  std::uint16_t layer_hi = 0;  // inclusive
  Tier from = Tier::Device;
  Tier to = Tier::Device;
  std::int64_t bytes = 0;
  TransferReason reason = TransferReason::Demand;
};

// A shared FIFO link. Completion times are fixed at enqueue, which is what
// makes layerwise load plans computable at schedule time.
struct Channel {
  Ns busy_until = 0;
  Ns enqueue(Ns ready, Ns duration) {
    const Ns start = std::max(ready, busy_until);
    busy_until = start + duration;
    return busy_until;
  }
};

struct ScheduledTransfer {
  std::uint64_t id = 0;  // node-local
  Ns complete_at = 0;
};

// Layerwise load plan toward DEVICE. layer_ready[i] is the earliest time
// layer i is usable on the device (`at_time` for already-resident layers).
struct LoadPlan {
  std::vector<Ns> layer_ready;
  Ns decode_start = 0;  // layer_ready[0]
  Ns finish = 0;        // pipelined single-step finish per the gate recurrence
  Ns total_stall = 0;   // finish - (at_time + num_layers * compute_per_layer)
  bool any_load = false;
};

struct GateResult {
  Ns first_step_end = 0;  // when the first decode step can complete
  Ns gate_start = 0;      // first_step_end - step_ns
  Ns stall = 0;           // max(0, first_step_end - (compute_ready + step_ns))
};

// Max-plus pipeline recurrence for one decode step over layers whose inputs
// become available at layer_ready[i]:
//   e(i) = max(e(i-1), layer_ready[i]) + c_i,  e(-1) = compute_ready,
// with integer compute increments c_i that sum to exactly step_ns, so a fully
// resident cache reproduces compute_ready + step_ns with no rounding drift.
GateResult pipeline_gate(const std::vector<Ns>& layer_ready, Ns compute_ready, Ns step_ns);

struct PromoteResult {
  int device_layers = 0;   // prefix of layers now headed to DEVICE
  int staged_layers = 0;   // additional layers staged DISK -> HOST
  bool scheduled = false;
};

// One node's tiered cache: DEVICE (HBM), HOST (DRAM), DISK (SSD), plus the
// node's link channels. The store plans and accounts transfers; completion
// events are scheduled by the caller and applied via apply_transfer.
class KvStore {
 public:
  struct Options {
    int node_id = 0;
    int block_tokens = 16;
    std::int64_t device_capacity = 0;  // 0: use gpu.hbm_capacity
    std::int64_t host_capacity = 256'000'000'000;
    std::int64_t disk_capacity = -1;  // -1: unbounded
    bool write_behind = true;  // persist new blocks HOST+DISK as they fill
  };

  KvStore(const GpuProfile& gpu, const LinkProfile& links, const Options& opts);

  void register_session(std::uint32_t session, const std::string& id, PriorityClass priority);
  void finalize_sessions();  // freezes the lexicographic eviction ranks

  // ---- capacity ----
  std::int64_t device_capacity() const { return device_cap_; }
  std::int64_t device_used() const { return device_used_; }
  std::int64_t device_free() const { return device_cap_ - device_used_; }
  std::int64_t host_used() const { return host_used_; }
  std::int64_t disk_used() const { return disk_used_; }
  std::int64_t layer_block_bytes() const { return layer_block_bytes_; }
  std::string device_usage_debug() const;  // TEMP diagnostic

  // Bytes of new DEVICE blocks an append of `new_tokens` would create.
  std::int64_t bytes_for_new_blocks(std::uint32_t session, std::int64_t new_tokens) const;
  // Bytes a full demand load of the session's non-DEVICE layers needs.
  std::int64_t bytes_for_load(std::uint32_t session) const;
  // Bytes a full promotion to DEVICE needs (same as bytes_for_load).
  std::int64_t bytes_for_promote(std::uint32_t session) const;

  void reserve_device(std::int64_t bytes);    // throws if it would overflow
  void unreserve_device(std::int64_t bytes);

  // ---- cache state ----
  std::int64_t cached_tokens(std::uint32_t session) const;
  std::int64_t session_bytes(std::uint32_t session) const;
  bool fully_device_resident(std::uint32_t session) const;
  bool has_any_copy(std::uint32_t session) const;
  int pending_persists(std::uint32_t session) const;
  bool migrating_out(std::uint32_t session) const;
  void set_active(std::uint32_t session, bool active, Ns now);
  bool is_active(std::uint32_t session) const;

  // ---- engine-side operations ----

  // Extends the session cache by `new_tokens`; newly filled blocks are
  // created DEVICE-resident (bytes must have been reserved or free) and, with
  // write_behind, scheduled for HOST+DISK persistence. Returns created keys.
  std::vector<BlockKey> append_blocks(std::uint32_t session, std::int64_t new_tokens, Ns now,
                                      std::vector<ScheduledTransfer>& scheduled);

  // Frees DEVICE bytes by evicting unpinned blocks in eviction order. Blocks
  // with a HOST or DISK copy are dropped immediately at zero cost;
  // unpersisted blocks are flushed first (write scheduled, free deferred to
  // its completion). Returns the bytes freed immediately; callers treat the
  // difference from bytes_needed as the shortfall. When spare_high_priority
  // is set, high-priority sessions' blocks are not considered.
  std::int64_t purge_from_device(std::int64_t bytes_needed, Ns now, bool spare_high_priority,
                                 std::vector<ScheduledTransfer>& scheduled);

  // Schedules layerwise loads of every non-DEVICE layer toward DEVICE and
  // returns the per-layer availability plan (layers 0..L-1 sequential per
  // link). Sources are chosen per layer: in-flight arrivals are awaited,
  // HOST is read over PCIe, DISK is read through HOST. compute_per_layer
  // feeds the plan's finish/stall estimate (the engine re-derives its gate
  // from layer_ready when the prefill actually ends). Returns nullopt if
  // DEVICE reservations do not fit; throws if a layer has no copy anywhere
  // on this node (callers must have fetched remote caches first).
  std::optional<LoadPlan> plan_layerwise_load(std::uint32_t session, Ns now,
                                              Ns compute_per_layer, TransferReason reason,
                                              std::vector<ScheduledTransfer>& scheduled);

  // Moves the longest prefix of layers that fits into DEVICE (prefetch), and
  // stages any remaining DISK-only layers to HOST.
  PromoteResult promote(std::uint32_t session, Ns now, std::vector<ScheduledTransfer>& scheduled);

  // Swap-style offload: schedules DEVICE -> HOST copies of all device layers;
  // device residency is released as each layer lands. No-op with write_behind
  // (copies already exist).
  void offload_session(std::uint32_t session, Ns now, std::vector<ScheduledTransfer>& scheduled);

  // Drops every copy and reservation the node holds for the session.
  void release_session(std::uint32_t session, Ns now);

  // ---- migration (driven by the cluster) ----

  // Source side: freezes the session against purges while its data is sent.
  void mark_migrating_out(std::uint32_t session);
  // Receiver side: registers an inbound layerwise copy. Enqueues one network
  // transfer per layer on this node's inbound channel and reserves HOST
  // bytes. Layers land HOST-resident (plus DISK with write_behind).
  std::vector<ScheduledTransfer> import_migration(std::uint32_t session, std::int64_t tokens,
                                                  Ns now);

  // ---- completion dispatch ----
  struct ApplyResult {
    std::uint32_t session = 0;
    std::uint16_t layer = 0;
    bool device_layer_ready = false;  // a load toward DEVICE landed
    bool persists_drained = false;    // last pending persist for the session
    bool migration_arrived = false;   // an inbound migration layer landed
    bool migration_complete = false;  // all inbound layers landed
    bool voided = false;
  };
  ApplyResult apply_transfer(std::uint64_t id, Ns now);

  // In-flight transfers whose effects are no longer wanted (preemption,
  // reactivation during offload). Budget reservations are released when the
  // voided transfer completes.
  void void_session_loads(std::uint32_t session);
  void void_session_offload(std::uint32_t session);

  const std::vector<TransferRecord>& ledger() const { return ledger_; }
  std::vector<TransferRecord> take_ledger() { return std::move(ledger_); }

  // Ordered (session, layer, block) candidates currently evictable, exposed
  // for diagnostics and tests.
  std::vector<BlockMeta> evictable_blocks(bool spare_high_priority) const;

  void check_budgets() const;  // throws on violated capacity invariants

 private:
  struct Block {
    std::uint8_t residency = 0;  // bit per Tier
    bool disk_pending = false;
    bool host_pending = false;
    bool purge_on_persist = false;
    bool load_pending = false;
  };
  struct SessionState {
    std::string id;
    PriorityClass priority = PriorityClass::Normal;
    int lex_rank = 0;
    std::int64_t tokens = 0;
    bool active = false;
    bool migrating_out = false;
    Ns lru_stamp = 0;
    int pending_persists = 0;
    int inbound_pending = 0;                 // migration layers still in flight
    std::vector<std::vector<Block>> layers;  // [layer][block]
    std::vector<Ns> load_eta;                // per layer; 0 = no load in flight
    std::vector<Ns> inbound_eta;             // per layer; 0 = no inbound migration
  };
  struct Transfer {
    std::uint32_t session = 0;
    std::uint16_t layer = 0;
    std::uint32_t block_lo = 0, block_hi = 0;  // inclusive range
    enum class Kind { LoadH2D, LoadDiskHost, HostCopy, DiskWrite, SwapOut, NetArrive } kind;
    std::int64_t bytes = 0;
    TransferReason reason = TransferReason::Demand;
    bool voided = false;
    Ns complete_at = 0;
  };

  SessionState& state(std::uint32_t session);
  const SessionState& state(std::uint32_t session) const;
  int blocks_per_layer(const SessionState& s) const;
  std::int64_t session_footprint(const SessionState& s) const;
  void touch(SessionState& s, Ns now) { s.lru_stamp = now; }
  bool evict_host_lru(std::int64_t bytes_needed, Ns now);
  std::uint64_t add_transfer(Transfer t, std::vector<ScheduledTransfer>& scheduled);
  void record(Ns time, std::uint32_t session, int layer_lo, int layer_hi, Tier from, Tier to,
              std::int64_t bytes, TransferReason reason);

  GpuProfile gpu_;
  LinkProfile links_;
  Options opts_;
  std::int64_t device_cap_ = 0;
  std::int64_t layer_block_bytes_ = 0;
  std::int64_t device_used_ = 0;
  std::int64_t host_used_ = 0;
  std::int64_t disk_used_ = 0;
  Channel h2d_, d2h_, disk_read_, disk_write_, net_in_;
  // Ordered so every whole-store sweep (purge candidates, LRU eviction) walks
  // sessions in a deterministic order.
  std::map<std::uint32_t, SessionState> sessions_;
  std::unordered_map<std::uint64_t, Transfer> inflight_;
  std::uint64_t next_transfer_id_ = 1;
  std::vector<TransferRecord> ledger_;
  bool finalized_ = false;
};

}  // namespace symsim
