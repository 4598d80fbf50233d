#include "symsim/kvstore.hpp"

#include <algorithm>
#include <stdexcept>

namespace symsim {

namespace {
constexpr std::uint8_t kDev = 1u << 0;
constexpr std::uint8_t kHost = 1u << 1;
constexpr std::uint8_t kDisk = 1u << 2;
}  // namespace

const char* tier_name(Tier t) {
  switch (t) {
    case Tier::Device: return "device";
    case Tier::Host: return "host";
    case Tier::Disk: return "disk";
  }
  return "?";
}

const char* reason_name(TransferReason r) {
  switch (r) {
    case TransferReason::Prefetch: return "prefetch";
    case TransferReason::Demand: return "demand";
    case TransferReason::Purge: return "purge";
    case TransferReason::Persist: return "persist";
    case TransferReason::Migrate: return "migrate";
  }
  return "?";
}

std::vector<BlockMeta> evict_order(std::vector<BlockMeta> candidates) {
  for (const auto& c : candidates)
    if (c.pinned) throw std::runtime_error("evict_order: pinned block in candidate set");
  std::sort(candidates.begin(), candidates.end(), [](const BlockMeta& a, const BlockMeta& b) {
    if (a.key.layer != b.key.layer) return a.key.layer > b.key.layer;
    if (a.session_bytes != b.session_bytes) return a.session_bytes < b.session_bytes;
    if (a.key.block_index != b.key.block_index) return a.key.block_index > b.key.block_index;
    return a.session_id < b.session_id;
  });
  return candidates;
}

GateResult pipeline_gate(const std::vector<Ns>& layer_ready, Ns compute_ready, Ns step_ns) {
  if (layer_ready.empty()) throw std::runtime_error("pipeline_gate: no layers");
  const auto layers = static_cast<std::int64_t>(layer_ready.size());
  Ns e = compute_ready;
  for (std::int64_t i = 0; i < layers; ++i) {
    const Ns c_i = (i + 1) * step_ns / layers - i * step_ns / layers;
    e = std::max(e, layer_ready[static_cast<std::size_t>(i)]) + c_i;
  }
  GateResult g;
  g.first_step_end = e;
  g.gate_start = e - step_ns;
  g.stall = std::max<Ns>(0, e - (compute_ready + step_ns));
  return g;
}

KvStore::KvStore(const GpuProfile& gpu, const LinkProfile& links, const Options& opts)
    : gpu_(gpu), links_(links), opts_(opts) {
  gpu_.validate();
  links_.validate();
  if (opts_.block_tokens <= 0) throw std::runtime_error("kvstore: block_tokens must be positive");
  device_cap_ = opts_.device_capacity > 0 ? opts_.device_capacity : gpu_.hbm_capacity;
  layer_block_bytes_ = kv_bytes_per_layer(opts_.block_tokens, gpu_);
}

void KvStore::register_session(std::uint32_t session, const std::string& id,
                               PriorityClass priority) {
  if (finalized_) throw std::logic_error("kvstore: register after finalize");
  auto& s = sessions_[session];
  s.id = id;
  s.priority = priority;
  s.layers.assign(static_cast<std::size_t>(gpu_.num_layers), {});
  s.load_eta.assign(static_cast<std::size_t>(gpu_.num_layers), 0);
  s.inbound_eta.assign(static_cast<std::size_t>(gpu_.num_layers), 0);
}

void KvStore::finalize_sessions() {
  std::vector<std::pair<std::string, std::uint32_t>> ids;
  ids.reserve(sessions_.size());
  for (const auto& [idx, s] : sessions_) ids.emplace_back(s.id, idx);
  std::sort(ids.begin(), ids.end());
  for (std::size_t r = 0; r < ids.size(); ++r) sessions_[ids[r].second].lex_rank = static_cast<int>(r);
  finalized_ = true;
}

KvStore::SessionState& KvStore::state(std::uint32_t session) {
  auto it = sessions_.find(session);
  if (it == sessions_.end()) throw std::logic_error("kvstore: unknown session");
  return it->second;
}

const KvStore::SessionState& KvStore::state(std::uint32_t session) const {
  auto it = sessions_.find(session);
  if (it == sessions_.end()) throw std::logic_error("kvstore: unknown session");
  return it->second;
}

int KvStore::blocks_per_layer(const SessionState& s) const {
  return static_cast<int>((s.tokens + opts_.block_tokens - 1) / opts_.block_tokens);
}

std::int64_t KvStore::session_footprint(const SessionState& s) const {
  return static_cast<std::int64_t>(blocks_per_layer(s)) * gpu_.num_layers * layer_block_bytes_;
}

std::int64_t KvStore::cached_tokens(std::uint32_t session) const { return state(session).tokens; }

std::int64_t KvStore::session_bytes(std::uint32_t session) const {
  return session_footprint(state(session));
}

bool KvStore::fully_device_resident(std::uint32_t session) const {
  const auto& s = state(session);
  if (s.tokens == 0) return false;
  for (const auto& layer : s.layers)
    for (const auto& b : layer)
      if (!(b.residency & kDev)) return false;
  return true;
}

bool KvStore::has_any_copy(std::uint32_t session) const { return state(session).tokens > 0; }

int KvStore::pending_persists(std::uint32_t session) const {
  return state(session).pending_persists;
}

bool KvStore::migrating_out(std::uint32_t session) const { return state(session).migrating_out; }

bool KvStore::is_active(std::uint32_t session) const { return state(session).active; }

void KvStore::set_active(std::uint32_t session, bool active, Ns now) {
  auto& s = state(session);
  s.active = active;
  touch(s, now);
  if (active) {
    // The cache is wanted again: cancel any pending device drop and any
    // in-flight offload's demotion.
    for (auto& layer : s.layers)
      for (auto& b : layer) b.purge_on_persist = false;
    void_session_offload(session);
  }
}

std::int64_t KvStore::bytes_for_new_blocks(std::uint32_t session, std::int64_t new_tokens) const {
  const auto& s = state(session);
  const std::int64_t before = (s.tokens + opts_.block_tokens - 1) / opts_.block_tokens;
  const std::int64_t after = (s.tokens + new_tokens + opts_.block_tokens - 1) / opts_.block_tokens;
  return (after - before) * gpu_.num_layers * layer_block_bytes_;
}

std::int64_t KvStore::bytes_for_load(std::uint32_t session) const {
  const auto& s = state(session);
  std::int64_t bytes = 0;
  for (std::size_t l = 0; l < s.layers.size(); ++l)
    for (const auto& b : s.layers[l])
      if (!(b.residency & kDev) && !b.load_pending) bytes += layer_block_bytes_;
  return bytes;
}

std::int64_t KvStore::bytes_for_promote(std::uint32_t session) const {
  return bytes_for_load(session);
}

void KvStore::reserve_device(std::int64_t bytes) {
  if (bytes < 0) throw std::logic_error("kvstore: negative reservation");
  if (device_used_ + bytes > device_cap_)
    throw std::logic_error("kvstore: device reservation overflows capacity");
  device_used_ += bytes;
}

void KvStore::unreserve_device(std::int64_t bytes) {
  if (bytes < 0 || bytes > device_used_) throw std::logic_error("kvstore: bad unreserve");
  device_used_ -= bytes;
}

std::uint64_t KvStore::add_transfer(Transfer t, std::vector<ScheduledTransfer>& scheduled) {
  const std::uint64_t id = next_transfer_id_++;
  scheduled.push_back({id, t.complete_at});
  inflight_.emplace(id, t);
  return id;
}

void KvStore::record(Ns time, std::uint32_t session, int layer_lo, int layer_hi, Tier from,
                     Tier to, std::int64_t bytes, TransferReason reason) {
  TransferRecord r;
  r.time = time;
  r.node = opts_.node_id;
  r.session = session;
  r.layer_lo = static_cast<std::uint16_t>(layer_lo);
  r.layer_hi = static_cast<std::uint16_t>(layer_hi);
  r.from = from;
  r.to = to;
  r.bytes = bytes;
  r.reason = reason;
  ledger_.push_back(r);
}

std::vector<BlockKey> KvStore::append_blocks(std::uint32_t session, std::int64_t new_tokens,
                                             Ns now, std::vector<ScheduledTransfer>& scheduled) {
  if (new_tokens <= 0) throw std::logic_error("append_blocks: token count must be positive");
  auto& s = state(session);
  if (s.migrating_out) throw std::logic_error("append_blocks: session is migrating out");
  touch(s, now);
  const int before = blocks_per_layer(s);
  s.tokens += new_tokens;
  const int after = blocks_per_layer(s);
  std::vector<BlockKey> created;
  if (after == before) return created;

  const int new_blocks = after - before;
  const std::int64_t dev_bytes =
      static_cast<std::int64_t>(new_blocks) * gpu_.num_layers * layer_block_bytes_;
  device_used_ += dev_bytes;
  if (device_used_ > device_cap_)
    throw std::logic_error("append_blocks: device capacity exceeded (missing reservation)");

  for (int l = 0; l < gpu_.num_layers; ++l) {
    auto& layer = s.layers[static_cast<std::size_t>(l)];
    layer.resize(static_cast<std::size_t>(after));
    for (int b = before; b < after; ++b) {
      layer[static_cast<std::size_t>(b)].residency = kDev;
      created.push_back({session, static_cast<std::uint16_t>(l), static_cast<std::uint32_t>(b)});
    }
  }

  if (opts_.write_behind) {
    // Write-behind: one device->host copy and one chained host->disk write
    // per layer, covering the block range this append created. Completion
    // times are fixed now; the disk write queues behind its host copy.
    const std::int64_t range_bytes = static_cast<std::int64_t>(new_blocks) * layer_block_bytes_;
    for (int l = 0; l < gpu_.num_layers; ++l) {
      auto& layer = s.layers[static_cast<std::size_t>(l)];
      bool host_ok = host_used_ + range_bytes <= opts_.host_capacity;
      if (!host_ok) host_ok = evict_host_lru(range_bytes - (opts_.host_capacity - host_used_), now);
      Ns disk_ready = now;
      if (host_ok) {
        Transfer copy;
        copy.session = session;
        copy.layer = static_cast<std::uint16_t>(l);
        copy.block_lo = static_cast<std::uint32_t>(before);
        copy.block_hi = static_cast<std::uint32_t>(after - 1);
        copy.kind = Transfer::Kind::HostCopy;
        copy.bytes = range_bytes;
        copy.reason = TransferReason::Persist;
        copy.complete_at = d2h_.enqueue(now, transfer_time(range_bytes, Link::PcieD2H, links_));
        host_used_ += range_bytes;
        for (int b = before; b < after; ++b) layer[static_cast<std::size_t>(b)].host_pending = true;
        disk_ready = copy.complete_at;
        add_transfer(copy, scheduled);
      }
      Transfer write;
      write.session = session;
      write.layer = static_cast<std::uint16_t>(l);
      write.block_lo = static_cast<std::uint32_t>(before);
      write.block_hi = static_cast<std::uint32_t>(after - 1);
      write.kind = Transfer::Kind::DiskWrite;
      write.bytes = range_bytes;
      write.reason = TransferReason::Persist;
      write.complete_at =
          disk_write_.enqueue(disk_ready, transfer_time(range_bytes, Link::DiskWrite, links_));
      for (int b = before; b < after; ++b) layer[static_cast<std::size_t>(b)].disk_pending = true;
      s.pending_persists += 1;
      add_transfer(write, scheduled);
    }
  }
  return created;
}

bool KvStore::evict_host_lru(std::int64_t bytes_needed, Ns now) {
  if (bytes_needed <= 0) return true;
  std::vector<std::pair<Ns, std::uint32_t>> order;
  for (const auto& [idx, s] : sessions_) {
    if (s.active || s.migrating_out || s.inbound_pending > 0) continue;
    bool busy = false, any = false;
    for (const auto& layer : s.layers)
      for (const auto& b : layer) {
        if (b.host_pending || b.load_pending) busy = true;
        if ((b.residency & kHost) && (b.residency & kDisk)) any = true;
      }
    if (!busy && any) order.emplace_back(s.lru_stamp, idx);
  }
  std::sort(order.begin(), order.end());
  std::int64_t freed = 0;
  for (const auto& [stamp, idx] : order) {
    auto& s = sessions_[idx];
    std::int64_t sess_freed = 0;
    for (std::size_t l = 0; l < s.layers.size(); ++l) {
      for (auto& b : s.layers[l]) {
        if ((b.residency & kHost) && (b.residency & kDisk)) {
          b.residency = static_cast<std::uint8_t>(b.residency & ~kHost);
          sess_freed += layer_block_bytes_;
        }
      }
    }
    if (sess_freed > 0) {
      host_used_ -= sess_freed;
      freed += sess_freed;
      record(now, idx, 0, gpu_.num_layers - 1, Tier::Host, Tier::Disk, sess_freed,
             TransferReason::Purge);
    }
    if (freed >= bytes_needed) return true;
  }
  return freed >= bytes_needed;
}

std::vector<BlockMeta> KvStore::evictable_blocks(bool spare_high_priority) const {
  std::vector<BlockMeta> cands;
  for (const auto& [idx, s] : sessions_) {
    if (s.active || s.migrating_out) continue;
    if (spare_high_priority && s.priority == PriorityClass::High) continue;
    const std::int64_t footprint = session_footprint(s);
    for (std::size_t l = 0; l < s.layers.size(); ++l)
      for (std::size_t b = 0; b < s.layers[l].size(); ++b) {
        const Block& blk = s.layers[l][b];
        if ((blk.residency & kDev) && !blk.purge_on_persist) {
          BlockMeta m;
          m.key = {idx, static_cast<std::uint16_t>(l), static_cast<std::uint32_t>(b)};
          m.session_id = s.id;
          m.session_bytes = footprint;
          m.pinned = false;
          cands.push_back(std::move(m));
        }
      }
  }
  return evict_order(std::move(cands));
}

std::int64_t KvStore::purge_from_device(std::int64_t bytes_needed, Ns now,
                                        bool spare_high_priority,
                                        std::vector<ScheduledTransfer>& scheduled) {
  if (bytes_needed <= 0) return 0;

  // Candidates are walked in exact eviction order without materializing every
  // block: (session, layer) groups sort on the leading keys, and groups tied
  // on (layer, session_bytes) interleave their blocks by (block_index desc,
  // session_id asc).
  struct Group {
    std::uint16_t layer;
    std::int64_t sess_bytes;
    int lex_rank;
    std::uint32_t session;
  };
  std::vector<Group> groups;
  for (const auto& [idx, s] : sessions_) {
    if (s.active || s.migrating_out) continue;
    if (spare_high_priority && s.priority == PriorityClass::High) continue;
    const std::int64_t footprint = session_footprint(s);
    for (std::size_t l = 0; l < s.layers.size(); ++l) {
      bool any = false;
      for (const auto& b : s.layers[l])
        if ((b.residency & kDev) && !b.purge_on_persist) any = true;
      if (any)
        groups.push_back({static_cast<std::uint16_t>(l), footprint, s.lex_rank, idx});
    }
  }
  std::sort(groups.begin(), groups.end(), [](const Group& a, const Group& b) {
    if (a.layer != b.layer) return a.layer > b.layer;
    if (a.sess_bytes != b.sess_bytes) return a.sess_bytes < b.sess_bytes;
    return a.lex_rank < b.lex_rank;
  });

  std::int64_t freed = 0;
  // Per (session, layer) tallies for ledger rows, emitted as blocks drop.
  std::size_t gi = 0;
  while (gi < groups.size() && freed < bytes_needed) {
    // Tie run: same layer and session size interleave by block index.
    std::size_t ge = gi + 1;
    while (ge < groups.size() && groups[ge].layer == groups[gi].layer &&
           groups[ge].sess_bytes == groups[gi].sess_bytes)
      ++ge;
    int max_blocks = 0;
    for (std::size_t g = gi; g < ge; ++g) {
      const auto& s = sessions_[groups[g].session];
      max_blocks = std::max(max_blocks, static_cast<int>(s.layers[groups[g].layer].size()));
    }
    std::vector<std::int64_t> dropped_free(ge - gi, 0);
    for (int b = max_blocks - 1; b >= 0 && freed < bytes_needed; --b) {
      for (std::size_t g = gi; g < ge && freed < bytes_needed; ++g) {
        auto& s = sessions_[groups[g].session];
        auto& layer = s.layers[groups[g].layer];
        if (b >= static_cast<int>(layer.size())) continue;
        Block& blk = layer[static_cast<std::size_t>(b)];
        if (!(blk.residency & kDev) || blk.purge_on_persist) continue;
        if (blk.residency & (kHost | kDisk)) {
          // A backing copy exists: dropping device residency is free.
          blk.residency = static_cast<std::uint8_t>(blk.residency & ~kDev);
          device_used_ -= layer_block_bytes_;
          freed += layer_block_bytes_;
          dropped_free[g - gi] += layer_block_bytes_;
        } else if (opts_.write_behind) {
          // Persist is already in flight (scheduled at creation); defer the
          // drop to its completion. Does not count toward freed.
          blk.purge_on_persist = true;
        } else {
          // Swap-style flush: schedule the copy now, drop on completion.
          if (host_used_ + layer_block_bytes_ > opts_.host_capacity &&
              !evict_host_lru(layer_block_bytes_ - (opts_.host_capacity - host_used_), now))
            continue;  // nowhere to flush to; skip this block
          Transfer t;
          t.session = groups[g].session;
          t.layer = groups[g].layer;
          t.block_lo = t.block_hi = static_cast<std::uint32_t>(b);
          t.kind = Transfer::Kind::SwapOut;
          t.bytes = layer_block_bytes_;
          t.reason = TransferReason::Purge;
          t.complete_at = d2h_.enqueue(now, transfer_time(t.bytes, Link::PcieD2H, links_));
          host_used_ += t.bytes;
          blk.host_pending = true;
          blk.purge_on_persist = true;
          add_transfer(t, scheduled);
        }
      }
    }
    for (std::size_t g = gi; g < ge; ++g)
      if (dropped_free[g - gi] > 0) {
        const auto& s = sessions_[groups[g].session];
        bool host_backed = false;
        for (const auto& b : s.layers[groups[g].layer])
          if (b.residency & kHost) host_backed = true;
        record(now, groups[g].session, groups[g].layer, groups[g].layer, Tier::Device,
               host_backed ? Tier::Host : Tier::Disk, dropped_free[g - gi],
               TransferReason::Purge);
      }
    gi = ge;
  }
  return freed;
}

std::optional<LoadPlan> KvStore::plan_layerwise_load(std::uint32_t session, Ns now,
                                                     Ns compute_per_layer, TransferReason reason,
                                                     std::vector<ScheduledTransfer>& scheduled) {
  auto& s = state(session);
  touch(s, now);
  const int layers = gpu_.num_layers;
  LoadPlan plan;
  plan.layer_ready.assign(static_cast<std::size_t>(layers), now);
  if (s.tokens == 0) {
    plan.decode_start = now;
    plan.finish = now + static_cast<Ns>(layers) * compute_per_layer;
    return plan;
  }

  // Wanting the cache again cancels any pending device drops.
  for (auto& layer : s.layers)
    for (auto& b : layer) b.purge_on_persist = false;

  // Reservation check first so a failed plan has no side effects.
  std::int64_t need = 0;
  std::vector<std::string> missing;
  for (int l = 0; l < layers; ++l) {
    const auto& layer = s.layers[static_cast<std::size_t>(l)];
    for (std::size_t b = 0; b < layer.size(); ++b) {
      const Block& blk = layer[b];
      if ((blk.residency & kDev) || blk.load_pending) continue;
      need += layer_block_bytes_;
      if (!(blk.residency & (kHost | kDisk)) && s.inbound_eta[static_cast<std::size_t>(l)] == 0)
        missing.push_back(std::to_string(l) + ":" + std::to_string(b));
    }
  }
  if (!missing.empty()) {
    std::string what = "plan_layerwise_load: session " + s.id + " missing layer:block";
    for (const auto& m : missing) what += " " + m;
    throw std::runtime_error(what);
  }
  if (need > device_cap_ - device_used_) return std::nullopt;
  device_used_ += need;

  for (int l = 0; l < layers; ++l) {
    auto& layer = s.layers[static_cast<std::size_t>(l)];
    Ns ready = now;
    if (s.load_eta[static_cast<std::size_t>(l)] > 0)
      ready = std::max(ready, s.load_eta[static_cast<std::size_t>(l)]);

    // Partition the layer's missing blocks by best available source.
    std::int64_t host_bytes = 0, disk_bytes = 0, inbound_bytes = 0;
    std::uint32_t lo = 0, hi = 0;
    bool any = false;
    for (std::size_t b = 0; b < layer.size(); ++b) {
      Block& blk = layer[b];
      if ((blk.residency & kDev) || blk.load_pending) continue;
      if (!any) lo = static_cast<std::uint32_t>(b);
      hi = static_cast<std::uint32_t>(b);
      any = true;
      blk.load_pending = true;
      if (blk.residency & kHost) host_bytes += layer_block_bytes_;
      else if (blk.residency & kDisk) disk_bytes += layer_block_bytes_;
      else inbound_bytes += layer_block_bytes_;  // arriving over the network
    }
    if (!any) {
      plan.layer_ready[static_cast<std::size_t>(l)] = ready;
      continue;
    }
    plan.any_load = true;

    // DISK-sourced blocks stage through HOST first; inbound blocks queue the
    // PCIe hop behind their network arrival.
    Ns h2d_ready = now;
    if (disk_bytes > 0) {
      if (host_used_ + disk_bytes > opts_.host_capacity &&
          !evict_host_lru(disk_bytes - (opts_.host_capacity - host_used_), now))
        throw std::runtime_error("kvstore: host tier too small to stage a layer from disk");
      Transfer stage;
      stage.session = session;
      stage.layer = static_cast<std::uint16_t>(l);
      stage.block_lo = lo;
      stage.block_hi = hi;
      stage.kind = Transfer::Kind::LoadDiskHost;
      stage.bytes = disk_bytes;
      stage.reason = reason;
      stage.complete_at = disk_read_.enqueue(now, transfer_time(disk_bytes, Link::DiskRead, links_));
      host_used_ += disk_bytes;
      add_transfer(stage, scheduled);
      h2d_ready = std::max(h2d_ready, stage.complete_at);
    }
    if (inbound_bytes > 0)
      h2d_ready = std::max(h2d_ready, s.inbound_eta[static_cast<std::size_t>(l)]);

    Transfer up;
    up.session = session;
    up.layer = static_cast<std::uint16_t>(l);
    up.block_lo = lo;
    up.block_hi = hi;
    up.kind = Transfer::Kind::LoadH2D;
    up.bytes = host_bytes + disk_bytes + inbound_bytes;
    up.reason = reason;
    up.complete_at = h2d_.enqueue(h2d_ready, transfer_time(up.bytes, Link::PcieH2D, links_));
    add_transfer(up, scheduled);
    s.load_eta[static_cast<std::size_t>(l)] = up.complete_at;
    plan.layer_ready[static_cast<std::size_t>(l)] = std::max(ready, up.complete_at);
  }

  plan.decode_start = plan.layer_ready[0];
  Ns e = now;
  for (int l = 0; l < layers; ++l)
    e = std::max(e, plan.layer_ready[static_cast<std::size_t>(l)]) + compute_per_layer;
  plan.finish = e;
  plan.total_stall = std::max<Ns>(0, e - (now + static_cast<Ns>(layers) * compute_per_layer));
  return plan;
}

PromoteResult KvStore::promote(std::uint32_t session, Ns now,
                               std::vector<ScheduledTransfer>& scheduled) {
  auto& s = state(session);
  touch(s, now);
  PromoteResult res;
  if (s.tokens == 0) return res;
  for (auto& layer : s.layers)
    for (auto& b : layer) b.purge_on_persist = false;

  const int layers = gpu_.num_layers;
  bool device_full = false;
  for (int l = 0; l < layers; ++l) {
    auto& layer = s.layers[static_cast<std::size_t>(l)];
    std::int64_t host_bytes = 0, disk_bytes = 0;
    std::uint32_t lo = 0, hi = 0;
    bool any = false;
    for (std::size_t b = 0; b < layer.size(); ++b) {
      const Block& blk = layer[b];
      if ((blk.residency & kDev) || blk.load_pending) continue;
      if (!(blk.residency & (kHost | kDisk))) continue;  // inbound handled by loads
      if (!any) lo = static_cast<std::uint32_t>(b);
      hi = static_cast<std::uint32_t>(b);
      any = true;
      if (blk.residency & kHost) host_bytes += layer_block_bytes_;
      else disk_bytes += layer_block_bytes_;
    }
    if (!any) {
      if (!device_full) ++res.device_layers;
      continue;
    }
    const std::int64_t bytes = host_bytes + disk_bytes;

    if (!device_full && device_used_ + bytes <= device_cap_) {
      // Device prefix: move the layer all the way up.
      device_used_ += bytes;
      Ns h2d_ready = now;
      if (disk_bytes > 0) {
        if (host_used_ + disk_bytes > opts_.host_capacity &&
            !evict_host_lru(disk_bytes - (opts_.host_capacity - host_used_), now))
          throw std::runtime_error("kvstore: host tier too small to stage a layer from disk");
        Transfer stage;
        stage.session = session;
        stage.layer = static_cast<std::uint16_t>(l);
        stage.block_lo = lo;
        stage.block_hi = hi;
        stage.kind = Transfer::Kind::LoadDiskHost;
        stage.bytes = disk_bytes;
        stage.reason = TransferReason::Prefetch;
        stage.complete_at =
            disk_read_.enqueue(now, transfer_time(disk_bytes, Link::DiskRead, links_));
        host_used_ += disk_bytes;
        add_transfer(stage, scheduled);
        h2d_ready = stage.complete_at;
      }
      Transfer up;
      up.session = session;
      up.layer = static_cast<std::uint16_t>(l);
      up.block_lo = lo;
      up.block_hi = hi;
      up.kind = Transfer::Kind::LoadH2D;
      up.bytes = bytes;
      up.reason = TransferReason::Prefetch;
      up.complete_at = h2d_.enqueue(h2d_ready, transfer_time(bytes, Link::PcieH2D, links_));
      for (std::size_t b = lo; b <= hi; ++b)
        if (!(layer[b].residency & kDev)) layer[b].load_pending = true;
      add_transfer(up, scheduled);
      s.load_eta[static_cast<std::size_t>(l)] = up.complete_at;
      ++res.device_layers;
      res.scheduled = true;
    } else {
      device_full = true;
      if (disk_bytes > 0) {
        // No device room: at least stage disk-only blocks into host so a
        // later demand load runs at PCIe speed.
        if (host_used_ + disk_bytes > opts_.host_capacity &&
            !evict_host_lru(disk_bytes - (opts_.host_capacity - host_used_), now))
          continue;
        Transfer stage;
        stage.session = session;
        stage.layer = static_cast<std::uint16_t>(l);
        stage.block_lo = lo;
        stage.block_hi = hi;
        stage.kind = Transfer::Kind::LoadDiskHost;
        stage.bytes = disk_bytes;
        stage.reason = TransferReason::Prefetch;
        stage.complete_at =
            disk_read_.enqueue(now, transfer_time(disk_bytes, Link::DiskRead, links_));
        host_used_ += disk_bytes;
        add_transfer(stage, scheduled);
        ++res.staged_layers;
        res.scheduled = true;
      }
    }
  }
  return res;
}

void KvStore::offload_session(std::uint32_t session, Ns now,
                              std::vector<ScheduledTransfer>& scheduled) {
  auto& s = state(session);
  touch(s, now);
  std::int64_t copy_total = 0;
  for (const auto& layer : s.layers)
    for (const auto& b : layer)
      if ((b.residency & kDev) && !(b.residency & (kHost | kDisk)))
        copy_total += layer_block_bytes_;
  if (copy_total > 0 && host_used_ + copy_total > opts_.host_capacity &&
      !evict_host_lru(copy_total - (opts_.host_capacity - host_used_), now)) {
    // The host tier cannot take this cache, so it is evicted outright and the
    // session's next turn recomputes it. from == to marks a drop.
    const std::int64_t dropped = session_footprint(s);
    release_session(session, now);
    record(now, session, 0, gpu_.num_layers - 1, Tier::Device, Tier::Device, dropped,
           TransferReason::Purge);
    return;
  }
  for (std::size_t l = 0; l < s.layers.size(); ++l) {
    auto& layer = s.layers[l];
    std::int64_t copy_bytes = 0, instant = 0;
    std::uint32_t lo = 0, hi = 0;
    bool any = false;
    for (std::size_t b = 0; b < layer.size(); ++b) {
      Block& blk = layer[b];
      if (!(blk.residency & kDev)) continue;
      if (blk.residency & (kHost | kDisk)) {
        // Backed already: demote immediately at zero cost.
        blk.residency = static_cast<std::uint8_t>(blk.residency & ~kDev);
        device_used_ -= layer_block_bytes_;
        instant += layer_block_bytes_;
      } else {
        if (!any) lo = static_cast<std::uint32_t>(b);
        hi = static_cast<std::uint32_t>(b);
        any = true;
        copy_bytes += layer_block_bytes_;
      }
    }
    if (instant > 0)
      record(now, session, static_cast<int>(l), static_cast<int>(l), Tier::Device, Tier::Host,
             instant, TransferReason::Purge);
    if (!any) continue;
    if (host_used_ + copy_bytes > opts_.host_capacity &&
        !evict_host_lru(copy_bytes - (opts_.host_capacity - host_used_), now)) {
      // Unreachable after the whole-cache precheck above; kept as a guard so a
      // partial fit never overcommits the host tier.
      continue;
    }
    Transfer t;
    t.session = session;
    t.layer = static_cast<std::uint16_t>(l);
    t.block_lo = lo;
    t.block_hi = hi;
    t.kind = Transfer::Kind::SwapOut;
    t.bytes = copy_bytes;
    t.reason = TransferReason::Persist;
    t.complete_at = d2h_.enqueue(now, transfer_time(copy_bytes, Link::PcieD2H, links_));
    host_used_ += copy_bytes;
    for (std::size_t b = lo; b <= hi; ++b)
      if ((layer[b].residency & kDev) && !(layer[b].residency & (kHost | kDisk))) {
        layer[b].host_pending = true;
        layer[b].purge_on_persist = true;
      }
    add_transfer(t, scheduled);
  }
}

void KvStore::release_session(std::uint32_t session, Ns now) {
  auto& s = state(session);
  void_session_loads(session);
  void_session_offload(session);
  for (auto& [id, t] : inflight_)
    if (t.session == session) t.voided = true;
  std::int64_t dev = 0, host = 0, disk = 0;
  for (auto& layer : s.layers) {
    for (auto& b : layer) {
      if (b.residency & kDev) dev += layer_block_bytes_;
      if (b.residency & kHost) host += layer_block_bytes_;
      if (b.residency & kDisk) disk += layer_block_bytes_;
    }
    layer.clear();
  }
  device_used_ -= dev;
  host_used_ -= host;
  disk_used_ -= disk;
  s.tokens = 0;
  s.active = false;
  s.migrating_out = false;
  s.pending_persists = 0;
  s.inbound_pending = 0;
  std::fill(s.load_eta.begin(), s.load_eta.end(), 0);
  std::fill(s.inbound_eta.begin(), s.inbound_eta.end(), 0);
  touch(s, now);
}

void KvStore::mark_migrating_out(std::uint32_t session) {
  auto& s = state(session);
  if (s.migrating_out) throw std::runtime_error("kvstore: session already migrating");
  s.migrating_out = true;
}

std::vector<ScheduledTransfer> KvStore::import_migration(std::uint32_t session,
                                                         std::int64_t tokens, Ns now) {
  auto& s = state(session);
  if (s.tokens != 0) throw std::logic_error("import_migration: session already present");
  s.tokens = tokens;
  const int blocks = blocks_per_layer(s);
  const std::int64_t layer_bytes = static_cast<std::int64_t>(blocks) * layer_block_bytes_;
  std::vector<ScheduledTransfer> scheduled;
  touch(s, now);
  for (int l = 0; l < gpu_.num_layers; ++l) {
    s.layers[static_cast<std::size_t>(l)].assign(static_cast<std::size_t>(blocks), Block{});
    if (host_used_ + layer_bytes > opts_.host_capacity &&
        !evict_host_lru(layer_bytes - (opts_.host_capacity - host_used_), now))
      throw std::runtime_error("kvstore: host tier too small to receive a migrating cache");
    Transfer t;
    t.session = session;
    t.layer = static_cast<std::uint16_t>(l);
    t.block_lo = 0;
    t.block_hi = static_cast<std::uint32_t>(blocks - 1);
    t.kind = Transfer::Kind::NetArrive;
    t.bytes = layer_bytes;
    t.reason = TransferReason::Migrate;
    t.complete_at = net_in_.enqueue(now, transfer_time(layer_bytes, Link::Network, links_));
    host_used_ += layer_bytes;
    s.inbound_eta[static_cast<std::size_t>(l)] = t.complete_at;
    add_transfer(t, scheduled);
    if (opts_.write_behind) {
      Transfer write;
      write.session = session;
      write.layer = static_cast<std::uint16_t>(l);
      write.block_lo = 0;
      write.block_hi = static_cast<std::uint32_t>(blocks - 1);
      write.kind = Transfer::Kind::DiskWrite;
      write.bytes = layer_bytes;
      write.reason = TransferReason::Persist;
      write.complete_at =
          disk_write_.enqueue(t.complete_at, transfer_time(layer_bytes, Link::DiskWrite, links_));
      s.pending_persists += 1;
      for (int b = 0; b < blocks; ++b)
        s.layers[static_cast<std::size_t>(l)][static_cast<std::size_t>(b)].disk_pending = true;
      add_transfer(write, scheduled);
    }
  }
  s.inbound_pending = gpu_.num_layers;
  return scheduled;
}

void KvStore::void_session_loads(std::uint32_t session) {
  for (auto& [id, t] : inflight_) {
    if (t.session != session) continue;
    if (t.kind == Transfer::Kind::LoadH2D || t.kind == Transfer::Kind::LoadDiskHost)
      t.voided = true;
  }
  auto& s = state(session);
  std::fill(s.load_eta.begin(), s.load_eta.end(), 0);
  for (auto& layer : s.layers)
    for (auto& b : layer) b.load_pending = false;
}

void KvStore::void_session_offload(std::uint32_t session) {
  auto& s = state(session);
  for (auto& [id, t] : inflight_) {
    if (t.session != session || t.kind != Transfer::Kind::SwapOut || t.voided) continue;
    t.voided = true;
    for (std::uint32_t b = t.block_lo; b <= t.block_hi; ++b) {
      Block& blk = s.layers[t.layer][b];
      blk.host_pending = false;
      blk.purge_on_persist = false;
    }
  }
}

KvStore::ApplyResult KvStore::apply_transfer(std::uint64_t id, Ns now) {
  auto it = inflight_.find(id);
  if (it == inflight_.end()) throw std::logic_error("kvstore: unknown transfer id");
  Transfer t = it->second;
  inflight_.erase(it);

  ApplyResult res;
  res.session = t.session;
  res.layer = t.layer;
  if (t.voided) {
    // Reservations made at schedule time are returned; data is discarded.
    switch (t.kind) {
      case Transfer::Kind::LoadH2D: device_used_ -= t.bytes; break;
      case Transfer::Kind::LoadDiskHost:
      case Transfer::Kind::HostCopy:
      case Transfer::Kind::SwapOut:
      case Transfer::Kind::NetArrive: host_used_ -= t.bytes; break;
      case Transfer::Kind::DiskWrite: break;
    }
    res.voided = true;
    return res;
  }

  auto& s = state(t.session);
  auto blocks = [&]() -> std::vector<Block>* {
    if (t.layer >= s.layers.size()) return nullptr;
    return &s.layers[t.layer];
  }();
  if (blocks == nullptr || blocks->empty()) throw std::logic_error("kvstore: transfer for missing blocks");

  auto for_range = [&](auto&& fn) {
    for (std::uint32_t b = t.block_lo; b <= t.block_hi && b < blocks->size(); ++b)
      fn((*blocks)[b]);
  };

  switch (t.kind) {
    case Transfer::Kind::LoadH2D: {
      for_range([&](Block& b) {
        if (!(b.residency & kDev)) b.residency |= kDev;
        b.load_pending = false;
      });
      s.load_eta[t.layer] = 0;
      record(now, t.session, t.layer, t.layer, Tier::Host, Tier::Device, t.bytes, t.reason);
      res.device_layer_ready = true;
      break;
    }
    case Transfer::Kind::LoadDiskHost: {
      for_range([&](Block& b) { b.residency |= kHost; });
      record(now, t.session, t.layer, t.layer, Tier::Disk, Tier::Host, t.bytes, t.reason);
      break;
    }
    case Transfer::Kind::HostCopy: {
      for_range([&](Block& b) {
        b.residency |= kHost;
        b.host_pending = false;
        if (b.purge_on_persist && (b.residency & kDev)) {
          b.residency = static_cast<std::uint8_t>(b.residency & ~kDev);
          b.purge_on_persist = false;
          device_used_ -= layer_block_bytes_;
        }
      });
      record(now, t.session, t.layer, t.layer, Tier::Device, Tier::Host, t.bytes,
             TransferReason::Persist);
      break;
    }
    case Transfer::Kind::DiskWrite: {
      if (opts_.disk_capacity >= 0 && disk_used_ + t.bytes > opts_.disk_capacity)
        throw std::runtime_error("kvstore: disk tier capacity exceeded");
      disk_used_ += t.bytes;
      for_range([&](Block& b) {
        b.residency |= kDisk;
        b.disk_pending = false;
        if (b.purge_on_persist && (b.residency & kDev)) {
          b.residency = static_cast<std::uint8_t>(b.residency & ~kDev);
          b.purge_on_persist = false;
          device_used_ -= layer_block_bytes_;
        }
      });
      record(now, t.session, t.layer, t.layer, Tier::Host, Tier::Disk, t.bytes,
             TransferReason::Persist);
      s.pending_persists -= 1;
      if (s.pending_persists < 0) throw std::logic_error("kvstore: persist count underflow");
      res.persists_drained = (s.pending_persists == 0);
      break;
    }
    case Transfer::Kind::SwapOut: {
      for_range([&](Block& b) {
        b.residency |= kHost;
        b.host_pending = false;
        if (b.residency & kDev) {
          b.residency = static_cast<std::uint8_t>(b.residency & ~kDev);
          device_used_ -= layer_block_bytes_;
        }
        b.purge_on_persist = false;
      });
      record(now, t.session, t.layer, t.layer, Tier::Device, Tier::Host, t.bytes, t.reason);
      break;
    }
    case Transfer::Kind::NetArrive: {
      for_range([&](Block& b) { b.residency |= kHost; });
      s.inbound_eta[t.layer] = 0;
      s.inbound_pending -= 1;
      record(now, t.session, t.layer, t.layer, Tier::Host, Tier::Host, t.bytes,
             TransferReason::Migrate);
      res.migration_arrived = true;
      res.migration_complete = (s.inbound_pending == 0);
      break;
    }
  }
  return res;
}

std::string KvStore::device_usage_debug() const {
  std::int64_t act = 0, mig = 0, pop = 0, idle = 0;
  int n_act = 0, n_mig = 0, n_pop = 0, n_idle = 0;
  for (const auto& [idx, s] : sessions_) {
    std::int64_t dev = 0, popb = 0;
    for (const auto& layer : s.layers)
      for (const auto& b : layer) {
        if (b.residency & kDev) {
          dev += layer_block_bytes_;
          if (b.purge_on_persist) popb += layer_block_bytes_;
        }
      }
    if (dev == 0) continue;
    if (s.active) { act += dev; ++n_act; }
    else if (s.migrating_out) { mig += dev; ++n_mig; }
    else if (popb == dev) { pop += dev; ++n_pop; }
    else { idle += dev; ++n_idle; }
  }
  return "active=" + std::to_string(act / 1000000) + "MB/" + std::to_string(n_act) +
         " migrating=" + std::to_string(mig / 1000000) + "MB/" + std::to_string(n_mig) +
         " offloading=" + std::to_string(pop / 1000000) + "MB/" + std::to_string(n_pop) +
         " idle=" + std::to_string(idle / 1000000) + "MB/" + std::to_string(n_idle);
}

void KvStore::check_budgets() const {
  if (device_used_ < 0 || device_used_ > device_cap_)
    throw std::logic_error("kvstore: device budget out of range");
  if (host_used_ < 0 || host_used_ > opts_.host_capacity)
    throw std::logic_error("kvstore: host budget out of range");
  if (disk_used_ < 0 || (opts_.disk_capacity >= 0 && disk_used_ > opts_.disk_capacity))
    throw std::logic_error("kvstore: disk budget out of range");
}

}  // namespace symsim
