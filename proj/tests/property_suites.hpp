// Randomized invariant suites shared by the property test binary and the
// acceptance harness. Every suite drives at least a thousand seeded cases
// against an independently coded oracle or a structural invariant. Suites
// use PCHECK, which both reports through doctest and counts failures in
// prop_failures so a caller can aggregate a pass/fail verdict.

#pragma once

#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "symsim/simcore.hpp"

namespace props {

inline int prop_failures = 0;

#define PCHECK(x)                            \
  do {                                       \
    const bool pcheck_ok_ = static_cast<bool>(x); \
    CHECK(x);                                \
    if (!pcheck_ok_) ++props::prop_failures; \
  } while (0)

constexpr std::int64_t kBlock = 550'000;  // 16-token block of one layer

inline int irand(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline symsim::Ns nrand(std::mt19937_64& rng, symsim::Ns lo, symsim::Ns hi) {
  return std::uniform_int_distribution<symsim::Ns>(lo, hi)(rng);
}

// Applies scheduled transfers in completion order, tracking which session
// each one belongs to so callers can ask what is still in flight.
struct TransferPool {
  struct Item {
    symsim::Ns at;
    std::uint64_t id;
    std::uint32_t session;
    bool operator<(const Item& o) const { return std::tie(at, id) < std::tie(o.at, o.id); }
  };
  std::vector<Item> pending;
  std::map<std::uint32_t, int> inflight;

  void add(const std::vector<symsim::ScheduledTransfer>& v, std::uint32_t session) {
    for (const auto& t : v) {
      pending.push_back({t.complete_at, t.id, session});
      inflight[session] += 1;
    }
  }
  void pump(symsim::KvStore& store, std::size_t count) {
    std::sort(pending.begin(), pending.end());
    count = std::min(count, pending.size());
    for (std::size_t i = 0; i < count; ++i) {
      store.apply_transfer(pending[i].id, pending[i].at);
      inflight[pending[i].session] -= 1;
    }
    pending.erase(pending.begin(), pending.begin() + static_cast<long>(count));
  }
  symsim::Ns pump_all(symsim::KvStore& store) {
    std::sort(pending.begin(), pending.end());
    const symsim::Ns last = pending.empty() ? 0 : pending.back().at;
    pump(store, pending.size());
    return last;
  }
  bool busy(std::uint32_t session) const {
    const auto it = inflight.find(session);
    return it != inflight.end() && it->second > 0;
  }
};

inline symsim::KvStore make_store(std::int64_t device_cap, std::int64_t host_cap,
                                  bool write_behind) {
  symsim::GpuProfile gpu;
  symsim::LinkProfile links;
  symsim::KvStore::Options opts;
  opts.device_capacity = device_cap;
  opts.host_capacity = host_cap;
  opts.write_behind = write_behind;
  return symsim::KvStore(gpu, links, opts);
}

// Closed-loop trace with 2..5 sessions of 1..3 turns; each turn past the
// first optionally announces itself with an advisory that leads the arrival.
inline symsim::Trace random_trace(std::mt19937_64& rng, bool with_advisories, int max_turns = 3) {
  using namespace symsim;
  Trace tr;
  tr.seed = rng();
  const int n = irand(rng, 2, 5);
  tr.concurrency_target = irand(rng, 1, n);
  for (int s = 0; s < n; ++s) {
    SessionScript sc;
    sc.session_id = "p" + std::to_string(s);
    if (irand(rng, 0, 4) == 0) sc.priority = PriorityClass::High;
    const int turns = irand(rng, 1, max_turns);
    for (int t = 0; t < turns; ++t) {
      const std::int64_t prompt = irand(rng, 8, 64);
      const std::int64_t resp = irand(rng, 1, 6);
      sc.turns.push_back({prompt, resp, prompt, resp});
    }
    tr.sessions.push_back(sc);
  }
  for (std::uint32_t s = 0; s < tr.sessions.size(); ++s) {
    const auto& sc = tr.sessions[s];
    for (std::uint32_t t = 0; t < sc.turns.size(); ++t) {
      TraceEvent inf;
      inf.kind = EventKind::Inference;
      inf.session_index = s;
      inf.turn_index = t;
      if (t == 0) {
        inf.anchor = AnchorPoint::SlotOpen;
        inf.anchor_turn = 0;
        inf.delta = nrand(rng, 0, ns_from_ms(5));
      } else {
        inf.anchor = AnchorPoint::PrevCompletion;
        inf.anchor_turn = t - 1;
        inf.delta = nrand(rng, ns_from_ms(1), ns_from_ms(20));
        if (with_advisories && irand(rng, 0, 9) < 7) {
          TraceEvent adv = inf;
          adv.kind = EventKind::Advisory;
          adv.delta = nrand(rng, 0, inf.delta);
          tr.events.push_back(adv);
        }
      }
      tr.events.push_back(inf);
    }
  }
  return tr;
}

inline const symsim::Policy kPolicies[4] = {symsim::Policy::Symphony, symsim::Policy::Recompute,
                                            symsim::Policy::Retain, symsim::Policy::Swap};

// Any purge of a persisted cache is lossless: after the write-behind copies
// land, the device footprint can be dropped to zero and loaded back intact.
inline void prop_durability() {
  using namespace symsim;
  for (int c = 0; c < 1000; ++c) {
    std::mt19937_64 rng(101 + c);
    KvStore store = make_store(2'000'000'000, 8'000'000'000, true);
    const int n = irand(rng, 1, 3);
    for (int s = 0; s < n; ++s) {
      store.register_session(static_cast<std::uint32_t>(s), "d" + std::to_string(s),
                             irand(rng, 0, 3) == 0 ? PriorityClass::High : PriorityClass::Normal);
    }
    store.finalize_sessions();
    TransferPool pool;
    Ns now = 0;
    std::vector<std::int64_t> tokens(static_cast<std::size_t>(n), 0);
    const int appends = irand(rng, 1, 6);
    for (int a = 0; a < appends; ++a) {
      const auto s = static_cast<std::uint32_t>(irand(rng, 0, n - 1));
      const std::int64_t grow = irand(rng, 1, 48);
      std::vector<ScheduledTransfer> sched;
      store.append_blocks(s, grow, now, sched);
      pool.add(sched, s);
      tokens[s] += grow;
      now += nrand(rng, 1, ns_from_ms(1));
      if (irand(rng, 0, 1)) pool.pump(store, static_cast<std::size_t>(irand(rng, 0, 8)));
    }
    now = std::max(now, pool.pump_all(store)) + 1;
    store.check_budgets();
    for (int s = 0; s < n; ++s)
      PCHECK(store.pending_persists(static_cast<std::uint32_t>(s)) == 0);

    const std::int64_t used = store.device_used();
    std::vector<ScheduledTransfer> sched;
    const std::int64_t freed = store.purge_from_device(used, now, false, sched);
    PCHECK(freed == used);  // everything was backed, so every drop is instant
    PCHECK(sched.empty());  // no flush traffic needed
    PCHECK(store.device_used() == 0);
    store.check_budgets();

    std::int64_t footprint = 0;
    for (int s = 0; s < n; ++s) {
      const auto u = static_cast<std::uint32_t>(s);
      PCHECK(store.cached_tokens(u) == tokens[s]);
      if (tokens[s] > 0) {
        PCHECK(store.has_any_copy(u));
        PCHECK(!store.fully_device_resident(u));
        std::vector<ScheduledTransfer> loads;
        const auto plan = store.plan_layerwise_load(u, now, 400'000, TransferReason::Demand, loads);
        PCHECK(plan.has_value());
        if (!plan) continue;
        PCHECK(plan->any_load);
        pool.add(loads, u);
        footprint += store.session_bytes(u);
      }
    }
    pool.pump_all(store);
    for (int s = 0; s < n; ++s)
      if (tokens[s] > 0) PCHECK(store.fully_device_resident(static_cast<std::uint32_t>(s)));
    PCHECK(store.device_used() == footprint);
    store.check_budgets();
  }
}

// Device accounting never overshoots capacity across random engine-shaped
// call sequences (activate/load, grow with purge-for-room, park, offload,
// release), with transfers landing in any completion order.
inline void prop_capacity() {
  using namespace symsim;
  for (int c = 0; c < 1000; ++c) {
    std::mt19937_64 rng(7'000 + c);
    const std::int64_t cap = static_cast<std::int64_t>(irand(rng, 64, 256)) * kBlock;
    const bool wb = irand(rng, 0, 1) == 1;
    KvStore store = make_store(cap, 64'000'000'000, wb);
    const int n = irand(rng, 2, 4);
    for (int s = 0; s < n; ++s)
      store.register_session(static_cast<std::uint32_t>(s), "f" + std::to_string(s),
                             irand(rng, 0, 3) == 0 ? PriorityClass::High : PriorityClass::Normal);
    store.finalize_sessions();

    TransferPool pool;
    Ns now = 1;
    const int ops = irand(rng, 20, 50);
    for (int op = 0; op < ops; ++op) {
      const auto s = static_cast<std::uint32_t>(irand(rng, 0, n - 1));
      switch (irand(rng, 0, 5)) {
        case 0: {  // admit: activate and schedule the demand load if needed
          if (store.is_active(s) || store.migrating_out(s)) break;
          store.set_active(s, true, now);
          if (store.cached_tokens(s) > 0 && !store.fully_device_resident(s)) {
            std::vector<ScheduledTransfer> loads;
            auto plan = store.plan_layerwise_load(s, now, 400'000, TransferReason::Demand, loads);
            if (!plan) {
              std::vector<ScheduledTransfer> purged;
              store.purge_from_device(store.bytes_for_load(s), now, true, purged);
              pool.add(purged, s);  // session tag is irrelevant for flushes
              plan = store.plan_layerwise_load(s, now, 400'000, TransferReason::Demand, loads);
            }
            if (plan)
              pool.add(loads, s);
            else
              store.set_active(s, false, now);
          }
          break;
        }
        case 1: {  // grow an active session, purging for room like the engine
          if (!store.is_active(s)) break;
          const std::int64_t grow = irand(rng, 1, 24);
          const std::int64_t need = store.bytes_for_new_blocks(s, grow);
          if (need > store.device_free()) {
            std::vector<ScheduledTransfer> purged;
            store.purge_from_device(need - store.device_free(), now, true, purged);
            if (need > store.device_free())
              store.purge_from_device(need - store.device_free(), now, false, purged);
            pool.add(purged, s);
          }
          if (need <= store.device_free()) {
            std::vector<ScheduledTransfer> sched;
            store.append_blocks(s, grow, now, sched);
            pool.add(sched, s);
          }
          break;
        }
        case 2: {  // park, optionally swap the cache out
          if (!store.is_active(s)) break;
          store.set_active(s, false, now);
          if (!wb && irand(rng, 0, 1)) {
            std::vector<ScheduledTransfer> sched;
            store.offload_session(s, now, sched);
            pool.add(sched, s);
          }
          break;
        }
        case 3: {  // drop a parked session entirely
          if (store.is_active(s) || store.cached_tokens(s) == 0) break;
          store.release_session(s, now);
          break;
        }
        case 4:
          pool.pump(store, static_cast<std::size_t>(irand(rng, 1, 40)));
          break;
        default:
          now += nrand(rng, 1, ns_from_ms(2));
          break;
      }
      now += 1;
      store.check_budgets();
      PCHECK(store.device_used() <= store.device_capacity());
      PCHECK(store.device_used() >= 0);
      PCHECK(store.host_used() >= 0);
      PCHECK(store.disk_used() >= 0);
    }
    pool.pump_all(store);
    store.check_budgets();
  }
}

// Each request executes on exactly the node the router picked for it, and
// sticky policies never split a session across nodes.
inline void prop_routed_placement() {
  using namespace symsim;
  for (int c = 0; c < 1000; ++c) {
    std::mt19937_64 rng(23'000 + c);
    const Trace tr = random_trace(rng, true);
    RunConfig cfg;
    cfg.policy = kPolicies[c % 4];
    cfg.num_nodes = irand(rng, 2, 4);
    cfg.invariant_stride = 1;
    const RunReport rep = run_simulation(tr, cfg);

    std::map<std::pair<std::uint32_t, std::uint32_t>, int> routed;
    for (const auto& row : rep.routing) {
      if (row.advisory) continue;
      const auto key = std::make_pair(row.session, row.turn);
      PCHECK(routed.count(key) == 0);  // one inference, one routing decision
      routed[key] = row.node;
    }
    std::size_t total_turns = 0;
    for (const auto& s : tr.sessions) total_turns += s.turns.size();
    PCHECK(rep.records.size() == total_turns);
    PCHECK(routed.size() == total_turns);

    std::map<std::uint32_t, std::set<int>> nodes_of;
    for (const auto& r : rep.records) {
      const auto it = routed.find({r.session, r.turn});
      PCHECK(it != routed.end());
      if (it != routed.end()) PCHECK(r.node == it->second);
      nodes_of[r.session].insert(r.node);
    }
    if (cfg.policy == Policy::Retain || cfg.policy == Policy::Swap)
      for (const auto& [s, nodes] : nodes_of) PCHECK(nodes.size() == 1);

    std::size_t advisories = 0;
    for (const auto& e : tr.events)
      if (e.kind == EventKind::Advisory) advisories += 1;
    if (cfg.policy == Policy::Symphony) {
      PCHECK(rep.advisories_processed == static_cast<std::int64_t>(advisories));
      PCHECK(rep.advisories_ignored == 0);
    } else {
      PCHECK(rep.advisories_processed == 0);
      PCHECK(rep.advisories_ignored == static_cast<std::int64_t>(advisories));
    }
  }
}

// An advisory fixes the plan for its turn; the turn's inference then routes
// to that node with reason "planned", and realized leads are non-negative.
inline void prop_plan_follow() {
  using namespace symsim;
  for (int c = 0; c < 1000; ++c) {
    std::mt19937_64 rng(31'000 + c);
    const Trace tr = random_trace(rng, true);
    RunConfig cfg;
    cfg.policy = Policy::Symphony;
    cfg.num_nodes = irand(rng, 2, 4);
    const RunReport rep = run_simulation(tr, cfg);

    std::map<std::pair<std::uint32_t, std::uint32_t>, int> plan;  // first advisory wins
    std::size_t planned_rows = 0;
    for (const auto& row : rep.routing) {
      const auto key = std::make_pair(row.session, row.turn);
      if (row.advisory) {
        plan.emplace(key, row.node);
        continue;
      }
      if (row.reason == "planned") {
        planned_rows += 1;
        PCHECK(plan.count(key) == 1);
        if (plan.count(key)) PCHECK(row.node == plan.at(key));
      }
    }
    // every advisory's turn later arrived, so every plan was consumed
    PCHECK(planned_rows == plan.size());
    PCHECK(static_cast<std::int64_t>(plan.size()) == rep.advisories_processed);
    PCHECK(rep.advisory_lead_s.size() == plan.size());
    for (double lead : rep.advisory_lead_s) PCHECK(lead >= 0.0);
  }
}

// The store's eviction candidates must come out in exactly the order an
// independently coded sort over the publicly observable state produces.
inline void prop_evict_order() {
  using namespace symsim;
  for (int c = 0; c < 1000; ++c) {
    std::mt19937_64 rng(47'000 + c);
    const int n = irand(rng, 2, 6);
    std::vector<std::string> ids;
    std::vector<bool> high;
    for (int s = 0; s < n; ++s) {
      // random but unique ids so the lexicographic tie-break is well defined
      ids.push_back("e" + std::to_string(irand(rng, 0, 99)) + "_" + std::to_string(s));
      high.push_back(irand(rng, 0, 3) == 0);
    }

    KvStore store = make_store(8'000'000'000, 64'000'000'000, true);
    for (int s = 0; s < n; ++s)
      store.register_session(static_cast<std::uint32_t>(s), ids[static_cast<std::size_t>(s)],
                             high[static_cast<std::size_t>(s)] ? PriorityClass::High
                                                               : PriorityClass::Normal);
    store.finalize_sessions();
    TransferPool pool;
    std::vector<std::int64_t> tokens(static_cast<std::size_t>(n), 0);
    for (int s = 0; s < n; ++s) {
      tokens[s] = irand(rng, 0, 80);
      if (tokens[s] == 0) continue;
      std::vector<ScheduledTransfer> sched;
      store.append_blocks(static_cast<std::uint32_t>(s), tokens[s], 10, sched);
      pool.add(sched, static_cast<std::uint32_t>(s));
    }
    pool.pump_all(store);
    std::set<std::uint32_t> active;
    for (int s = 0; s < n; ++s)
      if (irand(rng, 0, 3) == 0) {
        store.set_active(static_cast<std::uint32_t>(s), true, 20);
        active.insert(static_cast<std::uint32_t>(s));
      }

    const bool spare = irand(rng, 0, 1) == 1;
    std::vector<BlockMeta> expected;
    for (std::uint32_t s = 0; s < static_cast<std::uint32_t>(n); ++s) {
      if (tokens[s] == 0 || active.count(s)) continue;
      if (spare && high[s]) continue;
      const auto blocks = (tokens[s] + 15) / 16;
      for (std::uint16_t layer = 0; layer < 32; ++layer)
        for (std::uint32_t b = 0; b < static_cast<std::uint32_t>(blocks); ++b)
          expected.push_back(
              BlockMeta{BlockKey{s, layer, b}, ids[s], store.session_bytes(s), false});
    }
    std::sort(expected.begin(), expected.end(), [](const BlockMeta& a, const BlockMeta& b) {
      if (a.key.layer != b.key.layer) return a.key.layer > b.key.layer;
      if (a.session_bytes != b.session_bytes) return a.session_bytes < b.session_bytes;
      if (a.key.block_index != b.key.block_index) return a.key.block_index > b.key.block_index;
      return a.session_id < b.session_id;
    });

    const auto got = store.evictable_blocks(spare);
    PCHECK(got.size() == expected.size());
    const std::size_t m = std::min(got.size(), expected.size());
    for (std::size_t i = 0; i < m; ++i) {
      PCHECK(got[i].key.session == expected[i].key.session);
      PCHECK(got[i].key.layer == expected[i].key.layer);
      PCHECK(got[i].key.block_index == expected[i].key.block_index);
    }
  }
}

// The layerwise gate must satisfy the documented max-plus recurrence
//   e(i) = max(e(i-1), ready_i) + c_i,   e(-1) = compute_ready,
// with the c_i an exact integer split of the step, and be monotone in the
// ready times.
inline void prop_gate_recurrence() {
  using namespace symsim;
  for (int c = 0; c < 2000; ++c) {
    std::mt19937_64 rng(59'000 + c);
    const int layers = irand(rng, 1, 64);
    const Ns step = nrand(rng, 1, ns_from_ms(20));
    const Ns compute_ready = nrand(rng, 0, ns_from_sec(1));
    std::vector<Ns> ready(static_cast<std::size_t>(layers));
    for (auto& r : ready) r = compute_ready + nrand(rng, -step, step * layers);

    Ns e = compute_ready;
    for (int i = 0; i < layers; ++i) {
      const Ns ci = (static_cast<Ns>(i) + 1) * step / layers - static_cast<Ns>(i) * step / layers;
      e = std::max(e, ready[static_cast<std::size_t>(i)]) + ci;
    }
    const GateResult g = pipeline_gate(ready, compute_ready, step);
    PCHECK(g.first_step_end == e);
    PCHECK(g.gate_start == e - step);
    PCHECK(g.stall == std::max<Ns>(0, e - (compute_ready + step)));
    PCHECK(g.gate_start >= compute_ready);  // a step cannot start before compute is ready

    // delaying one layer can only delay the gate
    std::vector<Ns> later = ready;
    const auto k = static_cast<std::size_t>(irand(rng, 0, layers - 1));
    later[k] += nrand(rng, 1, step * 4);
    PCHECK(pipeline_gate(later, compute_ready, step).first_step_end >= e);
  }
}

// Equal inputs give identical reports, including the full event trace.
inline void prop_determinism() {
  using namespace symsim;
  for (int c = 0; c < 1000; ++c) {
    std::mt19937_64 rng(67'000 + c);
    const Trace tr = random_trace(rng, true, 2);
    RunConfig cfg;
    cfg.policy = kPolicies[c % 4];
    cfg.num_nodes = irand(rng, 2, 3);
    cfg.record_events = true;
    const RunReport a = run_simulation(tr, cfg);
    const RunReport b = run_simulation(tr, cfg);

    PCHECK(a.makespan == b.makespan);
    PCHECK(a.event_log == b.event_log);
    PCHECK(a.records.size() == b.records.size());
    const std::size_t nr = std::min(a.records.size(), b.records.size());
    for (std::size_t i = 0; i < nr; ++i) {
      const auto& x = a.records[i];
      const auto& y = b.records[i];
      PCHECK(x.session == y.session);
      PCHECK(x.turn == y.turn);
      PCHECK(x.node == y.node);
      PCHECK(x.admit == y.admit);
      PCHECK(x.decode_entry == y.decode_entry);
      PCHECK(x.first_token == y.first_token);
      PCHECK(x.finish == y.finish);
      PCHECK(x.load_stall == y.load_stall);
    }
    PCHECK(a.routing.size() == b.routing.size());
    const std::size_t nq = std::min(a.routing.size(), b.routing.size());
    for (std::size_t i = 0; i < nq; ++i) {
      PCHECK(a.routing[i].node == b.routing[i].node);
      PCHECK(a.routing[i].reason == b.routing[i].reason);
      PCHECK(a.routing[i].time == b.routing[i].time);
    }
    PCHECK(a.traffic.size() == b.traffic.size());
    auto ita = a.traffic.begin();
    auto itb = b.traffic.begin();
    for (; ita != a.traffic.end() && itb != b.traffic.end(); ++ita, ++itb) {
      PCHECK(ita->second.bytes == itb->second.bytes);
      PCHECK(ita->second.transfers == itb->second.transfers);
    }
  }
}

// Token conservation: every requested token is generated in exactly one
// decode step, prefill always covers prompt plus replay, and per-session
// turn timelines are ordered.
inline void prop_conservation() {
  using namespace symsim;
  for (int c = 0; c < 1000; ++c) {
    std::mt19937_64 rng(83'000 + c);
    const Trace tr = random_trace(rng, irand(rng, 0, 1) == 1);
    RunConfig cfg;
    cfg.policy = kPolicies[(c / 4) % 4];
    cfg.num_nodes = irand(rng, 2, 4);
    cfg.invariant_stride = 1;
    const RunReport rep = run_simulation(tr, cfg);

    std::map<std::uint32_t, std::map<std::uint32_t, const RequestRecord*>> by_session;
    for (const auto& r : rep.records) {
      const auto& turn = tr.sessions[r.session].turns[r.turn];
      PCHECK(r.participations == r.target_tokens);
      PCHECK(r.prompt_tokens == turn.prompt_tokens);
      PCHECK(r.target_tokens == turn.response_tokens);
      PCHECK(r.prefill_tokens == r.prompt_tokens + r.redundant_tokens);
      PCHECK(r.prefill_tokens >= r.prompt_tokens);
      PCHECK(r.admit >= r.arrival);
      PCHECK(r.decode_entry >= r.admit);
      PCHECK(r.first_token > r.decode_entry);
      PCHECK(r.finish >= r.first_token);
      PCHECK(r.load_stall >= 0);
      by_session[r.session][r.turn] = &r;
    }
    for (const auto& [s, turns] : by_session) {
      const RequestRecord* prev = nullptr;
      for (const auto& [t, r] : turns) {
        if (prev) {
          PCHECK(r->arrival > prev->finish);  // closed loop: next turn waits
          PCHECK(r->finish > prev->finish);
        }
        prev = r;
      }
    }
  }
}

// Purges never touch running sessions, and the spare flag protects
// high-priority caches from prefetch-driven pressure.
inline void prop_purge_protection() {
  using namespace symsim;
  for (int c = 0; c < 1000; ++c) {
    std::mt19937_64 rng(97'000 + c);
    KvStore store = make_store(4'000'000'000, 64'000'000'000, true);
    const int n = irand(rng, 2, 5);
    std::vector<bool> high;
    for (int s = 0; s < n; ++s) {
      high.push_back(irand(rng, 0, 2) == 0);
      store.register_session(static_cast<std::uint32_t>(s), "g" + std::to_string(s),
                             high.back() ? PriorityClass::High : PriorityClass::Normal);
    }
    store.finalize_sessions();
    TransferPool pool;
    for (int s = 0; s < n; ++s) {
      std::vector<ScheduledTransfer> sched;
      store.append_blocks(static_cast<std::uint32_t>(s), irand(rng, 1, 64), 5, sched);
      pool.add(sched, static_cast<std::uint32_t>(s));
    }
    pool.pump_all(store);

    std::set<std::uint32_t> active;
    for (int s = 0; s < n; ++s)
      if (irand(rng, 0, 1)) {
        store.set_active(static_cast<std::uint32_t>(s), true, 50);
        active.insert(static_cast<std::uint32_t>(s));
      }
    const bool spare = irand(rng, 0, 1) == 1;

    const std::size_t rows_before = store.ledger().size();
    std::vector<ScheduledTransfer> sched;
    store.purge_from_device(nrand(rng, kBlock, store.device_used() + kBlock), 60, spare, sched);
    PCHECK(sched.empty());  // fully persisted: drops are instant
    for (std::size_t i = rows_before; i < store.ledger().size(); ++i) {
      const TransferRecord& row = store.ledger()[i];
      PCHECK(row.from == Tier::Device);
      PCHECK(row.reason == TransferReason::Purge);
      PCHECK(active.count(row.session) == 0);
      if (spare) PCHECK(!high[row.session]);
    }
    for (std::uint32_t s : active) PCHECK(store.fully_device_resident(s));
    store.check_budgets();
  }
}

}  // namespace props
