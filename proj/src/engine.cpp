#include "symsim/engine.hpp"

#include <algorithm>
#include <stdexcept>

namespace symsim {

const char* policy_name(Policy p) {
  switch (p) {
    case Policy::Recompute: return "recompute";
    case Policy::Retain: return "retain";
    case Policy::Swap: return "swap";
    case Policy::Symphony: return "symphony";
  }
  return "?";
}

Policy policy_from(const std::string& name) {
  if (name == "recompute") return Policy::Recompute;
  if (name == "retain") return Policy::Retain;
  if (name == "swap") return Policy::Swap;
  if (name == "symphony") return Policy::Symphony;
  throw std::runtime_error("unknown policy '" + name + "'");
}

Engine::Engine(const EngineConfig& cfg, const GpuProfile& gpu, KvStore& store)
    : cfg_(cfg), gpu_(gpu), store_(store) {
  if (cfg_.max_batch <= 0) throw std::runtime_error("engine: max_batch must be positive");
}

void Engine::enqueue(const RequestSpec& spec, Ns now) {
  if (spec.prefill_tokens <= 0 || spec.target_tokens <= 0)
    throw std::logic_error("engine: request with empty prefill or target");
  for (const auto& r : reqs_)
    if (r.phase != Phase::Finished && r.spec.session == spec.session)
      throw std::logic_error("engine: session already has a live request");
  Req r;
  r.spec = spec;
  reqs_.push_back(std::move(r));
  admission_.push_back(reqs_.size() - 1);
  // Pin the session's cache from arrival so nothing purges it while queued.
  store_.set_active(spec.session, true, now);
}

int Engine::active_count() const {
  return static_cast<int>(decoding_.size() + waiting_.size() + paused_.size()) +
         (q_prefill_ != npos ? 1 : 0);
}

bool Engine::has_live_requests() const {
  for (const auto& r : reqs_)
    if (r.phase != Phase::Finished) return true;
  return false;
}

Ns Engine::step_estimate(int extra) const {
  return decode_step_time(std::max(1, static_cast<int>(decoding_.size()) + extra), gpu_);
}

void Engine::ensure_room(std::int64_t need, Ns now, Outcome& out) {
  if (store_.device_free() >= need) return;
  // Cooperative eviction first spares high-priority sessions' prefetched
  // blocks, then takes anything unpinned. Taking a session's last blocks in
  // eviction order is what preempts the lowest-priority prefetched session.
  store_.purge_from_device(need - store_.device_free(), now, true, out.transfers);
  if (store_.device_free() >= need) return;
  store_.purge_from_device(need - store_.device_free(), now, false, out.transfers);
  if (store_.device_free() >= need) return;
  throw std::runtime_error(
      "engine: device tier cannot hold the running batch's cache growth "
      "(need " + std::to_string(need) + " bytes, free " +
      std::to_string(store_.device_free()) + ", t=" + std::to_string(now) +
      "ns, " + store_.device_usage_debug() +
      "); reduce max_batch or grow device capacity");
}

bool Engine::admit_head(Ns now, Outcome& out) {
  Req& r = reqs_[admission_.front()];
  if (r.spec.needs_load && !r.loads_planned) {
    const std::int64_t need = store_.bytes_for_load(r.spec.session);
    if (store_.device_free() < need) {
      store_.purge_from_device(need - store_.device_free(), now, true, out.transfers);
      if (store_.device_free() < need)
        store_.purge_from_device(need - store_.device_free(), now, false, out.transfers);
    }
    auto plan = store_.plan_layerwise_load(r.spec.session, now,
                                           step_estimate(1) / gpu_.num_layers,
                                           TransferReason::Demand, out.transfers);
    if (!plan) return false;
    r.layer_ready = std::move(plan->layer_ready);
    r.loads_planned = true;
  }
  if (!r.prompt_reserved) {
    const std::int64_t need = store_.bytes_for_new_blocks(r.spec.session, r.spec.prefill_tokens);
    if (store_.device_free() < need) {
      store_.purge_from_device(need - store_.device_free(), now, true, out.transfers);
      if (store_.device_free() < need)
        store_.purge_from_device(need - store_.device_free(), now, false, out.transfers);
      if (store_.device_free() < need) return false;
    }
    store_.reserve_device(need);
    r.reserved_bytes = need;
    r.prompt_reserved = true;
  }
  return true;
}

void Engine::apply_prefill(Ns at, Outcome& out) {
  Req& r = reqs_[q_prefill_];
  store_.unreserve_device(r.reserved_bytes);
  r.reserved_bytes = 0;
  store_.append_blocks(r.spec.session, r.spec.prefill_tokens, at, out.transfers);
  r.decode_entry = at;
  if (r.layer_ready.empty()) {
    r.gate = at;
  } else {
    const GateResult g = pipeline_gate(r.layer_ready, at, step_estimate(1));
    r.gate = g.gate_start;
    r.load_stall = g.stall;
  }
  if (r.gate <= at) {
    r.phase = Phase::Decoding;
    decoding_.push_back(q_prefill_);
  } else {
    r.phase = Phase::WaitingCache;
    waiting_.push_back(q_prefill_);
  }
  q_prefill_ = npos;
  prefill_boundary_ = -1;
}

void Engine::apply_step(Ns at, Outcome& out) {
  for (std::size_t idx : q_emitters_) {
    Req& r = reqs_[idx];
    if (r.phase != Phase::Decoding) throw std::logic_error("engine: emitter not decoding");
    r.generated += 1;
    r.participations += 1;
    if (r.first_token < 0) r.first_token = at;
    // Every emitted token extends the cache, the final one included; the
    // next turn's history covers the whole response.
    const std::int64_t need = store_.bytes_for_new_blocks(r.spec.session, 1);
    if (need > 0) ensure_room(need, at, out);
    store_.append_blocks(r.spec.session, 1, at, out.transfers);
    if (r.generated == r.spec.target_tokens) {
      r.phase = Phase::Finished;
      r.finish = at;
      store_.set_active(r.spec.session, false, at);
      FinishedRequest f;
      f.spec = r.spec;
      f.admit = r.admit;
      f.decode_entry = r.decode_entry;
      f.first_token = r.first_token;
      f.finish = r.finish;
      f.load_stall = r.load_stall;
      f.participations = r.participations;
      out.finished.push_back(std::move(f));
    }
  }
  std::vector<std::size_t> still;
  still.reserve(decoding_.size());
  for (std::size_t idx : decoding_)
    if (reqs_[idx].phase == Phase::Decoding) still.push_back(idx);
  decoding_ = std::move(still);
  quantum_end_ = -1;
  q_emitters_.clear();
}

void Engine::try_start(Ns now, Outcome& out) {
  if (prefill_boundary_ >= 0 || quantum_end_ >= 0) {
    out.next_wake = prefill_boundary_ >= 0 ? prefill_boundary_ : quantum_end_;
    return;
  }

  // Admission: strict FCFS with head-of-line blocking on memory.
  std::size_t chosen = npos;
  bool can_admit = !admission_.empty() && active_count() < cfg_.max_batch;
  if (can_admit && cfg_.prefill_mode == PrefillMode::DecodeFirst &&
      (!decoding_.empty() || !waiting_.empty()))
    can_admit = false;
  if (can_admit && admit_head(now, out)) {
    chosen = admission_.front();
    admission_.pop_front();
    Req& r = reqs_[chosen];
    r.phase = Phase::Prefilling;
    r.admit = now;
  }
  const Ns prefill_dur = chosen != npos ? prefill_time(reqs_[chosen].spec.prefill_tokens, gpu_) : 0;
  const Ns t_decode = now + prefill_dur;

  // Gate releases: cache-waiters whose pipeline gate passes before this
  // quantum's decode step begins join the batch.
  {
    std::vector<std::size_t> still;
    for (std::size_t idx : waiting_) {
      Req& r = reqs_[idx];
      if (r.gate <= t_decode) {
        r.phase = Phase::Decoding;
        decoding_.push_back(idx);
      } else {
        still.push_back(idx);
      }
    }
    waiting_ = std::move(still);
  }

  // Priority pausing: when a high-priority request is decoding and the step
  // latency would blow the budget, the newest normal requests step aside.
  const Ns budget = ns_from_ms(cfg_.pause_latency_budget_ms);
  bool any_high = false;
  for (std::size_t idx : decoding_)
    if (reqs_[idx].spec.high_priority) any_high = true;
  if (budget <= 0 || !any_high) {
    for (std::size_t idx : paused_) {
      reqs_[idx].phase = Phase::Decoding;
      decoding_.push_back(idx);
    }
    paused_.clear();
  } else {
    while (!paused_.empty() &&
           decode_step_time(static_cast<int>(decoding_.size()) + 1, gpu_) <= budget) {
      reqs_[paused_.front()].phase = Phase::Decoding;
      decoding_.push_back(paused_.front());
      paused_.erase(paused_.begin());
    }
    while (decoding_.size() > 1 &&
           decode_step_time(static_cast<int>(decoding_.size()), gpu_) > budget) {
      std::size_t victim = npos;
      for (std::size_t i = 0; i < decoding_.size(); ++i) {
        const Req& r = reqs_[decoding_[i]];
        if (r.spec.high_priority) continue;
        if (victim == npos || r.decode_entry > reqs_[decoding_[victim]].decode_entry ||
            (r.decode_entry == reqs_[decoding_[victim]].decode_entry &&
             decoding_[i] > decoding_[victim]))
          victim = i;
      }
      if (victim == npos) break;  // batch is all high-priority; run over budget
      const std::size_t idx = decoding_[victim];
      reqs_[idx].phase = Phase::Paused;
      paused_.push_back(idx);
      decoding_.erase(decoding_.begin() + static_cast<std::ptrdiff_t>(victim));
    }
  }

  if (chosen == npos && decoding_.empty()) {
    if (!waiting_.empty()) {
      Ns wake = reqs_[waiting_.front()].gate;
      for (std::size_t idx : waiting_) wake = std::min(wake, reqs_[idx].gate);
      out.next_wake = wake;
    }
    return;
  }

  q_prefill_ = chosen;
  q_emitters_ = decoding_;
  q_decode_start_ = t_decode;
  const Ns decode_dur =
      q_emitters_.empty() ? 0 : decode_step_time(static_cast<int>(q_emitters_.size()), gpu_);
  prefill_boundary_ = chosen != npos ? t_decode : -1;
  quantum_end_ = t_decode + decode_dur;
  prefill_busy_ += prefill_dur;
  out.next_wake = prefill_boundary_ >= 0 ? prefill_boundary_ : quantum_end_;
}

Engine::Outcome Engine::advance(Ns now) {
  Outcome out;
  if (prefill_boundary_ >= 0) {
    if (now < prefill_boundary_) {
      out.next_wake = prefill_boundary_;
      return out;
    }
    if (now > prefill_boundary_) throw std::logic_error("engine: missed prefill boundary");
    apply_prefill(now, out);
  }
  if (quantum_end_ >= 0) {
    if (now < quantum_end_) {
      out.next_wake = quantum_end_;
      return out;
    }
    if (now > quantum_end_) throw std::logic_error("engine: missed quantum end");
    apply_step(now, out);
  }
  try_start(now, out);
  return out;
}

std::string Engine::diagnostics() const {
  std::string s = "queued=" + std::to_string(admission_.size()) +
                  " decoding=" + std::to_string(decoding_.size()) +
                  " waiting=" + std::to_string(waiting_.size()) +
                  " paused=" + std::to_string(paused_.size());
  if (!admission_.empty()) {
    const Req& r = reqs_[admission_.front()];
    s += " head_session=" + std::to_string(r.spec.session) +
         " head_turn=" + std::to_string(r.spec.turn);
  }
  for (std::size_t idx : waiting_)
    s += " gate[" + std::to_string(reqs_[idx].spec.session) + "]=" +
         std::to_string(reqs_[idx].gate);
  return s;
}

}  // namespace symsim
