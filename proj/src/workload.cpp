#include "symsim/workload.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace symsim {

using json = nlohmann::json;

namespace {

Ns think_ns(std::int64_t words, double wpm) {
  if (wpm <= 0) throw std::runtime_error("workload: words-per-minute must be positive");
  return ns_from_sec(static_cast<double>(words) * 60.0 / wpm);
}

std::int64_t default_words(std::int64_t tokens, double words_per_token) {
  return std::llround(static_cast<double>(tokens) * words_per_token);
}

}  // namespace

std::int64_t SessionScript::total_tokens() const {
  std::int64_t n = 0;
  for (const auto& t : turns) n += t.prompt_tokens + t.response_tokens;
  return n;
}

std::int64_t SessionScript::history_tokens() const {
  std::int64_t total = 0, prefix = 0;
  for (std::size_t k = 0; k < turns.size(); ++k) {
    if (k > 0) total += prefix;
    prefix += turns[k].prompt_tokens + turns[k].response_tokens;
  }
  return total;
}

double Trace::multi_turn_fraction() const {
  if (sessions.empty()) return 0.0;
  std::size_t multi = 0;
  for (const auto& s : sessions)
    if (s.turns.size() >= 2) ++multi;
  return static_cast<double>(multi) / static_cast<double>(sessions.size());
}

std::size_t Trace::inference_count() const {
  std::size_t n = 0;
  for (const auto& e : events)
    if (e.kind == EventKind::Inference) ++n;
  return n;
}

std::size_t Trace::advisory_count() const {
  return events.size() - inference_count();
}

double Trace::mean_advisory_lead_s() const {
  std::map<std::pair<std::uint32_t, std::uint32_t>, const TraceEvent*> inference;
  for (const auto& e : events)
    if (e.kind == EventKind::Inference) inference[{e.session_index, e.turn_index}] = &e;
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& e : events) {
    if (e.kind != EventKind::Advisory) continue;
    auto it = inference.find({e.session_index, e.turn_index});
    if (it == inference.end()) continue;
    const TraceEvent& inf = *it->second;
    // Lead is only statically known when the advisory shares its inference
    // event's anchor; agent advisories anchor elsewhere and are skipped.
    if (inf.anchor != e.anchor || inf.anchor_turn != e.anchor_turn) continue;
    sum += to_sec(inf.delta - e.delta);
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

std::uint64_t workload_hash(const Trace& trace) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  auto mix_bytes = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  auto mix_i64 = [&](std::int64_t v) { mix_bytes(&v, sizeof v); };
  auto mix_str = [&](const std::string& s) {
    mix_i64(static_cast<std::int64_t>(s.size()));
    mix_bytes(s.data(), s.size());
  };
  mix_i64(static_cast<std::int64_t>(trace.sessions.size()));
  for (const auto& s : trace.sessions) {
    mix_str(s.session_id);
    mix_str(s.model_id);
    mix_i64(static_cast<std::int64_t>(s.turns.size()));
    for (const auto& t : s.turns) {
      mix_i64(t.prompt_tokens);
      mix_i64(t.response_tokens);
    }
  }
  for (const auto& e : trace.events) {
    if (e.kind != EventKind::Inference) continue;
    mix_i64(e.session_index);
    mix_i64(e.turn_index);
    mix_i64(static_cast<std::int64_t>(e.anchor));
    mix_i64(e.anchor_turn);
    mix_i64(e.delta);
  }
  return h;
}

// ---- corpus ----------------------------------------------------------------

std::vector<SessionScript> load_chat_corpus(const std::string& path, std::size_t max_sessions,
                                            double words_per_token) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("corpus: cannot open " + path);
  std::vector<SessionScript> out;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (max_sessions > 0 && out.size() >= max_sessions) break;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& ex) {
      throw std::runtime_error("corpus: record " + std::to_string(lineno) + ": " + ex.what());
    }
    auto fail = [&lineno](const std::string& why) -> std::runtime_error {
      return std::runtime_error("corpus: record " + std::to_string(lineno) + ": " + why);
    };
    if (!rec.contains("session_id") || !rec["session_id"].is_string())
      throw fail("missing session_id");
    if (!rec.contains("messages") || !rec["messages"].is_array())
      throw fail("missing messages array");
    SessionScript s;
    s.session_id = rec["session_id"].get<std::string>();
    if (s.session_id.empty()) throw fail("empty session_id");
    if (!seen_ids.insert(s.session_id).second) throw fail("duplicate session_id " + s.session_id);
    if (rec.contains("model_id")) s.model_id = rec["model_id"].get<std::string>();

    const auto& msgs = rec["messages"];
    Turn pending;
    bool have_user = false;
    for (std::size_t i = 0; i < msgs.size(); ++i) {
      const auto& m = msgs[i];
      if (!m.contains("role") || !m.contains("tokens")) throw fail("message missing role/tokens");
      const std::string role = m["role"].get<std::string>();
      const std::int64_t tokens = m["tokens"].get<std::int64_t>();
      if (tokens <= 0) throw fail("message token count must be positive");
      const std::int64_t words =
          m.contains("words") ? m["words"].get<std::int64_t>() : default_words(tokens, words_per_token);
      if (role == "user") {
        if (have_user) throw fail("two user messages in a row");
        pending.prompt_tokens = tokens;
        pending.prompt_words = words;
        have_user = true;
      } else if (role == "assistant") {
        if (!have_user) throw fail("assistant message without a user prompt");
        pending.response_tokens = tokens;
        pending.response_words = words;
        s.turns.push_back(pending);
        pending = Turn{};
        have_user = false;
      } else {
        throw fail("unknown role " + role);
      }
    }
    // A trailing user message without its reply is discarded; a record that
    // yields no complete turn is dropped rather than rejected.
    if (s.turns.empty()) continue;
    out.push_back(std::move(s));
  }
  if (out.empty()) throw std::runtime_error("corpus: no usable sessions in " + path);
  return out;
}

void write_corpus(const std::string& path, const std::vector<SessionScript>& scripts) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("corpus: cannot write " + path);
  for (const auto& s : scripts) {
    json msgs = json::array();
    for (const auto& t : s.turns) {
      msgs.push_back({{"role", "user"}, {"tokens", t.prompt_tokens}, {"words", t.prompt_words}});
      msgs.push_back(
          {{"role", "assistant"}, {"tokens", t.response_tokens}, {"words", t.response_words}});
    }
    json rec = {{"session_id", s.session_id}, {"model_id", s.model_id}, {"messages", msgs}};
    out << rec.dump() << "\n";
  }
}

std::vector<SessionScript> synthesize_corpus(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.sessions <= 0) throw std::runtime_error("synthesize_corpus: session count must be positive");
  if (spec.multi_turn_fraction < 0 || spec.multi_turn_fraction > 1)
    throw std::runtime_error("synthesize_corpus: multi_turn_fraction out of range");
  std::mt19937_64 rng(seed);

  // Hit the multi-turn fraction exactly (up to rounding) instead of in
  // expectation, so corpus-level statistics are stable for small fixtures.
  const int n = spec.sessions;
  const int n_multi = static_cast<int>(std::llround(spec.multi_turn_fraction * n));
  std::vector<int> is_multi(n, 0);
  std::fill(is_multi.begin(), is_multi.begin() + std::min(n, n_multi), 1);
  std::shuffle(is_multi.begin(), is_multi.end(), rng);

  const double extra_mean = std::max(1.0, spec.mean_extra_turns);
  std::geometric_distribution<int> extra(1.0 / extra_mean);
  std::lognormal_distribution<double> prompt_tokens(std::log(spec.prompt_tokens_median),
                                                    spec.prompt_tokens_sigma);
  std::lognormal_distribution<double> response_tokens(std::log(spec.response_tokens_median),
                                                      spec.response_tokens_sigma);

  auto clamp_tokens = [&spec](double v) {
    return std::max<std::int64_t>(1, std::min<std::int64_t>(spec.max_tokens_per_message,
                                                            std::llround(v)));
  };

  std::vector<SessionScript> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    SessionScript s;
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%04d", i);
    s.session_id = buf;
    int turns = 1;
    if (is_multi[i]) turns = std::min(spec.max_turns, 2 + extra(rng));
    for (int k = 0; k < turns; ++k) {
      Turn t;
      if (spec.prefill_heavy) {
        t.prompt_tokens = spec.max_tokens_per_message;
        t.response_tokens = 1;
      } else {
        t.prompt_tokens = clamp_tokens(prompt_tokens(rng));
        t.response_tokens = clamp_tokens(response_tokens(rng));
      }
      t.prompt_words = default_words(t.prompt_tokens, spec.words_per_token);
      t.response_words = default_words(t.response_tokens, spec.words_per_token);
      s.turns.push_back(t);
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---- trace generation -------------------------------------------------------

Trace synthesize_arrivals(std::vector<SessionScript> scripts, int concurrency_target,
                          std::uint64_t seed, const SpeedModel& speeds) {
  if (scripts.empty()) throw std::runtime_error("synthesize_arrivals: no sessions");
  if (concurrency_target <= 0)
    throw std::runtime_error("synthesize_arrivals: concurrency_target must be positive");
  if (static_cast<std::size_t>(concurrency_target) > scripts.size())
    throw std::runtime_error("synthesize_arrivals: concurrency_target exceeds session count");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> reading(speeds.reading_wpm_mean,
                                           speeds.sigma_frac * speeds.reading_wpm_mean);
  std::normal_distribution<double> typing(speeds.typing_wpm_mean,
                                          speeds.sigma_frac * speeds.typing_wpm_mean);
  for (auto& s : scripts) {
    if (speeds.sample) {
      s.user.reading_wpm = std::max(0.1 * speeds.reading_wpm_mean, reading(rng));
      s.user.typing_wpm = std::max(0.1 * speeds.typing_wpm_mean, typing(rng));
    } else {
      s.user.reading_wpm = speeds.reading_wpm_mean;
      s.user.typing_wpm = speeds.typing_wpm_mean;
    }
  }

  Trace trace;
  trace.seed = seed;
  trace.concurrency_target = concurrency_target;
  trace.sessions = std::move(scripts);
  for (std::uint32_t si = 0; si < trace.sessions.size(); ++si) {
    const auto& s = trace.sessions[si];
    if (s.turns.empty()) throw std::runtime_error("synthesize_arrivals: session with no turns");
    for (std::uint32_t k = 0; k < s.turns.size(); ++k) {
      TraceEvent e;
      e.kind = EventKind::Inference;
      e.session_index = si;
      e.turn_index = k;
      if (k == 0) {
        e.anchor = AnchorPoint::SlotOpen;
        e.anchor_turn = 0;
        e.delta = 0;
      } else {
        e.anchor = AnchorPoint::PrevCompletion;
        e.anchor_turn = k - 1;
        // Rounded per component so advisory injection can subtract the typing
        // part back out exactly.
        e.delta = think_ns(s.turns[k - 1].response_words, s.user.reading_wpm) +
                  think_ns(s.turns[k].prompt_words, s.user.typing_wpm);
      }
      trace.events.push_back(e);
    }
  }
  return trace;
}

Trace inject_advisories(Trace trace, double miss_fraction, std::uint64_t seed) {
  if (miss_fraction < 0 || miss_fraction > 1)
    throw std::runtime_error("inject_advisories: miss_fraction out of range");
  for (const auto& e : trace.events)
    if (e.kind == EventKind::Advisory)
      throw std::runtime_error("inject_advisories: trace already carries advisories");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<TraceEvent> events;
  events.reserve(trace.events.size() * 2);
  for (const auto& e : trace.events) {
    if (e.kind == EventKind::Inference && e.turn_index > 0 &&
        e.anchor == AnchorPoint::PrevCompletion) {
      const auto& s = trace.sessions[e.session_index];
      if (coin(rng) < miss_fraction) {
        ++trace.dropped_advisories;
      } else {
        TraceEvent adv;
        adv.kind = EventKind::Advisory;
        adv.session_index = e.session_index;
        adv.turn_index = e.turn_index;
        adv.anchor = e.anchor;
        adv.anchor_turn = e.anchor_turn;
        const Ns type = think_ns(s.turns[e.turn_index].prompt_words, s.user.typing_wpm);
        adv.delta = std::max<Ns>(0, e.delta - type);
        if (s.priority == PriorityClass::High) adv.advisory.priority = 1;
        events.push_back(adv);
      }
    }
    events.push_back(e);
  }
  trace.events = std::move(events);
  return trace;
}

void assign_priorities(std::vector<SessionScript>& scripts, double high_fraction,
                       std::uint64_t seed) {
  if (high_fraction < 0 || high_fraction > 1)
    throw std::runtime_error("assign_priorities: fraction out of range");
  const int n_high = static_cast<int>(std::llround(high_fraction * scripts.size()));
  std::vector<std::size_t> order(scripts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  for (auto& s : scripts) s.priority = PriorityClass::Normal;
  for (int i = 0; i < n_high && i < static_cast<int>(order.size()); ++i)
    scripts[order[i]].priority = PriorityClass::High;
}

// ---- agent pipelines --------------------------------------------------------

namespace {

std::vector<int> topo_order(const AgentGraph& graph) {
  const int n = static_cast<int>(graph.stages.size());
  std::vector<std::vector<int>> succ(n);
  std::vector<int> indeg(n, 0);
  for (const auto& [u, v] : graph.edges) {
    if (u < 0 || u >= n || v < 0 || v >= n)
      throw std::runtime_error("agent graph: edge references unknown stage");
    succ[u].push_back(v);
    ++indeg[v];
  }
  // Kahn with the smallest ready stage index first, so linearization is a
  // deterministic function of the graph.
  std::vector<int> order;
  std::vector<int> ready;
  for (int i = 0; i < n; ++i)
    if (indeg[i] == 0) ready.push_back(i);
  while (!ready.empty()) {
    std::sort(ready.begin(), ready.end());
    int u = ready.front();
    ready.erase(ready.begin());
    order.push_back(u);
    for (int v : succ[u])
      if (--indeg[v] == 0) ready.push_back(v);
  }
  if (static_cast<int>(order.size()) != n)
    throw std::runtime_error("agent graph: cycle detected");
  return order;
}

}  // namespace

Trace generate_agent_trace(const AgentGraph& graph, int n_jobs, std::uint64_t seed) {
  if (graph.stages.empty()) throw std::runtime_error("agent graph: no stages");
  if (n_jobs <= 0) throw std::runtime_error("generate_agent_trace: n_jobs must be positive");
  for (const auto& st : graph.stages)
    if (st.prompt_tokens <= 0 || st.response_tokens <= 0)
      throw std::runtime_error("agent graph: stage token counts must be positive");

  const std::vector<int> order = topo_order(graph);
  std::vector<int> turn_of_stage(graph.stages.size());
  for (std::size_t k = 0; k < order.size(); ++k) turn_of_stage[order[k]] = static_cast<int>(k);

  Trace trace;
  trace.seed = seed;
  trace.concurrency_target = n_jobs;
  for (int j = 0; j < n_jobs; ++j) {
    SessionScript s;
    char buf[16];
    std::snprintf(buf, sizeof buf, "job-%04d", j);
    s.session_id = buf;
    for (int stage : order) {
      Turn t;
      t.prompt_tokens = graph.stages[stage].prompt_tokens;
      t.response_tokens = graph.stages[stage].response_tokens;
      s.turns.push_back(t);
    }
    trace.sessions.push_back(std::move(s));
  }
  for (std::uint32_t j = 0; j < trace.sessions.size(); ++j) {
    // Advisories first per turn: a stage's successors are announced the
    // moment the stage starts running.
    std::vector<std::vector<TraceEvent>> advisories(order.size());
    for (const auto& [u, v] : graph.edges) {
      TraceEvent adv;
      adv.kind = EventKind::Advisory;
      adv.session_index = j;
      adv.turn_index = static_cast<std::uint32_t>(turn_of_stage[v]);
      adv.anchor = AnchorPoint::PrevArrival;
      adv.anchor_turn = static_cast<std::uint32_t>(turn_of_stage[u]);
      adv.delta = 0;
      adv.advisory.expected_arrival = ns_from_sec(graph.stages[u].lower_bound_s);
      advisories[turn_of_stage[v]].push_back(adv);
    }
    for (std::size_t k = 0; k < order.size(); ++k) {
      for (const auto& adv : advisories[k]) trace.events.push_back(adv);
      TraceEvent e;
      e.kind = EventKind::Inference;
      e.session_index = j;
      e.turn_index = static_cast<std::uint32_t>(k);
      if (k == 0) {
        e.anchor = AnchorPoint::SlotOpen;
        e.anchor_turn = 0;
      } else {
        e.anchor = AnchorPoint::PrevCompletion;
        e.anchor_turn = static_cast<std::uint32_t>(k - 1);
      }
      e.delta = 0;
      trace.events.push_back(e);
    }
  }
  return trace;
}

AgentGraph review_cycle_graph() {
  AgentGraph g;
  auto stage = [&g](const std::string& name, std::int64_t prompt, std::int64_t response,
                    double bound_s) {
    g.stages.push_back({name, prompt, response, bound_s});
    return static_cast<int>(g.stages.size()) - 1;
  };
  const int architect = stage("architect", 512, 384, 4.0);
  int prev = stage("engineer", 256, 512, 6.0);
  g.edges.emplace_back(architect, prev);
  for (int i = 1; i <= 3; ++i) {
    const int qa = stage("qa-" + std::to_string(i), 128, 256, 3.0);
    g.edges.emplace_back(prev, qa);
    const int rev = stage("engineer-rev-" + std::to_string(i), 192, 384, 5.0);
    g.edges.emplace_back(qa, rev);
    prev = rev;
  }
  return g;
}

// ---- trace file I/O ---------------------------------------------------------

namespace {

const char* anchor_name(AnchorPoint a) {
  switch (a) {
    case AnchorPoint::SlotOpen: return "slot_open";
    case AnchorPoint::PrevArrival: return "prev_arrival";
    case AnchorPoint::PrevCompletion: return "prev_completion";
  }
  return "?";
}

AnchorPoint anchor_from(const std::string& s) {
  if (s == "slot_open") return AnchorPoint::SlotOpen;
  if (s == "prev_arrival") return AnchorPoint::PrevArrival;
  if (s == "prev_completion") return AnchorPoint::PrevCompletion;
  throw std::runtime_error("trace: unknown anchor " + s);
}

}  // namespace

void write_trace(const std::string& path, const Trace& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("trace: cannot write " + path);
  json header = {{"schema", "symsim-trace/1"},
                 {"seed", trace.seed},
                 {"concurrency_target", trace.concurrency_target},
                 {"dropped_advisories", trace.dropped_advisories},
                 {"workload_hash", workload_hash(trace)}};
  out << header.dump() << "\n";
  for (const auto& s : trace.sessions) {
    json rec = {{"kind", "session"},
                {"session_id", s.session_id},
                {"model_id", s.model_id},
                {"priority", s.priority == PriorityClass::High ? "high" : "normal"},
                {"reading_wpm", s.user.reading_wpm},
                {"typing_wpm", s.user.typing_wpm}};
    out << rec.dump() << "\n";
  }
  for (const auto& e : trace.events) {
    const auto& s = trace.sessions[e.session_index];
    json rec = {{"kind", e.kind == EventKind::Advisory ? "advisory" : "inference"},
                {"session_id", s.session_id},
                {"turn_index", e.turn_index},
                {"anchor", anchor_name(e.anchor)},
                {"anchor_turn", e.anchor_turn},
                {"time_or_delta", e.delta}};
    if (e.kind == EventKind::Inference) {
      const auto& t = s.turns.at(e.turn_index);
      rec["prompt_tokens"] = t.prompt_tokens;
      rec["response_tokens"] = t.response_tokens;
      rec["prompt_words"] = t.prompt_words;
      rec["response_words"] = t.response_words;
    } else {
      json adv;
      adv["expected_arrival"] =
          e.advisory.expected_arrival ? json(to_sec(*e.advisory.expected_arrival)) : json(nullptr);
      adv["ordered"] = e.advisory.ordered;
      adv["priority"] = e.advisory.priority ? json(*e.advisory.priority) : json(nullptr);
      rec["advisory"] = adv;
    }
    out << rec.dump() << "\n";
  }
}

Trace read_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("trace: cannot open " + path);
  Trace trace;
  std::unordered_map<std::string, std::uint32_t> session_index;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& ex) {
      throw std::runtime_error("trace: line " + std::to_string(lineno) + ": " + ex.what());
    }
    auto fail = [&lineno](const std::string& why) -> std::runtime_error {
      return std::runtime_error("trace: line " + std::to_string(lineno) + ": " + why);
    };
    if (!have_header) {
      if (rec.value("schema", "") != "symsim-trace/1") throw fail("missing or unknown schema header");
      trace.seed = rec.value("seed", 0ull);
      trace.concurrency_target = rec.value("concurrency_target", 1);
      trace.dropped_advisories = rec.value("dropped_advisories", 0ll);
      have_header = true;
      continue;
    }
    const std::string kind = rec.value("kind", "");
    if (kind == "session") {
      SessionScript s;
      s.session_id = rec.at("session_id").get<std::string>();
      s.model_id = rec.value("model_id", std::string("llama-3.1-8b"));
      s.priority =
          rec.value("priority", "normal") == std::string("high") ? PriorityClass::High
                                                                 : PriorityClass::Normal;
      s.user.reading_wpm = rec.value("reading_wpm", 200.0);
      s.user.typing_wpm = rec.value("typing_wpm", 40.0);
      if (!session_index.emplace(s.session_id, trace.sessions.size()).second)
        throw fail("duplicate session " + s.session_id);
      trace.sessions.push_back(std::move(s));
    } else if (kind == "inference" || kind == "advisory") {
      TraceEvent e;
      const std::string sid = rec.at("session_id").get<std::string>();
      auto it = session_index.find(sid);
      if (it == session_index.end()) throw fail("event references unknown session " + sid);
      e.session_index = it->second;
      e.turn_index = rec.at("turn_index").get<std::uint32_t>();
      e.anchor = anchor_from(rec.at("anchor").get<std::string>());
      e.anchor_turn = rec.at("anchor_turn").get<std::uint32_t>();
      e.delta = rec.at("time_or_delta").get<Ns>();
      if (e.delta < 0) throw fail("negative delta");
      auto& s = trace.sessions[e.session_index];
      if (kind == "inference") {
        e.kind = EventKind::Inference;
        if (e.turn_index != s.turns.size())
          throw fail("inference turns for " + sid + " out of order");
        if (e.turn_index == 0) {
          if (e.anchor != AnchorPoint::SlotOpen) throw fail("turn 0 must anchor to slot_open");
        } else if (e.anchor == AnchorPoint::SlotOpen) {
          throw fail("only turn 0 may anchor to slot_open");
        } else if (e.anchor_turn >= e.turn_index) {
          throw fail("anchor_turn must precede the turn");
        }
        Turn t;
        t.prompt_tokens = rec.at("prompt_tokens").get<std::int64_t>();
        t.response_tokens = rec.at("response_tokens").get<std::int64_t>();
        if (t.prompt_tokens <= 0 || t.response_tokens <= 0)
          throw fail("token counts must be positive");
        t.prompt_words = rec.value("prompt_words", default_words(t.prompt_tokens, 0.75));
        t.response_words = rec.value("response_words", default_words(t.response_tokens, 0.75));
        s.turns.push_back(t);
      } else {
        e.kind = EventKind::Advisory;
        if (e.anchor == AnchorPoint::SlotOpen) throw fail("advisories cannot anchor to slot_open");
        if (e.anchor_turn >= e.turn_index) throw fail("anchor_turn must precede the turn");
        const auto& adv = rec.at("advisory");
        if (!adv.at("expected_arrival").is_null())
          e.advisory.expected_arrival = ns_from_sec(adv.at("expected_arrival").get<double>());
        e.advisory.ordered = adv.value("ordered", false);
        if (!adv.at("priority").is_null()) e.advisory.priority = adv.at("priority").get<int>();
      }
      trace.events.push_back(e);
    } else {
      throw fail("unknown record kind '" + kind + "'");
    }
  }
  if (!have_header) throw std::runtime_error("trace: empty file " + path);
  if (trace.sessions.empty()) throw std::runtime_error("trace: no sessions in " + path);
  for (const auto& s : trace.sessions)
    if (s.turns.empty()) throw std::runtime_error("trace: session " + s.session_id + " has no turns");
  for (const auto& e : trace.events)
    if (e.turn_index >= trace.sessions[e.session_index].turns.size())
      throw std::runtime_error("trace: event references missing turn in session " +
                               trace.sessions[e.session_index].session_id);
  if (trace.concurrency_target <= 0 ||
      static_cast<std::size_t>(trace.concurrency_target) > trace.sessions.size())
    throw std::runtime_error("trace: concurrency_target out of range");
  return trace;
}

}  // namespace symsim
