#include "symsim/report.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace symsim {

using nlohmann::json;

bool matches(const RequestRecord& r, const Filter& f) {
  if (f.only_high && !r.high_priority) return false;
  if (f.only_normal && r.high_priority) return false;
  if (f.only_multi_turn && r.turn == 0) return false;
  return true;
}

namespace {
template <class F>
double mean_over(const RunReport& rep, const Filter& flt, F fn) {
  double sum = 0;
  std::int64_t n = 0;
  for (const auto& r : rep.records)
    if (matches(r, flt)) {
      sum += fn(r);
      ++n;
    }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}
}  // namespace

double mean_ttft_s(const RunReport& rep, const Filter& f) {
  return mean_over(rep, f, [](const RequestRecord& r) { return r.ttft_s(); });
}

double mean_tpot_ms(const RunReport& rep, const Filter& f) {
  return mean_over(rep, f, [](const RequestRecord& r) { return r.tpot_ms(); });
}

double mean_normalized_latency_ms(const RunReport& rep, const Filter& f) {
  return mean_over(rep, f,
                   [](const RequestRecord& r) { return r.normalized_latency_ms_per_token(); });
}

double mean_load_stall_ms(const RunReport& rep, const Filter& f) {
  return mean_over(rep, f, [](const RequestRecord& r) { return to_ms(r.load_stall); });
}

std::int64_t total_prefill_tokens(const RunReport& rep) {
  std::int64_t n = 0;
  for (const auto& r : rep.records) n += r.prefill_tokens;
  return n;
}

std::int64_t total_redundant_tokens(const RunReport& rep) {
  std::int64_t n = 0;
  for (const auto& r : rep.records) n += r.redundant_tokens;
  return n;
}

double steady_rps(const RunReport& rep) {
  const std::size_t n = rep.records.size();
  if (n < 2) return 0.0;
  std::vector<Ns> finishes;
  finishes.reserve(n);
  for (const auto& r : rep.records) finishes.push_back(r.finish);
  std::sort(finishes.begin(), finishes.end());
  const std::size_t lo = n / 10;
  const std::size_t hi = n - n / 10 - 1;
  if (hi <= lo || finishes[hi] <= finishes[lo]) return 0.0;
  return static_cast<double>(hi - lo) / to_sec(finishes[hi] - finishes[lo]);
}

std::vector<std::pair<std::uint32_t, double>> wasted_fraction_by_turn(const RunReport& rep) {
  std::map<std::uint32_t, std::pair<std::int64_t, std::int64_t>> by_turn;  // redundant, prefill
  for (const auto& r : rep.records) {
    auto& [red, pre] = by_turn[r.turn];
    red += r.redundant_tokens;
    pre += r.prefill_tokens;
  }
  std::vector<std::pair<std::uint32_t, double>> out;
  out.reserve(by_turn.size());
  for (const auto& [turn, v] : by_turn)
    out.emplace_back(turn, v.second > 0 ? static_cast<double>(v.first) / v.second : 0.0);
  return out;
}

std::map<TrafficKey, TrafficTotal> traffic_by_reason(const RunReport& rep) {
  if (!rep.traffic.empty() || rep.transfers.empty()) return rep.traffic;
  std::map<TrafficKey, TrafficTotal> out;
  for (const auto& t : rep.transfers) {
    TrafficTotal& tot = out[{t.from, t.to, t.reason}];
    tot.bytes += t.bytes;
    tot.transfers += 1;
  }
  return out;
}

double mean_realized_lead_s(const RunReport& rep) {
  if (rep.advisory_lead_s.empty()) return 0.0;
  double sum = 0;
  for (double v : rep.advisory_lead_s) sum += v;
  return sum / static_cast<double>(rep.advisory_lead_s.size());
}

// ---- serialization -----------------------------------------------------------

namespace {

Tier tier_from(const std::string& s) {
  if (s == "device") return Tier::Device;
  if (s == "host") return Tier::Host;
  if (s == "disk") return Tier::Disk;
  throw std::runtime_error("unknown tier '" + s + "'");
}

TransferReason reason_from(const std::string& s) {
  if (s == "prefetch") return TransferReason::Prefetch;
  if (s == "demand") return TransferReason::Demand;
  if (s == "purge") return TransferReason::Purge;
  if (s == "persist") return TransferReason::Persist;
  if (s == "migrate") return TransferReason::Migrate;
  throw std::runtime_error("unknown transfer reason '" + s + "'");
}

json record_to_json(const RequestRecord& r) {
  return json{{"session", r.session},
              {"turn", r.turn},
              {"node", r.node},
              {"high_priority", r.high_priority},
              {"recomputed", r.recomputed},
              {"prompt_tokens", r.prompt_tokens},
              {"prefill_tokens", r.prefill_tokens},
              {"redundant_tokens", r.redundant_tokens},
              {"target_tokens", r.target_tokens},
              {"arrival_ns", r.arrival},
              {"admit_ns", r.admit},
              {"decode_entry_ns", r.decode_entry},
              {"first_token_ns", r.first_token},
              {"finish_ns", r.finish},
              {"load_stall_ns", r.load_stall},
              {"participations", r.participations}};
}

RequestRecord record_from_json(const json& j) {
  RequestRecord r;
  r.session = j.at("session").get<std::uint32_t>();
  r.turn = j.at("turn").get<std::uint32_t>();
  r.node = j.at("node").get<int>();
  r.high_priority = j.at("high_priority").get<bool>();
  r.recomputed = j.at("recomputed").get<bool>();
  r.prompt_tokens = j.at("prompt_tokens").get<std::int64_t>();
  r.prefill_tokens = j.at("prefill_tokens").get<std::int64_t>();
  r.redundant_tokens = j.at("redundant_tokens").get<std::int64_t>();
  r.target_tokens = j.at("target_tokens").get<std::int64_t>();
  r.arrival = j.at("arrival_ns").get<Ns>();
  r.admit = j.at("admit_ns").get<Ns>();
  r.decode_entry = j.at("decode_entry_ns").get<Ns>();
  r.first_token = j.at("first_token_ns").get<Ns>();
  r.finish = j.at("finish_ns").get<Ns>();
  r.load_stall = j.at("load_stall_ns").get<Ns>();
  r.participations = j.at("participations").get<int>();
  return r;
}

}  // namespace

void write_report_json(const std::string& path, const RunReport& rep) {
  json j;
  j["format"] = "symsim-report/1";
  j["policy"] = rep.policy;
  j["num_nodes"] = rep.num_nodes;
  j["concurrency"] = rep.concurrency;
  j["trace_seed"] = rep.trace_seed;
  j["workload_hash"] = rep.workload;
  j["makespan_ns"] = rep.makespan;
  j["aggregates"] = json{
      {"requests", rep.records.size()},
      {"steady_rps", steady_rps(rep)},
      {"mean_ttft_s", mean_ttft_s(rep)},
      {"mean_tpot_ms", mean_tpot_ms(rep)},
      {"mean_tpot_ms_high", mean_tpot_ms(rep, {.only_high = true})},
      {"mean_tpot_ms_normal", mean_tpot_ms(rep, {.only_normal = true})},
      {"mean_normalized_latency_ms_per_token", mean_normalized_latency_ms(rep)},
      {"mean_load_stall_ms", mean_load_stall_ms(rep)},
      {"total_prefill_tokens", total_prefill_tokens(rep)},
      {"total_redundant_tokens", total_redundant_tokens(rep)},
      {"imbalance_mean", rep.imbalance.mean},
      {"imbalance_peak", rep.imbalance.peak},
      {"imbalance_samples", rep.imbalance.samples},
      {"mean_advisory_lead_s", mean_realized_lead_s(rep)},
      {"advisories_processed", rep.advisories_processed},
      {"advisories_ignored", rep.advisories_ignored},
  };
  json wf = json::array();
  for (const auto& [turn, frac] : wasted_fraction_by_turn(rep)) wf.push_back({turn, frac});
  j["aggregates"]["wasted_fraction_by_turn"] = wf;
  json traffic = json::array();
  for (const auto& [key, tot] : traffic_by_reason(rep))
    traffic.push_back(json{{"from", tier_name(key.from)},
                           {"to", tier_name(key.to)},
                           {"reason", reason_name(key.reason)},
                           {"bytes", tot.bytes},
                           {"transfers", tot.transfers}});
  j["traffic"] = traffic;
  j["advisory_lead_s"] = rep.advisory_lead_s;
  json recs = json::array();
  for (const auto& r : rep.records) recs.push_back(record_to_json(r));
  j["records"] = recs;
  json samples = json::array();
  for (const auto& s : rep.samples) samples.push_back(json{{"t_ns", s.time}, {"load", s.load}});
  j["samples"] = samples;

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(1) << '\n';
}

RunReport read_report_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  json j;
  in >> j;
  if (j.value("format", "") != std::string("symsim-report/1"))
    throw std::runtime_error(path + ": not a report file");
  RunReport rep;
  rep.policy = j.at("policy").get<std::string>();
  rep.num_nodes = j.at("num_nodes").get<int>();
  rep.concurrency = j.at("concurrency").get<int>();
  rep.trace_seed = j.at("trace_seed").get<std::uint64_t>();
  rep.workload = j.at("workload_hash").get<std::uint64_t>();
  rep.makespan = j.at("makespan_ns").get<Ns>();
  for (const auto& rj : j.at("records")) rep.records.push_back(record_from_json(rj));
  for (const auto& tj : j.at("traffic")) {
    TrafficKey key{tier_from(tj.at("from").get<std::string>()),
                   tier_from(tj.at("to").get<std::string>()),
                   reason_from(tj.at("reason").get<std::string>())};
    rep.traffic[key] = TrafficTotal{tj.at("bytes").get<std::int64_t>(),
                                    tj.at("transfers").get<std::int64_t>()};
  }
  rep.advisory_lead_s = j.at("advisory_lead_s").get<std::vector<double>>();
  const json& agg = j.at("aggregates");
  rep.imbalance.mean = agg.at("imbalance_mean").get<double>();
  rep.imbalance.peak = agg.at("imbalance_peak").get<double>();
  rep.imbalance.samples = agg.at("imbalance_samples").get<int>();
  rep.advisories_processed = agg.at("advisories_processed").get<std::int64_t>();
  rep.advisories_ignored = agg.at("advisories_ignored").get<std::int64_t>();
  for (const auto& sj : j.at("samples"))
    rep.samples.push_back({sj.at("t_ns").get<Ns>(), sj.at("load").get<std::vector<int>>()});
  return rep;
}

void write_records_tsv(const std::string& path, const RunReport& rep) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "session\tturn\tnode\thigh\trecomputed\tprompt\tprefill\tredundant\ttarget"
         "\tarrival_ns\tadmit_ns\tdecode_entry_ns\tfirst_token_ns\tfinish_ns\tload_stall_ns"
         "\tparticipations\tttft_s\ttpot_ms\n";
  for (const auto& r : rep.records) {
    out << r.session << '\t' << r.turn << '\t' << r.node << '\t' << (r.high_priority ? 1 : 0)
        << '\t' << (r.recomputed ? 1 : 0) << '\t' << r.prompt_tokens << '\t' << r.prefill_tokens
        << '\t' << r.redundant_tokens << '\t' << r.target_tokens << '\t' << r.arrival << '\t'
        << r.admit << '\t' << r.decode_entry << '\t' << r.first_token << '\t' << r.finish << '\t'
        << r.load_stall << '\t' << r.participations << '\t' << std::setprecision(9) << r.ttft_s()
        << '\t' << r.tpot_ms() << '\n';
  }
}

namespace {
struct CompareRow {
  std::string label;
  double rps, ttft, tpot, norm, stall;
  std::int64_t redundant;
  double imb_mean, imb_peak;
};

CompareRow row_of(const RunReport& r) {
  CompareRow row;
  row.label = r.policy + "/n" + std::to_string(r.num_nodes) + "/c" + std::to_string(r.concurrency);
  row.rps = steady_rps(r);
  row.ttft = mean_ttft_s(r);
  row.tpot = mean_tpot_ms(r);
  row.norm = mean_normalized_latency_ms(r);
  row.stall = mean_load_stall_ms(r);
  row.redundant = total_redundant_tokens(r);
  row.imb_mean = r.imbalance.mean;
  row.imb_peak = r.imbalance.peak;
  return row;
}

void check_same_workload(const std::vector<RunReport>& runs) {
  for (std::size_t i = 1; i < runs.size(); ++i)
    if (runs[i].workload != runs[0].workload)
      throw std::runtime_error("runs cover different workloads (hash mismatch); refusing to compare");
}
}  // namespace

std::string compare_table(const std::vector<RunReport>& runs) {
  if (runs.empty()) return "";
  check_same_workload(runs);
  std::ostringstream os;
  os << std::left << std::setw(26) << "run" << std::right << std::setw(9) << "rps"
     << std::setw(12) << "ttft_s" << std::setw(12) << "tpot_ms" << std::setw(14) << "norm_ms/tok"
     << std::setw(12) << "stall_ms" << std::setw(14) << "redundant" << std::setw(10) << "imb"
     << std::setw(10) << "imb_peak" << '\n';
  os << std::fixed;
  for (const auto& r : runs) {
    const CompareRow row = row_of(r);
    os << std::left << std::setw(26) << row.label << std::right << std::setprecision(2)
       << std::setw(9) << row.rps << std::setprecision(4) << std::setw(12) << row.ttft
       << std::setprecision(3) << std::setw(12) << row.tpot << std::setw(14) << row.norm
       << std::setw(12) << row.stall << std::setw(14) << row.redundant << std::setprecision(2)
       << std::setw(10) << row.imb_mean << std::setw(10) << row.imb_peak << '\n';
  }
  return os.str();
}

void write_compare_csv(const std::string& path, const std::vector<RunReport>& runs) {
  check_same_workload(runs);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "policy,num_nodes,concurrency,workload_hash,steady_rps,mean_ttft_s,mean_tpot_ms,"
         "mean_normalized_latency_ms_per_token,mean_load_stall_ms,total_redundant_tokens,"
         "imbalance_mean,imbalance_peak\n";
  out << std::setprecision(10);
  for (const auto& r : runs) {
    out << r.policy << ',' << r.num_nodes << ',' << r.concurrency << ',' << r.workload << ','
        << steady_rps(r) << ',' << mean_ttft_s(r) << ',' << mean_tpot_ms(r) << ','
        << mean_normalized_latency_ms(r) << ',' << mean_load_stall_ms(r) << ','
        << total_redundant_tokens(r) << ',' << r.imbalance.mean << ',' << r.imbalance.peak
        << '\n';
  }
}

}  // namespace symsim
