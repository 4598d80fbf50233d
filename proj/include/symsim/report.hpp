#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "symsim/kvstore.hpp"
#include "symsim/scheduler.hpp"
#include "symsim/time.hpp"

namespace symsim {

// One completed request (one turn of one session).
struct RequestRecord {
  std::uint32_t session = 0;
  std::uint32_t turn = 0;
  int node = -1;
  bool high_priority = false;
  bool recomputed = false;  // prefill included replayed history
  std::int64_t prompt_tokens = 0;
  std::int64_t prefill_tokens = 0;
  std::int64_t redundant_tokens = 0;
  std::int64_t target_tokens = 0;
  Ns arrival = 0;
  Ns admit = 0;
  Ns decode_entry = 0;
  Ns first_token = 0;
  Ns finish = 0;
  Ns load_stall = 0;
  int participations = 0;

  double ttft_s() const { return to_sec(first_token - arrival); }
  // Per-token decode time over the decode window; cache-load stalls at decode
  // entry land inside this window by construction.
  double tpot_ms() const {
    return participations > 0 ? to_ms(finish - decode_entry) / participations : 0.0;
  }
  double normalized_latency_ms_per_token() const {
    return target_tokens > 0 ? to_ms(finish - arrival) / static_cast<double>(target_tokens) : 0.0;
  }
};

struct LoadSample {
  Ns time = 0;
  std::vector<int> load;
};

struct TrafficKey {
  Tier from = Tier::Device;
  Tier to = Tier::Device;
  TransferReason reason = TransferReason::Demand;
  bool operator<(const TrafficKey& o) const {
    return std::tie(from, to, reason) < std::tie(o.from, o.to, o.reason);
  }
};
struct TrafficTotal {
  std::int64_t bytes = 0;
  std::int64_t transfers = 0;
};

struct RunReport {
  std::string policy;
  int num_nodes = 0;
  int concurrency = 0;
  std::uint64_t trace_seed = 0;
  std::uint64_t workload = 0;  // workload hash; compared runs must match
  Ns makespan = 0;
  std::vector<RequestRecord> records;
  std::vector<LoadSample> samples;
  ImbalanceSummary imbalance;
  std::vector<TransferRecord> transfers;            // raw ledger (in-memory only)
  std::map<TrafficKey, TrafficTotal> traffic;       // aggregated ledger
  std::vector<RoutingRecord> routing;
  std::vector<double> advisory_lead_s;  // realized advisory-to-arrival lead
  std::int64_t advisories_processed = 0;
  std::int64_t advisories_ignored = 0;  // policy does not act on advisories
  std::vector<std::string> event_log;   // filled only when recording is on
};

// ---- aggregates --------------------------------------------------------------

struct Filter {
  bool only_high = false;
  bool only_normal = false;
  bool only_multi_turn = false;  // turn > 0
};

bool matches(const RequestRecord& r, const Filter& f);

double mean_ttft_s(const RunReport& rep, const Filter& f = {});
double mean_tpot_ms(const RunReport& rep, const Filter& f = {});
double mean_normalized_latency_ms(const RunReport& rep, const Filter& f = {});
double mean_load_stall_ms(const RunReport& rep, const Filter& f = {});
std::int64_t total_prefill_tokens(const RunReport& rep);
std::int64_t total_redundant_tokens(const RunReport& rep);

// Completions per second over the middle 80% of completions (by completion
// index), so warmup and drain do not pollute the steady-state rate.
double steady_rps(const RunReport& rep);

// Fraction of prefill work that replayed history, bucketed by turn index.
std::vector<std::pair<std::uint32_t, double>> wasted_fraction_by_turn(const RunReport& rep);

// The report's aggregated traffic, or a fresh aggregation of the raw ledger
// when the report still carries one.
std::map<TrafficKey, TrafficTotal> traffic_by_reason(const RunReport& rep);

double mean_realized_lead_s(const RunReport& rep);

// ---- serialization -----------------------------------------------------------

// Full report as one JSON document (aggregates + per-request records +
// samples; the raw transfer ledger is summarized, not dumped).
void write_report_json(const std::string& path, const RunReport& rep);

// One row per request, tab-separated, for plotting.
void write_records_tsv(const std::string& path, const RunReport& rep);

// Key metrics of several runs side by side. Throws if the runs' workload
// hashes differ (apples-to-apples only).
std::string compare_table(const std::vector<RunReport>& runs);
void write_compare_csv(const std::string& path, const std::vector<RunReport>& runs);

// Reads back the fields of a report JSON needed for comparison.
RunReport read_report_json(const std::string& path);

}  // namespace symsim
