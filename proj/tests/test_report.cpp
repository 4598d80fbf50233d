// Aggregation and serialization of run reports, checked against hand-computed
// values on small synthetic record sets.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "symsim/report.hpp"

using namespace symsim;

namespace {

std::string temp_path(const std::string& name) {
  return std::string("/tmp/symsim_report_") + name;
}

RequestRecord rec(std::uint32_t session, std::uint32_t turn, bool high, Ns arrival, Ns first,
                  Ns decode_entry, Ns finish, int participations, std::int64_t prefill,
                  std::int64_t redundant, std::int64_t target) {
  RequestRecord r;
  r.session = session;
  r.turn = turn;
  r.node = static_cast<int>(session % 2);
  r.high_priority = high;
  r.recomputed = redundant > 0;
  r.prompt_tokens = prefill - redundant;
  r.prefill_tokens = prefill;
  r.redundant_tokens = redundant;
  r.target_tokens = target;
  r.arrival = arrival;
  r.admit = arrival;
  r.decode_entry = decode_entry;
  r.first_token = first;
  r.finish = finish;
  r.load_stall = 0;
  r.participations = participations;
  return r;
}

}  // namespace

TEST_CASE("per-record derived metrics") {
  RequestRecord r;
  r.arrival = 1'000'000'000;
  r.first_token = 3'500'000'000;
  r.decode_entry = 2'000'000'000;
  r.finish = 6'000'000'000;
  r.participations = 8;
  r.target_tokens = 100;
  CHECK(r.ttft_s() == doctest::Approx(2.5));
  CHECK(r.tpot_ms() == doctest::Approx(500.0));  // 4000 ms over 8 steps
  CHECK(r.normalized_latency_ms_per_token() == doctest::Approx(50.0));

  r.participations = 0;
  CHECK(r.tpot_ms() == 0.0);
  r.target_tokens = 0;
  CHECK(r.normalized_latency_ms_per_token() == 0.0);
}

TEST_CASE("filters select by priority and turn") {
  const RequestRecord high0 = rec(0, 0, true, 0, 1, 1, 2, 1, 10, 0, 1);
  const RequestRecord norm2 = rec(1, 2, false, 0, 1, 1, 2, 1, 10, 0, 1);

  CHECK(matches(high0, Filter{}));
  CHECK(matches(high0, Filter{.only_high = true}));
  CHECK_FALSE(matches(high0, Filter{.only_normal = true}));
  CHECK_FALSE(matches(high0, Filter{.only_multi_turn = true}));

  CHECK(matches(norm2, Filter{.only_normal = true}));
  CHECK(matches(norm2, Filter{.only_multi_turn = true}));
  CHECK_FALSE(matches(norm2, Filter{.only_high = true}));
  CHECK(matches(norm2, Filter{.only_normal = true, .only_multi_turn = true}));
}

TEST_CASE("filtered means over a three-record report") {
  RunReport rep;
  // ttft 1s, tpot 100ms, norm 200ms/tok, stall 500ms, turn 0, normal
  RequestRecord r0 = rec(0, 0, false, 0, 1'000'000'000, 1'000'000'000, 2'000'000'000, 10, 100, 0, 10);
  r0.load_stall = 500'000'000;
  // ttft 5s, tpot 400ms, norm 250ms/tok, stall 1000ms, turn 1, high
  RequestRecord r1 = rec(0, 1, true, 0, 5'000'000'000, 1'000'000'000, 5'000'000'000, 10, 300, 200, 20);
  r1.load_stall = 1'000'000'000;
  // ttft 3s, tpot 500ms, norm 500ms/tok, stall 0, turn 2, normal
  RequestRecord r2 = rec(1, 2, false, 0, 3'000'000'000, 2'000'000'000, 4'000'000'000, 4, 600, 300, 8);
  rep.records = {r0, r1, r2};

  CHECK(mean_ttft_s(rep) == doctest::Approx(3.0));
  CHECK(mean_ttft_s(rep, Filter{.only_high = true}) == doctest::Approx(5.0));
  CHECK(mean_ttft_s(rep, Filter{.only_normal = true}) == doctest::Approx(2.0));
  CHECK(mean_ttft_s(rep, Filter{.only_multi_turn = true}) == doctest::Approx(4.0));

  CHECK(mean_tpot_ms(rep) == doctest::Approx((100.0 + 400.0 + 500.0) / 3.0));
  CHECK(mean_tpot_ms(rep, Filter{.only_high = true}) == doctest::Approx(400.0));
  CHECK(mean_tpot_ms(rep, Filter{.only_normal = true}) == doctest::Approx(300.0));

  CHECK(mean_normalized_latency_ms(rep) == doctest::Approx((200.0 + 250.0 + 500.0) / 3.0));
  CHECK(mean_load_stall_ms(rep) == doctest::Approx(500.0));
  CHECK(total_prefill_tokens(rep) == 1000);
  CHECK(total_redundant_tokens(rep) == 500);

  RunReport no_high;
  no_high.records = {r0, r2};
  CHECK(mean_ttft_s(no_high, Filter{.only_high = true}) == 0.0);
}

TEST_CASE("steady-state rate trims the outer completions") {
  RunReport rep;
  for (int i = 1; i <= 10; ++i)
    rep.records.push_back(rec(0, 0, false, 0, 1, 1, static_cast<Ns>(i) * 1'000'000'000, 1, 1, 0, 1));
  // middle 80%: indexes 1..8 of the sorted finishes, 7 completions over 7 s
  CHECK(steady_rps(rep) == doctest::Approx(1.0));

  RunReport one;
  one.records = {rec(0, 0, false, 0, 1, 1, 5, 1, 1, 0, 1)};
  CHECK(steady_rps(one) == 0.0);

  RunReport flat;
  for (int i = 0; i < 10; ++i)
    flat.records.push_back(rec(0, 0, false, 0, 1, 1, 7'000'000'000, 1, 1, 0, 1));
  CHECK(steady_rps(flat) == 0.0);
}

TEST_CASE("wasted prefill fraction is bucketed by turn") {
  RunReport rep;
  rep.records.push_back(rec(0, 0, false, 0, 1, 1, 2, 1, 100, 0, 1));
  rep.records.push_back(rec(1, 0, false, 0, 1, 1, 2, 1, 50, 0, 1));
  rep.records.push_back(rec(0, 1, false, 0, 1, 1, 2, 1, 150, 120, 1));
  rep.records.push_back(rec(1, 1, false, 0, 1, 1, 2, 1, 150, 80, 1));

  const auto wf = wasted_fraction_by_turn(rep);
  REQUIRE(wf.size() == 2);
  CHECK(wf[0].first == 0);
  CHECK(wf[0].second == doctest::Approx(0.0));
  CHECK(wf[1].first == 1);
  CHECK(wf[1].second == doctest::Approx(200.0 / 300.0));
}

TEST_CASE("traffic aggregation prefers the prebuilt table") {
  RunReport rep;
  TransferRecord t;
  t.from = Tier::Host;
  t.to = Tier::Device;
  t.reason = TransferReason::Demand;
  t.bytes = 550'000;
  rep.transfers.push_back(t);
  rep.transfers.push_back(t);
  t.from = Tier::Device;
  t.to = Tier::Host;
  t.reason = TransferReason::Persist;
  t.bytes = 1'100'000;
  rep.transfers.push_back(t);

  const auto agg = traffic_by_reason(rep);
  REQUIRE(agg.size() == 2);
  const TrafficKey demand{Tier::Host, Tier::Device, TransferReason::Demand};
  const TrafficKey persist{Tier::Device, Tier::Host, TransferReason::Persist};
  CHECK(agg.at(demand).transfers == 2);
  CHECK(agg.at(demand).bytes == 1'100'000);
  CHECK(agg.at(persist).transfers == 1);
  CHECK(agg.at(persist).bytes == 1'100'000);

  // once the report carries an aggregated table, the raw ledger is ignored
  RunReport pre;
  pre.transfers = rep.transfers;
  pre.traffic[demand] = TrafficTotal{42, 7};
  const auto kept = traffic_by_reason(pre);
  REQUIRE(kept.size() == 1);
  CHECK(kept.at(demand).bytes == 42);
  CHECK(kept.at(demand).transfers == 7);
}

TEST_CASE("report JSON round trip preserves comparison fields") {
  RunReport rep;
  rep.policy = "symphony";
  rep.num_nodes = 4;
  rep.concurrency = 16;
  rep.trace_seed = 99;
  rep.workload = 0xabcdef0123456789ull;
  rep.makespan = 123'456'789'012;
  RequestRecord r0 = rec(3, 1, true, 10, 20, 15, 40, 2, 128, 64, 2);
  r0.load_stall = 7;
  r0.node = 2;
  rep.records = {r0, rec(5, 0, false, 0, 9, 9, 18, 3, 32, 0, 3)};
  rep.traffic[{Tier::Host, Tier::Device, TransferReason::Prefetch}] = TrafficTotal{35'200'000, 32};
  rep.traffic[{Tier::Disk, Tier::Host, TransferReason::Demand}] = TrafficTotal{1'100'000, 2};
  rep.advisory_lead_s = {0.5, 1.5};
  rep.advisories_processed = 2;
  rep.advisories_ignored = 1;
  rep.imbalance = ImbalanceSummary{1.25, 2.0, 9};
  rep.samples.push_back({1'000'000, {3, 1}});
  rep.samples.push_back({2'000'000, {2, 2}});

  const std::string path = temp_path("roundtrip.json");
  write_report_json(path, rep);
  const RunReport back = read_report_json(path);

  CHECK(back.policy == "symphony");
  CHECK(back.num_nodes == 4);
  CHECK(back.concurrency == 16);
  CHECK(back.trace_seed == 99);
  CHECK(back.workload == rep.workload);
  CHECK(back.makespan == rep.makespan);
  REQUIRE(back.records.size() == 2);
  const RequestRecord& b0 = back.records[0];
  CHECK(b0.session == 3);
  CHECK(b0.turn == 1);
  CHECK(b0.node == 2);
  CHECK(b0.high_priority);
  CHECK(b0.recomputed);
  CHECK(b0.prompt_tokens == 64);
  CHECK(b0.prefill_tokens == 128);
  CHECK(b0.redundant_tokens == 64);
  CHECK(b0.target_tokens == 2);
  CHECK(b0.arrival == 10);
  CHECK(b0.admit == 10);
  CHECK(b0.decode_entry == 15);
  CHECK(b0.first_token == 20);
  CHECK(b0.finish == 40);
  CHECK(b0.load_stall == 7);
  CHECK(b0.participations == 2);
  REQUIRE(back.traffic.size() == 2);
  CHECK(back.traffic.at({Tier::Host, Tier::Device, TransferReason::Prefetch}).bytes == 35'200'000);
  CHECK(back.traffic.at({Tier::Host, Tier::Device, TransferReason::Prefetch}).transfers == 32);
  CHECK(back.advisory_lead_s == std::vector<double>{0.5, 1.5});
  CHECK(back.advisories_processed == 2);
  CHECK(back.advisories_ignored == 1);
  CHECK(back.imbalance.mean == doctest::Approx(1.25));
  CHECK(back.imbalance.peak == doctest::Approx(2.0));
  CHECK(back.imbalance.samples == 9);
  REQUIRE(back.samples.size() == 2);
  CHECK(back.samples[0].time == 1'000'000);
  CHECK(back.samples[0].load == std::vector<int>{3, 1});
  std::remove(path.c_str());
}

TEST_CASE("reading a non-report file fails loudly") {
  const std::string path = temp_path("bogus.json");
  {
    std::ofstream out(path);
    out << "{\"format\": \"something-else/9\"}\n";
  }
  CHECK_THROWS_WITH_AS(read_report_json(path), (path + ": not a report file").c_str(),
                       std::runtime_error);
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_report_json("/nonexistent/nowhere.json"), std::runtime_error);
}

TEST_CASE("records TSV has one row per request plus a header") {
  RunReport rep;
  rep.records = {rec(1, 0, false, 0, 2'000'000'000, 1, 4'000'000'000, 4, 16, 0, 4),
                 rec(2, 1, true, 5, 6, 6, 7, 1, 8, 8, 1)};
  const std::string path = temp_path("records.tsv");
  write_records_tsv(path, rep);

  std::ifstream in(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] ==
        "session\tturn\tnode\thigh\trecomputed\tprompt\tprefill\tredundant\ttarget"
        "\tarrival_ns\tadmit_ns\tdecode_entry_ns\tfirst_token_ns\tfinish_ns\tload_stall_ns"
        "\tparticipations\tttft_s\ttpot_ms");
  // 18 columns means 17 tabs on every data row
  for (std::size_t i = 1; i < lines.size(); ++i)
    CHECK(std::count(lines[i].begin(), lines[i].end(), '\t') == 17);
  CHECK(lines[1].substr(0, 4) == "1\t0\t");
  std::remove(path.c_str());
}

TEST_CASE("comparison refuses mismatched workloads") {
  RunReport a;
  a.policy = "symphony";
  a.num_nodes = 2;
  a.concurrency = 3;
  a.workload = 7;
  a.records = {rec(0, 0, false, 0, 1, 1, 2, 1, 16, 0, 1)};
  RunReport b = a;
  b.policy = "recompute";

  const std::string table = compare_table({a, b});
  CHECK(table.find("symphony/n2/c3") != std::string::npos);
  CHECK(table.find("recompute/n2/c3") != std::string::npos);
  CHECK(table.find("ttft_s") != std::string::npos);

  b.workload = 8;
  CHECK_THROWS_WITH_AS(compare_table({a, b}),
                       "runs cover different workloads (hash mismatch); refusing to compare",
                       std::runtime_error);
  const std::string path = temp_path("compare.csv");
  CHECK_THROWS_AS(write_compare_csv(path, {a, b}), std::runtime_error);
  b.workload = 7;
  write_compare_csv(path, {a, b});
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header.find("policy") != std::string::npos);
  CHECK(header.find("steady_rps") != std::string::npos);
  CHECK(header.find(',') != std::string::npos);
  std::remove(path.c_str());
}

TEST_CASE("mean realized advisory lead") {
  RunReport rep;
  CHECK(mean_realized_lead_s(rep) == 0.0);
  rep.advisory_lead_s = {1.0, 3.0};
  CHECK(mean_realized_lead_s(rep) == doctest::Approx(2.0));
}
