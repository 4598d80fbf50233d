#include "symsim/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace symsim {

using nlohmann::json;

namespace {

void require_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::runtime_error(where + ": expected an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      throw std::runtime_error(where + ": unknown key '" + key + "'");
}

GpuProfile gpu_from(const json& j) {
  require_keys(j,
               {"prefill_throughput", "decode_base_ms", "decode_half_batch", "hbm_capacity",
                "kv_bytes_per_token", "num_layers", "decode_curve_ms"},
               "gpu");
  GpuProfile g;
  g.prefill_throughput = j.value("prefill_throughput", g.prefill_throughput);
  g.decode_base_ms = j.value("decode_base_ms", g.decode_base_ms);
  g.decode_half_batch = j.value("decode_half_batch", g.decode_half_batch);
  g.hbm_capacity = j.value("hbm_capacity", g.hbm_capacity);
  g.kv_bytes_per_token = j.value("kv_bytes_per_token", g.kv_bytes_per_token);
  g.num_layers = j.value("num_layers", g.num_layers);
  if (j.contains("decode_curve_ms"))
    for (const auto& pt : j.at("decode_curve_ms"))
      g.decode_curve_ms.emplace_back(pt.at(0).get<int>(), pt.at(1).get<double>());
  return g;
}

json gpu_to(const GpuProfile& g) {
  json j{{"prefill_throughput", g.prefill_throughput},
         {"decode_base_ms", g.decode_base_ms},
         {"decode_half_batch", g.decode_half_batch},
         {"hbm_capacity", g.hbm_capacity},
         {"kv_bytes_per_token", g.kv_bytes_per_token},
         {"num_layers", g.num_layers}};
  if (!g.decode_curve_ms.empty()) {
    json curve = json::array();
    for (const auto& [b, ms] : g.decode_curve_ms) curve.push_back({b, ms});
    j["decode_curve_ms"] = curve;
  }
  return j;
}

LinkProfile links_from(const json& j) {
  require_keys(
      j, {"pcie_bandwidth", "disk_bandwidth", "network_bandwidth", "per_transfer_latency_us"},
      "links");
  LinkProfile l;
  l.pcie_bandwidth = j.value("pcie_bandwidth", l.pcie_bandwidth);
  l.disk_bandwidth = j.value("disk_bandwidth", l.disk_bandwidth);
  l.network_bandwidth = j.value("network_bandwidth", l.network_bandwidth);
  if (j.contains("per_transfer_latency_us"))
    l.per_transfer_latency = ns_from_us(j.at("per_transfer_latency_us").get<double>());
  return l;
}

json links_to(const LinkProfile& l) {
  return json{{"pcie_bandwidth", l.pcie_bandwidth},
              {"disk_bandwidth", l.disk_bandwidth},
              {"network_bandwidth", l.network_bandwidth},
              {"per_transfer_latency_us", static_cast<double>(l.per_transfer_latency) / 1000.0}};
}

EngineConfig engine_from(const json& j) {
  require_keys(j, {"max_batch", "prefill_mode", "pause_latency_budget_ms"}, "engine");
  EngineConfig e;
  e.max_batch = j.value("max_batch", e.max_batch);
  const std::string mode = j.value("prefill_mode", std::string("interleave"));
  if (mode == "interleave")
    e.prefill_mode = PrefillMode::Interleave;
  else if (mode == "decode_first")
    e.prefill_mode = PrefillMode::DecodeFirst;
  else
    throw std::runtime_error("engine.prefill_mode: unknown mode '" + mode + "'");
  e.pause_latency_budget_ms = j.value("pause_latency_budget_ms", e.pause_latency_budget_ms);
  return e;
}

json engine_to(const EngineConfig& e) {
  return json{
      {"max_batch", e.max_batch},
      {"prefill_mode", e.prefill_mode == PrefillMode::Interleave ? "interleave" : "decode_first"},
      {"pause_latency_budget_ms", e.pause_latency_budget_ms}};
}

}  // namespace

void ExperimentConfig::validate() const {
  gpu.validate();
  links.validate();
  if (trace_path.empty()) throw std::runtime_error("config: trace_path is required");
  if (policies.empty()) throw std::runtime_error("config: at least one policy");
  for (const auto& p : policies) policy_from(p);  // throws on unknown names
  if (num_nodes < 1) throw std::runtime_error("config: num_nodes must be >= 1");
  for (int c : concurrencies)
    if (c < 1) throw std::runtime_error("config: concurrencies must be >= 1");
  if (engine.max_batch < 1) throw std::runtime_error("config: engine.max_batch must be >= 1");
  if (engine.pause_latency_budget_ms < 0)
    throw std::runtime_error("config: pause_latency_budget_ms must be >= 0");
  if (device_capacity < 0) throw std::runtime_error("config: device_capacity must be >= 0");
  if (host_capacity < 0) throw std::runtime_error("config: host_capacity must be >= 0");
  if (sample_period_ms <= 0) throw std::runtime_error("config: sample_period_ms must be > 0");
  if (max_sim_time_s <= 0) throw std::runtime_error("config: max_sim_time_s must be > 0");
  if (invariant_stride < 0) throw std::runtime_error("config: invariant_stride must be >= 0");
}

ExperimentConfig read_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  json j;
  in >> j;
  require_keys(j,
               {"name", "trace_path", "policies", "concurrencies", "num_nodes", "gpu", "links",
                "engine", "device_capacity", "host_capacity", "disk_capacity",
                "sample_period_ms", "max_sim_time_s", "record_events", "invariant_stride"},
               "config");
  ExperimentConfig cfg;
  cfg.name = j.value("name", cfg.name);
  cfg.trace_path = j.value("trace_path", cfg.trace_path);
  if (j.contains("policies")) cfg.policies = j.at("policies").get<std::vector<std::string>>();
  if (j.contains("concurrencies"))
    cfg.concurrencies = j.at("concurrencies").get<std::vector<int>>();
  cfg.num_nodes = j.value("num_nodes", cfg.num_nodes);
  if (j.contains("gpu")) cfg.gpu = gpu_from(j.at("gpu"));
  if (j.contains("links")) cfg.links = links_from(j.at("links"));
  if (j.contains("engine")) cfg.engine = engine_from(j.at("engine"));
  cfg.device_capacity = j.value("device_capacity", cfg.device_capacity);
  cfg.host_capacity = j.value("host_capacity", cfg.host_capacity);
  cfg.disk_capacity = j.value("disk_capacity", cfg.disk_capacity);
  cfg.sample_period_ms = j.value("sample_period_ms", cfg.sample_period_ms);
  cfg.max_sim_time_s = j.value("max_sim_time_s", cfg.max_sim_time_s);
  cfg.record_events = j.value("record_events", cfg.record_events);
  cfg.invariant_stride = j.value("invariant_stride", cfg.invariant_stride);
  cfg.validate();
  return cfg;
}

void write_experiment(const std::string& path, const ExperimentConfig& cfg) {
  json j{{"name", cfg.name},
         {"trace_path", cfg.trace_path},
         {"policies", cfg.policies},
         {"concurrencies", cfg.concurrencies},
         {"num_nodes", cfg.num_nodes},
         {"gpu", gpu_to(cfg.gpu)},
         {"links", links_to(cfg.links)},
         {"engine", engine_to(cfg.engine)},
         {"device_capacity", cfg.device_capacity},
         {"host_capacity", cfg.host_capacity},
         {"disk_capacity", cfg.disk_capacity},
         {"sample_period_ms", cfg.sample_period_ms},
         {"max_sim_time_s", cfg.max_sim_time_s},
         {"record_events", cfg.record_events},
         {"invariant_stride", cfg.invariant_stride}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(1) << '\n';
}

std::string Cell::dir_name(std::uint64_t trace_seed) const {
  return policy + "_" + std::to_string(concurrency) + "_" + std::to_string(trace_seed);
}

std::vector<Cell> derive_cells(const ExperimentConfig& cfg) {
  std::vector<Cell> cells;
  const std::vector<int> concs = cfg.concurrencies.empty() ? std::vector<int>{0}
                                                           : cfg.concurrencies;
  for (const auto& p : cfg.policies)
    for (int c : concs) cells.push_back(Cell{p, c});
  return cells;
}

RunConfig to_run_config(const ExperimentConfig& cfg, const std::string& policy) {
  RunConfig rc;
  rc.policy = policy_from(policy);
  rc.num_nodes = cfg.num_nodes;
  rc.gpu = cfg.gpu;
  rc.links = cfg.links;
  rc.engine = cfg.engine;
  rc.device_capacity = cfg.device_capacity;
  rc.host_capacity = cfg.host_capacity;
  rc.disk_capacity = cfg.disk_capacity;
  rc.sample_period = ns_from_ms(cfg.sample_period_ms);
  rc.max_sim_time = ns_from_sec(cfg.max_sim_time_s);
  rc.record_events = cfg.record_events;
  rc.invariant_stride = cfg.invariant_stride;
  return rc;
}

}  // namespace symsim
