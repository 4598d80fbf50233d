#pragma once

#include <string>
#include <vector>

#include "symsim/simcore.hpp"

namespace symsim {

// A sweep of runs over one trace: every policy at every concurrency. The
// file format is JSON with exactly these keys; unknown keys are rejected so
// typos fail loudly instead of silently running defaults.
struct ExperimentConfig {
  std::string name = "experiment";
  std::string trace_path;
  std::vector<std::string> policies = {"symphony"};
  std::vector<int> concurrencies;  // empty: the trace's embedded target
  int num_nodes = 1;
  GpuProfile gpu;
  LinkProfile links;
  EngineConfig engine;
  std::int64_t device_capacity = 0;  // 0: gpu.hbm_capacity
  std::int64_t host_capacity = 256'000'000'000;
  std::int64_t disk_capacity = -1;
  double sample_period_ms = 250.0;
  double max_sim_time_s = 7.0 * 86400.0;
  bool record_events = false;
  int invariant_stride = 4096;

  void validate() const;  // throws on nonsense
};

ExperimentConfig read_experiment(const std::string& path);
void write_experiment(const std::string& path, const ExperimentConfig& cfg);

struct Cell {
  std::string policy;
  int concurrency = 0;  // 0: the trace's embedded target
  std::string dir_name(std::uint64_t trace_seed) const;
};

// policy x concurrency, in config order.
std::vector<Cell> derive_cells(const ExperimentConfig& cfg);

RunConfig to_run_config(const ExperimentConfig& cfg, const std::string& policy);

}  // namespace symsim
