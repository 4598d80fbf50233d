#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "symsim/time.hpp"

namespace symsim {

// Per-GPU timing and sizing model. Prefill is compute-bound and its
// throughput is batch-independent; decode is memory-bound and follows the
// affine step-latency model decode_base_ms * (1 + batch / decode_half_batch).
// A measured (batch -> ms) curve can replace the affine model: when
// decode_curve_ms is nonempty, lookups interpolate it linearly and clamp at
// the endpoints.
struct GpuProfile {
  double prefill_throughput = 8192.0;  // tokens per second
  double decode_base_ms = 12.0;        // step latency as batch -> 0
  double decode_half_batch = 16.0;     // batch size that doubles the base latency
  std::int64_t hbm_capacity = 80'000'000'000;
  std::int64_t kv_bytes_per_token = 1'100'000;  // all layers combined
  int num_layers = 32;
  std::vector<std::pair<int, double>> decode_curve_ms;

  void validate() const;
};

struct LinkProfile {
  double pcie_bandwidth = 25e9;       // bytes per second
  double disk_bandwidth = 3e9;        // bytes per second
  double network_bandwidth = 12.5e9;  // bytes per second (100 Gbps)
  Ns per_transfer_latency = 10'000;   // fixed cost charged once per transfer

  void validate() const;
};

enum class Link { PcieH2D, PcieD2H, DiskRead, DiskWrite, Network };

const char* link_name(Link link);

// Total cache footprint of `tokens` tokens across all layers.
std::int64_t kv_bytes(std::int64_t tokens, const GpuProfile& gpu);

// Footprint of one layer's slice, rounded up so num_layers * per_layer covers
// the total.
std::int64_t kv_bytes_per_layer(std::int64_t tokens, const GpuProfile& gpu);

// Engine-occupied time to prefill `tokens` tokens. Throws on tokens <= 0.
Ns prefill_time(std::int64_t tokens, const GpuProfile& gpu);

// Latency of one decode step over `batch_size` concurrently decoding
// requests. Throws on batch_size <= 0.
Ns decode_step_time(int batch_size, const GpuProfile& gpu);

// Wall time for one transfer of `bytes` over `link`, including the fixed
// per-transfer latency. Zero-byte transfers are free.
Ns transfer_time(std::int64_t bytes, Link link, const LinkProfile& links);

}  // namespace symsim
