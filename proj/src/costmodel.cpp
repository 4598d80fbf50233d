#include "symsim/costmodel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace symsim {

void GpuProfile::validate() const {
  if (prefill_throughput <= 0) throw std::runtime_error("gpu: prefill_throughput must be positive");
  if (decode_base_ms <= 0) throw std::runtime_error("gpu: decode_base_ms must be positive");
  if (decode_half_batch <= 0) throw std::runtime_error("gpu: decode_half_batch must be positive");
  if (hbm_capacity <= 0) throw std::runtime_error("gpu: hbm_capacity must be positive");
  if (kv_bytes_per_token <= 0) throw std::runtime_error("gpu: kv_bytes_per_token must be positive");
  if (num_layers <= 0) throw std::runtime_error("gpu: num_layers must be positive");
  for (std::size_t i = 0; i < decode_curve_ms.size(); ++i) {
    if (decode_curve_ms[i].first <= 0 || decode_curve_ms[i].second <= 0)
      throw std::runtime_error("gpu: decode_curve_ms entries must be positive");
    if (i > 0 && decode_curve_ms[i].first <= decode_curve_ms[i - 1].first)
      throw std::runtime_error("gpu: decode_curve_ms batch sizes must be strictly increasing");
  }
}

void LinkProfile::validate() const {
  if (pcie_bandwidth <= 0) throw std::runtime_error("link: pcie_bandwidth must be positive");
  if (disk_bandwidth <= 0) throw std::runtime_error("link: disk_bandwidth must be positive");
  if (network_bandwidth <= 0) throw std::runtime_error("link: network_bandwidth must be positive");
  if (per_transfer_latency < 0) throw std::runtime_error("link: per_transfer_latency must be nonnegative");
}

const char* link_name(Link link) {
  switch (link) {
    case Link::PcieH2D: return "pcie_h2d";
    case Link::PcieD2H: return "pcie_d2h";
    case Link::DiskRead: return "disk_read";
    case Link::DiskWrite: return "disk_write";
    case Link::Network: return "network";
  }
  return "?";
}

std::int64_t kv_bytes(std::int64_t tokens, const GpuProfile& gpu) {
  if (tokens < 0) throw std::runtime_error("kv_bytes: negative token count");
  return tokens * gpu.kv_bytes_per_token;
}

std::int64_t kv_bytes_per_layer(std::int64_t tokens, const GpuProfile& gpu) {
  const std::int64_t total = kv_bytes(tokens, gpu);
  const std::int64_t layers = gpu.num_layers;
  return (total + layers - 1) / layers;
}

Ns prefill_time(std::int64_t tokens, const GpuProfile& gpu) {
  if (tokens <= 0) throw std::runtime_error("prefill_time: token count must be positive");
  return ns_from_sec(static_cast<double>(tokens) / gpu.prefill_throughput);
}

Ns decode_step_time(int batch_size, const GpuProfile& gpu) {
  if (batch_size <= 0) throw std::runtime_error("decode_step_time: batch size must be positive");
  double ms;
  if (!gpu.decode_curve_ms.empty()) {
    const auto& curve = gpu.decode_curve_ms;
    const double b = batch_size;
    if (b <= curve.front().first) {
      ms = curve.front().second;
    } else if (b >= curve.back().first) {
      ms = curve.back().second;
    } else {
      std::size_t hi = 1;
      while (curve[hi].first < b) ++hi;
      const auto& [b0, t0] = curve[hi - 1];
      const auto& [b1, t1] = curve[hi];
      ms = t0 + (t1 - t0) * (b - b0) / (b1 - b0);
    }
  } else {
    ms = gpu.decode_base_ms * (1.0 + batch_size / gpu.decode_half_batch);
  }
  return ns_from_ms(ms);
}

Ns transfer_time(std::int64_t bytes, Link link, const LinkProfile& links) {
  if (bytes < 0) throw std::runtime_error("transfer_time: negative byte count");
  if (bytes == 0) return 0;
  double bw;
  switch (link) {
    case Link::PcieH2D:
    case Link::PcieD2H: bw = links.pcie_bandwidth; break;
    case Link::DiskRead:
    case Link::DiskWrite: bw = links.disk_bandwidth; break;
    case Link::Network: bw = links.network_bandwidth; break;
    default: throw std::logic_error("transfer_time: bad link");
  }
  return links.per_transfer_latency + ns_from_sec(static_cast<double>(bytes) / bw);
}

}  // namespace symsim
