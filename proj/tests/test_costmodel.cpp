#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "symsim/costmodel.hpp"

using namespace symsim;

// Every expected value below is worked out by hand from the profile numbers,
// not read back from the functions under test.

TEST_CASE("prefill time is tokens over throughput, batch independent") {
  GpuProfile gpu;  // 8192 tokens/s
  CHECK(prefill_time(1024, gpu) == 125'000'000);   // 1024/8192 s = 125 ms
  CHECK(prefill_time(8192, gpu) == 1'000'000'000);  // exactly one second
  CHECK(prefill_time(1, gpu) == 122'070);           // 1/8192 s, rounded to ns
  CHECK_THROWS(prefill_time(0, gpu));
  CHECK_THROWS(prefill_time(-5, gpu));
}

TEST_CASE("decode step follows the affine memory-bound model") {
  GpuProfile gpu;  // base 12 ms, half batch 16
  CHECK(decode_step_time(1, gpu) == 12'750'000);   // 12 * (1 + 1/16)
  CHECK(decode_step_time(8, gpu) == 18'000'000);   // 12 * 1.5
  CHECK(decode_step_time(16, gpu) == 24'000'000);  // doubles at the half batch
  CHECK(decode_step_time(32, gpu) == 36'000'000);  // 12 * 3
  // Quadrupling the batch from 8 to 32 exactly doubles the step latency.
  CHECK(decode_step_time(32, gpu) == 2 * decode_step_time(8, gpu));
  CHECK_THROWS(decode_step_time(0, gpu));
}

TEST_CASE("measured decode curve interpolates and clamps") {
  GpuProfile gpu;
  gpu.decode_curve_ms = {{1, 10.0}, {16, 20.0}, {64, 40.0}};
  CHECK(decode_step_time(1, gpu) == ns_from_ms(10.0));
  CHECK(decode_step_time(16, gpu) == ns_from_ms(20.0));
  CHECK(decode_step_time(64, gpu) == ns_from_ms(40.0));
  CHECK(decode_step_time(128, gpu) == ns_from_ms(40.0));  // clamp high
  // batch 8 sits 7/15 of the way from 10 ms to 20 ms
  CHECK(decode_step_time(8, gpu) == ns_from_ms(10.0 + 10.0 * 7.0 / 15.0));
  // batch 40 sits 24/48 of the way from 20 ms to 40 ms
  CHECK(decode_step_time(40, gpu) == ns_from_ms(30.0));
}

TEST_CASE("kv cache footprint") {
  GpuProfile gpu;  // 1.1 MB/token, 32 layers
  CHECK(kv_bytes(0, gpu) == 0);
  CHECK(kv_bytes(16, gpu) == 17'600'000);
  CHECK(kv_bytes(238'000, gpu) == 261'800'000'000);
  // 238K tokens at 1.1 MB/token lands within 3% of a 256 GB DRAM tier.
  const double gap =
      std::abs(static_cast<double>(kv_bytes(238'000, gpu)) - 256e9) / 256e9;
  CHECK(gap < 0.03);
  CHECK(kv_bytes_per_layer(16, gpu) == 550'000);  // 17.6 MB / 32, exact
  CHECK_THROWS(kv_bytes(-1, gpu));
}

TEST_CASE("per-layer bytes round up so layers cover the total") {
  GpuProfile gpu;
  gpu.kv_bytes_per_token = 1'000'001;  // indivisible by 32 on purpose
  gpu.num_layers = 32;
  const std::int64_t total = kv_bytes(1, gpu);
  const std::int64_t per = kv_bytes_per_layer(1, gpu);
  CHECK(per == 31'251);  // ceil(1000001/32)
  CHECK(per * 32 >= total);
  CHECK((per - 1) * 32 < total);
}

TEST_CASE("transfer time is bytes over bandwidth plus fixed latency") {
  LinkProfile links;  // 25 GB/s pcie, 3 GB/s disk, 12.5 GB/s network, 10 us
  CHECK(transfer_time(1'000'000'000, Link::PcieH2D, links) == 40'010'000);
  CHECK(transfer_time(1'000'000'000, Link::PcieD2H, links) == 40'010'000);
  CHECK(transfer_time(1'000'000'000, Link::Network, links) == 80'010'000);
  CHECK(transfer_time(2'420'000'000, Link::Network, links) == 193'610'000);
  CHECK(transfer_time(550'000, Link::PcieD2H, links) == 32'000);
  CHECK(transfer_time(550'000, Link::DiskWrite, links) == 193'333);
  CHECK(transfer_time(1'100'000, Link::Network, links) == 98'000);
  CHECK(transfer_time(1'100'000, Link::PcieH2D, links) == 54'000);
  CHECK(transfer_time(0, Link::DiskRead, links) == 0);  // no latency charge
  CHECK_THROWS(transfer_time(-1, Link::Network, links));
}

TEST_CASE("profile validation rejects nonsense") {
  GpuProfile gpu;
  CHECK_NOTHROW(gpu.validate());
  gpu.prefill_throughput = 0;
  CHECK_THROWS(gpu.validate());
  gpu = GpuProfile{};
  gpu.num_layers = 0;
  CHECK_THROWS(gpu.validate());
  gpu = GpuProfile{};
  gpu.decode_curve_ms = {{8, 10.0}, {8, 12.0}};  // not strictly increasing
  CHECK_THROWS(gpu.validate());
  gpu = GpuProfile{};
  gpu.decode_curve_ms = {{4, -1.0}};
  CHECK_THROWS(gpu.validate());

  LinkProfile links;
  CHECK_NOTHROW(links.validate());
  links.disk_bandwidth = 0;
  CHECK_THROWS(links.validate());
  links = LinkProfile{};
  links.per_transfer_latency = -1;
  CHECK_THROWS(links.validate());
}
