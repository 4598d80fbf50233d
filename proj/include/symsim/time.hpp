#pragma once

#include <cmath>
#include <cstdint>

namespace symsim {

// All simulation time is integer nanoseconds so event ordering is exact and
// reruns are byte-identical across platforms. Seconds and milliseconds only
// appear at the edges (configs, reports).
using Ns = std::int64_t;

inline constexpr Ns kNsPerSec = 1'000'000'000;

inline Ns ns_from_sec(double s) { return static_cast<Ns>(std::llround(s * 1e9)); }
inline Ns ns_from_ms(double ms) { return static_cast<Ns>(std::llround(ms * 1e6)); }
inline Ns ns_from_us(double us) { return static_cast<Ns>(std::llround(us * 1e3)); }
inline double to_sec(Ns t) { return static_cast<double>(t) / 1e9; }
inline double to_ms(Ns t) { return static_cast<double>(t) / 1e6; }

}  // namespace symsim
