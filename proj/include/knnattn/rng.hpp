#pragma once

#include <cstdint>
#include <random>

namespace knnattn {

/// Deterministic random stream identified by (seed, stream_id).
///
/// The same (seed, stream_id) always replays the same draw sequence; distinct
/// stream ids are seeded through splitmix64 mixing so their sequences are
/// statistically independent. One stream must not be shared across concurrent
/// callers; fan-out code derives per-task substreams first.
class RngStream {
 public:
  explicit RngStream(uint64_t seed, uint64_t stream_id = 0);

  uint64_t seed() const { return seed_; }
  uint64_t stream_id() const { return stream_id_; }

  /// Independent stream derived from this stream's identity (not its state).
  RngStream substream(uint64_t id) const;

  uint64_t next_u64() { return engine_(); }

  /// Uniform on the open interval (0, 1); exact endpoints are re-drawn so
  /// that log(-log(u)) stays finite downstream.
  double uniform_open01();

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi);

  double normal();

  std::mt19937_64& engine() { return engine_; }

 private:
  uint64_t seed_ = 0;
  uint64_t stream_id_ = 0;
  std::mt19937_64 engine_;
};

}  // namespace knnattn
