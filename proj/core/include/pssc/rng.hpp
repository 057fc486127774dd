#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace pssc {

/// A seeded random stream whose full state (engine and the normal
/// distribution's cached variate) can be saved and restored exactly.
class RngStream {
 public:
  RngStream() : RngStream(0) {}
  explicit RngStream(std::uint64_t seed);

  /// Substream derived from (master seed, name); independent of call order.
  static RngStream derive(std::uint64_t master_seed, std::string_view name);

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  /// Uniform integer in [0, n).
  int uniform_int(int n);
  std::uint64_t bits() { return engine_(); }

  std::mt19937_64& engine() noexcept { return engine_; }

  std::string serialize() const;
  static RngStream deserialize(const std::string& state);

  bool operator==(const RngStream& other) const;

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace pssc
