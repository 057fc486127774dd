#include "pssc/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace pssc {

RngStream::RngStream(std::uint64_t seed) : engine_(seed) {}

RngStream RngStream::derive(std::uint64_t master_seed, std::string_view name) {
  // FNV-1a over the name keeps substreams stable across builds.
  std::uint64_t h = 1469598103934665603ull;
  for (char ch : name) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  RngStream out;
  out.engine_.seed(seq);
  return out;
}

int RngStream::uniform_int(int n) {
  if (n <= 0) throw std::invalid_argument("uniform_int needs n > 0");
  std::uniform_int_distribution<int> dist(0, n - 1);
  return dist(engine_);
}

std::string RngStream::serialize() const {
  std::ostringstream os;
  os << engine_ << ' ' << normal_ << ' ' << uniform_;
  return os.str();
}

RngStream RngStream::deserialize(const std::string& state) {
  RngStream out;
  std::istringstream is(state);
  is >> out.engine_ >> out.normal_ >> out.uniform_;
  if (!is) throw std::invalid_argument("malformed RNG state");
  return out;
}

bool RngStream::operator==(const RngStream& other) const {
  return engine_ == other.engine_ && normal_ == other.normal_;
}

}  // namespace pssc
