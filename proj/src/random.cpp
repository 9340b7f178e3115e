#include "cfrag/random.hpp"

#include <cmath>
#include <numbers>

#include "cfrag/io.hpp"

namespace cfrag {

double Rng::normal() {
  double u1 = unit();
  while (u1 <= 0.0) u1 = unit();
  const double u2 = unit();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stage) {
  std::uint64_t h = fnv1a(stage);
  for (int b = 0; b < 8; ++b) {
    const unsigned char byte = static_cast<unsigned char>(global_seed >> (8 * b));
    h ^= byte;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace cfrag
