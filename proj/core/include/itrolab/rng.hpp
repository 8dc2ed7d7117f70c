#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace itrolab {

// Portable seeded generator. std::mt19937_64 is bit-specified by the
// standard; the distributions on top of it are not, so uniform/normal/
// categorical draws are implemented here to keep streams identical across
// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Child generator for a fixed path of labels, e.g. (seed, stream, step,
  // query). Independent of how many draws the parent has made.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform();

  // Standard normal via Box-Muller (one value per call, no caching).
  double normal();

  // Index drawn from a probability vector by inverse CDF. Mass that is lost
  // to rounding falls on the last index with positive probability.
  int categorical(std::span<const double> probs);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace itrolab
