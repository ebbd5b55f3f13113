#pragma once

#include <cstdint>
#include <initializer_list>

namespace nenn {

// splitmix64 finalizer; a well-mixed bijection on 64-bit words.
std::uint64_t mix64(std::uint64_t x);

// Deterministically combine a base seed with any number of stream indices,
// e.g. derive_seed(run_seed, {sample_index, step}).
std::uint64_t derive_seed(std::uint64_t base,
                          std::initializer_list<std::uint64_t> indices);

// Explicit sequence of seeds. Every stochastic forward draws the next value,
// so a run is reproducible from its starting seed alone.
class SeedStream {
 public:
  explicit SeedStream(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next();

 private:
  std::uint64_t state_;
};

}  // namespace nenn
