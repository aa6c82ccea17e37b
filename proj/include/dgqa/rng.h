#ifndef DGQA_RNG_H_
#define DGQA_RNG_H_

#include <cstdint>
#include <random>

namespace dgqa {

using Rng = std::mt19937_64;

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Combines a parent seed with a stream index into an independent child seed.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(uint64_t seed) { return Rng(splitmix64(seed)); }

}  // namespace dgqa

#endif  // DGQA_RNG_H_
