#ifndef DGQA_REFERENCES_H_
#define DGQA_REFERENCES_H_

#include <cstdint>
#include <string>
#include <vector>

#include "dgqa/distortion.h"

namespace dgqa {

// Procedural pristine image: a dead-leaves occlusion model (power-law sized
// shaded ellipses) with fractal texture and mild optical blur. Its MSCN
// statistics are heavy-tailed like those of natural photographs.
RasterImage dead_leaves_image(int width, int height, uint64_t seed);

// `count` references with ids "ref_000", "ref_001", ...; image i uses seed
// derive_seed(seed, i) so corpora with the same seed share a prefix.
std::vector<Reference> procedural_references(int count, int size, uint64_t seed,
                                             const std::string& prefix = "ref");

}  // namespace dgqa

#endif  // DGQA_REFERENCES_H_
