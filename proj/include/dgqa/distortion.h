#ifndef DGQA_DISTORTION_H_
#define DGQA_DISTORTION_H_

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "dgqa/distortion_tables.h"
#include "dgqa/image.h"
#include "dgqa/rng.h"

namespace dgqa {

// Index of a distortion family; numbering follows KADID-10k where a family
// is implemented. A source domain is one family.
enum class DomainId : int {};

inline constexpr int to_int(DomainId id) { return static_cast<int>(id); }

struct DistortionSpec {
  DomainId family{1};
  int level = 1;  // 1..5
  uint64_t seed = 0;
};

// In-place operator: receives the input image, the level parameter from the
// family table and an RNG seeded from the spec.
using DistortionOperator =
    std::function<void(RasterImage& image, double param, Rng& rng)>;

struct FamilyDescriptor {
  DomainId id;
  std::string name;
  tables::LevelTable levels;
  DistortionOperator apply;
};

class DistortionRegistry {
 public:
  DistortionRegistry() = default;
  explicit DistortionRegistry(std::vector<FamilyDescriptor> families);

  // Throws RegistryError for unknown ids.
  const FamilyDescriptor& lookup(DomainId id) const;
  const FamilyDescriptor* find(DomainId id) const;
  // Case-sensitive name lookup; throws RegistryError.
  const FamilyDescriptor& lookup(const std::string& name) const;

  const std::vector<FamilyDescriptor>& entries() const { return families_; }
  std::vector<DomainId> ids() const;
  size_t size() const { return families_.size(); }

  // Registry restricted to the given ids, in the given order.
  DistortionRegistry subset(const std::vector<DomainId>& ids) const;

 private:
  std::vector<FamilyDescriptor> families_;
};

// The 15-family desk-scale registry: #1 #2 #3 #9 #10 #11 #13 #14 #16 #17 #18
// #19 #22 #24 #25. Other KADID indices are not implemented; adding one means
// adding a level table and an operator here.
const DistortionRegistry& registry_default();

RasterImage apply_distortion(const RasterImage& image,
                             const DistortionSpec& spec,
                             const DistortionRegistry& registry);
RasterImage apply_distortion(const RasterImage& image,
                             const DistortionSpec& spec);

// 10 log10(1 / MSE) over all pixels and channels; capped at kPsnrCap.
inline constexpr double kPsnrCap = 100.0;
double psnr(const RasterImage& reference, const RasterImage& distorted);

// Pseudo-MOS in [0,100]: 100 * clamp((PSNR - 15) / 35, 0, 1).
double pseudo_label_from_psnr(double psnr_db);
double pseudo_label(const RasterImage& reference, const RasterImage& distorted);

struct Sample {
  RasterImage image;
  double quality = 0.0;  // pseudo-MOS, higher is better
  std::string reference_id;
  int level = 0;  // 0 when unknown (external images)
};

struct DomainDataset {
  DomainId domain{0};
  std::string name;
  std::vector<Sample> samples;

  // Throws ValidationError on non-finite labels or missing reference ids.
  void validate() const;
};

struct Reference {
  std::string id;
  RasterImage image;
};

// One sample per (reference, level); the per-sample seed is seed XOR the
// sample index, where the index enumerates references in order and levels
// in ascending order within a reference.
DomainDataset generate_domain(const std::vector<Reference>& references,
                              DomainId family, const std::set<int>& levels,
                              uint64_t seed,
                              const DistortionRegistry& registry =
                                  registry_default());

}  // namespace dgqa

#endif  // DGQA_DISTORTION_H_
