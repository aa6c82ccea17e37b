// In-memory experiment orchestration: corpus and target construction, the
// paired DGQA-vs-baseline comparison, and the supervised greedy probe.
#ifndef DGQA_EXPERIMENT_H_
#define DGQA_EXPERIMENT_H_

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgqa/distortion.h"
#include "dgqa/features.h"
#include "dgqa/metrics.h"
#include "dgqa/models.h"
#include "dgqa/selection.h"

namespace dgqa {

enum class CompositionMode {
  kSingleDraw,  // each image gets one component drawn by weight
  kStratified,  // one component per image, counts fixed by weight
  kStacked,     // every component applied in order
};
const char* to_string(CompositionMode mode);
CompositionMode composition_mode_from_string(const std::string& name);

struct MixtureComponent {
  DomainId family{0};
  std::set<int> levels{1, 2, 3, 4, 5};
  double weight = 1.0;
};

struct TargetMixtureRecipe {
  std::vector<MixtureComponent> components;
  CompositionMode mode = CompositionMode::kSingleDraw;

  void validate(const DistortionRegistry& registry) const;
  std::vector<double> normalized_weights() const;
};

nlohmann::json to_json(const TargetMixtureRecipe& recipe);
TargetMixtureRecipe recipe_from_json(const nlohmann::json& j,
                                     const DistortionRegistry& registry);

// Target images with their (withheld) pseudo-MOS and the families applied to
// each image.
struct TargetSet {
  std::vector<Sample> samples;
  std::vector<std::vector<DomainId>> provenance;

  std::vector<const RasterImage*> images() const;
  std::vector<double> labels() const;
};

// Image i is built from references[i % size]. Stratified counts use largest
// remainders; their order is shuffled.
TargetSet generate_target(const std::vector<Reference>& references,
                          const TargetMixtureRecipe& recipe, size_t count,
                          uint64_t seed,
                          const DistortionRegistry& registry = registry_default());

// One dataset per family, seeded per family id.
std::vector<DomainDataset> generate_sources(
    const std::vector<Reference>& references, const std::vector<DomainId>& families,
    const std::set<int>& levels, uint64_t seed,
    const DistortionRegistry& registry = registry_default());

inline constexpr double kQualityScale = 100.0;

// quality -> 100 - quality.
void invert_labels(DomainDataset& dataset);

struct ExperimentOptions {
  TrainConfig classifier_config;
  TrainConfig regressor_config;
  PatchPolicy patches;
  std::optional<double> tau;  // default 1/k
  int repeats = 5;
  uint64_t seed = 0;
  double split_ratio = 0.8;
  bool balance_domains = false;
  PlccMode plcc_mode = PlccMode::kLogistic;
};

struct ClassifierStage {
  SoftmaxClassifier model;
  TrainLog log;
  double held_out_accuracy = 0.0;
  size_t train_samples = 0;
  size_t held_out_samples = 0;
};

// Trains on the train side of a split-by-reference of the sources and
// reports accuracy (argmax of mean test-patch probabilities) on the rest.
ClassifierStage train_domain_stage(const std::vector<DomainDataset>& sources,
                                   const PatchFeaturizer& featurizer,
                                   const TrainConfig& config, double split_ratio,
                                   uint64_t split_seed);

SelectionResult select_stage(const SoftmaxClassifier& classifier,
                             std::span<const RasterImage* const> target_images,
                             const PatchFeaturizer& featurizer,
                             std::optional<double> tau);

// Training samples of the given domains whose reference falls in the train
// side of `plan`, in source order. With `balance`, every domain is subsampled (seeded) to the
// smallest per-domain count.
std::vector<const Sample*> training_pool(const std::vector<DomainDataset>& sources,
                                         const std::vector<DomainId>& domains,
                                         const SplitPlan& plan, bool balance,
                                         uint64_t seed);

std::vector<double> predict_all(const Regressor& model,
                                std::span<const RasterImage* const> images,
                                const PatchFeaturizer& featurizer);

struct RepeatOutcome {
  int run = 0;
  uint64_t seed = 0;
  Regressor dgqa;
  Regressor baseline;
  size_t dgqa_train_size = 0;
  size_t baseline_train_size = 0;
  std::optional<MetricPair> dgqa_metrics;  // empty without target labels
  std::optional<MetricPair> baseline_metrics;
  std::string error;
};

struct ExperimentOutcome {
  ClassifierStage classifier;
  SelectionResult selection;
  std::vector<RepeatOutcome> repeats;

  // Two rows (dgqa, baseline) per repeat with metrics.
  std::vector<ResultRow> rows() const;
  std::optional<double> median_srcc(bool dgqa) const;
  std::optional<double> median_plcc(bool dgqa) const;
};

// Seed of the classifier stage for a run seeded with `seed`.
uint64_t classifier_seed(uint64_t seed);

// Repeat r uses seed + r for its source split and regressor initialization;
// both regressors in a repeat see the same split and seed.
RepeatOutcome train_repeat(const std::vector<DomainDataset>& sources,
                           const std::vector<DomainId>& selected,
                           const ExperimentOptions& options,
                           const PatchFeaturizer& featurizer, int run);

// Fills the metric fields; an undefined metric leaves them empty and sets
// `error`.
void evaluate_repeat(RepeatOutcome& repeat,
                     std::span<const RasterImage* const> target_images,
                     const std::vector<double>& target_labels, PlccMode mode,
                     const PatchFeaturizer& featurizer);

ExperimentOutcome run_experiment(const std::vector<DomainDataset>& sources,
                                 std::span<const RasterImage* const> target_images,
                                 const std::optional<std::vector<double>>& target_labels,
                                 const ExperimentOptions& options,
                                 const PatchFeaturizer& featurizer);

struct GdsOptions {
  TrainConfig regressor_config;
  int max_rounds = 0;  // 0: k (every domain may be added)
  uint64_t seed = 0;
  double split_ratio = 0.8;
  double target_val_ratio = 0.5;
};

// Splits the labeled target by reference into validation and test halves,
// then scores each candidate subset by validation SRCC of a regressor trained
// on the subset's train-side samples.
GreedySelection run_gds(const std::vector<DomainDataset>& sources,
                        const std::vector<Sample>& target,
                        const GdsOptions& options,
                        const PatchFeaturizer& featurizer);

}  // namespace dgqa

#endif  // DGQA_EXPERIMENT_H_
