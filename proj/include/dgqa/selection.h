#ifndef DGQA_SELECTION_H_
#define DGQA_SELECTION_H_

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgqa/distortion.h"
#include "dgqa/models.h"

namespace dgqa {

// Row j: probability that target image j belongs to each source domain,
// averaged over that image's test patches.
FeatureMatrix domain_probabilities(const SoftmaxClassifier& classifier,
                                   std::span<const RasterImage* const> target_images,
                                   const PatchFeaturizer& featurizer);
// Same, from precomputed per-image patch features.
FeatureMatrix domain_probabilities(const SoftmaxClassifier& classifier,
                                   const std::vector<FeatureMatrix>& patch_features);

struct SimilarityReport {
  std::vector<DomainId> domain_ids;
  std::vector<double> sim;  // mean probability per source domain
  size_t n_target = 0;
  double tau = 0.0;  // set by select_similar_domains
};

// Column means of a row-stochastic matrix. Rows must sum to 1 within 1e-6.
SimilarityReport relative_similarity(const FeatureMatrix& probabilities,
                                     std::vector<DomainId> domain_ids);

enum class SelectionMethod { kDgds, kGds };
const char* to_string(SelectionMethod method);

struct SelectionResult {
  std::vector<DomainId> selected;  // in report order
  SimilarityReport report;
  SelectionMethod method = SelectionMethod::kDgds;

  bool is_selected(DomainId id) const;
};

// Keeps domains with sim > tau (default 1/k). If none qualifies, which only
// happens for an exactly uniform report, the first arg-max domain is kept.
SelectionResult select_similar_domains(const SimilarityReport& report,
                                       std::optional<double> tau = std::nullopt);

struct GreedyRound {
  int round = 0;
  DomainId added{0};
  double score = 0.0;
};

struct GreedySelection {
  SelectionResult result;  // method kGds; report.sim holds single-domain scores
  std::vector<GreedyRound> rounds;
  double best_single_score = 0.0;
  double final_score = 0.0;
};

inline constexpr double kGreedyMinImprovement = 1e-4;

// Scores a candidate subset (indices into the domain list); higher is better.
// A scorer may throw UndefinedMetricError, which counts as -infinity.
using SubsetScorer = std::function<double(const std::vector<size_t>& subset)>;

// Starts from the best single domain and adds, each round, the domain whose
// inclusion scores highest; stops when the best addition improves the score
// by no more than kGreedyMinImprovement or after max_rounds additions.
GreedySelection greedy_domain_selection(const std::vector<DomainId>& domain_ids,
                                        const SubsetScorer& scorer,
                                        int max_rounds);

// Labeled target images used only by the supervised greedy probe.
struct LabeledTarget {
  std::vector<const RasterImage*> images;
  std::optional<std::vector<double>> labels;
};

using RegressorTrainer =
    std::function<Regressor(const std::vector<const Sample*>& training)>;
using TargetMetric =
    std::function<double(const Regressor& model, const LabeledTarget& target)>;

GreedySelection greedy_domain_selection(const std::vector<DomainDataset>& domains,
                                        const LabeledTarget& target_val,
                                        const RegressorTrainer& train_fn,
                                        const TargetMetric& metric_fn,
                                        int max_rounds);

inline constexpr size_t kProxyMinSamples = 20;
inline constexpr int kProxyEpochs = 10;
// Lower bound on optimizer steps for the probe classifier.
inline constexpr size_t kProxyMinSteps = 500;

// 2 (2 acc - 1) clamped to [0, 2], where acc is the held-out balanced
// accuracy of a source-vs-target probe trained on half of each side.
double proxy_distance_features(const FeatureMatrix& source,
                               const FeatureMatrix& target,
                               const TrainConfig& config);

// One test-mode patch per image feeds the probe.
double proxy_domain_distance(const DomainDataset& source,
                             std::span<const RasterImage* const> target_images,
                             const PatchFeaturizer& featurizer,
                             const TrainConfig& config);

// Selection report file: {tau, n_target, entries: [{domain_id, family_name,
// sim, selected}]} with entries sorted by sim descending (ties by id).
nlohmann::json selection_report_json(const SelectionResult& selection,
                                     const DistortionRegistry& registry);
SelectionResult selection_from_json(const nlohmann::json& j);

// |a ∩ b| / |a ∪ b|; 1 when both are empty.
double jaccard(const std::vector<DomainId>& a, const std::vector<DomainId>& b);

}  // namespace dgqa

#endif  // DGQA_SELECTION_H_
