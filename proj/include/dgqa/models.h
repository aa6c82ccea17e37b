#ifndef DGQA_MODELS_H_
#define DGQA_MODELS_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgqa/distortion.h"
#include "dgqa/features.h"

namespace dgqa {

// Dense row-major matrix of feature rows.
struct FeatureMatrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> values;

  FeatureMatrix() = default;
  FeatureMatrix(size_t r, size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

  std::span<const double> row(size_t i) const {
    return {values.data() + i * cols, cols};
  }
  std::span<double> row(size_t i) { return {values.data() + i * cols, cols}; }
  void append(std::span<const double> r);

  static FeatureMatrix from_rows(const std::vector<FeatureVector>& rows);
};

// Per-dimension standardization (x - mean) / scale, frozen after fitting.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> scale;

  static NormStats fit(const FeatureMatrix& x);
  static NormStats identity(size_t dim);
  void apply(std::span<const double> in, std::span<double> out) const;
  FeatureMatrix apply(const FeatureMatrix& x) const;
  size_t dim() const { return mean.size(); }
};

struct HeadShape {
  size_t input_dim = kFeatureDim;
  size_t hidden = 32;  // 0: linear head
  size_t outputs = 1;

  size_t param_count() const;
  bool operator==(const HeadShape&) const = default;
};

// One-hidden-layer tanh perceptron (or a linear map when hidden == 0) with
// all parameters in one flat vector:
//   hidden > 0:  W1 [hidden x in], b1 [hidden], W2 [out x hidden], b2 [out]
//   hidden == 0: W [out x in], b [out]
class Mlp {
 public:
  Mlp() = default;
  Mlp(HeadShape shape, std::vector<double> params);

  static Mlp zeros(HeadShape shape);
  // Uniform Glorot initialization; output biases start at zero.
  static Mlp initialized(HeadShape shape, uint64_t seed);

  const HeadShape& shape() const { return shape_; }
  std::span<const double> params() const { return params_; }
  std::span<double> mutable_params() { return params_; }

  // Writes `outputs` raw values for one standardized input.
  void forward(std::span<const double> x, std::span<double> out) const;
  // Accumulates d(loss)/d(params) into `grad` given d(loss)/d(outputs).
  void backward(std::span<const double> x, std::span<const double> d_out,
                std::span<double> grad) const;

 private:
  HeadShape shape_;
  std::vector<double> params_;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 5e-4;
  size_t batch_size = 32;
  int epochs = 15;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  size_t hidden = 32;
  uint64_t seed = 0;

  void validate() const;

  // Learning rate tuned for heads trained from scratch on NSS features.
  static TrainConfig desk_default() { return {}; }
  // Fine-tuning preset with the small backbone learning rate (2e-5).
  static TrainConfig finetune_preset() {
    TrainConfig c;
    c.learning_rate = 2e-5;
    return c;
  }
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct SoftmaxClassifier {
  Mlp net;
  NormStats norm;
  std::vector<DomainId> domain_ids;  // output index -> domain

  size_t k() const { return net.shape().outputs; }
  size_t input_dim() const { return net.shape().input_dim; }
};

struct Regressor {
  Mlp net;
  NormStats norm;
  // Targets are standardized for training; predictions are mapped back.
  double label_mean = 0.0;
  double label_scale = 1.0;

  size_t input_dim() const { return net.shape().input_dim; }
};

// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

// Probability vector of length k for raw (unstandardized) features.
std::vector<double> classify(const SoftmaxClassifier& model,
                             std::span<const double> x);
double regress(const Regressor& model, std::span<const double> x);

inline constexpr double kProbabilityClamp = 1e-12;

// Mean over rows of -log p[label], with p clamped to [1e-12, 1 - 1e-12].
double cross_entropy_loss(const SoftmaxClassifier& model, const FeatureMatrix& x,
                          std::span<const size_t> labels);
// Mean over rows of |prediction - label|.
double l1_loss(const Regressor& model, const FeatureMatrix& x,
               std::span<const double> labels);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

// Loss and gradient with respect to the flat parameters of `net`, on inputs
// that are already standardized.
LossAndGrad cross_entropy_loss_and_grad(const Mlp& net, const FeatureMatrix& x,
                                        std::span<const size_t> labels);
// Targets here are in the network's output units.
LossAndGrad l1_loss_and_grad(const Mlp& net, const FeatureMatrix& x,
                             std::span<const double> targets);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  uint64_t step = 0;

  explicit AdamState(size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// Decoupled weight decay params *= (1 - lr * wd), then one bias-corrected
// Adam step.
void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state, const TrainConfig& config);

struct TrainLog {
  std::vector<double> epoch_loss;       // mean training loss per epoch
  std::vector<double> validation_loss;  // empty without a validation set
  double final_loss() const { return epoch_loss.empty() ? 0.0 : epoch_loss.back(); }
};

// Produces the raw feature matrix of the training pool for a given epoch
// (rows fixed in number and order across epochs).
using EpochFeatures = std::function<FeatureMatrix(int epoch)>;

struct ClassifierFit {
  SoftmaxClassifier model;
  TrainLog log;
};

struct RegressorFit {
  Regressor model;
  TrainLog log;
};

// Mini-batch Adam on cross-entropy; rows shuffled each epoch with the
// config seed. Normalization statistics come from the epoch-0 features.
ClassifierFit fit_classifier(const EpochFeatures& features,
                             std::span<const size_t> labels,
                             std::vector<DomainId> domain_ids,
                             const TrainConfig& config,
                             const FeatureMatrix* validation_x = nullptr,
                             std::span<const size_t> validation_labels = {});

RegressorFit fit_regressor(const EpochFeatures& features,
                           std::span<const double> labels,
                           const TrainConfig& config,
                           const FeatureMatrix* validation_x = nullptr,
                           std::span<const double> validation_labels = {});

// Memoizes patch features by (image fingerprint, patch seed). Sharing one
// memo between trainings over overlapping samples avoids recomputation; it
// never changes results.
class FeatureMemo {
 public:
  const FeatureMatrix* find(uint64_t image_key, uint64_t seed) const;
  const FeatureMatrix& insert(uint64_t image_key, uint64_t seed, FeatureMatrix m);
  size_t size() const;

 private:
  struct KeyHash {
    size_t operator()(const std::pair<uint64_t, uint64_t>& k) const {
      return static_cast<size_t>(k.first ^ (k.second * 0x9e3779b97f4a7c15ULL));
    }
  };
  mutable std::mutex mutex_;
  std::unordered_map<std::pair<uint64_t, uint64_t>, FeatureMatrix, KeyHash> map_;
};

// Samples patches and maps them through `feature_fn`. Patch positions for an
// image depend only on the policy seed, the image content and the epoch, so
// the same image gets the same patches wherever it appears in a batch.
struct PatchFeaturizer {
  PatchPolicy policy;
  FeatureFn feature_fn = extract_features;
  std::shared_ptr<FeatureMemo> memo;  // optional

  // Train-mode patches for one epoch; rows are image-major, patch-minor.
  FeatureMatrix epoch_features(std::span<const RasterImage* const> images,
                               int epoch) const;
  // Test-mode patch features, one matrix (patches x dim) per image.
  std::vector<FeatureMatrix> test_features(
      std::span<const RasterImage* const> images) const;
  FeatureMatrix patch_features(const RasterImage& image, PatchMode mode,
                               int epoch = -1) const;
  // Policy used for `image` at `epoch` (-1: test time).
  PatchPolicy image_policy(const RasterImage& image, int epoch = -1) const;
};

// Trains the multi-source domain classifier on the given domains; output
// index i corresponds to domains[i].
ClassifierFit train_classifier(const std::vector<DomainDataset>& domains,
                               const PatchFeaturizer& featurizer,
                               const TrainConfig& config);

RegressorFit train_regressor(const std::vector<const Sample*>& samples,
                             const PatchFeaturizer& featurizer,
                             const TrainConfig& config);

// Mean regressor output over the test patches of the image (positions from
// featurizer.image_policy(image)).
double predict_quality(const Regressor& model, const RasterImage& image,
                       const PatchFeaturizer& featurizer);
// Mean of given per-patch features' predictions.
double predict_quality(const Regressor& model, const FeatureMatrix& patch_features);

struct GradientCheckOptions {
  double step = 1e-5;
  size_t max_params = 0;  // 0: check every parameter
  uint64_t seed = 0;
};

struct GradientCheckReport {
  // ||g_analytic - g_numeric|| / max(||g_analytic||, ||g_numeric||, 1e-12)
  // over the checked parameters.
  double relative_error = 0.0;
  double max_abs_difference = 0.0;
  size_t checked = 0;
  bool passed = false;
};

using LossFunction = std::function<LossAndGrad(std::span<const double> params)>;

// Central differences against the analytic gradient returned by `loss_fn`.
GradientCheckReport gradient_check(const LossFunction& loss_fn,
                                   std::span<const double> params,
                                   double tolerance,
                                   const GradientCheckOptions& options = {});

// Versioned JSON checkpoints; doubles are written in shortest round-trip
// form so reloading reproduces predictions bit-exactly.
inline constexpr int kCheckpointVersion = 1;
nlohmann::json to_json(const SoftmaxClassifier& model, const TrainConfig& config);
nlohmann::json to_json(const Regressor& model, const TrainConfig& config);
SoftmaxClassifier classifier_from_json(const nlohmann::json& j);
Regressor regressor_from_json(const nlohmann::json& j);

}  // namespace dgqa

#endif  // DGQA_MODELS_H_
