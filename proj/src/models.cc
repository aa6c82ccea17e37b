#include "dgqa/models.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dgqa/errors.h"
#include "dgqa/rng.h"

namespace dgqa {

void FeatureMatrix::append(std::span<const double> r) {
  if (rows == 0 && cols == 0) cols = r.size();
  if (r.size() != cols) throw ValidationError("feature row length mismatch");
  values.insert(values.end(), r.begin(), r.end());
  ++rows;
}

FeatureMatrix FeatureMatrix::from_rows(const std::vector<FeatureVector>& rows) {
  FeatureMatrix m;
  for (const auto& r : rows) m.append(r);
  return m;
}

NormStats NormStats::fit(const FeatureMatrix& x) {
  if (x.rows == 0) throw ValidationError("NormStats::fit: no rows");
  NormStats s;
  s.mean.assign(x.cols, 0.0);
  s.scale.assign(x.cols, 0.0);
  for (size_t i = 0; i < x.rows; ++i) {
    const auto r = x.row(i);
    for (size_t j = 0; j < x.cols; ++j) s.mean[j] += r[j];
  }
  for (double& m : s.mean) m /= static_cast<double>(x.rows);
  for (size_t i = 0; i < x.rows; ++i) {
    const auto r = x.row(i);
    for (size_t j = 0; j < x.cols; ++j) {
      const double d = r[j] - s.mean[j];
      s.scale[j] += d * d;
    }
  }
  for (double& v : s.scale) {
    v = std::sqrt(v / static_cast<double>(x.rows));
    if (!(v > 1e-12)) v = 1.0;
  }
  return s;
}

NormStats NormStats::identity(size_t dim) {
  return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
}

void NormStats::apply(std::span<const double> in, std::span<double> out) const {
  if (in.size() != mean.size() || out.size() != mean.size()) {
    throw ValidationError("feature dimension " + std::to_string(in.size()) +
                          " does not match model input " +
                          std::to_string(mean.size()));
  }
  for (size_t j = 0; j < in.size(); ++j) out[j] = (in[j] - mean[j]) / scale[j];
}

FeatureMatrix NormStats::apply(const FeatureMatrix& x) const {
  FeatureMatrix out(x.rows, x.cols);
  for (size_t i = 0; i < x.rows; ++i) apply(x.row(i), out.row(i));
  return out;
}

size_t HeadShape::param_count() const {
  if (hidden == 0) return outputs * input_dim + outputs;
  return hidden * input_dim + hidden + outputs * hidden + outputs;
}

Mlp::Mlp(HeadShape shape, std::vector<double> params)
    : shape_(shape), params_(std::move(params)) {
  if (shape.input_dim == 0 || shape.outputs == 0) {
    throw ValidationError("Mlp: input and output sizes must be positive");
  }
  if (params_.size() != shape.param_count()) {
    throw ValidationError("Mlp: expected " + std::to_string(shape.param_count()) +
                          " parameters, got " + std::to_string(params_.size()));
  }
}

Mlp Mlp::zeros(HeadShape shape) {
  return Mlp(shape, std::vector<double>(shape.param_count(), 0.0));
}

Mlp Mlp::initialized(HeadShape shape, uint64_t seed) {
  Mlp net = zeros(shape);
  Rng rng = make_rng(seed);
  auto fill = [&](size_t offset, size_t fan_out, size_t fan_in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (size_t i = 0; i < fan_out * fan_in; ++i) net.params_[offset + i] = u(rng);
  };
  if (shape.hidden == 0) {
    fill(0, shape.outputs, shape.input_dim);
  } else {
    fill(0, shape.hidden, shape.input_dim);
    fill(shape.hidden * shape.input_dim + shape.hidden, shape.outputs,
         shape.hidden);
  }
  return net;
}

void Mlp::forward(std::span<const double> x, std::span<double> out) const {
  const size_t in = shape_.input_dim;
  const size_t no = shape_.outputs;
  if (x.size() != in || out.size() != no) {
    throw ValidationError("Mlp::forward: dimension mismatch");
  }
  const double* p = params_.data();
  if (shape_.hidden == 0) {
    for (size_t o = 0; o < no; ++o) {
      const double* w = p + o * in;
      double acc = p[no * in + o];
      for (size_t j = 0; j < in; ++j) acc += w[j] * x[j];
      out[o] = acc;
    }
    return;
  }
  const size_t nh = shape_.hidden;
  const double* w1 = p;
  const double* b1 = p + nh * in;
  const double* w2 = b1 + nh;
  const double* b2 = w2 + no * nh;
  double h_stack[256];
  std::vector<double> h_heap;
  double* h = h_stack;
  if (nh > 256) {
    h_heap.resize(nh);
    h = h_heap.data();
  }
  for (size_t u = 0; u < nh; ++u) {
    double acc = b1[u];
    const double* w = w1 + u * in;
    for (size_t j = 0; j < in; ++j) acc += w[j] * x[j];
    h[u] = std::tanh(acc);
  }
  for (size_t o = 0; o < no; ++o) {
    double acc = b2[o];
    const double* w = w2 + o * nh;
    for (size_t u = 0; u < nh; ++u) acc += w[u] * h[u];
    out[o] = acc;
  }
}

void Mlp::backward(std::span<const double> x, std::span<const double> d_out,
                   std::span<double> grad) const {
  const size_t in = shape_.input_dim;
  const size_t no = shape_.outputs;
  if (x.size() != in || d_out.size() != no || grad.size() != params_.size()) {
    throw ValidationError("Mlp::backward: dimension mismatch");
  }
  const double* p = params_.data();
  if (shape_.hidden == 0) {
    for (size_t o = 0; o < no; ++o) {
      double* gw = grad.data() + o * in;
      for (size_t j = 0; j < in; ++j) gw[j] += d_out[o] * x[j];
      grad[no * in + o] += d_out[o];
    }
    return;
  }
  const size_t nh = shape_.hidden;
  const double* w1 = p;
  const double* b1 = p + nh * in;
  const double* w2 = b1 + nh;
  double* g_w1 = grad.data();
  double* g_b1 = g_w1 + nh * in;
  double* g_w2 = g_b1 + nh;
  double* g_b2 = g_w2 + no * nh;
  std::vector<double> h(nh), dh(nh, 0.0);
  for (size_t u = 0; u < nh; ++u) {
    double acc = b1[u];
    const double* w = w1 + u * in;
    for (size_t j = 0; j < in; ++j) acc += w[j] * x[j];
    h[u] = std::tanh(acc);
  }
  for (size_t o = 0; o < no; ++o) {
    const double d = d_out[o];
    if (d == 0.0) continue;
    const double* w = w2 + o * nh;
    double* gw = g_w2 + o * nh;
    for (size_t u = 0; u < nh; ++u) {
      gw[u] += d * h[u];
      dh[u] += d * w[u];
    }
    g_b2[o] += d;
  }
  for (size_t u = 0; u < nh; ++u) {
    const double dz = dh[u] * (1.0 - h[u] * h[u]);
    if (dz == 0.0) continue;
    double* gw = g_w1 + u * in;
    for (size_t j = 0; j < in; ++j) gw[j] += dz * x[j];
    g_b1[u] += dz;
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (weight_decay < 0.0) throw ValidationError("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("Adam betas must lie in [0,1)");
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},       {"epochs", c.epochs},
          {"beta1", c.beta1},                 {"beta2", c.beta2},
          {"epsilon", c.epsilon},             {"hidden", c.hidden},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.hidden = j.value("hidden", c.hidden);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  const double mx = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

std::vector<double> classify(const SoftmaxClassifier& model,
                             std::span<const double> x) {
  std::vector<double> z(model.input_dim());
  model.norm.apply(x, z);
  std::vector<double> logits(model.k());
  model.net.forward(z, logits);
  return softmax(logits);
}

double regress(const Regressor& model, std::span<const double> x) {
  std::vector<double> z(model.input_dim());
  model.norm.apply(x, z);
  double out = 0.0;
  model.net.forward(z, {&out, 1});
  return model.label_mean + model.label_scale * out;
}

namespace {

double clamped_log(double p) {
  return std::log(std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp));
}

// Batch over the given row indices of standardized inputs.
LossAndGrad ce_batch(const Mlp& net, const FeatureMatrix& x,
                     std::span<const size_t> rows,
                     std::span<const size_t> labels) {
  const size_t k = net.shape().outputs;
  LossAndGrad out;
  out.grad.assign(net.params().size(), 0.0);
  std::vector<double> logits(k), d(k);
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  for (size_t r : rows) {
    const size_t label = labels[r];
    net.forward(x.row(r), logits);
    const auto p = softmax(logits);
    out.loss -= clamped_log(p[label]) * inv_n;
    // The clamp is inactive except at saturation, where it zeroes the slope.
    const bool clamped = p[label] < kProbabilityClamp;
    for (size_t c = 0; c < k; ++c) {
      d[c] = clamped ? 0.0 : (p[c] - (c == label ? 1.0 : 0.0)) * inv_n;
    }
    net.backward(x.row(r), d, out.grad);
  }
  return out;
}

LossAndGrad l1_batch(const Mlp& net, const FeatureMatrix& x,
                     std::span<const size_t> rows,
                     std::span<const double> targets) {
  LossAndGrad out;
  out.grad.assign(net.params().size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  for (size_t r : rows) {
    double pred = 0.0;
    net.forward(x.row(r), {&pred, 1});
    const double residual = pred - targets[r];
    out.loss += std::abs(residual) * inv_n;
    const double d = (residual > 0 ? 1.0 : residual < 0 ? -1.0 : 0.0) * inv_n;
    if (d != 0.0) net.backward(x.row(r), {&d, 1}, out.grad);
  }
  return out;
}

std::vector<size_t> all_rows(size_t n) {
  std::vector<size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

void check_labels(const FeatureMatrix& x, size_t n_labels, const char* what) {
  if (x.rows == 0) throw ValidationError(std::string(what) + ": empty batch");
  if (n_labels != x.rows) {
    throw ValidationError(std::string(what) + ": label count does not match rows");
  }
}

}  // namespace

LossAndGrad cross_entropy_loss_and_grad(const Mlp& net, const FeatureMatrix& x,
                                        std::span<const size_t> labels) {
  check_labels(x, labels.size(), "cross_entropy_loss");
  for (size_t l : labels) {
    if (l >= net.shape().outputs) {
      throw ValidationError("cross_entropy_loss: label out of range");
    }
  }
  return ce_batch(net, x, all_rows(x.rows), labels);
}

LossAndGrad l1_loss_and_grad(const Mlp& net, const FeatureMatrix& x,
                             std::span<const double> targets) {
  check_labels(x, targets.size(), "l1_loss");
  return l1_batch(net, x, all_rows(x.rows), targets);
}

double cross_entropy_loss(const SoftmaxClassifier& model, const FeatureMatrix& x,
                          std::span<const size_t> labels) {
  check_labels(x, labels.size(), "cross_entropy_loss");
  return cross_entropy_loss_and_grad(model.net, model.norm.apply(x), labels).loss;
}

double l1_loss(const Regressor& model, const FeatureMatrix& x,
               std::span<const double> labels) {
  check_labels(x, labels.size(), "l1_loss");
  double total = 0.0;
  for (size_t i = 0; i < x.rows; ++i) {
    total += std::abs(regress(model, x.row(i)) - labels[i]);
  }
  return total / static_cast<double>(x.rows);
}

void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state, const TrainConfig& config) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ValidationError("adam_step: parameter, gradient and state shapes differ");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  const double decay = 1.0 - config.learning_rate * config.weight_decay;
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] = params[i] * decay -
                config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

namespace {

template <typename BatchFn>
TrainLog run_training(Mlp& net, const EpochFeatures& features,
                      const FeatureMatrix& first_epoch, const NormStats& norm,
                      size_t n_rows, const TrainConfig& config, BatchFn&& batch,
                      const std::function<double(const Mlp&)>& validation) {
  TrainLog log;
  AdamState state(net.params().size());
  Rng shuffle_rng = make_rng(derive_seed(config.seed, 2));
  std::vector<size_t> order = all_rows(n_rows);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const FeatureMatrix x = norm.apply(epoch == 0 ? first_epoch : features(epoch));
    if (x.rows != n_rows) {
      throw ValidationError("epoch features changed row count");
    }
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (size_t start = 0; start < n_rows; start += config.batch_size) {
      const size_t end = std::min(n_rows, start + config.batch_size);
      std::span<const size_t> rows(order.data() + start, end - start);
      LossAndGrad lg = batch(net, x, rows);
      epoch_loss += lg.loss * static_cast<double>(rows.size());
      adam_step(net.mutable_params(), lg.grad, state, config);
    }
    log.epoch_loss.push_back(epoch_loss / static_cast<double>(n_rows));
    if (validation) log.validation_loss.push_back(validation(net));
  }
  return log;
}

}  // namespace

ClassifierFit fit_classifier(const EpochFeatures& features,
                             std::span<const size_t> labels,
                             std::vector<DomainId> domain_ids,
                             const TrainConfig& config,
                             const FeatureMatrix* validation_x,
                             std::span<const size_t> validation_labels) {
  config.validate();
  const size_t k = domain_ids.size();
  if (k < 2) throw ValidationError("train_classifier: needs at least 2 domains");
  const FeatureMatrix first = features(0);
  check_labels(first, labels.size(), "train_classifier");
  for (size_t l : labels) {
    if (l >= k) throw ValidationError("train_classifier: label out of range");
  }
  ClassifierFit fit;
  fit.model.norm = NormStats::fit(first);
  fit.model.domain_ids = std::move(domain_ids);
  fit.model.net = Mlp::initialized({first.cols, config.hidden, k},
                                   derive_seed(config.seed, 1));
  std::function<double(const Mlp&)> validation;
  FeatureMatrix val_std;
  if (validation_x != nullptr && validation_x->rows > 0) {
    val_std = fit.model.norm.apply(*validation_x);
    validation = [&](const Mlp& net) {
      return cross_entropy_loss_and_grad(net, val_std, validation_labels).loss;
    };
  }
  fit.log = run_training(
      fit.model.net, features, first, fit.model.norm, labels.size(), config,
      [&](const Mlp& net, const FeatureMatrix& x, std::span<const size_t> rows) {
        return ce_batch(net, x, rows, labels);
      },
      validation);
  return fit;
}

RegressorFit fit_regressor(const EpochFeatures& features,
                           std::span<const double> labels,
                           const TrainConfig& config,
                           const FeatureMatrix* validation_x,
                           std::span<const double> validation_labels) {
  config.validate();
  if (labels.empty()) throw ValidationError("train_regressor: empty training data");
  const FeatureMatrix first = features(0);
  check_labels(first, labels.size(), "train_regressor");
  RegressorFit fit;
  Regressor& model = fit.model;
  model.norm = NormStats::fit(first);
  double mean = 0.0;
  for (double y : labels) {
    if (!std::isfinite(y)) throw ValidationError("train_regressor: non-finite label");
    mean += y;
  }
  mean /= static_cast<double>(labels.size());
  double var = 0.0;
  for (double y : labels) var += (y - mean) * (y - mean);
  const double sd = std::sqrt(var / static_cast<double>(labels.size()));
  model.label_mean = mean;
  model.label_scale = sd > 1e-12 ? sd : 1.0;
  std::vector<double> targets(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    targets[i] = (labels[i] - model.label_mean) / model.label_scale;
  }
  model.net = Mlp::initialized({first.cols, config.hidden, 1},
                               derive_seed(config.seed, 1));
  std::function<double(const Mlp&)> validation;
  if (validation_x != nullptr && validation_x->rows > 0) {
    validation = [&](const Mlp& net) {
      Regressor probe = model;
      probe.net = net;
      return l1_loss(probe, *validation_x, validation_labels);
    };
  }
  fit.log = run_training(
      model.net, features, first, model.norm, labels.size(), config,
      [&](const Mlp& net, const FeatureMatrix& x, std::span<const size_t> rows) {
        return l1_batch(net, x, rows, targets);
      },
      validation);
  for (double& l : fit.log.epoch_loss) l *= model.label_scale;
  return fit;
}

const FeatureMatrix* FeatureMemo::find(uint64_t image_key, uint64_t seed) const {
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = map_.find({image_key, seed});
  return it == map_.end() ? nullptr : &it->second;
}

const FeatureMatrix& FeatureMemo::insert(uint64_t image_key, uint64_t seed,
                                         FeatureMatrix m) {
  std::lock_guard<std::mutex> lock(mutex_);
  return map_.try_emplace({image_key, seed}, std::move(m)).first->second;
}

size_t FeatureMemo::size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return map_.size();
}

PatchPolicy PatchFeaturizer::image_policy(const RasterImage& image,
                                          int epoch) const {
  const uint64_t stream = epoch < 0 ? 0 : 0x10000 + static_cast<uint64_t>(epoch);
  return policy.with_seed(
      derive_seed(derive_seed(policy.seed, image.fingerprint()), stream));
}

FeatureMatrix PatchFeaturizer::patch_features(const RasterImage& image,
                                              PatchMode mode, int epoch) const {
  const PatchPolicy p = image_policy(image, epoch);
  // Train and test draws with equal seeds differ (flips, counts).
  const uint64_t memo_seed = derive_seed(p.seed, mode == PatchMode::kTrain ? 1 : 2);
  uint64_t key = 0;
  if (memo) {
    key = image.fingerprint();
    if (const FeatureMatrix* hit = memo->find(key, memo_seed)) return *hit;
  }
  FeatureMatrix x;
  for (const auto& patch : sample_patches(image, p, mode)) x.append(feature_fn(patch));
  if (memo) memo->insert(key, memo_seed, x);
  return x;
}

FeatureMatrix PatchFeaturizer::epoch_features(
    std::span<const RasterImage* const> images, int epoch) const {
  FeatureMatrix x;
  for (const RasterImage* image : images) {
    const FeatureMatrix rows = patch_features(*image, PatchMode::kTrain, epoch);
    for (size_t r = 0; r < rows.rows; ++r) x.append(rows.row(r));
  }
  return x;
}

std::vector<FeatureMatrix> PatchFeaturizer::test_features(
    std::span<const RasterImage* const> images) const {
  std::vector<FeatureMatrix> out;
  out.reserve(images.size());
  for (const RasterImage* image : images) {
    out.push_back(patch_features(*image, PatchMode::kTest));
  }
  return out;
}

ClassifierFit train_classifier(const std::vector<DomainDataset>& domains,
                               const PatchFeaturizer& featurizer,
                               const TrainConfig& config) {
  if (domains.size() < 2) {
    throw ValidationError("train_classifier: needs at least 2 domains");
  }
  std::vector<const RasterImage*> images;
  std::vector<size_t> labels;
  std::vector<DomainId> ids;
  const size_t per_image =
      static_cast<size_t>(featurizer.policy.train_patches_per_image);
  for (size_t d = 0; d < domains.size(); ++d) {
    if (domains[d].samples.empty()) {
      throw ValidationError("train_classifier: domain '" + domains[d].name +
                            "' is empty");
    }
    ids.push_back(domains[d].domain);
    for (const auto& s : domains[d].samples) {
      images.push_back(&s.image);
      labels.insert(labels.end(), per_image, d);
    }
  }
  return fit_classifier(
      [&](int epoch) { return featurizer.epoch_features(images, epoch); }, labels,
      std::move(ids), config);
}

RegressorFit train_regressor(const std::vector<const Sample*>& samples,
                             const PatchFeaturizer& featurizer,
                             const TrainConfig& config) {
  if (samples.empty()) throw ValidationError("train_regressor: empty training data");
  std::vector<const RasterImage*> images;
  std::vector<double> labels;
  const size_t per_image =
      static_cast<size_t>(featurizer.policy.train_patches_per_image);
  for (const Sample* s : samples) {
    images.push_back(&s->image);
    labels.insert(labels.end(), per_image, s->quality);
  }
  return fit_regressor(
      [&](int epoch) { return featurizer.epoch_features(images, epoch); }, labels,
      config);
}

double predict_quality(const Regressor& model, const FeatureMatrix& patch_features) {
  if (patch_features.rows == 0) throw ValidationError("predict_quality: no patches");
  double total = 0.0;
  for (size_t i = 0; i < patch_features.rows; ++i) {
    total += regress(model, patch_features.row(i));
  }
  return total / static_cast<double>(patch_features.rows);
}

double predict_quality(const Regressor& model, const RasterImage& image,
                       const PatchFeaturizer& featurizer) {
  return predict_quality(model, featurizer.patch_features(image, PatchMode::kTest));
}

GradientCheckReport gradient_check(const LossFunction& loss_fn,
                                   std::span<const double> params,
                                   double tolerance,
                                   const GradientCheckOptions& options) {
  std::vector<double> p(params.begin(), params.end());
  const LossAndGrad base = loss_fn(p);
  std::vector<size_t> indices = all_rows(p.size());
  if (options.max_params > 0 && options.max_params < p.size()) {
    Rng rng = make_rng(options.seed);
    std::shuffle(indices.begin(), indices.end(), rng);
    indices.resize(options.max_params);
    std::sort(indices.begin(), indices.end());
  }
  double diff_sq = 0.0, analytic_sq = 0.0, numeric_sq = 0.0, max_abs = 0.0;
  for (size_t i : indices) {
    const double orig = p[i];
    p[i] = orig + options.step;
    const double up = loss_fn(p).loss;
    p[i] = orig - options.step;
    const double down = loss_fn(p).loss;
    p[i] = orig;
    const double numeric = (up - down) / (2.0 * options.step);
    const double analytic = base.grad[i];
    diff_sq += (analytic - numeric) * (analytic - numeric);
    analytic_sq += analytic * analytic;
    numeric_sq += numeric * numeric;
    max_abs = std::max(max_abs, std::abs(analytic - numeric));
  }
  GradientCheckReport report;
  report.checked = indices.size();
  report.max_abs_difference = max_abs;
  report.relative_error =
      std::sqrt(diff_sq) /
      std::max({std::sqrt(analytic_sq), std::sqrt(numeric_sq), 1e-12});
  report.passed = report.relative_error < tolerance;
  return report;
}

namespace {

nlohmann::json head_json(const Mlp& net, const NormStats& norm) {
  return {{"input_dim", net.shape().input_dim},
          {"hidden", net.shape().hidden},
          {"outputs", net.shape().outputs},
          {"params", std::vector<double>(net.params().begin(), net.params().end())},
          {"norm", {{"mean", norm.mean}, {"scale", norm.scale}}}};
}

void read_head(const nlohmann::json& j, const char* kind, Mlp* net,
               NormStats* norm) {
  if (j.value("format", "") != "dgqa-model") {
    throw ValidationError("not a model checkpoint");
  }
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw ValidationError("unsupported checkpoint version");
  }
  if (j.at("kind").get<std::string>() != kind) {
    throw ValidationError(std::string("checkpoint is not a ") + kind);
  }
  HeadShape shape{j.at("input_dim").get<size_t>(), j.at("hidden").get<size_t>(),
                  j.at("outputs").get<size_t>()};
  *net = Mlp(shape, j.at("params").get<std::vector<double>>());
  norm->mean = j.at("norm").at("mean").get<std::vector<double>>();
  norm->scale = j.at("norm").at("scale").get<std::vector<double>>();
  if (norm->mean.size() != shape.input_dim || norm->scale.size() != shape.input_dim) {
    throw ValidationError("checkpoint normalization size mismatch");
  }
}

}  // namespace

nlohmann::json to_json(const SoftmaxClassifier& model, const TrainConfig& config) {
  nlohmann::json j = head_json(model.net, model.norm);
  j["format"] = "dgqa-model";
  j["version"] = kCheckpointVersion;
  j["kind"] = "classifier";
  std::vector<int> ids;
  for (DomainId id : model.domain_ids) ids.push_back(to_int(id));
  j["domain_ids"] = ids;
  j["config"] = to_json(config);
  j["seed"] = config.seed;
  return j;
}

nlohmann::json to_json(const Regressor& model, const TrainConfig& config) {
  nlohmann::json j = head_json(model.net, model.norm);
  j["format"] = "dgqa-model";
  j["version"] = kCheckpointVersion;
  j["kind"] = "regressor";
  j["label_mean"] = model.label_mean;
  j["label_scale"] = model.label_scale;
  j["config"] = to_json(config);
  j["seed"] = config.seed;
  return j;
}

SoftmaxClassifier classifier_from_json(const nlohmann::json& j) {
  SoftmaxClassifier m;
  read_head(j, "classifier", &m.net, &m.norm);
  for (int id : j.at("domain_ids").get<std::vector<int>>()) {
    m.domain_ids.push_back(DomainId{id});
  }
  if (m.domain_ids.size() != m.k()) {
    throw ValidationError("checkpoint domain id count does not match outputs");
  }
  return m;
}

Regressor regressor_from_json(const nlohmann::json& j) {
  Regressor m;
  read_head(j, "regressor", &m.net, &m.norm);
  if (m.net.shape().outputs != 1) {
    throw ValidationError("regressor checkpoint must have one output");
  }
  m.label_mean = j.at("label_mean").get<double>();
  m.label_scale = j.at("label_scale").get<double>();
  return m;
}

}  // namespace dgqa

