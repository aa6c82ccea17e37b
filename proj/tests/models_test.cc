#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "dgqa/errors.h"
#include "dgqa/experiment.h"
#include "dgqa/models.h"
#include "dgqa/references.h"
#include "dgqa/rng.h"

namespace dgqa {
namespace {

FeatureMatrix random_matrix(size_t rows, size_t cols, uint64_t seed, double sd = 1.0) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, sd);
  FeatureMatrix m(rows, cols);
  for (double& v : m.values) v = normal(rng);
  return m;
}

SoftmaxClassifier zero_classifier(size_t dim, size_t k, size_t hidden = 8) {
  SoftmaxClassifier c;
  c.net = Mlp::zeros({dim, hidden, k});
  c.norm = NormStats::identity(dim);
  for (size_t i = 0; i < k; ++i) c.domain_ids.push_back(DomainId{static_cast<int>(i + 1)});
  return c;
}

// Linear classifier whose logits equal the given bias vector.
SoftmaxClassifier bias_classifier(const std::vector<double>& logits, size_t dim) {
  SoftmaxClassifier c = zero_classifier(dim, logits.size(), 0);
  auto p = c.net.mutable_params();
  for (size_t i = 0; i < logits.size(); ++i) p[logits.size() * dim + i] = logits[i];
  return c;
}

TEST(Classify, ZeroWeightsGiveUniform) {
  auto model = zero_classifier(kFeatureDim, 25);
  std::vector<double> x(kFeatureDim, 3.7);
  auto p = classify(model, x);
  ASSERT_EQ(p.size(), 25u);
  for (double v : p) EXPECT_NEAR(v, 0.04, 1e-15);
}

TEST(Classify, SoftmaxOfUnitLogit) {
  auto model = bias_classifier({1.0, 0.0, 0.0}, 4);
  std::vector<double> x(4, 0.5);
  auto p = classify(model, x);
  const double e = std::exp(1.0);
  EXPECT_NEAR(p[0], e / (e + 2.0), 1e-12);
  EXPECT_NEAR(p[1], 1.0 / (e + 2.0), 1e-12);
  EXPECT_NEAR(p[0], 0.5761, 1e-4);
  EXPECT_NEAR(p[2], 0.2119, 1e-4);
}

TEST(Classify, DimensionMismatch) {
  auto model = zero_classifier(4, 3);
  std::vector<double> x(5, 0.0);
  EXPECT_THROW(classify(model, x), ValidationError);
}

TEST(Softmax, StableForLargeLogits) {
  std::vector<double> logits{1000.0, 999.0, -1000.0};
  auto p = softmax(logits);
  for (double v : p) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
}

TEST(Softmax, RandomModelsSumToOne) {
  for (int trial = 0; trial < 200; ++trial) {
    const size_t k = 2 + trial % 24;
    SoftmaxClassifier c;
    c.net = Mlp::initialized({6, trial % 2 ? 16u : 0u, k}, trial);
    c.norm = NormStats::identity(6);
    auto x = random_matrix(1, 6, trial + 1000, 5.0);
    auto p = classify(c, x.row(0));
    const double sum = std::accumulate(p.begin(), p.end(), 0.0);
    ASSERT_NEAR(sum, 1.0, 1e-9);
    for (double v : p) ASSERT_TRUE(v > 0.0 && v < 1.0);
  }
}

TEST(CrossEntropy, UniformPredictionIsLogK) {
  auto model = zero_classifier(3, 25);
  auto x = random_matrix(4, 3, 2);
  std::vector<size_t> labels{0, 5, 24, 7};
  EXPECT_NEAR(cross_entropy_loss(model, x, labels), std::log(25.0), 1e-12);
  EXPECT_NEAR(cross_entropy_loss(model, x, labels), 3.2189, 1e-4);
}

TEST(CrossEntropy, ConfidentCorrectPredictionNearZero) {
  auto model = bias_classifier({40.0, 0.0}, 2);
  auto x = random_matrix(3, 2, 3);
  std::vector<size_t> labels{0, 0, 0};
  const double loss = cross_entropy_loss(model, x, labels);
  EXPECT_GE(loss, 0.0);
  EXPECT_LT(loss, 1e-12);
}

TEST(CrossEntropy, BatchIsMeanOfSamples) {
  SoftmaxClassifier c;
  c.net = Mlp::initialized({5, 8, 4}, 9);
  c.norm = NormStats::identity(5);
  auto x = random_matrix(2, 5, 4);
  std::vector<size_t> labels{1, 3};
  FeatureMatrix a(0, 5), b(0, 5);
  a.append(x.row(0));
  b.append(x.row(1));
  std::vector<size_t> la{1}, lb{3};
  const double both = cross_entropy_loss(c, x, labels);
  EXPECT_NEAR(both, 0.5 * (cross_entropy_loss(c, a, la) + cross_entropy_loss(c, b, lb)),
              1e-12);
}

TEST(CrossEntropy, Errors) {
  auto model = zero_classifier(3, 4);
  FeatureMatrix empty(0, 3);
  EXPECT_THROW(cross_entropy_loss(model, empty, {}), ValidationError);
  auto x = random_matrix(1, 3, 5);
  std::vector<size_t> bad{4};
  EXPECT_THROW(cross_entropy_loss(model, x, bad), ValidationError);
}

Regressor constant_regressor(double value, size_t dim) {
  Regressor r;
  r.net = Mlp::zeros({dim, 0, 1});
  r.net.mutable_params()[dim] = value;
  r.norm = NormStats::identity(dim);
  return r;
}

TEST(L1Loss, ExactAndOffsetPredictions) {
  auto model = constant_regressor(5.0, 3);
  auto x = random_matrix(4, 3, 6);
  std::vector<double> exact(4, 5.0), lower(4, 3.0);
  EXPECT_DOUBLE_EQ(l1_loss(model, x, exact), 0.0);
  EXPECT_DOUBLE_EQ(l1_loss(model, x, lower), 2.0);
}

TEST(L1Loss, MixedSignErrors) {
  auto model = constant_regressor(0.0, 2);
  auto x = random_matrix(2, 2, 7);
  std::vector<double> labels{1.0, -3.0};  // errors -1 and +3
  EXPECT_DOUBLE_EQ(l1_loss(model, x, labels), 2.0);
  FeatureMatrix empty(0, 2);
  EXPECT_THROW(l1_loss(model, empty, {}), ValidationError);
}

TEST(Adam, ZeroGradientNoDecayLeavesParams) {
  std::vector<double> p{1.0, -2.0, 3.0};
  std::vector<double> g(3, 0.0);
  AdamState s(3);
  TrainConfig c;
  c.weight_decay = 0.0;
  adam_step(p, g, s, c);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0, 3.0}));
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, FirstStepIsLrTimesSign) {
  std::vector<double> p{0.5, 0.5, 0.5, 0.5};
  std::vector<double> g{3.0, -0.01, 250.0, -7.0};
  AdamState s(4);
  TrainConfig c;
  c.weight_decay = 0.0;
  c.learning_rate = 0.01;
  adam_step(p, g, s, c);
  for (size_t i = 0; i < 4; ++i) {
    const double sign = g[i] > 0 ? 1.0 : -1.0;
    EXPECT_NEAR(p[i], 0.5 - 0.01 * sign, 1e-8);
  }
}

TEST(Adam, DecayOnlyShrinks) {
  std::vector<double> p{2.0, -4.0};
  std::vector<double> g(2, 0.0);
  AdamState s(2);
  TrainConfig c;
  c.learning_rate = 0.1;
  c.weight_decay = 0.5;
  adam_step(p, g, s, c);
  EXPECT_DOUBLE_EQ(p[0], 2.0 * (1.0 - 0.05));
  EXPECT_DOUBLE_EQ(p[1], -4.0 * (1.0 - 0.05));
}

TEST(Adam, ShapeMismatch) {
  std::vector<double> p(3, 0.0), g(2, 0.0);
  AdamState s(3);
  EXPECT_THROW(adam_step(p, g, s, TrainConfig{}), ValidationError);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = TrainConfig{};
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_DOUBLE_EQ(TrainConfig::finetune_preset().learning_rate, 2e-5);
  EXPECT_EQ(TrainConfig::desk_default().batch_size, 32u);
  EXPECT_EQ(TrainConfig::desk_default().epochs, 15);
}

struct Clusters {
  FeatureMatrix x;
  std::vector<size_t> labels;
};

Clusters make_clusters(size_t k, size_t per_class, size_t dim, double separation,
                       uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Clusters c{FeatureMatrix(0, dim), {}};
  std::vector<double> row(dim);
  for (size_t n = 0; n < per_class; ++n) {
    for (size_t cls = 0; cls < k; ++cls) {
      for (size_t d = 0; d < dim; ++d) row[d] = normal(rng);
      row[cls % dim] += separation * static_cast<double>(cls / dim + 1);
      c.x.append(row);
      c.labels.push_back(cls);
    }
  }
  return c;
}

double accuracy(const SoftmaxClassifier& model, const Clusters& data) {
  size_t hits = 0;
  for (size_t i = 0; i < data.x.rows; ++i) {
    auto p = classify(model, data.x.row(i));
    const size_t arg = std::max_element(p.begin(), p.end()) - p.begin();
    hits += arg == data.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(data.x.rows);
}

std::vector<DomainId> ids(size_t k) {
  std::vector<DomainId> out;
  for (size_t i = 0; i < k; ++i) out.push_back(DomainId{static_cast<int>(i + 1)});
  return out;
}

TEST(FitClassifier, SeparableClusters) {
  auto train = make_clusters(2, 200, 4, 10.0, 1);
  auto test = make_clusters(2, 200, 4, 10.0, 2);
  TrainConfig c;
  c.hidden = 0;
  c.epochs = 60;
  auto fit = fit_classifier([&](int) { return train.x; }, train.labels, ids(2), c);
  EXPECT_GE(accuracy(fit.model, test), 0.95);
  EXPECT_EQ(fit.log.epoch_loss.size(), 60u);
}

TEST(FitClassifier, ShuffledLabelsGiveChance) {
  const size_t k = 5;
  // No class structure: predictions cannot depend on the true labels.
  auto train = make_clusters(k, 100, 6, 0.0, 3);
  auto test = make_clusters(k, 300, 6, 0.0, 4);
  Rng rng = make_rng(5);
  std::shuffle(train.labels.begin(), train.labels.end(), rng);
  auto fit = fit_classifier([&](int) { return train.x; }, train.labels, ids(k),
                            TrainConfig{});
  EXPECT_NEAR(accuracy(fit.model, test), 1.0 / k, 0.1);
}

TEST(FitClassifier, DeterministicUnderSeed) {
  auto train = make_clusters(3, 50, 4, 2.0, 6);
  TrainConfig c;
  c.seed = 17;
  auto a = fit_classifier([&](int) { return train.x; }, train.labels, ids(3), c);
  auto b = fit_classifier([&](int) { return train.x; }, train.labels, ids(3), c);
  EXPECT_EQ(a.log.epoch_loss, b.log.epoch_loss);
  EXPECT_TRUE(std::equal(a.model.net.params().begin(), a.model.net.params().end(),
                         b.model.net.params().begin()));
}

TEST(FitClassifier, ParametersStayFinite) {
  auto train = make_clusters(4, 40, 5, 1e3, 8);
  auto fit = fit_classifier([&](int) { return train.x; }, train.labels, ids(4),
                            TrainConfig{});
  for (double v : fit.model.net.params()) ASSERT_TRUE(std::isfinite(v));
}

TEST(FitClassifier, Errors) {
  auto train = make_clusters(2, 5, 3, 1.0, 9);
  EXPECT_THROW(fit_classifier([&](int) { return train.x; }, train.labels, ids(1),
                              TrainConfig{}),
               ValidationError);
  PatchFeaturizer featurizer;
  auto refs = procedural_references(2, 64, 1);
  auto one = generate_sources(refs, {DomainId{1}}, {1}, 0);
  EXPECT_THROW(train_classifier(one, featurizer, TrainConfig{}), ValidationError);
}

TEST(FitRegressor, ConstantLabels) {
  auto x = random_matrix(300, 6, 10);
  std::vector<double> labels(300, 42.0);
  auto fit = fit_regressor([&](int) { return x; }, labels, TrainConfig{});
  for (size_t i = 0; i < x.rows; ++i) {
    EXPECT_NEAR(regress(fit.model, x.row(i)), 42.0, 0.5);
  }
}

TEST(FitRegressor, LinearTargetIsLearned) {
  auto x = random_matrix(2000, 6, 11);
  const std::vector<double> w{1.5, -2.0, 0.5, 0.0, 3.0, -1.0};
  std::vector<double> labels(x.rows);
  for (size_t i = 0; i < x.rows; ++i) {
    labels[i] = 50.0;
    for (size_t d = 0; d < w.size(); ++d) labels[i] += 4.0 * w[d] * x.row(i)[d];
  }
  double mean = std::accumulate(labels.begin(), labels.end(), 0.0) / labels.size();
  double var = 0.0;
  for (double y : labels) var += (y - mean) * (y - mean);
  const double sd = std::sqrt(var / labels.size());
  TrainConfig c;
  c.hidden = 0;
  c.epochs = 60;
  auto fit = fit_regressor([&](int) { return x; }, labels, c);
  EXPECT_LT(l1_loss(fit.model, x, labels), 0.05 * sd);
}

TEST(FitRegressor, DeterministicPredictions) {
  auto x = random_matrix(100, 4, 12);
  std::vector<double> labels(100);
  for (size_t i = 0; i < 100; ++i) labels[i] = x.row(i)[0] * x.row(i)[1];
  TrainConfig c;
  c.seed = 3;
  auto a = fit_regressor([&](int) { return x; }, labels, c);
  auto b = fit_regressor([&](int) { return x; }, labels, c);
  for (size_t i = 0; i < x.rows; ++i) {
    EXPECT_EQ(regress(a.model, x.row(i)), regress(b.model, x.row(i)));
  }
  EXPECT_THROW(fit_regressor([&](int) { return FeatureMatrix(0, 4); }, {}, c),
               ValidationError);
  EXPECT_THROW(train_regressor({}, PatchFeaturizer{}, c), ValidationError);
}

TEST(PredictQuality, MeanOverPatches) {
  Regressor r;
  r.net = Mlp::zeros({2, 0, 1});
  r.net.mutable_params()[0] = 1.0;
  r.norm = NormStats::identity(2);
  FeatureMatrix patches(0, 2);
  for (double v : {1.0, 2.0, 3.0, 4.0, 5.0}) patches.append(std::vector<double>{v, 9.0});
  EXPECT_DOUBLE_EQ(predict_quality(r, patches), 3.0);
  EXPECT_THROW(predict_quality(r, FeatureMatrix(0, 2)), ValidationError);
}

TEST(PredictQuality, PatchSizedImageEqualsSinglePatch) {
  auto img = dead_leaves_image(64, 64, 31);
  Regressor r;
  r.net = Mlp::initialized({kFeatureDim, 8, 1}, 4);
  r.norm = NormStats::identity(kFeatureDim);
  PatchFeaturizer featurizer;
  const double single = regress(r, extract_features(img));
  EXPECT_NEAR(predict_quality(r, img, featurizer), single, 1e-12);
  EXPECT_EQ(predict_quality(r, img, featurizer), predict_quality(r, img, featurizer));
}

TEST(PatchFeaturizer, ContentKeyedPatchesAndMemo) {
  auto img = dead_leaves_image(128, 128, 8);
  auto copy = img;
  PatchFeaturizer f;
  f.policy.seed = 5;
  f.memo = std::make_shared<FeatureMemo>();
  auto a = f.patch_features(img, PatchMode::kTest);
  EXPECT_EQ(f.memo->size(), 1u);
  auto b = f.patch_features(copy, PatchMode::kTest);
  EXPECT_EQ(f.memo->size(), 1u);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.rows, 5u);
  PatchFeaturizer plain = f;
  plain.memo.reset();
  EXPECT_EQ(plain.patch_features(img, PatchMode::kTest).values, a.values);
  std::vector<const RasterImage*> batch{&img};
  auto e0 = f.epoch_features(batch, 0);
  auto e1 = f.epoch_features(batch, 1);
  EXPECT_EQ(e0.rows, 1u);
  EXPECT_NE(e0.values, e1.values);
}

LossFunction ce_loss_fn(const Mlp& net, const FeatureMatrix& x,
                        const std::vector<size_t>& labels) {
  return [net, x, labels](std::span<const double> params) {
    Mlp probe(net.shape(), {params.begin(), params.end()});
    return cross_entropy_loss_and_grad(probe, x, labels);
  };
}

TEST(GradientCheck, CrossEntropyMatchesFiniteDifferences) {
  for (int trial = 0; trial < 10; ++trial) {
    Mlp net = Mlp::initialized({5, trial % 2 ? 6u : 0u, 4}, trial);
    auto x = random_matrix(8, 5, 100 + trial);
    std::vector<size_t> labels;
    for (size_t i = 0; i < 8; ++i) labels.push_back((i + trial) % 4);
    auto report = gradient_check(ce_loss_fn(net, x, labels), net.params(), 1e-4);
    EXPECT_TRUE(report.passed) << report.relative_error;
    EXPECT_LT(report.relative_error, 1e-4);
    EXPECT_EQ(report.checked, net.params().size());
  }
}

TEST(GradientCheck, CorruptedGradientDetected) {
  Mlp net = Mlp::initialized({5, 6, 4}, 1);
  auto x = random_matrix(8, 5, 2);
  std::vector<size_t> labels{0, 1, 2, 3, 0, 1, 2, 3};
  auto good = ce_loss_fn(net, x, labels);
  auto bad = [good](std::span<const double> params) {
    LossAndGrad lg = good(params);
    for (double& g : lg.grad) g *= 1.05;
    return lg;
  };
  auto report = gradient_check(bad, net.params(), 1e-4);
  EXPECT_GT(report.relative_error, 1e-2);
  EXPECT_FALSE(report.passed);
}

TEST(GradientCheck, L1AwayFromKinks) {
  Mlp net = Mlp::initialized({4, 5, 1}, 3);
  auto x = random_matrix(10, 4, 4);
  std::vector<double> targets(10);
  for (size_t i = 0; i < 10; ++i) {
    double out = 0.0;
    net.forward(x.row(i), {&out, 1});
    targets[i] = out + (i % 2 ? 0.5 : -0.5);
  }
  LossFunction fn = [&](std::span<const double> params) {
    Mlp probe(net.shape(), {params.begin(), params.end()});
    return l1_loss_and_grad(probe, x, targets);
  };
  auto report = gradient_check(fn, net.params(), 1e-4);
  EXPECT_LT(report.relative_error, 1e-4);
}

TEST(GradientCheck, Subsample) {
  Mlp net = Mlp::initialized({6, 20, 3}, 5);
  auto x = random_matrix(4, 6, 6);
  std::vector<size_t> labels{0, 1, 2, 0};
  GradientCheckOptions opts;
  opts.max_params = 50;
  opts.seed = 1;
  auto report = gradient_check(ce_loss_fn(net, x, labels), net.params(), 1e-4, opts);
  EXPECT_EQ(report.checked, 50u);
  EXPECT_TRUE(report.passed);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto train = make_clusters(3, 30, kFeatureDim, 2.0, 13);
  TrainConfig c;
  c.epochs = 3;
  auto fit = fit_classifier([&](int) { return train.x; }, train.labels, ids(3), c);
  auto back = classifier_from_json(nlohmann::json::parse(to_json(fit.model, c).dump()));
  EXPECT_EQ(back.domain_ids, fit.model.domain_ids);
  for (size_t i = 0; i < train.x.rows; ++i) {
    ASSERT_EQ(classify(back, train.x.row(i)), classify(fit.model, train.x.row(i)));
  }
  std::vector<double> labels(train.x.rows);
  for (size_t i = 0; i < labels.size(); ++i) labels[i] = 10.0 * train.x.row(i)[0];
  auto reg = fit_regressor([&](int) { return train.x; }, labels, c);
  auto reg_back = regressor_from_json(nlohmann::json::parse(to_json(reg.model, c).dump()));
  for (size_t i = 0; i < train.x.rows; ++i) {
    ASSERT_EQ(regress(reg_back, train.x.row(i)), regress(reg.model, train.x.row(i)));
  }
  EXPECT_THROW(regressor_from_json(to_json(fit.model, c)), ValidationError);
}

TEST(TrainClassifier, LossDoesNotIncreaseOverFirstEpochsOnDefaultCorpus) {
  auto refs = procedural_references(20, 128, 7);
  auto sources = generate_sources(refs, registry_default().ids(), {1, 2, 3, 4, 5}, 1);
  PatchFeaturizer featurizer;
  featurizer.policy.seed = 3;
  TrainConfig c;
  c.epochs = 3;
  c.seed = 11;
  auto fit = train_classifier(sources, featurizer, c);
  ASSERT_EQ(fit.log.epoch_loss.size(), 3u);
  EXPECT_LE(fit.log.epoch_loss[1], fit.log.epoch_loss[0]);
  EXPECT_LE(fit.log.epoch_loss[2], fit.log.epoch_loss[1]);
  EXPECT_EQ(fit.model.k(), 15u);
}

}  // namespace
}  // namespace dgqa
