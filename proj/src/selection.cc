#include "dgqa/selection.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "dgqa/errors.h"
#include "dgqa/metrics.h"
#include "dgqa/rng.h"

namespace dgqa {

FeatureMatrix domain_probabilities(const SoftmaxClassifier& classifier,
                                   const std::vector<FeatureMatrix>& patch_features) {
  if (patch_features.empty()) {
    throw ValidationError("domain_probabilities: empty target set");
  }
  const size_t k = classifier.k();
  FeatureMatrix probs(patch_features.size(), k);
  for (size_t j = 0; j < patch_features.size(); ++j) {
    const FeatureMatrix& patches = patch_features[j];
    if (patches.rows == 0) {
      throw ValidationError("domain_probabilities: image without patches");
    }
    auto row = probs.row(j);
    for (size_t p = 0; p < patches.rows; ++p) {
      const auto q = classify(classifier, patches.row(p));
      for (size_t c = 0; c < k; ++c) row[c] += q[c];
    }
    for (double& v : row) v /= static_cast<double>(patches.rows);
  }
  return probs;
}

FeatureMatrix domain_probabilities(const SoftmaxClassifier& classifier,
                                   std::span<const RasterImage* const> target_images,
                                   const PatchFeaturizer& featurizer) {
  if (target_images.empty()) {
    throw ValidationError("domain_probabilities: empty target set");
  }
  return domain_probabilities(classifier, featurizer.test_features(target_images));
}

SimilarityReport relative_similarity(const FeatureMatrix& probabilities,
                                     std::vector<DomainId> domain_ids) {
  if (probabilities.rows == 0) {
    throw ValidationError("relative_similarity: no target rows");
  }
  if (probabilities.cols != domain_ids.size()) {
    throw ValidationError("relative_similarity: column count differs from domain count");
  }
  SimilarityReport report;
  report.domain_ids = std::move(domain_ids);
  report.sim.assign(probabilities.cols, 0.0);
  report.n_target = probabilities.rows;
  for (size_t j = 0; j < probabilities.rows; ++j) {
    const auto row = probabilities.row(j);
    double sum = 0.0;
    for (double v : row) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ValidationError("relative_similarity: probability outside [0,1]");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw ValidationError("relative_similarity: row " + std::to_string(j) +
                            " sums to " + std::to_string(sum));
    }
    for (size_t c = 0; c < row.size(); ++c) report.sim[c] += row[c];
  }
  for (double& s : report.sim) s /= static_cast<double>(probabilities.rows);
  return report;
}

const char* to_string(SelectionMethod method) {
  return method == SelectionMethod::kDgds ? "dgds" : "gds";
}

bool SelectionResult::is_selected(DomainId id) const {
  return std::find(selected.begin(), selected.end(), id) != selected.end();
}

SelectionResult select_similar_domains(const SimilarityReport& report,
                                       std::optional<double> tau) {
  const size_t k = report.sim.size();
  if (k == 0 || report.domain_ids.size() != k) {
    throw ValidationError("select_similar_domains: malformed report");
  }
  const double threshold = tau.value_or(1.0 / static_cast<double>(k));
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ValidationError("select_similar_domains: tau must lie in (0,1)");
  }
  SelectionResult result;
  result.report = report;
  result.report.tau = threshold;
  result.method = SelectionMethod::kDgds;
  for (size_t i = 0; i < k; ++i) {
    if (report.sim[i] > threshold) result.selected.push_back(report.domain_ids[i]);
  }
  if (result.selected.empty()) {
    const size_t best = static_cast<size_t>(
        std::max_element(report.sim.begin(), report.sim.end()) - report.sim.begin());
    result.selected.push_back(report.domain_ids[best]);
  }
  return result;
}

namespace {

double safe_score(const SubsetScorer& scorer, const std::vector<size_t>& subset) {
  try {
    const double s = scorer(subset);
    return std::isfinite(s) ? s : -std::numeric_limits<double>::infinity();
  } catch (const UndefinedMetricError&) {
    return -std::numeric_limits<double>::infinity();
  }
}

}  // namespace

GreedySelection greedy_domain_selection(const std::vector<DomainId>& domain_ids,
                                        const SubsetScorer& scorer,
                                        int max_rounds) {
  if (domain_ids.empty()) {
    throw ValidationError("greedy_domain_selection: no source domains");
  }
  if (max_rounds < 1) throw ValidationError("greedy_domain_selection: max_rounds < 1");
  const size_t k = domain_ids.size();
  GreedySelection out;
  out.result.method = SelectionMethod::kGds;
  out.result.report.domain_ids = domain_ids;
  out.result.report.sim.assign(k, 0.0);

  std::vector<double> single(k);
  for (size_t i = 0; i < k; ++i) single[i] = safe_score(scorer, {i});
  const size_t first = static_cast<size_t>(
      std::max_element(single.begin(), single.end()) - single.begin());
  for (size_t i = 0; i < k; ++i) {
    out.result.report.sim[i] = std::isfinite(single[i]) ? single[i] : 0.0;
  }
  std::vector<size_t> chosen = {first};
  double current = single[first];
  out.best_single_score = current;
  out.rounds.push_back({1, domain_ids[first], current});

  for (int round = 2; round <= max_rounds && chosen.size() < k; ++round) {
    double best = -std::numeric_limits<double>::infinity();
    size_t best_idx = k;
    for (size_t i = 0; i < k; ++i) {
      if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
      std::vector<size_t> trial = chosen;
      trial.push_back(i);
      std::sort(trial.begin(), trial.end());
      const double s = safe_score(scorer, trial);
      if (s > best) {
        best = s;
        best_idx = i;
      }
    }
    if (best_idx == k || !(best > current + kGreedyMinImprovement)) break;
    chosen.push_back(best_idx);
    current = best;
    out.rounds.push_back({round, domain_ids[best_idx], current});
  }
  std::sort(chosen.begin(), chosen.end());
  for (size_t i : chosen) out.result.selected.push_back(domain_ids[i]);
  out.final_score = current;
  return out;
}

GreedySelection greedy_domain_selection(const std::vector<DomainDataset>& domains,
                                        const LabeledTarget& target_val,
                                        const RegressorTrainer& train_fn,
                                        const TargetMetric& metric_fn,
                                        int max_rounds) {
  if (!target_val.labels) {
    throw ValidationError("greedy_domain_selection: target validation set has no labels");
  }
  if (target_val.labels->size() != target_val.images.size()) {
    throw ValidationError("greedy_domain_selection: label count differs from image count");
  }
  std::vector<DomainId> ids;
  for (const auto& d : domains) ids.push_back(d.domain);
  return greedy_domain_selection(
      ids,
      [&](const std::vector<size_t>& subset) {
        std::vector<const Sample*> training;
        for (size_t i : subset) {
          for (const auto& s : domains[i].samples) training.push_back(&s);
        }
        return metric_fn(train_fn(training), target_val);
      },
      max_rounds);
}

double proxy_distance_features(const FeatureMatrix& source,
                               const FeatureMatrix& target,
                               const TrainConfig& config) {
  if (source.rows < kProxyMinSamples || target.rows < kProxyMinSamples) {
    throw ValidationError("proxy_domain_distance: needs at least 20 samples per side");
  }
  if (source.cols != target.cols) {
    throw ValidationError("proxy_domain_distance: feature dimensions differ");
  }
  Rng rng = make_rng(derive_seed(config.seed, 7));
  auto halves = [&](const FeatureMatrix& m) {
    std::vector<size_t> idx(m.rows);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    const size_t half = m.rows / 2;
    return std::pair{std::vector<size_t>(idx.begin(), idx.begin() + half),
                     std::vector<size_t>(idx.begin() + half, idx.end())};
  };
  const auto [src_train, src_test] = halves(source);
  const auto [tgt_train, tgt_test] = halves(target);

  FeatureMatrix train_x;
  std::vector<size_t> train_y;
  for (size_t i : src_train) {
    train_x.append(source.row(i));
    train_y.push_back(0);
  }
  for (size_t i : tgt_train) {
    train_x.append(target.row(i));
    train_y.push_back(1);
  }
  TrainConfig probe = config;
  const size_t batches = (train_x.rows + probe.batch_size - 1) / probe.batch_size;
  probe.epochs = std::max<int>(
      kProxyEpochs, static_cast<int>((kProxyMinSteps + batches - 1) / batches));
  const ClassifierFit fit = fit_classifier([&](int) { return train_x; }, train_y,
                                           {DomainId{0}, DomainId{1}}, probe);
  auto side_accuracy = [&](const FeatureMatrix& m, const std::vector<size_t>& idx,
                           size_t label) {
    size_t correct = 0;
    for (size_t i : idx) {
      const auto p = classify(fit.model, m.row(i));
      const size_t predicted = p[1] > p[0] ? 1 : 0;
      correct += predicted == label;
    }
    return static_cast<double>(correct) / static_cast<double>(idx.size());
  };
  const double acc =
      0.5 * (side_accuracy(source, src_test, 0) + side_accuracy(target, tgt_test, 1));
  return std::clamp(2.0 * (2.0 * acc - 1.0), 0.0, 2.0);
}

double proxy_domain_distance(const DomainDataset& source,
                             std::span<const RasterImage* const> target_images,
                             const PatchFeaturizer& featurizer,
                             const TrainConfig& config) {
  if (source.samples.size() < kProxyMinSamples ||
      target_images.size() < kProxyMinSamples) {
    throw ValidationError("proxy_domain_distance: needs at least 20 samples per side");
  }
  PatchFeaturizer single = featurizer;
  single.policy.test_patches_per_image = 1;
  auto first_patch_rows = [&](std::span<const RasterImage* const> images,
                              uint64_t stream) {
    PatchFeaturizer f = single;
    f.policy.seed = derive_seed(single.policy.seed, stream);
    FeatureMatrix m;
    for (const auto& patches : f.test_features(images)) m.append(patches.row(0));
    return m;
  };
  std::vector<const RasterImage*> src_images;
  for (const auto& s : source.samples) src_images.push_back(&s.image);
  return proxy_distance_features(first_patch_rows(src_images, 1),
                                 first_patch_rows(target_images, 2), config);
}

nlohmann::json selection_report_json(const SelectionResult& selection,
                                     const DistortionRegistry& registry) {
  const SimilarityReport& r = selection.report;
  std::vector<size_t> order(r.sim.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (r.sim[a] != r.sim[b]) return r.sim[a] > r.sim[b];
    return to_int(r.domain_ids[a]) < to_int(r.domain_ids[b]);
  });
  nlohmann::json entries = nlohmann::json::array();
  for (size_t i : order) {
    const DomainId id = r.domain_ids[i];
    const FamilyDescriptor* family = registry.find(id);
    entries.push_back({{"domain_id", to_int(id)},
                       {"family_name", family ? family->name : std::string("unknown")},
                       {"sim", r.sim[i]},
                       {"selected", selection.is_selected(id)}});
  }
  return {{"tau", r.tau},
          {"n_target", r.n_target},
          {"method", to_string(selection.method)},
          {"entries", entries}};
}

SelectionResult selection_from_json(const nlohmann::json& j) {
  SelectionResult s;
  s.report.tau = j.at("tau").get<double>();
  s.report.n_target = j.at("n_target").get<size_t>();
  s.method = j.value("method", "dgds") == "gds" ? SelectionMethod::kGds
                                                : SelectionMethod::kDgds;
  for (const auto& e : j.at("entries")) {
    const DomainId id{e.at("domain_id").get<int>()};
    s.report.domain_ids.push_back(id);
    s.report.sim.push_back(e.at("sim").get<double>());
    if (e.at("selected").get<bool>()) s.selected.push_back(id);
  }
  return s;
}

double jaccard(const std::vector<DomainId>& a, const std::vector<DomainId>& b) {
  std::set<int> sa, sb;
  for (DomainId id : a) sa.insert(to_int(id));
  for (DomainId id : b) sb.insert(to_int(id));
  if (sa.empty() && sb.empty()) return 1.0;
  size_t inter = 0;
  for (int id : sa) inter += sb.count(id);
  const size_t uni = sa.size() + sb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace dgqa
