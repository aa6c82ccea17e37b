#include "dgqa/experiment.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "dgqa/errors.h"
#include "dgqa/rng.h"

namespace dgqa {

const char* to_string(CompositionMode mode) {
  switch (mode) {
    case CompositionMode::kSingleDraw: return "single_draw";
    case CompositionMode::kStratified: return "stratified";
    case CompositionMode::kStacked: return "stacked";
  }
  return "?";
}

CompositionMode composition_mode_from_string(const std::string& name) {
  if (name == "single_draw") return CompositionMode::kSingleDraw;
  if (name == "stratified") return CompositionMode::kStratified;
  if (name == "stacked") return CompositionMode::kStacked;
  throw ValidationError("unknown composition mode '" + name + "'");
}

void TargetMixtureRecipe::validate(const DistortionRegistry& registry) const {
  if (components.empty()) throw ValidationError("target recipe: no components");
  for (const auto& c : components) {
    registry.lookup(c.family);
    if (!(c.weight > 0.0) || !std::isfinite(c.weight)) {
      throw ValidationError("target recipe: weights must be positive");
    }
    if (c.levels.empty()) throw ValidationError("target recipe: empty level set");
    for (int level : c.levels) {
      if (level < 1 || level > 5) {
        throw ValidationError("target recipe: level " + std::to_string(level) +
                              " outside 1..5");
      }
    }
  }
}

std::vector<double> TargetMixtureRecipe::normalized_weights() const {
  double total = 0.0;
  for (const auto& c : components) total += c.weight;
  std::vector<double> w;
  for (const auto& c : components) w.push_back(c.weight / total);
  return w;
}

nlohmann::json to_json(const TargetMixtureRecipe& recipe) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : recipe.components) {
    comps.push_back({{"family", to_int(c.family)},
                     {"levels", std::vector<int>(c.levels.begin(), c.levels.end())},
                     {"weight", c.weight}});
  }
  return {{"mode", to_string(recipe.mode)}, {"components", comps}};
}

namespace {

DomainId family_from_json(const nlohmann::json& j, const DistortionRegistry& registry) {
  if (j.is_string()) return registry.lookup(j.get<std::string>()).id;
  if (j.is_number_integer()) return registry.lookup(DomainId{j.get<int>()}).id;
  throw ValidationError("family must be an id or a family name");
}

}  // namespace

TargetMixtureRecipe recipe_from_json(const nlohmann::json& j,
                                     const DistortionRegistry& registry) {
  TargetMixtureRecipe recipe;
  recipe.mode = composition_mode_from_string(j.value("mode", std::string("single_draw")));
  if (!j.contains("components") || !j["components"].is_array()) {
    throw ValidationError("target recipe: 'components' must be an array");
  }
  for (const auto& cj : j["components"]) {
    MixtureComponent c;
    c.family = family_from_json(cj.at("family"), registry);
    if (cj.contains("levels")) {
      c.levels.clear();
      for (int level : cj["levels"].get<std::vector<int>>()) c.levels.insert(level);
    }
    c.weight = cj.value("weight", 1.0);
    recipe.components.push_back(std::move(c));
  }
  recipe.validate(registry);
  return recipe;
}

std::vector<const RasterImage*> TargetSet::images() const {
  std::vector<const RasterImage*> out;
  for (const auto& s : samples) out.push_back(&s.image);
  return out;
}

std::vector<double> TargetSet::labels() const {
  std::vector<double> out;
  for (const auto& s : samples) out.push_back(s.quality);
  return out;
}

namespace {

std::vector<size_t> stratified_assignment(const std::vector<double>& weights,
                                          size_t count, Rng& rng) {
  std::vector<size_t> counts(weights.size());
  std::vector<std::pair<double, size_t>> remainders;
  size_t assigned = 0;
  for (size_t c = 0; c < weights.size(); ++c) {
    const double exact = weights[c] * static_cast<double>(count);
    counts[c] = static_cast<size_t>(std::floor(exact));
    assigned += counts[c];
    remainders.push_back({exact - std::floor(exact), c});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (size_t i = 0; assigned < count; ++i, ++assigned) {
    ++counts[remainders[i % remainders.size()].second];
  }
  std::vector<size_t> order;
  for (size_t c = 0; c < counts.size(); ++c) order.insert(order.end(), counts[c], c);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

int draw_level(const std::set<int>& levels, Rng& rng) {
  std::uniform_int_distribution<size_t> pick(0, levels.size() - 1);
  return *std::next(levels.begin(), static_cast<std::ptrdiff_t>(pick(rng)));
}

}  // namespace

TargetSet generate_target(const std::vector<Reference>& references,
                          const TargetMixtureRecipe& recipe, size_t count,
                          uint64_t seed, const DistortionRegistry& registry) {
  recipe.validate(registry);
  if (references.empty()) throw ValidationError("generate_target: no references");
  Rng rng = make_rng(seed);
  const auto weights = recipe.normalized_weights();
  std::vector<size_t> assignment;
  if (recipe.mode == CompositionMode::kStratified) {
    assignment = stratified_assignment(weights, count, rng);
  } else if (recipe.mode == CompositionMode::kSingleDraw) {
    std::discrete_distribution<size_t> pick(weights.begin(), weights.end());
    for (size_t i = 0; i < count; ++i) assignment.push_back(pick(rng));
  }

  TargetSet target;
  for (size_t i = 0; i < count; ++i) {
    const Reference& ref = references[i % references.size()];
    std::vector<size_t> steps;
    if (recipe.mode == CompositionMode::kStacked) {
      steps.resize(recipe.components.size());
      std::iota(steps.begin(), steps.end(), 0);
    } else {
      steps.push_back(assignment[i]);
    }
    RasterImage image = ref.image;
    std::vector<DomainId> applied;
    int last_level = 0;
    for (size_t step = 0; step < steps.size(); ++step) {
      const MixtureComponent& c = recipe.components[steps[step]];
      last_level = draw_level(c.levels, rng);
      const uint64_t op_seed = derive_seed(seed, (static_cast<uint64_t>(i) << 8) | step);
      image = apply_distortion(image, {c.family, last_level, op_seed}, registry);
      applied.push_back(c.family);
    }
    Sample s{std::move(image), 0.0, ref.id, steps.size() == 1 ? last_level : 0};
    s.quality = pseudo_label(ref.image, s.image);
    target.samples.push_back(std::move(s));
    target.provenance.push_back(std::move(applied));
  }
  return target;
}

std::vector<DomainDataset> generate_sources(const std::vector<Reference>& references,
                                            const std::vector<DomainId>& families,
                                            const std::set<int>& levels, uint64_t seed,
                                            const DistortionRegistry& registry) {
  std::vector<DomainDataset> out;
  for (DomainId family : families) {
    out.push_back(generate_domain(references, family, levels,
                                  derive_seed(seed, static_cast<uint64_t>(to_int(family))),
                                  registry));
  }
  return out;
}

void invert_labels(DomainDataset& dataset) {
  for (auto& s : dataset.samples) s.quality = kQualityScale - s.quality;
}

ClassifierStage train_domain_stage(const std::vector<DomainDataset>& sources,
                                   const PatchFeaturizer& featurizer,
                                   const TrainConfig& config, double split_ratio,
                                   uint64_t split_seed) {
  if (sources.size() < 2) throw ValidationError("train-domain: needs at least 2 domains");
  const SplitPlan plan = split_by_reference(sources, split_ratio, split_seed);
  std::vector<const RasterImage*> train_images, held_images;
  std::vector<size_t> train_labels, held_labels;
  std::vector<DomainId> ids;
  const size_t per_image =
      static_cast<size_t>(featurizer.policy.train_patches_per_image);
  for (size_t d = 0; d < sources.size(); ++d) {
    ids.push_back(sources[d].domain);
    size_t kept = 0;
    for (const auto& s : sources[d].samples) {
      if (plan.in_train(s.reference_id)) {
        train_images.push_back(&s.image);
        train_labels.insert(train_labels.end(), per_image, d);
        ++kept;
      } else {
        held_images.push_back(&s.image);
        held_labels.push_back(d);
      }
    }
    if (kept == 0) {
      throw ValidationError("train-domain: domain '" + sources[d].name +
                            "' has no training samples");
    }
  }
  ClassifierStage stage;
  ClassifierFit fit = fit_classifier(
      [&](int epoch) { return featurizer.epoch_features(train_images, epoch); },
      train_labels, std::move(ids), config);
  stage.model = std::move(fit.model);
  stage.log = std::move(fit.log);
  stage.train_samples = train_images.size();
  stage.held_out_samples = held_images.size();
  if (!held_images.empty()) {
    const FeatureMatrix probs = domain_probabilities(stage.model, held_images, featurizer);
    size_t correct = 0;
    for (size_t i = 0; i < probs.rows; ++i) {
      const auto row = probs.row(i);
      const size_t arg = static_cast<size_t>(
          std::max_element(row.begin(), row.end()) - row.begin());
      if (arg == held_labels[i]) ++correct;
    }
    stage.held_out_accuracy =
        static_cast<double>(correct) / static_cast<double>(probs.rows);
  }
  return stage;
}

SelectionResult select_stage(const SoftmaxClassifier& classifier,
                             std::span<const RasterImage* const> target_images,
                             const PatchFeaturizer& featurizer,
                             std::optional<double> tau) {
  const FeatureMatrix probs = domain_probabilities(classifier, target_images, featurizer);
  return select_similar_domains(relative_similarity(probs, classifier.domain_ids), tau);
}

std::vector<const Sample*> training_pool(const std::vector<DomainDataset>& sources,
                                         const std::vector<DomainId>& domains,
                                         const SplitPlan& plan, bool balance,
                                         uint64_t seed) {
  for (DomainId id : domains) {
    if (std::none_of(sources.begin(), sources.end(),
                     [&](const DomainDataset& d) { return d.domain == id; })) {
      throw ValidationError("training_pool: domain " + std::to_string(to_int(id)) +
                            " not in the source set");
    }
  }
  // Source order, so the pool does not depend on how `domains` is ordered.
  std::vector<std::vector<const Sample*>> per_domain;
  for (const auto& d : sources) {
    if (std::find(domains.begin(), domains.end(), d.domain) == domains.end()) continue;
    std::vector<const Sample*> kept;
    for (const auto& s : d.samples) {
      if (plan.in_train(s.reference_id)) kept.push_back(&s);
    }
    per_domain.push_back(std::move(kept));
  }
  if (balance && !per_domain.empty()) {
    size_t smallest = per_domain.front().size();
    for (const auto& v : per_domain) smallest = std::min(smallest, v.size());
    for (size_t d = 0; d < per_domain.size(); ++d) {
      Rng rng = make_rng(derive_seed(seed, d));
      std::shuffle(per_domain[d].begin(), per_domain[d].end(), rng);
      per_domain[d].resize(smallest);
    }
  }
  std::vector<const Sample*> out;
  for (const auto& v : per_domain) out.insert(out.end(), v.begin(), v.end());
  return out;
}

std::vector<double> predict_all(const Regressor& model,
                                std::span<const RasterImage* const> images,
                                const PatchFeaturizer& featurizer) {
  std::vector<double> out;
  out.reserve(images.size());
  for (const RasterImage* image : images) {
    out.push_back(predict_quality(model, *image, featurizer));
  }
  return out;
}

std::vector<ResultRow> ExperimentOutcome::rows() const {
  std::vector<ResultRow> out;
  for (const auto& r : repeats) {
    if (r.dgqa_metrics) out.push_back({r.run, r.seed, "dgqa", *r.dgqa_metrics});
    if (r.baseline_metrics) out.push_back({r.run, r.seed, "baseline", *r.baseline_metrics});
  }
  return out;
}

namespace {

std::optional<double> median_of(const std::vector<RepeatOutcome>& repeats, bool dgqa,
                                bool use_srcc) {
  std::vector<double> v;
  for (const auto& r : repeats) {
    const auto& m = dgqa ? r.dgqa_metrics : r.baseline_metrics;
    if (m) v.push_back(use_srcc ? m->srcc : m->plcc);
  }
  if (v.empty()) return std::nullopt;
  return median(std::move(v));
}

}  // namespace

std::optional<double> ExperimentOutcome::median_srcc(bool dgqa) const {
  return median_of(repeats, dgqa, true);
}

std::optional<double> ExperimentOutcome::median_plcc(bool dgqa) const {
  return median_of(repeats, dgqa, false);
}

uint64_t classifier_seed(uint64_t seed) { return derive_seed(seed, 0xC1A55); }

RepeatOutcome train_repeat(const std::vector<DomainDataset>& sources,
                           const std::vector<DomainId>& selected,
                           const ExperimentOptions& options,
                           const PatchFeaturizer& featurizer, int run) {
  RepeatOutcome rep;
  rep.run = run;
  rep.seed = options.seed + static_cast<uint64_t>(run);
  const SplitPlan plan = split_by_reference(sources, options.split_ratio, rep.seed);
  std::vector<DomainId> all_ids;
  for (const auto& d : sources) all_ids.push_back(d.domain);
  TrainConfig config = options.regressor_config;
  config.seed = rep.seed;
  const auto dgqa_pool =
      training_pool(sources, selected, plan, options.balance_domains, rep.seed);
  const auto base_pool =
      training_pool(sources, all_ids, plan, options.balance_domains, rep.seed);
  rep.dgqa_train_size = dgqa_pool.size();
  rep.baseline_train_size = base_pool.size();
  rep.dgqa = train_regressor(dgqa_pool, featurizer, config).model;
  rep.baseline = train_regressor(base_pool, featurizer, config).model;
  return rep;
}

void evaluate_repeat(RepeatOutcome& repeat,
                     std::span<const RasterImage* const> target_images,
                     const std::vector<double>& target_labels, PlccMode mode,
                     const PatchFeaturizer& featurizer) {
  if (target_labels.size() != target_images.size()) {
    throw ValidationError("target labels and images differ in count");
  }
  const auto p_dgqa = predict_all(repeat.dgqa, target_images, featurizer);
  const auto p_base = predict_all(repeat.baseline, target_images, featurizer);
  try {
    repeat.dgqa_metrics = evaluate(p_dgqa, target_labels, mode);
    repeat.baseline_metrics = evaluate(p_base, target_labels, mode);
  } catch (const UndefinedMetricError& e) {
    repeat.error = e.what();
    repeat.dgqa_metrics.reset();
    repeat.baseline_metrics.reset();
  }
}

ExperimentOutcome run_experiment(const std::vector<DomainDataset>& sources,
                                 std::span<const RasterImage* const> target_images,
                                 const std::optional<std::vector<double>>& target_labels,
                                 const ExperimentOptions& options,
                                 const PatchFeaturizer& featurizer) {
  if (options.repeats < 1) throw ValidationError("repeats must be >= 1");
  if (target_labels && target_labels->size() != target_images.size()) {
    throw ValidationError("target labels and images differ in count");
  }
  ExperimentOutcome out;
  TrainConfig cls_config = options.classifier_config;
  cls_config.seed = classifier_seed(options.seed);
  try {
    out.classifier = train_domain_stage(sources, featurizer, cls_config,
                                        options.split_ratio, options.seed);
  } catch (const std::exception& e) {
    throw StageError("train-domain", e.what());
  }
  try {
    out.selection = select_stage(out.classifier.model, target_images, featurizer,
                                 options.tau);
  } catch (const std::exception& e) {
    throw StageError("select", e.what());
  }
  for (int r = 0; r < options.repeats; ++r) {
    RepeatOutcome rep;
    try {
      rep = train_repeat(sources, out.selection.selected, options, featurizer, r);
    } catch (const std::exception& e) {
      throw StageError("train-iqa", e.what());
    }
    if (target_labels) {
      try {
        evaluate_repeat(rep, target_images, *target_labels, options.plcc_mode, featurizer);
      } catch (const std::exception& e) {
        throw StageError("evaluate", e.what());
      }
    }
    out.repeats.push_back(std::move(rep));
  }
  return out;
}

GreedySelection run_gds(const std::vector<DomainDataset>& sources,
                        const std::vector<Sample>& target, const GdsOptions& options,
                        const PatchFeaturizer& featurizer) {
  if (sources.empty()) throw ValidationError("gds: no source domains");
  std::vector<std::string> target_refs;
  for (const auto& s : target) target_refs.push_back(s.reference_id);
  const SplitPlan target_plan = split_by_reference(
      target_refs, options.target_val_ratio, derive_seed(options.seed, 0x6D5));
  std::vector<const RasterImage*> val_images;
  std::vector<double> val_labels;
  for (const auto& s : target) {
    if (target_plan.in_train(s.reference_id)) {
      val_images.push_back(&s.image);
      val_labels.push_back(s.quality);
    }
  }
  if (val_images.size() < 3) {
    throw ValidationError("gds: target validation split has fewer than 3 images");
  }
  const SplitPlan plan = split_by_reference(sources, options.split_ratio, options.seed);
  std::vector<DomainId> ids;
  for (const auto& d : sources) ids.push_back(d.domain);
  TrainConfig config = options.regressor_config;
  config.seed = options.seed;
  const SubsetScorer scorer = [&](const std::vector<size_t>& subset) {
    std::vector<DomainId> chosen;
    for (size_t i : subset) chosen.push_back(ids[i]);
    const auto pool = training_pool(sources, chosen, plan, false, options.seed);
    const Regressor model = train_regressor(pool, featurizer, config).model;
    return srcc(predict_all(model, val_images, featurizer), val_labels);
  };
  const int rounds = options.max_rounds > 0 ? options.max_rounds
                                            : static_cast<int>(ids.size());
  return greedy_domain_selection(ids, scorer, rounds);
}

}  // namespace dgqa
