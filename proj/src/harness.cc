#include "dgqa/harness.h"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <sstream>

#include "dgqa/errors.h"
#include "dgqa/references.h"
#include "dgqa/rng.h"

namespace dgqa {

namespace {

using nlohmann::json;

const std::set<std::string> kConfigKeys = {
    "seed",          "domains",         "references",  "target_references",
    "levels",        "target",          "inverted_domains", "tau",
    "classifier",    "regressor",       "patches",     "repeats",
    "split_ratio",   "balance_domains", "plcc_mode",   "gds",
    "output_dir"};

PlccMode plcc_mode_from_string(const std::string& s) {
  if (s == "logistic") return PlccMode::kLogistic;
  if (s == "raw") return PlccMode::kRaw;
  throw ValidationError("plcc_mode must be 'logistic' or 'raw'");
}

DomainId domain_from_json(const json& j) {
  if (j.is_string()) return registry_default().lookup(j.get<std::string>()).id;
  if (j.is_number_integer()) return registry_default().lookup(DomainId{j.get<int>()}).id;
  throw ValidationError("domain entries must be ids or family names");
}

std::vector<DomainId> domains_from_json(const json& j) {
  if (j.is_string() && j.get<std::string>() == "all") return registry_default().ids();
  if (!j.is_array()) throw ValidationError("'domains' must be \"all\" or an array");
  std::vector<DomainId> out;
  for (const auto& e : j) out.push_back(domain_from_json(e));
  return out;
}

TrainConfig train_config_json(const json& j) {
  TrainConfig base;
  if (j.contains("preset")) {
    const std::string preset = j["preset"].get<std::string>();
    if (preset == "finetune") {
      base = TrainConfig::finetune_preset();
    } else if (preset != "desk") {
      throw ValidationError("unknown train preset '" + preset + "'");
    }
  }
  json merged = to_json(base);
  for (const auto& [key, value] : j.items()) {
    if (key != "preset") merged[key] = value;
  }
  return train_config_from_json(merged);
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

template <typename Fn>
auto in_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

std::vector<std::string> missing_files(const fs::path& dir,
                                       const std::vector<std::string>& names) {
  std::vector<std::string> missing;
  for (const auto& n : names) {
    if (!fs::exists(dir / n)) missing.push_back((dir / n).string());
  }
  return missing;
}

void require_files(const fs::path& dir, const std::vector<std::string>& names) {
  const auto missing = missing_files(dir, names);
  if (missing.empty()) return;
  std::string msg = "missing artifacts:";
  for (const auto& m : missing) msg += "\n  " + m;
  throw IoError(msg);
}

std::vector<const RasterImage*> pointers(const std::vector<RasterImage>& images) {
  std::vector<const RasterImage*> out;
  for (const auto& im : images) out.push_back(&im);
  return out;
}

ExperimentOptions experiment_options(const ExperimentConfig& c, const StageSeeds& s) {
  ExperimentOptions o;
  o.classifier_config = c.classifier;
  o.regressor_config = c.regressor;
  o.patches = c.patches;
  o.tau = c.tau;
  o.repeats = c.repeats;
  o.seed = s.experiment;
  o.split_ratio = c.split_ratio;
  o.balance_domains = c.balance_domains;
  o.plcc_mode = c.plcc_mode;
  return o;
}

fs::path regressor_path(const fs::path& dir, const char* setting, int run) {
  return dir / artifacts::kRegressors /
         (std::string(setting) + "_run" + std::to_string(run) + ".json");
}

}  // namespace

double ExperimentConfig::effective_tau() const {
  if (tau) return *tau;
  return 1.0 / static_cast<double>(domains.size());
}

void ExperimentConfig::validate() const {
  if (domains.empty()) throw ValidationError("config: no source domains");
  std::set<int> seen;
  for (DomainId id : domains) {
    registry_default().lookup(id);
    if (!seen.insert(to_int(id)).second) {
      throw ValidationError("config: domain " + std::to_string(to_int(id)) +
                            " listed twice");
    }
  }
  for (DomainId id : inverted_domains) {
    if (!seen.count(to_int(id))) {
      throw ValidationError("config: inverted domain " + std::to_string(to_int(id)) +
                            " is not a source domain");
    }
  }
  if (levels.empty()) throw ValidationError("config: empty level set");
  for (int l : levels) {
    if (l < 1 || l > 5) throw ValidationError("config: levels must lie in 1..5");
  }
  if (tau && !(*tau > 0.0 && *tau < 1.0)) {
    throw ValidationError("config: tau must lie in (0, 1)");
  }
  if (repeats < 1) throw ValidationError("config: repeats must be >= 1");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) {
    throw ValidationError("config: split_ratio must lie in (0, 1)");
  }
  if (!(gds_target_val_ratio > 0.0 && gds_target_val_ratio < 1.0)) {
    throw ValidationError("config: gds target_val_ratio must lie in (0, 1)");
  }
  if (target_references < 0) throw ValidationError("config: target_references < 0");
  classifier.validate();
  regressor.validate();
  patches.validate();
  std::error_code ec;
  if (!references.dir.empty() && !fs::is_directory(references.dir, ec)) {
    throw IoError("reference directory '" + references.dir.string() +
                  "' does not exist");
  }
  if (references.dir.empty() &&
      (references.procedural_count < 2 || references.procedural_size < kMinImageSide)) {
    throw ValidationError("config: procedural references need count >= 2 and size >= " +
                          std::to_string(kMinImageSide));
  }
  if (target.recipe) {
    target.recipe->validate(registry_default());
    if (target.count < 3) throw ValidationError("config: target count must be >= 3");
  } else if (target.image_dir.empty()) {
    throw ValidationError("config: target needs a recipe or an image_dir");
  } else if (!fs::is_directory(target.image_dir, ec)) {
    throw IoError("target image directory '" + target.image_dir.string() +
                  "' does not exist");
  }
  if (output_dir.empty()) throw ValidationError("config: empty output_dir");
}

ExperimentConfig config_from_json(const json& input, const fs::path& base_dir) {
  const json& j = input.contains("config") ? input.at("config") : input;
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!kConfigKeys.count(key)) throw ValidationError("config: unknown key '" + key + "'");
  }
  ExperimentConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.domains = domains_from_json(j.value("domains", json("all")));
    if (j.contains("references")) {
      const json& r = j["references"];
      if (r.contains("dir")) {
        c.references.dir = resolve(base_dir, r["dir"].get<std::string>());
      } else if (r.contains("procedural")) {
        const json& p = r["procedural"];
        c.references.procedural_count = p.value("count", c.references.procedural_count);
        c.references.procedural_size = p.value("size", c.references.procedural_size);
        c.references.procedural_seed = p.value("seed", c.references.procedural_seed);
      } else {
        throw ValidationError("'references' needs 'dir' or 'procedural'");
      }
    }
    c.target_references = j.value("target_references", c.target_references);
    if (j.contains("levels")) {
      c.levels.clear();
      for (int l : j["levels"].get<std::vector<int>>()) c.levels.insert(l);
    }
    if (j.contains("target")) {
      const json& t = j["target"];
      if (t.contains("recipe")) {
        c.target.recipe = recipe_from_json(t["recipe"], registry_default());
        c.target.count = t.value("count", c.target.count);
      } else if (t.contains("image_dir")) {
        c.target.image_dir = resolve(base_dir, t["image_dir"].get<std::string>());
      } else {
        throw ValidationError("'target' needs 'recipe' or 'image_dir'");
      }
    } else {
      throw ValidationError("config: missing 'target'");
    }
    if (j.contains("inverted_domains")) {
      for (const auto& e : j["inverted_domains"]) {
        c.inverted_domains.push_back(domain_from_json(e));
      }
    }
    if (j.contains("tau") && !j["tau"].is_null()) c.tau = j["tau"].get<double>();
    if (j.contains("classifier")) c.classifier = train_config_json(j["classifier"]);
    if (j.contains("regressor")) c.regressor = train_config_json(j["regressor"]);
    if (j.contains("patches")) {
      const json& p = j["patches"];
      c.patches.patch_size = p.value("patch_size", c.patches.patch_size);
      c.patches.train_patches_per_image =
          p.value("train_patches_per_image", c.patches.train_patches_per_image);
      c.patches.test_patches_per_image =
          p.value("test_patches_per_image", c.patches.test_patches_per_image);
    }
    c.repeats = j.value("repeats", c.repeats);
    c.split_ratio = j.value("split_ratio", c.split_ratio);
    c.balance_domains = j.value("balance_domains", c.balance_domains);
    c.plcc_mode = plcc_mode_from_string(j.value("plcc_mode", std::string("logistic")));
    if (j.contains("gds")) {
      c.gds_max_rounds = j["gds"].value("max_rounds", c.gds_max_rounds);
      c.gds_target_val_ratio = j["gds"].value("target_val_ratio", c.gds_target_val_ratio);
    }
    if (j.contains("output_dir")) {
      c.output_dir = resolve(base_dir, j["output_dir"].get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  return config_from_json(read_json(path), path.parent_path());
}

json to_json(const ExperimentConfig& c) {
  json domains = json::array();
  for (DomainId id : c.domains) domains.push_back(to_int(id));
  json inverted = json::array();
  for (DomainId id : c.inverted_domains) inverted.push_back(to_int(id));
  json refs;
  if (!c.references.dir.empty()) {
    refs = {{"dir", c.references.dir.string()}};
  } else {
    refs = {{"procedural",
             {{"count", c.references.procedural_count},
              {"size", c.references.procedural_size},
              {"seed", c.references.procedural_seed}}}};
  }
  json target;
  if (c.target.recipe) {
    target = {{"recipe", to_json(*c.target.recipe)}, {"count", c.target.count}};
  } else {
    target = {{"image_dir", c.target.image_dir.string()}};
  }
  json classifier = to_json(c.classifier);
  json regressor = to_json(c.regressor);
  return {{"seed", c.seed},
          {"domains", domains},
          {"references", refs},
          {"target_references", c.target_references},
          {"levels", std::vector<int>(c.levels.begin(), c.levels.end())},
          {"target", target},
          {"inverted_domains", inverted},
          {"tau", c.tau ? json(*c.tau) : json(nullptr)},
          {"classifier", classifier},
          {"regressor", regressor},
          {"patches",
           {{"patch_size", c.patches.patch_size},
            {"train_patches_per_image", c.patches.train_patches_per_image},
            {"test_patches_per_image", c.patches.test_patches_per_image}}},
          {"repeats", c.repeats},
          {"split_ratio", c.split_ratio},
          {"balance_domains", c.balance_domains},
          {"plcc_mode", to_string(c.plcc_mode)},
          {"gds",
           {{"max_rounds", c.gds_max_rounds},
            {"target_val_ratio", c.gds_target_val_ratio}}},
          {"output_dir", c.output_dir.string()}};
}

uint64_t fnv1a64(const std::string& bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& config) {
  json j = to_json(config);
  j.erase("output_dir");  // the hash identifies the experiment, not its location
  return hex64(fnv1a64(j.dump()));
}

StageSeeds stage_seeds(uint64_t seed) {
  return {derive_seed(seed, 1), derive_seed(seed, 2), derive_seed(seed, 3),
          derive_seed(seed, 4), derive_seed(seed, 5), derive_seed(seed, 6)};
}

json to_json(const StageSeeds& s) {
  return {{"synth", s.synth},           {"target", s.target},
          {"patches", s.patches},       {"classifier", s.classifier},
          {"experiment", s.experiment}, {"gds", s.gds}};
}

RunLock::RunLock(const fs::path& run_dir) : path_(run_dir / artifacts::kLock) {
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec) throw IoError("cannot create '" + run_dir.string() + "': " + ec.message());
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      throw IoError("run directory '" + run_dir.string() + "' is locked (" +
                    path_.string() + " exists)");
    }
    throw IoError("cannot create lock '" + path_.string() + "': " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

RunContext::RunContext(ExperimentConfig config, std::string command)
    : config_(std::move(config)), command_(std::move(command)),
      seeds_(stage_seeds(config_.seed)) {
  featurizer_.policy = config_.patches;
  featurizer_.policy.seed = seeds_.patches;
  featurizer_.memo = std::make_shared<FeatureMemo>();
}

const DistortionRegistry& RunContext::registry() const { return registry_default(); }

void RunContext::write_run_record() const {
  std::error_code ec;
  fs::create_directories(dir(), ec);
  if (ec) throw IoError("cannot create '" + dir().string() + "': " + ec.message());
  write_json(dir() / artifacts::kRun, {{"format", "dgqa-run"},
                                       {"version", 1},
                                       {"command", command_},
                                       {"config", to_json(config_)},
                                       {"config_hash", config_hash(config_)},
                                       {"seeds", to_json(seeds_)},
                                       {"tau", config_.effective_tau()}});
}

fs::path source_dir(const fs::path& run_dir, DomainId id, const std::string& name) {
  char prefix[16];
  std::snprintf(prefix, sizeof(prefix), "%02d_", to_int(id));
  return run_dir / artifacts::kSources / (prefix + name);
}

fs::path source_dir(const fs::path& run_dir, const DomainDataset& d) {
  return source_dir(run_dir, d.domain, d.name);
}

std::vector<DomainDataset> RunContext::load_sources() const {
  std::vector<DomainDataset> out;
  for (DomainId id : config_.domains) {
    const auto& family = registry().lookup(id);
    out.push_back(read_dataset(source_dir(dir(), id, family.name)));
  }
  return out;
}

std::vector<RasterImage> RunContext::load_target_images() const {
  return read_target_images(dir() / artifacts::kTarget);
}

std::optional<TargetLabels> RunContext::load_target_labels() const {
  const fs::path p = dir() / artifacts::kTarget / kTargetLabels;
  if (!fs::exists(p)) return std::nullopt;
  return read_target_labels(p);
}

namespace {

std::vector<Reference> load_references(const ExperimentConfig& c) {
  if (!c.references.dir.empty()) return read_reference_dir(c.references.dir);
  return procedural_references(c.references.procedural_count,
                               c.references.procedural_size,
                               c.references.procedural_seed);
}

// Distorted images are stored as 8-bit PNGs; labels are computed on the
// stored pixels so the manifest agrees with what is read back.
void quantize_samples(std::vector<Sample>& samples, const std::vector<Reference>& refs) {
  std::map<std::string, const RasterImage*> by_id;
  for (const auto& r : refs) by_id[r.id] = &r.image;
  for (auto& s : samples) {
    s.image = quantize_8bit(s.image);
    s.quality = pseudo_label(*by_id.at(s.reference_id), s.image);
  }
}

}  // namespace

void cmd_synth(const RunContext& ctx) {
  in_stage("synth", [&] {
    const ExperimentConfig& c = ctx.config();
    std::vector<Reference> refs = load_references(c);
    for (auto& r : refs) {
      require_min_size(r.image, ("reference " + r.id).c_str());
      r.image = quantize_8bit(r.image);
    }
    const bool has_recipe = c.target.recipe.has_value();
    size_t n_target_refs = 0;
    if (has_recipe) {
      n_target_refs = c.target_references > 0
                          ? static_cast<size_t>(c.target_references)
                          : std::max<size_t>(1, refs.size() / 3);
      if (n_target_refs >= refs.size()) {
        throw ValidationError("need more references than the " +
                              std::to_string(n_target_refs) + " held out for the target");
      }
    }
    const std::vector<Reference> source_refs(refs.begin(), refs.end() - n_target_refs);
    const std::vector<Reference> target_refs(refs.end() - n_target_refs, refs.end());

    for (DomainId id : c.domains) {
      DomainDataset d = generate_domain(
          source_refs, id, c.levels,
          derive_seed(ctx.seeds().synth, static_cast<uint64_t>(to_int(id))));
      quantize_samples(d.samples, source_refs);
      const bool inverted = std::find(c.inverted_domains.begin(),
                                      c.inverted_domains.end(), id) !=
                            c.inverted_domains.end();
      if (inverted) invert_labels(d);
      write_dataset(source_dir(ctx.dir(), d), d,
                    {{"family", ctx.registry().lookup(id).name},
                     {"levels", std::vector<int>(c.levels.begin(), c.levels.end())},
                     {"labels_inverted", inverted}});
    }

    const fs::path target_dir = ctx.dir() / artifacts::kTarget;
    if (has_recipe) {
      TargetSet target = generate_target(target_refs, *c.target.recipe, c.target.count,
                                         ctx.seeds().target);
      quantize_samples(target.samples, target_refs);
      write_target_images(target_dir, target.samples,
                          {{"recipe", to_json(*c.target.recipe)}});
      TargetLabels labels;
      for (size_t i = 0; i < target.samples.size(); ++i) {
        labels.quality.push_back(target.samples[i].quality);
        std::vector<int> fams;
        for (DomainId f : target.provenance[i]) fams.push_back(to_int(f));
        labels.families.push_back(std::move(fams));
      }
      write_target_labels(target_dir / kTargetLabels, labels);
    } else {
      const auto external = read_reference_dir(c.target.image_dir);
      std::vector<Sample> samples;
      for (const auto& e : external) samples.push_back({e.image, 0.0, e.id, 0});
      write_target_images(target_dir, samples,
                          {{"source_dir", c.target.image_dir.string()}});
    }
  });
}

void cmd_synth_family(const fs::path& refs_dir, DomainId family,
                      const std::set<int>& levels, uint64_t seed, const fs::path& out) {
  in_stage("synth", [&] {
    std::vector<Reference> refs = read_reference_dir(refs_dir);
    for (auto& r : refs) require_min_size(r.image, ("reference " + r.id).c_str());
    DomainDataset d = generate_domain(refs, family, levels, seed);
    quantize_samples(d.samples, refs);
    write_dataset(out, d,
                  {{"family", d.name},
                   {"levels", std::vector<int>(levels.begin(), levels.end())},
                   {"seed", seed}});
  });
}

void cmd_train_domain(const RunContext& ctx) {
  in_stage("train-domain", [&] {
    const auto sources = ctx.load_sources();
    TrainConfig config = ctx.config().classifier;
    config.seed = classifier_seed(ctx.seeds().experiment);
    const ClassifierStage stage = train_domain_stage(
        sources, ctx.featurizer(), config, ctx.config().split_ratio, ctx.seeds().experiment);
    json j = to_json(stage.model, config);
    j["held_out_accuracy"] = stage.held_out_accuracy;
    j["train_samples"] = stage.train_samples;
    j["held_out_samples"] = stage.held_out_samples;
    j["epoch_loss"] = stage.log.epoch_loss;
    write_json(ctx.dir() / artifacts::kClassifier, j);
  });
}

void cmd_select(const RunContext& ctx) {
  in_stage("select", [&] {
    require_files(ctx.dir(), {artifacts::kClassifier});
    const SoftmaxClassifier model =
        classifier_from_json(read_json(ctx.dir() / artifacts::kClassifier));
    // Only target images are read here; the label file is never opened.
    const auto images = ctx.load_target_images();
    const SelectionResult sel =
        select_stage(model, pointers(images), ctx.featurizer(), ctx.config().tau);
    write_json(ctx.dir() / artifacts::kSelection,
               selection_report_json(sel, ctx.registry()));
  });
}

void cmd_train_iqa(const RunContext& ctx) {
  in_stage("train-iqa", [&] {
    require_files(ctx.dir(), {artifacts::kSelection});
    const SelectionResult sel =
        selection_from_json(read_json(ctx.dir() / artifacts::kSelection));
    const auto sources = ctx.load_sources();
    const ExperimentOptions options = experiment_options(ctx.config(), ctx.seeds());
    std::error_code ec;
    fs::create_directories(ctx.dir() / artifacts::kRegressors, ec);
    if (ec) throw IoError("cannot create regressor directory: " + ec.message());
    json runs = json::array();
    for (int r = 0; r < options.repeats; ++r) {
      const RepeatOutcome rep =
          train_repeat(sources, sel.selected, options, ctx.featurizer(), r);
      TrainConfig config = options.regressor_config;
      config.seed = rep.seed;
      write_json(regressor_path(ctx.dir(), "dgqa", r), to_json(rep.dgqa, config));
      write_json(regressor_path(ctx.dir(), "baseline", r), to_json(rep.baseline, config));
      runs.push_back({{"run", r},
                      {"seed", rep.seed},
                      {"dgqa_train_size", rep.dgqa_train_size},
                      {"baseline_train_size", rep.baseline_train_size}});
    }
    std::vector<int> selected;
    for (DomainId id : sel.selected) selected.push_back(to_int(id));
    write_json(ctx.dir() / artifacts::kTraining,
               {{"selected", selected}, {"k", sources.size()}, {"runs", runs}});
  });
}

void cmd_evaluate(const RunContext& ctx) {
  in_stage("evaluate", [&] {
    const auto labels = ctx.load_target_labels();
    if (!labels) return;
    require_files(ctx.dir(), {artifacts::kTraining});
    const json training = read_json(ctx.dir() / artifacts::kTraining);
    const auto images = ctx.load_target_images();
    const auto ptrs = pointers(images);
    std::vector<ResultRow> rows;
    std::vector<double> srcc_d, srcc_b, plcc_d, plcc_b;
    json runs = json::array();
    for (const auto& rj : training.at("runs")) {
      RepeatOutcome rep;
      rep.run = rj.at("run").get<int>();
      rep.seed = rj.at("seed").get<uint64_t>();
      rep.dgqa = regressor_from_json(read_json(regressor_path(ctx.dir(), "dgqa", rep.run)));
      rep.baseline =
          regressor_from_json(read_json(regressor_path(ctx.dir(), "baseline", rep.run)));
      evaluate_repeat(rep, ptrs, labels->quality, ctx.config().plcc_mode, ctx.featurizer());
      if (rep.dgqa_metrics) {
        rows.push_back({rep.run, rep.seed, "dgqa", *rep.dgqa_metrics});
        rows.push_back({rep.run, rep.seed, "baseline", *rep.baseline_metrics});
        srcc_d.push_back(rep.dgqa_metrics->srcc);
        srcc_b.push_back(rep.baseline_metrics->srcc);
        plcc_d.push_back(rep.dgqa_metrics->plcc);
        plcc_b.push_back(rep.baseline_metrics->plcc);
      }
      runs.push_back({{"run", rep.run}, {"error", rep.error}});
    }
    write_text(ctx.dir() / artifacts::kResults, results_csv(rows));
    json summary = {{"n_target", images.size()},
                    {"repeats", training.at("runs").size()},
                    {"failed_runs", training.at("runs").size() - srcc_d.size()},
                    {"plcc_mode", to_string(ctx.config().plcc_mode)},
                    {"runs", runs}};
    auto setting = [&](const std::vector<double>& s, const std::vector<double>& p,
                       const char* size_key) {
      std::vector<size_t> sizes;
      for (const auto& rj : training.at("runs")) sizes.push_back(rj.at(size_key).get<size_t>());
      json out = {{"train_size", sizes}};
      if (!s.empty()) {
        out["median_srcc"] = median(s);
        out["median_plcc"] = median(p);
      }
      return out;
    };
    summary["dgqa"] = setting(srcc_d, plcc_d, "dgqa_train_size");
    summary["baseline"] = setting(srcc_b, plcc_b, "baseline_train_size");
    write_json(ctx.dir() / artifacts::kSummary, summary);
  });
}

void cmd_pipeline(const RunContext& ctx) {
  bool have_sources = fs::exists(ctx.dir() / artifacts::kTarget / kDatasetManifest);
  for (DomainId id : ctx.config().domains) {
    have_sources = have_sources &&
                   fs::exists(source_dir(ctx.dir(), id, ctx.registry().lookup(id).name) /
                              kDatasetManifest);
  }
  if (!have_sources) cmd_synth(ctx);
  cmd_train_domain(ctx);
  cmd_select(ctx);
  cmd_train_iqa(ctx);
  cmd_evaluate(ctx);
}

void cmd_gds(const RunContext& ctx) {
  in_stage("gds", [&] {
    const auto labels = ctx.load_target_labels();
    if (!labels) {
      throw ValidationError("greedy selection needs target labels (" +
                            (ctx.dir() / artifacts::kTarget / kTargetLabels).string() +
                            " not found)");
    }
    const auto sources = ctx.load_sources();
    const auto images = read_target_images(ctx.dir() / artifacts::kTarget);
    const TargetManifest manifest = read_target_manifest(ctx.dir() / artifacts::kTarget);
    if (labels->quality.size() != images.size()) {
      throw ValidationError("target label count differs from image count");
    }
    std::vector<Sample> target;
    for (size_t i = 0; i < images.size(); ++i) {
      target.push_back({images[i], labels->quality[i], manifest.reference_ids[i], 0});
    }
    std::optional<SelectionResult> dgds;
    if (fs::exists(ctx.dir() / artifacts::kSelection)) {
      dgds = selection_from_json(read_json(ctx.dir() / artifacts::kSelection));
    }
    json runs = json::array();
    std::vector<double> overlaps;
    for (int r = 0; r < ctx.config().repeats; ++r) {
      GdsOptions o;
      o.regressor_config = ctx.config().regressor;
      o.max_rounds = ctx.config().gds_max_rounds;
      o.seed = ctx.seeds().gds + static_cast<uint64_t>(r);
      o.split_ratio = ctx.config().split_ratio;
      o.target_val_ratio = ctx.config().gds_target_val_ratio;
      const GreedySelection g = run_gds(sources, target, o, ctx.featurizer());
      json rounds = json::array();
      for (const auto& round : g.rounds) {
        rounds.push_back({{"round", round.round},
                          {"added", to_int(round.added)},
                          {"family", ctx.registry().lookup(round.added).name},
                          {"srcc", round.score}});
      }
      std::vector<int> selected;
      for (DomainId id : g.result.selected) selected.push_back(to_int(id));
      json run = {{"run", r},
                  {"seed", o.seed},
                  {"rounds", rounds},
                  {"selected", selected},
                  {"best_single_srcc", g.best_single_score},
                  {"final_srcc", g.final_score}};
      if (dgds) {
        const double jac = jaccard(g.result.selected, dgds->selected);
        run["jaccard_with_dgds"] = jac;
        overlaps.push_back(jac);
      }
      runs.push_back(std::move(run));
    }
    json out = {{"runs", runs}};
    if (dgds) {
      std::vector<int> d;
      for (DomainId id : dgds->selected) d.push_back(to_int(id));
      out["dgds_selected"] = d;
      out["median_jaccard"] = median(overlaps);
    }
    write_json(ctx.dir() / artifacts::kGds, out);
  });
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

void cmd_report(const fs::path& run_dir) {
  in_stage("report", [&] {
    require_files(run_dir, {artifacts::kRun, artifacts::kSelection});
    const json run = read_json(run_dir / artifacts::kRun);
    const json selection = read_json(run_dir / artifacts::kSelection);
    const bool has_summary = fs::exists(run_dir / artifacts::kSummary);
    const bool has_gds = fs::exists(run_dir / artifacts::kGds);

    // Entries in registry (id) order for the table.
    std::vector<json> entries(selection.at("entries").begin(), selection.at("entries").end());
    std::sort(entries.begin(), entries.end(), [](const json& a, const json& b) {
      return a.at("domain_id").get<int>() < b.at("domain_id").get<int>();
    });
    size_t n_selected = 0;
    for (const auto& e : entries) n_selected += e.at("selected").get<bool>() ? 1 : 0;

    std::ostringstream md;
    md << "# DGQA run report\n\n";
    md << "Config hash: `" << run.at("config_hash").get<std::string>() << "`\n\n";
    md << "## Domain selection\n\n";
    md << "tau = " << fixed(selection.at("tau").get<double>(), 6)
       << ", target images = " << selection.at("n_target").get<size_t>() << "\n\n";
    md << "| Target |";
    for (const auto& e : entries) md << " " << e.at("family_name").get<std::string>() << " |";
    md << "\n|---|";
    for (size_t i = 0; i < entries.size(); ++i) md << "---|";
    md << "\n| sim |";
    for (const auto& e : entries) md << " " << fixed(e.at("sim").get<double>(), 4) << " |";
    md << "\n| selected |";
    for (const auto& e : entries) md << " " << (e.at("selected").get<bool>() ? "✓" : "") << " |";
    md << "\n\nN.o.S. (number of selected source domains): " << n_selected << "\n\n";

    json report = {{"config_hash", run.at("config_hash")},
                   {"tau", selection.at("tau")},
                   {"n_target", selection.at("n_target")},
                   {"selection", entries},
                   {"number_of_selected", n_selected}};

    if (has_summary) {
      const json summary = read_json(run_dir / artifacts::kSummary);
      md << "## Quality prediction on the target\n\n";
      md << "PLCC mode: " << summary.at("plcc_mode").get<std::string>() << "\n\n";
      md << "| Setting | median SRCC | median PLCC | training images (per run) |\n";
      md << "|---|---|---|---|\n";
      for (const char* setting : {"dgqa", "baseline"}) {
        const json& s = summary.at(setting);
        std::string sizes;
        for (const auto& v : s.at("train_size")) {
          if (!sizes.empty()) sizes += ", ";
          sizes += std::to_string(v.get<size_t>());
        }
        md << "| " << setting << " | "
           << (s.contains("median_srcc") ? fixed(s["median_srcc"].get<double>(), 4) : "n/a")
           << " | "
           << (s.contains("median_plcc") ? fixed(s["median_plcc"].get<double>(), 4) : "n/a")
           << " | " << sizes << " |\n";
      }
      md << "\nFailed runs: " << summary.at("failed_runs").get<size_t>() << " of "
         << summary.at("repeats").get<size_t>() << "\n\n";
      report["metrics"] = summary;
    } else {
      md << "## Quality prediction on the target\n\nNo target labels; evaluation skipped.\n\n";
    }

    if (has_gds) {
      const json gds = read_json(run_dir / artifacts::kGds);
      md << "## Greedy selection (supervised probe)\n\n";
      md << "| Run | subset | final SRCC | Jaccard with DGDS |\n|---|---|---|---|\n";
      for (const auto& r : gds.at("runs")) {
        std::string subset;
        for (const auto& id : r.at("selected")) {
          if (!subset.empty()) subset += ", ";
          subset += std::to_string(id.get<int>());
        }
        md << "| " << r.at("run").get<int>() << " | " << subset << " | "
           << fixed(r.at("final_srcc").get<double>(), 4) << " | "
           << (r.contains("jaccard_with_dgds")
                   ? fixed(r["jaccard_with_dgds"].get<double>(), 3)
                   : "n/a")
           << " |\n";
      }
      md << "\n";
      report["gds"] = gds;
    }

    md << "## Seeds\n\n";
    md << "| Stage | seed |\n|---|---|\n";
    for (const auto& [stage, seed] : run.at("seeds").items()) {
      md << "| " << stage << " | " << seed.get<uint64_t>() << " |\n";
    }
    md << "\n## Configuration\n\n```json\n" << run.at("config").dump(2) << "\n```\n";
    report["seeds"] = run.at("seeds");
    report["config"] = run.at("config");

    write_text(run_dir / artifacts::kReportMd, md.str());
    write_json(run_dir / artifacts::kReportJson, report);
  });
}

}  // namespace dgqa
