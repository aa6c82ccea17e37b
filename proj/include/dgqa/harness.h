// Configuration, run directories and the command implementations behind the
// dgqa CLI.
#ifndef DGQA_HARNESS_H_
#define DGQA_HARNESS_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgqa/experiment.h"
#include "dgqa/io.h"

namespace dgqa {

struct ReferenceSource {
  fs::path dir;  // PNG directory; empty means procedural
  int procedural_count = 30;
  int procedural_size = 128;
  uint64_t procedural_seed = 7;
};

struct TargetSpec {
  std::optional<TargetMixtureRecipe> recipe;
  size_t count = 60;
  fs::path image_dir;  // external unlabeled images (used when no recipe)
};

struct ExperimentConfig {
  std::vector<DomainId> domains;  // registry selection, in run order
  ReferenceSource references;
  int target_references = 0;  // held-out references for the target; 0: a third
  std::set<int> levels{1, 2, 3, 4, 5};
  TargetSpec target;
  std::vector<DomainId> inverted_domains;  // label-inverted sources
  std::optional<double> tau;
  TrainConfig classifier;
  TrainConfig regressor;
  PatchPolicy patches;
  int repeats = 5;
  double split_ratio = 0.8;
  bool balance_domains = false;
  PlccMode plcc_mode = PlccMode::kLogistic;
  int gds_max_rounds = 0;
  double gds_target_val_ratio = 0.5;
  uint64_t seed = 0;
  fs::path output_dir = "run";

  // tau if set, else 1/k.
  double effective_tau() const;
  // Throws ValidationError / IoError; checks every referenced path.
  void validate() const;
};

// Relative paths are resolved against `base_dir`. A run.json file (an object
// with a "config" member) is accepted as well.
ExperimentConfig config_from_json(const nlohmann::json& j, const fs::path& base_dir);
ExperimentConfig load_config(const fs::path& path);
nlohmann::json to_json(const ExperimentConfig& config);

uint64_t fnv1a64(const std::string& bytes);
std::string config_hash(const ExperimentConfig& config);

// Seeds every stage derives from the base seed.
struct StageSeeds {
  uint64_t synth = 0;
  uint64_t target = 0;
  uint64_t patches = 0;
  uint64_t classifier = 0;
  uint64_t experiment = 0;
  uint64_t gds = 0;
};
StageSeeds stage_seeds(uint64_t seed);
nlohmann::json to_json(const StageSeeds& seeds);

// Fixed artifact names inside a run directory.
namespace artifacts {
inline constexpr const char* kRun = "run.json";
inline constexpr const char* kSources = "sources";
inline constexpr const char* kTarget = "target";
inline constexpr const char* kClassifier = "domain_classifier.json";
inline constexpr const char* kSelection = "selection.json";
inline constexpr const char* kRegressors = "regressors";
inline constexpr const char* kTraining = "train_iqa.json";
inline constexpr const char* kResults = "results.csv";
inline constexpr const char* kSummary = "summary.json";
inline constexpr const char* kGds = "gds.json";
inline constexpr const char* kReportMd = "report.md";
inline constexpr const char* kReportJson = "report.json";
inline constexpr const char* kLock = ".lock";
}  // namespace artifacts

// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const fs::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

// Shared state for the stages of one process.
class RunContext {
 public:
  RunContext(ExperimentConfig config, std::string command);

  const ExperimentConfig& config() const { return config_; }
  const fs::path& dir() const { return config_.output_dir; }
  const StageSeeds& seeds() const { return seeds_; }
  const PatchFeaturizer& featurizer() const { return featurizer_; }
  const DistortionRegistry& registry() const;

  // Writes run.json (config, hash, seeds, command).
  void write_run_record() const;

  std::vector<DomainDataset> load_sources() const;
  std::vector<RasterImage> load_target_images() const;
  // Empty when the label file is absent.
  std::optional<TargetLabels> load_target_labels() const;

 private:
  ExperimentConfig config_;
  std::string command_;
  StageSeeds seeds_;
  PatchFeaturizer featurizer_;
};

fs::path source_dir(const fs::path& run_dir, const DomainDataset& d);
fs::path source_dir(const fs::path& run_dir, DomainId id, const std::string& name);

// Each command throws StageError tagged with its stage name.
void cmd_synth(const RunContext& ctx);
// Single-family synthesis: one dataset under `out`.
void cmd_synth_family(const fs::path& refs_dir, DomainId family,
                      const std::set<int>& levels, uint64_t seed, const fs::path& out);
void cmd_train_domain(const RunContext& ctx);
void cmd_select(const RunContext& ctx);
void cmd_train_iqa(const RunContext& ctx);
// Scores the trained regressors on the labeled target; no-op without labels.
void cmd_evaluate(const RunContext& ctx);
// synth (when sources are missing), train-domain, select, train-iqa, evaluate.
void cmd_pipeline(const RunContext& ctx);
void cmd_gds(const RunContext& ctx);
void cmd_report(const fs::path& run_dir);

}  // namespace dgqa

#endif  // DGQA_HARNESS_H_
