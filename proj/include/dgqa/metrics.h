#ifndef DGQA_METRICS_H_
#define DGQA_METRICS_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dgqa/distortion.h"

namespace dgqa {

// Fractional (average) ranks starting at 1.
std::vector<double> fractional_ranks(std::span<const double> values);

// Pearson linear correlation; throws UndefinedMetricError on constant input.
double pearson(std::span<const double> a, std::span<const double> b);

// Spearman rank-order correlation with average ranks for ties. Needs at
// least 3 pairs.
double srcc(std::span<const double> pred, std::span<const double> label);

enum class PlccMode { kLogistic, kRaw };
const char* to_string(PlccMode mode);

// Four-parameter logistic mapping label ~ b2 + (b1 - b2) / (1 + exp(-(x - b3) / b4)).
struct LogisticFit {
  double b1 = 0, b2 = 0, b3 = 0, b4 = 1;
  bool converged = false;
  int iterations = 0;
  double operator()(double x) const;
};

// Levenberg-Marquardt least squares, at most `max_iterations` steps.
LogisticFit fit_logistic(std::span<const double> x, std::span<const double> y,
                         int max_iterations = 200);

struct PlccResult {
  double value = 0.0;
  PlccMode mode = PlccMode::kLogistic;  // mode that produced `value`
  bool fell_back = false;  // logistic requested but the fit did not converge
};

PlccResult plcc(std::span<const double> pred, std::span<const double> label,
                PlccMode mode = PlccMode::kLogistic);

struct MetricPair {
  double srcc = 0.0;
  double plcc = 0.0;
  size_t n = 0;
  PlccMode plcc_mode = PlccMode::kLogistic;
  bool plcc_fell_back = false;
};

MetricPair evaluate(std::span<const double> pred, std::span<const double> label,
                    PlccMode mode = PlccMode::kLogistic);

struct SplitPlan {
  std::vector<std::string> train_reference_ids;
  std::vector<std::string> val_reference_ids;
  double ratio = 0.8;
  uint64_t seed = 0;

  bool in_train(const std::string& reference_id) const;
  bool in_val(const std::string& reference_id) const;
};

// Shuffles the distinct reference ids (sorted first, so input order does not
// matter) and assigns the first round(ratio * n) to train. At least one id
// goes to each side when there are two or more.
SplitPlan split_by_reference(std::vector<std::string> reference_ids, double ratio,
                             uint64_t seed);
SplitPlan split_by_reference(const std::vector<DomainDataset>& datasets,
                             double ratio, uint64_t seed);

struct RunRecord {
  int run = 0;
  uint64_t seed = 0;
  std::optional<MetricPair> metrics;  // empty when the run failed
  std::string error;
};

struct RepeatedResult {
  MetricPair median;  // per-metric medians over successful runs
  std::vector<RunRecord> runs;
  size_t failures = 0;
};

double median(std::vector<double> values);

// Runs `experiment(base_seed + i)` for i in [0, n_repeats). Runs that raise
// UndefinedMetricError are recorded as failed.
RepeatedResult repeated_experiment(
    const std::function<MetricPair(uint64_t seed)>& experiment, int n_repeats,
    uint64_t base_seed);

// Results table with the fixed header run,seed,setting,n,srcc,plcc,plcc_mode.
struct ResultRow {
  int run = 0;
  uint64_t seed = 0;
  std::string setting;
  MetricPair metrics;
};
std::string results_csv(std::span<const ResultRow> rows);

}  // namespace dgqa

#endif  // DGQA_METRICS_H_
