#include "dgqa/metrics.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "dgqa/errors.h"
#include "dgqa/rng.h"

namespace dgqa {

std::vector<double> fractional_ranks(std::span<const double> values) {
  const size_t n = values.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("pearson: length mismatch");
  if (a.empty()) throw ValidationError("pearson: empty input");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) {
    throw UndefinedMetricError("correlation undefined for constant input");
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

namespace {

void check_pairs(std::span<const double> pred, std::span<const double> label,
                 const char* what) {
  if (pred.size() != label.size()) {
    throw ValidationError(std::string(what) + ": length mismatch");
  }
  if (pred.size() < 3) {
    throw ValidationError(std::string(what) + ": needs at least 3 pairs");
  }
  for (size_t i = 0; i < pred.size(); ++i) {
    if (!std::isfinite(pred[i]) || !std::isfinite(label[i])) {
      throw ValidationError(std::string(what) + ": non-finite value");
    }
  }
}

// Solves the 4x4 system a x = b in place (partial pivoting).
bool solve4(std::array<std::array<double, 4>, 4> a, std::array<double, 4> b,
            std::array<double, 4>* x) {
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    }
    if (std::abs(a[piv][col]) < 1e-300) return false;
    std::swap(a[piv], a[col]);
    std::swap(b[piv], b[col]);
    for (int r = col + 1; r < 4; ++r) {
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < 4; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  for (int r = 3; r >= 0; --r) {
    double acc = b[r];
    for (int c = r + 1; c < 4; ++c) acc -= a[r][c] * (*x)[c];
    (*x)[r] = acc / a[r][r];
  }
  return true;
}

double logistic_eval(const std::array<double, 4>& b, double x) {
  return b[1] + (b[0] - b[1]) / (1.0 + std::exp(-(x - b[2]) / b[3]));
}

}  // namespace

const char* to_string(PlccMode mode) {
  return mode == PlccMode::kLogistic ? "logistic" : "raw";
}

double srcc(std::span<const double> pred, std::span<const double> label) {
  check_pairs(pred, label, "srcc");
  const auto rp = fractional_ranks(pred);
  const auto rl = fractional_ranks(label);
  return pearson(rp, rl);
}

double LogisticFit::operator()(double x) const {
  return logistic_eval({b1, b2, b3, b4}, x);
}

LogisticFit fit_logistic(std::span<const double> x, std::span<const double> y,
                         int max_iterations) {
  const size_t n = x.size();
  const double nd = static_cast<double>(n);
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / nd;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / nd;
  double sxx = 0.0, sxy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  const auto [xmin, xmax] = std::minmax_element(x.begin(), x.end());
  const double range = std::max(*xmax - *xmin, 1e-12);
  // Start from a nearly linear logistic that matches the least-squares line.
  const double slope = sxx > 0 ? sxy / sxx : 0.0;
  const double width = 2.0 * range;
  std::array<double, 4> beta{};
  beta[2] = mx;
  beta[3] = width;
  const double span_y = 4.0 * slope * width;
  beta[1] = my - 0.5 * span_y;
  beta[0] = beta[1] + span_y;
  if (span_y == 0.0) {
    const auto [ymin, ymax] = std::minmax_element(y.begin(), y.end());
    beta[0] = *ymax;
    beta[1] = *ymin;
  }

  auto sse = [&](const std::array<double, 4>& b) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const double r = y[i] - logistic_eval(b, x[i]);
      s += r * r;
    }
    return s;
  };

  LogisticFit fit;
  double lambda = 1e-3;
  double current = sse(beta);
  for (int it = 0; it < max_iterations; ++it) {
    fit.iterations = it + 1;
    std::array<std::array<double, 4>, 4> jtj{};
    std::array<double, 4> jtr{};
    for (size_t i = 0; i < n; ++i) {
      const double z = (x[i] - beta[2]) / beta[3];
      const double s = 1.0 / (1.0 + std::exp(-z));
      const double amp = beta[0] - beta[1];
      const std::array<double, 4> j = {s, 1.0 - s, -amp * s * (1 - s) / beta[3],
                                       -amp * s * (1 - s) * z / beta[3]};
      const double r = y[i] - logistic_eval(beta, x[i]);
      for (int a = 0; a < 4; ++a) {
        jtr[a] += j[a] * r;
        for (int b = 0; b < 4; ++b) jtj[a][b] += j[a] * j[b];
      }
    }
    bool improved = false;
    for (int attempt = 0; attempt < 30 && !improved; ++attempt) {
      auto damped = jtj;
      for (int a = 0; a < 4; ++a) damped[a][a] += lambda * std::max(jtj[a][a], 1e-12);
      std::array<double, 4> delta{};
      if (!solve4(damped, jtr, &delta)) {
        lambda *= 10.0;
        continue;
      }
      std::array<double, 4> trial = beta;
      for (int a = 0; a < 4; ++a) trial[a] += delta[a];
      if (trial[3] == 0.0 || !std::isfinite(trial[3])) {
        lambda *= 10.0;
        continue;
      }
      const double candidate = sse(trial);
      if (std::isfinite(candidate) && candidate <= current) {
        const double gain = current - candidate;
        beta = trial;
        const double previous = current;
        current = candidate;
        lambda = std::max(lambda / 3.0, 1e-12);
        improved = true;
        if (gain <= 1e-12 * std::max(previous, 1e-300)) fit.converged = true;
      } else {
        lambda *= 2.0;
      }
    }
    if (!improved) {
      // No step lowers the residual: a stationary point of the damped problem.
      fit.converged = true;
    }
    if (fit.converged) break;
  }
  fit.b1 = beta[0];
  fit.b2 = beta[1];
  fit.b3 = beta[2];
  fit.b4 = beta[3];
  return fit;
}

PlccResult plcc(std::span<const double> pred, std::span<const double> label,
                PlccMode mode) {
  check_pairs(pred, label, "plcc");
  PlccResult result;
  const double raw = pearson(pred, label);
  if (mode == PlccMode::kRaw) {
    result.value = raw;
    result.mode = PlccMode::kRaw;
    return result;
  }
  const LogisticFit fit = fit_logistic(pred, label);
  std::vector<double> mapped(pred.size());
  bool finite = true;
  for (size_t i = 0; i < pred.size(); ++i) {
    mapped[i] = fit(pred[i]);
    finite = finite && std::isfinite(mapped[i]);
  }
  if (fit.converged && finite) {
    try {
      result.value = pearson(mapped, label);
      result.mode = PlccMode::kLogistic;
      return result;
    } catch (const UndefinedMetricError&) {
      // A flat fitted curve: fall through to raw Pearson.
    }
  }
  result.value = raw;
  result.mode = PlccMode::kRaw;
  result.fell_back = true;
  return result;
}

MetricPair evaluate(std::span<const double> pred, std::span<const double> label,
                    PlccMode mode) {
  MetricPair m;
  m.n = pred.size();
  m.srcc = srcc(pred, label);
  const PlccResult p = plcc(pred, label, mode);
  m.plcc = p.value;
  m.plcc_mode = p.mode;
  m.plcc_fell_back = p.fell_back;
  return m;
}

bool SplitPlan::in_train(const std::string& id) const {
  return std::binary_search(train_reference_ids.begin(), train_reference_ids.end(), id);
}

bool SplitPlan::in_val(const std::string& id) const {
  return std::binary_search(val_reference_ids.begin(), val_reference_ids.end(), id);
}

SplitPlan split_by_reference(std::vector<std::string> ids, double ratio,
                             uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ValidationError("split ratio must lie in (0,1)");
  }
  for (const auto& id : ids) {
    if (id.empty()) throw ValidationError("split_by_reference: missing reference_id");
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.empty()) throw ValidationError("split_by_reference: no references");
  Rng rng = make_rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const size_t total = ids.size();
  size_t n_train = static_cast<size_t>(std::llround(ratio * static_cast<double>(total)));
  if (total >= 2) n_train = std::clamp<size_t>(n_train, 1, total - 1);
  SplitPlan plan;
  plan.ratio = ratio;
  plan.seed = seed;
  plan.train_reference_ids.assign(ids.begin(), ids.begin() + n_train);
  plan.val_reference_ids.assign(ids.begin() + n_train, ids.end());
  std::sort(plan.train_reference_ids.begin(), plan.train_reference_ids.end());
  std::sort(plan.val_reference_ids.begin(), plan.val_reference_ids.end());
  return plan;
}

SplitPlan split_by_reference(const std::vector<DomainDataset>& datasets,
                             double ratio, uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& d : datasets) {
    for (const auto& s : d.samples) ids.push_back(s.reference_id);
  }
  return split_by_reference(std::move(ids), ratio, seed);
}

double median(std::vector<double> values) {
  if (values.empty()) throw ValidationError("median of empty set");
  std::sort(values.begin(), values.end());
  const size_t mid = values.size() / 2;
  return values.size() % 2 == 1 ? values[mid]
                                : 0.5 * (values[mid - 1] + values[mid]);
}

RepeatedResult repeated_experiment(
    const std::function<MetricPair(uint64_t seed)>& experiment, int n_repeats,
    uint64_t base_seed) {
  if (n_repeats < 1) throw ValidationError("n_repeats must be >= 1");
  RepeatedResult result;
  std::vector<double> s, p;
  for (int i = 0; i < n_repeats; ++i) {
    RunRecord rec;
    rec.run = i;
    rec.seed = base_seed + static_cast<uint64_t>(i);
    try {
      rec.metrics = experiment(rec.seed);
      s.push_back(rec.metrics->srcc);
      p.push_back(rec.metrics->plcc);
    } catch (const UndefinedMetricError& e) {
      rec.error = e.what();
      ++result.failures;
    }
    result.runs.push_back(std::move(rec));
  }
  if (s.empty()) {
    throw UndefinedMetricError("all " + std::to_string(n_repeats) +
                               " runs produced undefined metrics");
  }
  result.median.srcc = median(s);
  result.median.plcc = median(p);
  for (const auto& r : result.runs) {
    if (r.metrics) {
      result.median.n = r.metrics->n;
      result.median.plcc_mode = r.metrics->plcc_mode;
      break;
    }
  }
  return result;
}

std::string results_csv(std::span<const ResultRow> rows) {
  std::ostringstream out;
  out << "run,seed,setting,n,srcc,plcc,plcc_mode\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.run << ',' << r.seed << ',' << r.setting << ',' << r.metrics.n << ','
        << r.metrics.srcc << ',' << r.metrics.plcc << ','
        << to_string(r.metrics.plcc_mode) << '\n';
  }
  return out.str();
}

}  // namespace dgqa
