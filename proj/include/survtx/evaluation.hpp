#pragma once

// Censoring-aware metrics: Kaplan-Meier, Harrell's C, cumulative/dynamic AUC,
// IPCW Brier and IBS, horizon AUROC/AUPRC, reliability bins, risk groups.

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "survtx/calibration.hpp"
#include "survtx/cohort.hpp"
#include "survtx/model.hpp"

namespace survtx::evaluation {

using cohort::SurvivalLabel;

/// Right-continuous step function starting at 1.
struct StepCurve {
  std::vector<double> times;     // distinct event times, ascending
  std::vector<double> survival;  // value on [times[k], times[k+1])
  std::vector<std::size_t> at_risk, events;

  double at(double t) const;
  /// Value just before t.
  double left_limit(double t) const;
};

/// ContractError for empty input or non-positive times.
StepCurve kaplan_meier(std::span<const SurvivalLabel> labels);
/// Kaplan-Meier of the censoring distribution (censorings treated as events).
StepCurve censoring_km(std::span<const SurvivalLabel> labels);

/// Pairs (i, j) with event i and T_i < T_j; ties in score earn half credit.
/// nullopt when no pair is comparable.
std::optional<double> harrell_c(std::span<const double> scores, std::span<const SurvivalLabel> labels);

/// Cases: event by t; controls: T > t. nullopt without cases or controls.
std::optional<double> td_auc(std::span<const double> risks, std::span<const SurvivalLabel> labels,
                             double t);

struct BrierResult {
  double value = 0.0;
  std::size_t zero_weight = 0;  // subjects dropped because G = 0
};

/// Inverse-probability-of-censoring weighted Brier score at t.
BrierResult brier(std::span<const double> risks, std::span<const SurvivalLabel> labels, double t,
                  const StepCurve& censoring);

/// Trapezoidal integral over (grid, values) divided by the grid span.
double integrate_trapezoid(std::span<const double> grid, std::span<const double> values);

std::optional<double> auroc(std::span<const double> scores, std::span<const double> y,
                            std::span<const double> mask);
/// Average precision: sum over distinct thresholds (descending) of recall gain times precision.
std::optional<double> auprc(std::span<const double> scores, std::span<const double> y,
                            std::span<const double> mask);

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};
Confusion confusion_at(std::span<const double> scores, std::span<const double> y,
                       std::span<const double> mask, double threshold);

struct ReliabilityBin {
  double lo = 0, hi = 0;
  std::size_t count = 0;
  double mean_predicted = 0, observed = 0;
};
std::vector<ReliabilityBin> reliability(std::span<const double> probs, std::span<const double> y,
                                        std::span<const double> mask, std::size_t bins = 10);

struct RiskGroups {
  std::vector<std::size_t> group;  // 0 = lowest risk
  std::vector<StepCurve> curves;
};
/// Rank-based split into k groups by ascending score; tied scores take the
/// group of their first rank.
RiskGroups risk_groups(std::span<const double> scores, std::span<const SurvivalLabel> labels,
                       std::size_t k = 3);

struct HorizonMetrics {
  double horizon = 0.0;
  double brier = 0.0;              // IPCW, raw F(h)
  std::optional<double> auroc, auprc;  // calibrated risks
  std::optional<Confusion> confusion;
  std::optional<double> threshold;
  std::size_t evaluable = 0, positives = 0;
  std::vector<ReliabilityBin> reliability;
  std::optional<double> ece;
};

struct MetricsReport {
  std::optional<double> c_index;
  double ibs = 0.0, ibs_km = 0.0;
  std::optional<double> mean_td_auc;
  std::vector<double> grid;
  std::vector<std::optional<double>> td_auc;  // per grid point
  std::vector<double> brier_grid, brier_grid_km;
  std::size_t zero_weight = 0;
  std::vector<HorizonMetrics> horizons;
  RiskGroups groups;
  bool calibrated = false;
  std::vector<std::string> notices;

  /// Long-format CSV: metric,horizon,index,value.
  std::string to_csv() const;
  static MetricsReport from_csv(std::string_view text);
  /// group,time,survival,at_risk,events for the risk-group curves.
  std::string groups_csv() const;
};

/// Evaluates evaluation-mode predictions. `km_train` is the marginal
/// predictor's survival curve fitted on training labels. Horizon
/// classification needs a calibration; without one it is skipped with a notice.
MetricsReport evaluate(std::span<const model::Prediction> predictions,
                       std::span<const SurvivalLabel> labels, std::span<const double> bins,
                       std::span<const double> horizons, const StepCurve& km_train,
                       const calibration::Calibration* calibration);

struct Summary {
  std::string metric;
  double mean = 0.0, sd = 0.0;
  std::size_t n = 0;
};

/// Mean and sample standard deviation of a value list (sd = 0 for n < 2).
Summary summarize(std::string metric, std::span<const double> values);

/// Per-metric mean +- sd across seeds over the rows of `to_csv`.
std::vector<Summary> aggregate(std::span<const MetricsReport> reports);
std::string summary_csv(std::span<const Summary> rows);

}  // namespace survtx::evaluation
