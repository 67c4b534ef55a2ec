#pragma once

// Per-horizon isotonic calibration of cumulative risks and Youden thresholds,
// fitted on the validation split.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "survtx/cohort.hpp"
#include "survtx/model.hpp"

namespace survtx::calibration {

/// Non-decreasing piecewise-linear map through (knots, values), clamped to
/// the end values outside the knot range.
struct IsotonicMap {
  std::vector<double> knots, values;
  bool identity = false;

  double apply(double risk) const;
};

/// Weighted pool-adjacent-violators over pairs with mask = 1; equal risks are
/// pooled first. A single class among evaluable pairs yields the identity map.
IsotonicMap fit_isotonic(std::span<const double> risks, std::span<const double> y,
                         std::span<const double> mask, std::span<const double> weights = {},
                         std::vector<std::string>* warnings = nullptr);

struct Youden {
  double threshold = 0.5;
  double j = 0.0;
  bool degenerate = false;  // one class only
};

/// Maximizes TPR - FPR over midpoints of adjacent distinct risks (positive if
/// risk >= threshold); ties go to the smaller threshold.
Youden youden_threshold(std::span<const double> risks, std::span<const double> y,
                        std::span<const double> mask, std::vector<std::string>* warnings = nullptr);

/// Expected calibration error with equal-width bins over [0, 1].
double expected_calibration_error(std::span<const double> probs, std::span<const double> y,
                                  std::span<const double> mask, std::size_t bins = 10);

struct HorizonCalibration {
  double horizon = 0.0;
  IsotonicMap map;
  Youden youden;
  std::size_t evaluable = 0;
  double ece_before = 0.0, ece_after = 0.0;
};

struct Calibration {
  std::vector<HorizonCalibration> horizons;
  std::vector<std::string> warnings;

  const HorizonCalibration* find(double horizon) const;
  std::string serialize() const;
  static Calibration deserialize(std::string_view text);
};

/// Evaluable labels at one horizon: y and mask per subject.
struct HorizonTargets {
  std::vector<double> y, mask;
};
HorizonTargets horizon_targets(std::span<const cohort::SurvivalLabel> labels,
                               std::span<const double> bins, double horizon);

/// Raw F(h) per subject.
std::vector<double> horizon_risks(std::span<const model::Prediction> predictions,
                                  std::span<const double> bins, double horizon);

Calibration fit_calibration(std::span<const model::Prediction> predictions,
                            std::span<const cohort::SurvivalLabel> labels,
                            std::span<const double> bins, std::span<const double> horizons);

}  // namespace survtx::calibration
