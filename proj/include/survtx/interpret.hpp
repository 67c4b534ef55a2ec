#pragma once

// Gradient-times-input attributions on engineered numeric inputs and
// summaries of the fusion-pool visit attention.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "survtx/features.hpp"
#include "survtx/model.hpp"

namespace survtx::interpret {

struct Attribution {
  std::string id;
  std::vector<std::size_t> visits;  // engineered visit indices, one row each
  std::size_t width = 0;            // 3 * numeric features: [z | dz | slope]
  std::vector<double> values;       // row-major visits x width
};

/// "z:<col>", "dz:<col>", "slope:<col>" in attribution column order.
std::vector<std::string> attribution_names(const features::Preprocessor& prep);

/// dF(h)/dx * x for every engineered numeric entry of every visit the model
/// sees, in evaluation mode. Masks and categorical inputs are not attributed.
std::vector<Attribution> grad_times_input(const model::Model& model,
                                          const model::ParamStore& params,
                                          std::span<const features::EngineeredHistory> histories,
                                          double horizon = 5.0, std::size_t batch_size = 32);

struct Importance {
  std::string feature;
  double mean_abs = 0.0;
};

/// Per subject, mean |attribution| over visits; then averaged over subjects.
/// Sorted by decreasing importance (ties by name).
std::vector<Importance> feature_importance(std::span<const Attribution> attributions,
                                           const std::vector<std::string>& names);

/// nullopt for fewer than two points or a constant input.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

struct AttentionRecord {
  std::string id;
  bool converter = false;
  std::vector<std::size_t> visits;
  std::vector<double> weights;
  std::vector<double> recency;         // 1 = oldest visit used, L = latest
  std::vector<double> change;          // mean |dz| of the visit
  std::vector<double> years_to_index;  // T - t
  std::optional<double> recency_corr, change_corr, proximity_corr;
};

struct AttentionSummary {
  std::vector<AttentionRecord> records;
  /// Means of per-subject correlations over subjects where they are defined.
  std::optional<double> recency_corr, change_corr, proximity_corr;
  std::size_t recency_n = 0, change_n = 0, proximity_n = 0;
};

AttentionSummary attention_summary(const model::Model& model, const model::ParamStore& params,
                                   std::span<const features::EngineeredHistory> histories);

}  // namespace survtx::interpret
