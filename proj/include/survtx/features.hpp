#pragma once

// Train-split column selection, preprocessing, and per-visit feature engineering.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "survtx/cohort.hpp"

namespace survtx::features {

struct ColumnGroup {
  std::string name;
  std::vector<std::string> patterns;  // case-insensitive regular expressions
  std::size_t quota = 0;
};

struct SelectionConfig {
  double max_missing = 0.10;
  double max_mode_share = 0.995;
  std::size_t min_distinct = 2;
  std::vector<std::string> categorical = {"PTGENDER", "APOE4"};
  std::vector<std::string> excluded = cohort::CohortOptions::default_excluded_columns();
  /// Empty: every qualifying numeric column is selected.
  std::vector<ColumnGroup> groups;
};

struct FeatureSpec {
  std::vector<std::string> numeric;      // ordered
  std::vector<std::string> group_of;     // group tag per numeric column
  std::vector<std::string> categorical;  // ordered
  std::vector<std::string> warnings;
};

/// Statistics of one candidate column over a set of visits.
struct ColumnStats {
  std::size_t observed = 0;
  std::size_t total = 0;
  std::size_t distinct = 0;
  double mode_share = 0.0;
  bool numeric = true;
  double stddev = 0.0;
  double missing_fraction() const {
    return total ? 1.0 - static_cast<double>(observed) / static_cast<double>(total) : 1.0;
  }
};

ColumnStats column_stats(const cohort::RawTable& table,
                         std::span<const cohort::SubjectHistory> histories, std::size_t column);

/// True if the column passes the missingness, variability, and dominant-mode filters.
bool column_qualifies(const ColumnStats& stats, const SelectionConfig& config);

/// Selects numeric predictors from training-split visits only, then fills
/// per-group quotas preferring lower missingness (ties by column name).
FeatureSpec select_columns(const cohort::RawTable& table,
                           std::span<const cohort::SubjectHistory> train,
                           const SelectionConfig& config);

inline constexpr std::size_t kPad = 0;
inline constexpr std::size_t kUnknown = 1;
inline constexpr std::size_t kMissing = 2;
inline constexpr std::size_t kReservedTokens = 3;

inline constexpr double kMinStd = 1e-8;
inline constexpr double kMinSlopeTime = 1e-3;

struct Preprocessor {
  FeatureSpec spec;
  std::vector<double> median, mean, stddev;
  std::vector<std::vector<std::string>> vocab;  // observed values per categorical, sorted

  std::size_t numeric_count() const { return spec.numeric.size(); }
  std::size_t vocab_size(std::size_t c) const { return vocab[c].size() + kReservedTokens; }
  std::size_t category_index(std::size_t c, std::optional<std::string_view> value) const;

  /// Versioned text form (column list, medians, means, stds, vocabularies).
  std::string serialize() const;
  static Preprocessor deserialize(std::string_view text);
};

/// Raw values of the selected columns at each visit, before imputation.
struct RawVisitValues {
  double time = 0.0;
  std::vector<std::optional<double>> numeric;
  std::vector<std::optional<std::string>> categorical;
};

std::vector<RawVisitValues> extract_values(const cohort::RawTable& table,
                                           const cohort::SubjectHistory& history,
                                           const FeatureSpec& spec);

/// Medians, means, population stds over observed training values; vocabularies
/// from observed training categories.
Preprocessor fit_preprocessor(const cohort::RawTable& table,
                              std::span<const cohort::SubjectHistory> train,
                              const FeatureSpec& spec);
Preprocessor fit_preprocessor(std::span<const std::vector<RawVisitValues>> train,
                              const FeatureSpec& spec);

struct EngineeredVisit {
  std::vector<double> z, dz, slope, mask;
  std::vector<std::size_t> categories;
  double time = 0.0;
  double gap = 0.0;
  bool valid = true;  // false marks a padding visit, ignored by the model
};

struct EngineeredHistory {
  std::string id;
  std::vector<EngineeredVisit> visits;
  cohort::SurvivalLabel label;
};

std::vector<EngineeredVisit> engineer_values(std::span<const RawVisitValues> values,
                                             const Preprocessor& prep);

EngineeredHistory engineer_history(const cohort::RawTable& table,
                                   const cohort::SubjectHistory& history,
                                   const Preprocessor& prep);

}  // namespace survtx::features
