#pragma once

// Seeded generator of longitudinal visit tables with known discrete-time
// hazards, written in the same CSV layout the cohort builder reads.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace survtx::synthetic {

struct GroupSpec {
  std::string name;
  double proportion = 0.0;
  double drift = 0.0;            // per-year drift of informative features (SD units)
  std::vector<double> hazards;   // per bin, in (0, 1)
};

struct SyntheticSpec {
  std::size_t subjects = 900;
  std::vector<double> bins = {0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0};
  std::vector<GroupSpec> groups = {
      {"rapid", 0.30, 1.2, {0.22, 0.24, 0.24, 0.22, 0.20, 0.20, 0.30, 0.30}},
      {"delayed", 0.35, 0.5, {0.02, 0.03, 0.05, 0.07, 0.10, 0.12, 0.25, 0.30}},
      {"low", 0.35, 0.0, {0.01, 0.01, 0.01, 0.015, 0.015, 0.02, 0.03, 0.03}}};
  double signal = 1.0;          // scales every group drift
  double frailty_sd = 0.5;      // log-scale subject heterogeneity within a group
  double frailty_drift = 0.4;   // drift per unit frailty (SD units per year)
  double level_sd = 3.0;
  double slope_sd = 0.15;
  double noise_sd = 0.25;
  double jitter = 0.6;          // visit-time jitter as a fraction of the nominal gap
  double min_coverage = 0.3;    // recorded history spans U(min_coverage, 1) of the time to the end
  double censoring_rate = 0.6;  // share of subjects exposed to random loss to follow-up
  double censor_min = 1.0, censor_max = 6.0;
  std::size_t numeric_features = 12;
  std::size_t informative_features = 6;
  std::size_t categorical_features = 2;  // PTGENDER, APOE4
  double missing_rate = 0.02;
  std::size_t min_visits = 2, max_visits = 8;
  double cn_fraction = 0.0;  // subjects starting CN (converting to MCI) instead of MCI
  bool recency_signal = false;
  double recency_window = 1.0;  // years before the end of observation carrying signal
  std::size_t post_index_visits = 1;

  static SyntheticSpec parse(std::string_view text);
  static SyntheticSpec load(const std::string& path);
  void set(std::string_view key, std::string_view value);
  void validate() const;
  std::string to_text() const;
};

struct SubjectTruth {
  std::string id;
  std::string group;
  double frailty = 0.0;
  double event_time = 0.0;   // latent; infinity when no event
  double censor_time = 0.0;  // infinity when never lost to follow-up
  bool observed_event = false;
  std::vector<double> hazards;
  std::vector<double> cif;  // at each bin endpoint
};

struct SyntheticTruth {
  std::vector<double> bins;
  std::vector<SubjectTruth> subjects;

  const SubjectTruth& find(std::string_view id) const;
  std::string to_csv(std::span<const double> horizons = {}) const;
};

/// Exact F(h) from the subject's true hazards; LookupError for unknown ids.
double oracle_risk(const SyntheticTruth& truth, std::string_view id, double horizon);

struct Generated {
  std::string csv;
  SyntheticTruth truth;
};

Generated generate(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace survtx::synthetic
