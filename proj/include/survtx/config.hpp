#pragma once

// Hyperparameters and run configuration. Plain-text "key = value" files;
// unknown keys are rejected.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "survtx/features.hpp"

namespace survtx {

struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_dim = 256;
  double dropout = 0.25;
  std::size_t experts = 4;
  std::size_t cat_embed_dim = 16;
  std::size_t max_visits = 32;  // positional table holds max_visits + 1 (CLS)
  double visit_dropout = 0.15;
  std::vector<double> bins = {0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0};
  bool no_dynamic = false;  // zero the change and slope blocks of the visit input
  bool no_fusion = false;   // subject representation from the CLS context only

  // Data-dependent widths, filled from the preprocessor.
  std::size_t numeric_features = 0;
  std::vector<std::size_t> vocab_sizes;

  std::size_t bin_count() const { return bins.size(); }
};

struct LossWeights {
  double lambda_h = 0.40;
  double lambda_p = 0.10;
  double lambda_s = 0.01;
  double lambda_g = 0.01;
  double focal_gamma = 1.5;
  double event_weight_min = 0.5;
  double event_weight_max = 5.0;
  double horizon_weight_min = 0.25;
  double horizon_weight_max = 4.0;
  std::vector<double> horizons = {1.0, 2.0, 3.0, 5.0};
};

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t max_epochs = 180;
  std::size_t patience = 30;
  double clip_norm = 1.0;
  double lr = 2e-4;
  double weight_decay = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double ema_decay = 0.995;
};

struct Ablations {
  bool no_dynamic = false;
  bool no_visit_dropout = false;
  bool no_fusion = false;
  bool no_mixture = false;
  bool no_rank = false;
  bool no_horizon = false;
};

struct RunConfig {
  std::string task = "mci-ad";
  std::uint64_t cohort_seed = 0;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  double max_row_missing = 0.10;

  ModelConfig model;
  LossWeights loss;
  TrainConfig train;
  Ablations ablations;
  features::SelectionConfig selection;

  /// Parses a full or partial config; unspecified keys keep defaults.
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::string& path);

  /// Applies one key/value pair; throws ConfigError for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);

  /// Range checks across fields.
  void validate() const;

  /// Complete key = value listing, parseable by parse().
  std::string to_text() const;

  /// Model config and loss weights with ablation switches folded in.
  ModelConfig resolved_model() const;
  LossWeights resolved_loss() const;
};

std::vector<std::uint64_t> parse_seed_list(std::string_view text);

}  // namespace survtx
