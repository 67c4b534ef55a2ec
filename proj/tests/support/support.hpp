#pragma once

// Independent oracles and pipeline fixtures shared by the unit tests and the
// acceptance runner. Oracles here are deliberately naive (pair enumeration,
// triple loops, threshold sweeps) so they do not share code paths with the
// library implementations they check.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "survtx/cohort.hpp"
#include "survtx/config.hpp"
#include "survtx/features.hpp"
#include "survtx/model.hpp"
#include "survtx/numerics.hpp"
#include "survtx/objectives.hpp"
#include "survtx/synthetic.hpp"
#include "survtx/training.hpp"

namespace survtx::fixture {

// ---- brute-force metric oracles ----------------------------------------------------

std::optional<double> brute_harrell(std::span<const double> scores,
                                    std::span<const cohort::SurvivalLabel> labels);
std::optional<double> brute_td_auc(std::span<const double> risks,
                                   std::span<const cohort::SurvivalLabel> labels, double t);
std::optional<double> brute_auroc(std::span<const double> scores, std::span<const double> y,
                                  std::span<const double> mask);
/// Precision at each distinct threshold times the recall it adds, summed.
std::optional<double> sweep_auprc(std::span<const double> scores, std::span<const double> y,
                                  std::span<const double> mask);

std::vector<double> matmul_ref(std::span<const double> a, std::span<const double> b,
                               std::size_t m, std::size_t k, std::size_t n);

// ---- gradient checks -----------------------------------------------------------------

struct GradResult {
  std::string name;
  double error = 0.0;
};

/// Finite-difference checks of every differentiable op at random inputs.
std::vector<GradResult> op_gradient_checks(std::uint64_t seed);

/// Central differences on `count` random scalar parameters of the full
/// forward + total loss; returns the maximum relative error.
double end_to_end_gradient_error(std::uint64_t seed, std::size_t count = 10);

// ---- synthetic pipeline fixtures -------------------------------------------------------

ModelConfig small_model();

struct SyntheticData {
  synthetic::Generated generated;
  std::shared_ptr<const cohort::RawTable> table;
  cohort::Cohort cohort;
  cohort::CohortSplit split;
  training::Dataset data;
};

SyntheticData synthetic_data(const synthetic::SyntheticSpec& spec, std::uint64_t generator_seed,
                             const RunConfig& config);

std::shared_ptr<const cohort::RawTable> table_from_csv(const std::string& csv);

/// Random engineered histories with `p` numeric features and two categoricals.
std::vector<features::EngineeredHistory> random_histories(std::size_t n, std::size_t p,
                                                          std::uint64_t seed,
                                                          std::size_t max_visits = 6);

}  // namespace survtx::fixture
