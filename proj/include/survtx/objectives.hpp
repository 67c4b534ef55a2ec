#pragma once

// Survival likelihood, horizon focal loss, progression ranking, hazard
// smoothness, gate balance, and their weighted sum.

#include <span>
#include <vector>

#include "survtx/cohort.hpp"
#include "survtx/config.hpp"
#include "survtx/model.hpp"
#include "survtx/numerics.hpp"

namespace survtx::objectives {

using ad::Graph;
using ad::Tensor;

inline constexpr double kFocalEps = 1e-8;

struct BinIndex {
  std::size_t k = 0;     // 0-based bin containing T (endpoint-inclusive on the right)
  bool clamped = false;  // T beyond the last endpoint
};

/// Smallest k with T <= b_k; ContractError for T <= 0.
BinIndex bin_index(double t, std::span<const double> bins);

/// Events beyond the grid become censorings at the last endpoint.
cohort::SurvivalLabel effective_label(const cohort::SurvivalLabel& label,
                                      std::span<const double> bins);

/// clip(B / (2 * events), lo, hi); 1 when the batch has no in-grid events.
double event_weight(std::span<const cohort::SurvivalLabel> labels, std::span<const double> bins,
                    double lo, double hi);

/// Batch mean of the discrete-time negative log-likelihood; event subjects'
/// terms are multiplied by `weight`.
Tensor survival_nll(Graph& g, const Tensor& hazards, std::span<const cohort::SurvivalLabel> labels,
                    std::span<const double> bins, double weight);

struct HorizonLabels {
  std::size_t subjects = 0, horizons = 0;
  std::vector<double> y, mask, weight;  // row-major [subjects x horizons]
};

/// Per-horizon positive-class weight clip((1 - p) / p, lo, hi), p the
/// prevalence among evaluable subjects; negatives have weight 1.
std::vector<double> horizon_class_weights(std::span<const cohort::SurvivalLabel> train,
                                          std::span<const double> bins,
                                          std::span<const double> horizons, double lo, double hi);

HorizonLabels horizon_labels(std::span<const cohort::SurvivalLabel> labels,
                             std::span<const double> bins, std::span<const double> horizons,
                             std::span<const double> class_weights);

/// Masked, weighted focal loss on horizon risks R (with S = 1 - R supplied
/// separately so log(1 - R) stays finite).
Tensor focal_horizon(Graph& g, const Tensor& risk, const Tensor& surv, const HorizonLabels& labels,
                     double gamma);
Tensor focal_horizon(Graph& g, const Tensor& risk, const HorizonLabels& labels, double gamma);

/// Columns of a [B x K] curve at the horizon endpoints, [B x H].
Tensor at_horizons(Graph& g, const Tensor& curve, std::span<const double> bins,
                   std::span<const double> horizons);

/// Mean softplus(-(q_i - q_j)) over pairs with event i and T_i < T_j; 0 if none.
Tensor rank_loss(Graph& g, const Tensor& scores, std::span<const cohort::SurvivalLabel> labels,
                 std::span<const double> bins);

Tensor smoothness(Graph& g, const Tensor& hazards);
Tensor gate_balance(Graph& g, const Tensor& gates);

struct LossTerms {
  Tensor surv, horizon, rank, smooth, gate, total;
};

struct LossValues {
  double surv = 0, horizon = 0, rank = 0, smooth = 0, gate = 0, total = 0;
};

LossValues values_of(const LossTerms& t);

struct ObjectiveContext {
  std::vector<double> bins;
  LossWeights weights;
  std::vector<double> class_weights;  // per horizon, from the training split
};

ObjectiveContext make_context(const ModelConfig& model, const LossWeights& weights,
                              std::span<const cohort::SurvivalLabel> train);

/// Throws DomainError naming the first non-finite component.
LossTerms total_loss(Graph& g, const model::ForwardResult& out,
                     std::span<const cohort::SurvivalLabel> labels, const ObjectiveContext& ctx);

}  // namespace survtx::objectives
