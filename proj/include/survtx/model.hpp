#pragma once

// Temporal Transformer over engineered visit histories with a latent mixture
// discrete-time hazard head.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "survtx/config.hpp"
#include "survtx/features.hpp"
#include "survtx/numerics.hpp"

namespace survtx::model {

using ad::Graph;
using ad::Tensor;

/// Ordered, named parameter tensors.
class ParamStore {
 public:
  void add(std::string name, Tensor t);
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);
  bool contains(std::string_view name) const;

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Tensor& at(std::size_t i) const { return tensors_[i]; }
  Tensor& at(std::size_t i) { return tensors_[i]; }
  std::size_t scalar_count() const;

  void zero_grad();
  /// Deep copy with fresh tensors (requires_grad preserved).
  ParamStore clone() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

enum class Mode { train, eval };

/// Non-latest visits kept after visit dropout, as indices into `count` visits.
/// Evaluation mode, p = 0, or a single visit keeps everything.
std::vector<std::size_t> visit_dropout(std::size_t count, double p, Rng& rng, Mode mode);

/// Indices of valid visits, keeping the most recent `max_visits`.
std::vector<std::size_t> retained_visits(const features::EngineeredHistory& history,
                                         std::size_t max_visits);

struct ForwardOptions {
  /// Leaf tensor for the numeric input block so gradients w.r.t. inputs are available.
  bool numeric_input_grad = false;
  /// Also return encoder self-attention matrices.
  bool encoder_attention = false;
};

struct ForwardResult {
  Tensor z;               // [B x D]
  Tensor score;           // [B x 1]
  Tensor gates;           // [B x E]
  Tensor expert_hazards;  // [B x E*K], expert-major
  Tensor hazards;         // [B x K]
  Tensor survival;        // [B x K]
  Tensor cif;             // [B x K]

  /// Numeric input rows [N x 4P] as [z | dz | s | m], one row per visit fed to
  /// the encoder in subject order.
  Tensor numeric_input;
  /// Per subject: indices into the engineered visit list of the visits used.
  std::vector<std::vector<std::size_t>> visits;
  /// Per subject: fusion-pool weights over `visits` (sum to 1).
  std::vector<std::vector<double>> pool_weights;
  /// Per layer, per subject, per head: (L+1) x (L+1) matrices incl. CLS.
  std::vector<std::vector<std::vector<std::vector<double>>>> encoder_attention;
};

class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  /// Fresh parameters from the "init" stream of the given seed.
  ParamStore init(std::uint64_t seed) const;

  /// Throws ContractError when a store does not match this config's shapes.
  void check(const ParamStore& params) const;

  /// `rng` drives visit dropout and dropout in train mode; unused in eval mode.
  ForwardResult forward(Graph& g, const ParamStore& params,
                        std::span<const features::EngineeredHistory> batch, Mode mode, Rng& rng,
                        const ForwardOptions& options = {}) const;

  std::vector<std::pair<std::string, ad::Shape>> parameter_shapes() const;

 private:
  ModelConfig config_;
};

/// Evaluation-mode outputs for one subject.
struct Prediction {
  std::string id;
  double score = 0.0;
  std::vector<double> gates, expert_hazards, hazards, survival, cif;
  std::vector<std::size_t> visits;
  std::vector<double> pool_weights;
};

/// Evaluation-mode forward in chunks without recording; rows are independent of
/// chunking, so results do not depend on `batch_size`.
std::vector<Prediction> predict(const Model& model, const ParamStore& params,
                                std::span<const features::EngineeredHistory> histories,
                                std::size_t batch_size = 64);

// ---- plain-value survival algebra -------------------------------------------

/// Probability-space mixture h_k = sum_e gates_e * expert[e*K + k].
std::vector<double> mix_hazards(std::span<const double> gates, std::span<const double> expert,
                                std::size_t bins);

struct RiskCurve {
  std::vector<double> survival;
  std::vector<double> cif;
};

/// S(b_k) = prod_{j<=k} (1 - h_j), F = 1 - S.
RiskCurve survival_curve(std::span<const double> hazards);

/// Index of the first endpoint >= h; DomainError when h <= 0 or h > last endpoint.
std::size_t horizon_index(std::span<const double> bins, double h);

double risk_at_horizon(std::span<const double> cif, std::span<const double> bins, double h);

}  // namespace survtx::model
