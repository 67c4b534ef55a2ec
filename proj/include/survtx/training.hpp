#pragma once

// AdamW with decoupled weight decay, EMA shadow weights, gradient clipping,
// and the seeded early-stopping training loop.

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "survtx/cohort.hpp"
#include "survtx/config.hpp"
#include "survtx/features.hpp"
#include "survtx/model.hpp"
#include "survtx/objectives.hpp"

namespace survtx::training {

using model::ParamStore;

double global_norm(const ParamStore& params);

/// Scales every gradient by max_norm / norm when norm > max_norm. Returns the
/// pre-clip norm.
double clip_gradients(ParamStore& params, double max_norm);

class AdamW {
 public:
  AdamW(const ParamStore& params, double lr, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);
  explicit AdamW(const ParamStore& params, const TrainConfig& cfg)
      : AdamW(params, cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps) {}

  /// p -= lr*wd*p, then the bias-corrected Adam update from the current gradients.
  void step(ParamStore& params);
  std::size_t steps() const { return step_; }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Uncorrected exponential moving average of parameters, updated per step.
class Ema {
 public:
  Ema(const ParamStore& params, double decay);
  void update(const ParamStore& params);
  const ParamStore& shadow() const { return shadow_; }

 private:
  ParamStore shadow_;
  double decay_;
};

struct EpochLog {
  std::size_t epoch = 0;
  std::string split;  // "train" or "validation"
  objectives::LossValues loss;
};

void write_log(std::ostream& out, std::span<const EpochLog> log);
std::string log_text(std::span<const EpochLog> log);

/// Engineered splits and the train-fitted preprocessor.
struct Dataset {
  features::Preprocessor preprocessor;
  std::vector<features::EngineeredHistory> train, validation, test;
};

Dataset prepare_dataset(const cohort::Cohort& cohort, const cohort::CohortSplit& split,
                        const features::SelectionConfig& selection);

/// Model config with data-dependent widths filled in from the preprocessor.
ModelConfig sized_model(ModelConfig config, const features::Preprocessor& prep);

std::vector<cohort::SurvivalLabel> labels_of(std::span<const features::EngineeredHistory> h);

/// Total objective in evaluation mode over all histories as one batch.
objectives::LossValues evaluate_loss(const model::Model& model, const ParamStore& params,
                                     std::span<const features::EngineeredHistory> histories,
                                     const objectives::ObjectiveContext& ctx);

struct TrainOptions {
  std::uint64_t seed = 0;
  /// Called with the EMA weights whenever validation loss improves.
  std::function<void(const ParamStore&, std::size_t epoch)> on_improve;
  /// Called after each epoch's train and validation rows are logged.
  std::function<void(const EpochLog& train, const EpochLog& validation)> on_epoch;
};

struct TrainResult {
  ParamStore best;  // EMA weights at the best validation epoch
  std::size_t best_epoch = 0;
  double best_validation = 0.0;
  std::size_t epochs_run = 0;
  std::vector<EpochLog> log;
};

/// Each epoch: seeded shuffle, mini-batches with forward/loss/backward/clip/
/// AdamW/EMA, then validation loss with EMA weights. Stops after `patience`
/// epochs without strict improvement or at `max_epochs`.
TrainResult train(const model::Model& model, std::span<const features::EngineeredHistory> train,
                  std::span<const features::EngineeredHistory> validation,
                  const objectives::ObjectiveContext& ctx, const TrainConfig& config,
                  const TrainOptions& options);

}  // namespace survtx::training
