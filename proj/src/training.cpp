#include "survtx/training.hpp"

#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "survtx/csv.hpp"
#include "survtx/error.hpp"

namespace survtx::training {

double global_norm(const ParamStore& params) {
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.at(i).has_grad()) continue;
    for (double g : params.at(i).grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_gradients(ParamStore& params, double max_norm) {
  const double norm = global_norm(params);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params.at(i).has_grad()) continue;
      for (double& g : params.at(i).grad_buffer()) g *= s;
    }
  }
  return norm;
}

AdamW::AdamW(const ParamStore& params, double lr, double weight_decay, double beta1, double beta2,
             double eps)
    : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params.at(i).size(), 0.0);
    v_.emplace_back(params.at(i).size(), 0.0);
  }
}

void AdamW::step(ParamStore& params) {
  if (params.size() != m_.size()) throw DimensionError("AdamW: parameter count changed");
  ++step_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& t = params.at(i);
    auto p = t.mutable_data();
    if (p.size() != m_[i].size()) throw DimensionError("AdamW: parameter shape changed");
    const auto g = t.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      p[j] -= lr_ * wd_ * p[j];
      m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
      v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
      p[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

Ema::Ema(const ParamStore& params, double decay) : decay_(decay) {
  for (std::size_t i = 0; i < params.size(); ++i)
    shadow_.add(params.name(i), params.at(i).clone(false));
}

void Ema::update(const ParamStore& params) {
  if (params.size() != shadow_.size()) throw DimensionError("EMA: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto s = shadow_.at(i).mutable_data();
    const auto p = params.at(i).data();
    for (std::size_t j = 0; j < s.size(); ++j) s[j] = decay_ * s[j] + (1.0 - decay_) * p[j];
  }
}

void write_log(std::ostream& out, std::span<const EpochLog> log) {
  csv::write_row(out, {"epoch", "L_surv", "L_h", "L_p", "L_s", "L_g", "total", "split"});
  for (const auto& e : log) {
    const auto& l = e.loss;
    csv::write_row(out, {std::to_string(e.epoch), csv::format_double(l.surv),
                         csv::format_double(l.horizon), csv::format_double(l.rank),
                         csv::format_double(l.smooth), csv::format_double(l.gate),
                         csv::format_double(l.total), e.split});
  }
}

std::string log_text(std::span<const EpochLog> log) {
  std::ostringstream os;
  write_log(os, log);
  return os.str();
}

Dataset prepare_dataset(const cohort::Cohort& cohort, const cohort::CohortSplit& split,
                        const features::SelectionConfig& selection) {
  if (!cohort.table) throw ContractError("prepare_dataset: cohort has no table");
  auto subjects = [&](const std::vector<std::string>& ids) {
    std::vector<cohort::SubjectHistory> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
      const auto* s = cohort.find(id);
      if (!s) throw LookupError("prepare_dataset: subject '" + id + "' not in cohort");
      out.push_back(*s);
    }
    return out;
  };
  const auto train = subjects(split.train);
  if (train.empty()) throw ContractError("prepare_dataset: empty training split");
  const auto& table = *cohort.table;
  Dataset d;
  const auto spec = features::select_columns(table, train, selection);
  d.preprocessor = features::fit_preprocessor(table, train, spec);
  auto engineer = [&](const std::vector<cohort::SubjectHistory>& hs) {
    std::vector<features::EngineeredHistory> out;
    out.reserve(hs.size());
    for (const auto& h : hs) out.push_back(features::engineer_history(table, h, d.preprocessor));
    return out;
  };
  d.train = engineer(train);
  d.validation = engineer(subjects(split.validation));
  d.test = engineer(subjects(split.test));
  return d;
}

ModelConfig sized_model(ModelConfig config, const features::Preprocessor& prep) {
  config.numeric_features = prep.numeric_count();
  config.vocab_sizes.clear();
  for (std::size_t c = 0; c < prep.spec.categorical.size(); ++c)
    config.vocab_sizes.push_back(prep.vocab_size(c));
  return config;
}

std::vector<cohort::SurvivalLabel> labels_of(std::span<const features::EngineeredHistory> h) {
  std::vector<cohort::SurvivalLabel> out;
  out.reserve(h.size());
  for (const auto& x : h) out.push_back(x.label);
  return out;
}

objectives::LossValues evaluate_loss(const model::Model& model, const ParamStore& params,
                                     std::span<const features::EngineeredHistory> histories,
                                     const objectives::ObjectiveContext& ctx) {
  if (histories.empty()) throw ContractError("evaluate_loss: no subjects");
  ad::Graph g(false);
  Rng unused(0);
  const auto out = model.forward(g, params, histories, model::Mode::eval, unused);
  const auto labels = labels_of(histories);
  return objectives::values_of(objectives::total_loss(g, out, labels, ctx));
}

TrainResult train(const model::Model& model, std::span<const features::EngineeredHistory> train,
                  std::span<const features::EngineeredHistory> validation,
                  const objectives::ObjectiveContext& ctx, const TrainConfig& config,
                  const TrainOptions& options) {
  if (train.empty() || validation.empty())
    throw ContractError("train: training and validation splits must be non-empty");
  ParamStore params = model.init(options.seed);
  AdamW opt(params, config);
  Ema ema(params, config.ema_decay);
  Rng shuffle = Rng::stream(options.seed, "shuffle");
  Rng drop = Rng::stream(options.seed, "dropout");

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  bool have_best = false;
  std::vector<features::EngineeredHistory> batch;
  std::vector<cohort::SurvivalLabel> labels;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle.shuffle(order);
    objectives::LossValues sum;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      labels.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(train[order[i]]);
        labels.push_back(train[order[i]].label);
      }
      ad::Graph g;
      const auto out = model.forward(g, params, batch, model::Mode::train, drop);
      objectives::LossTerms terms;
      try {
        terms = objectives::total_loss(g, out, labels, ctx);
      } catch (const DomainError& e) {
        throw DomainError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                          ", batch starting at " + std::to_string(start));
      }
      const auto v = objectives::values_of(terms);
      if (!std::isfinite(v.total)) throw DomainError("non-finite total loss at epoch " +
                                                     std::to_string(epoch));
      const double n = static_cast<double>(end - start);
      sum.surv += n * v.surv;
      sum.horizon += n * v.horizon;
      sum.rank += n * v.rank;
      sum.smooth += n * v.smooth;
      sum.gate += n * v.gate;
      sum.total += n * v.total;
      g.backward(terms.total);
      clip_gradients(params, config.clip_norm);
      opt.step(params);
      ema.update(params);
      params.zero_grad();
    }
    const double n = static_cast<double>(train.size());
    EpochLog tr{epoch, "train",
                {sum.surv / n, sum.horizon / n, sum.rank / n, sum.smooth / n, sum.gate / n,
                 sum.total / n}};
    EpochLog va{epoch, "validation", evaluate_loss(model, ema.shadow(), validation, ctx)};
    result.log.push_back(tr);
    result.log.push_back(va);
    result.epochs_run = epoch;
    if (options.on_epoch) options.on_epoch(tr, va);

    if (!have_best || va.loss.total < result.best_validation) {
      have_best = true;
      result.best_validation = va.loss.total;
      result.best_epoch = epoch;
      result.best = ema.shadow().clone();
      if (options.on_improve) options.on_improve(result.best, epoch);
    }
    if (epoch - result.best_epoch >= config.patience) break;
  }
  return result;
}

}  // namespace survtx::training
