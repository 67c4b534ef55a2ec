#include "survtx/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "survtx/error.hpp"

namespace survtx::objectives {

BinIndex bin_index(double t, std::span<const double> bins) {
  if (!(t > 0.0)) throw ContractError("bin_index: survival time must be positive");
  if (bins.empty()) throw ContractError("bin_index: empty grid");
  if (t > bins.back()) return {bins.size() - 1, true};
  return {static_cast<std::size_t>(std::lower_bound(bins.begin(), bins.end(), t) - bins.begin()),
          false};
}

cohort::SurvivalLabel effective_label(const cohort::SurvivalLabel& label,
                                      std::span<const double> bins) {
  if (bin_index(label.time, bins).clamped) return {bins.back(), false};
  return label;
}

double event_weight(std::span<const cohort::SurvivalLabel> labels, std::span<const double> bins,
                    double lo, double hi) {
  std::size_t events = 0;
  for (const auto& l : labels) events += effective_label(l, bins).event ? 1 : 0;
  if (events == 0) return 1.0;
  const double w = static_cast<double>(labels.size()) / (2.0 * static_cast<double>(events));
  return std::clamp(w, lo, hi);
}

Tensor survival_nll(Graph& g, const Tensor& hazards, std::span<const cohort::SurvivalLabel> labels,
                    std::span<const double> bins, double weight) {
  const std::size_t B = labels.size(), K = bins.size();
  if (hazards.rank() != 2 || hazards.rows() != B || hazards.cols() != K)
    throw DimensionError("survival_nll: hazards must be [B x K]");
  // Coefficients on log h and log(1 - h).
  std::vector<double> a_event(B * K, 0.0), a_surv(B * K, 0.0);
  for (std::size_t i = 0; i < B; ++i) {
    const auto l = effective_label(labels[i], bins);
    if (l.event) {
      const std::size_t k = bin_index(l.time, bins).k;
      a_event[i * K + k] = weight;
      for (std::size_t j = 0; j < k; ++j) a_surv[i * K + j] = weight;
    } else {
      for (std::size_t j = 0; j < K && bins[j] <= l.time; ++j) a_surv[i * K + j] = 1.0;
    }
  }
  Tensor ev = ad::mul(g, ad::log(g, hazards), Tensor::constant({B, K}, std::move(a_event)));
  Tensor sv = ad::mul(g, ad::log(g, ad::shift(g, ad::neg(g, hazards), 1.0)),
                      Tensor::constant({B, K}, std::move(a_surv)));
  return ad::scale(g, ad::sum(g, ad::add(g, ev, sv)), -1.0 / static_cast<double>(B));
}

std::vector<double> horizon_class_weights(std::span<const cohort::SurvivalLabel> train,
                                          std::span<const double> bins,
                                          std::span<const double> horizons, double lo, double hi) {
  std::vector<double> w;
  for (double h : horizons) {
    std::size_t evaluable = 0, positive = 0;
    for (const auto& raw : train) {
      const auto l = effective_label(raw, bins);
      const bool y = l.event && l.time <= h;
      if (y || l.time >= h) {
        ++evaluable;
        positive += y ? 1 : 0;
      }
    }
    if (evaluable == 0 || positive == 0) {
      w.push_back(hi);
      continue;
    }
    const double p = static_cast<double>(positive) / static_cast<double>(evaluable);
    w.push_back(std::clamp((1.0 - p) / p, lo, hi));
  }
  return w;
}

HorizonLabels horizon_labels(std::span<const cohort::SurvivalLabel> labels,
                             std::span<const double> bins, std::span<const double> horizons,
                             std::span<const double> class_weights) {
  if (class_weights.size() != horizons.size())
    throw DimensionError("horizon_labels: one class weight per horizon expected");
  HorizonLabels out;
  out.subjects = labels.size();
  out.horizons = horizons.size();
  const std::size_t n = out.subjects * out.horizons;
  out.y.assign(n, 0.0);
  out.mask.assign(n, 0.0);
  out.weight.assign(n, 1.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto l = effective_label(labels[i], bins);
    for (std::size_t k = 0; k < horizons.size(); ++k) {
      const double h = horizons[k];
      const bool y = l.event && l.time <= h;
      const std::size_t at = i * out.horizons + k;
      out.y[at] = y ? 1.0 : 0.0;
      out.mask[at] = (y || l.time >= h) ? 1.0 : 0.0;
      if (y) out.weight[at] = class_weights[k];
    }
  }
  return out;
}

Tensor focal_horizon(Graph& g, const Tensor& risk, const Tensor& surv, const HorizonLabels& labels,
                     double gamma) {
  const std::size_t B = labels.subjects, H = labels.horizons;
  const ad::Shape shape{B, H};
  if (risk.shape() != shape || surv.shape() != shape)
    throw DimensionError("focal_horizon: risks must be [B x H]");
  std::vector<double> pos(B * H), neg(B * H);
  double denom = kFocalEps;
  for (std::size_t i = 0; i < B * H; ++i) {
    const double mw = labels.mask[i] * labels.weight[i];
    pos[i] = mw * labels.y[i];
    neg[i] = mw * (1.0 - labels.y[i]);
    denom += mw;
  }
  // y (1-R)^g log R + (1-y) R^g log(1-R)
  Tensor tp = ad::mul(g, ad::log(g, risk), Tensor::constant(shape, std::move(pos)));
  Tensor tn = ad::mul(g, ad::log(g, surv), Tensor::constant(shape, std::move(neg)));
  if (gamma != 0.0) {
    tp = ad::mul(g, tp, ad::pow(g, surv, gamma));
    tn = ad::mul(g, tn, ad::pow(g, risk, gamma));
  }
  return ad::scale(g, ad::sum(g, ad::add(g, tp, tn)), -1.0 / denom);
}

Tensor focal_horizon(Graph& g, const Tensor& risk, const HorizonLabels& labels, double gamma) {
  return focal_horizon(g, risk, ad::shift(g, ad::neg(g, risk), 1.0), labels, gamma);
}

Tensor at_horizons(Graph& g, const Tensor& curve, std::span<const double> bins,
                   std::span<const double> horizons) {
  const std::size_t K = bins.size(), H = horizons.size();
  std::vector<double> sel(K * H, 0.0);
  for (std::size_t k = 0; k < H; ++k) sel[model::horizon_index(bins, horizons[k]) * H + k] = 1.0;
  return ad::matmul(g, curve, Tensor::constant({K, H}, std::move(sel)));
}

Tensor rank_loss(Graph& g, const Tensor& scores, std::span<const cohort::SurvivalLabel> labels,
                 std::span<const double> bins) {
  const std::size_t B = labels.size();
  if (scores.size() != B) throw DimensionError("rank_loss: one score per subject expected");
  std::vector<cohort::SurvivalLabel> eff;
  for (const auto& l : labels) eff.push_back(effective_label(l, bins));
  std::vector<double> diff;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < B; ++i) {
    if (!eff[i].event) continue;
    for (std::size_t j = 0; j < B; ++j) {
      if (eff[i].time < eff[j].time) {
        diff.resize(diff.size() + B, 0.0);
        diff[pairs * B + i] = 1.0;
        diff[pairs * B + j] = -1.0;
        ++pairs;
      }
    }
  }
  if (pairs == 0) return Tensor::scalar(0.0);
  Tensor d = ad::matmul(g, Tensor::constant({pairs, B}, std::move(diff)),
                        ad::reshape(g, scores, {B, 1}));
  return ad::mean(g, ad::softplus(g, ad::neg(g, d)));
}

Tensor smoothness(Graph& g, const Tensor& hazards) {
  const std::size_t B = hazards.rows(), K = hazards.cols();
  if (K < 2) return Tensor::scalar(0.0);
  std::vector<double> diff(K * (K - 1), 0.0);
  for (std::size_t k = 1; k < K; ++k) {
    diff[k * (K - 1) + (k - 1)] = 1.0;
    diff[(k - 1) * (K - 1) + (k - 1)] = -1.0;
  }
  Tensor d = ad::matmul(g, hazards, Tensor::constant({K, K - 1}, std::move(diff)));
  return ad::scale(g, ad::sum(g, ad::square(g, d)), 1.0 / static_cast<double>(B * (K - 1)));
}

Tensor gate_balance(Graph& g, const Tensor& gates) {
  const std::size_t B = gates.rows(), E = gates.cols();
  Tensor avg = ad::matmul(g, Tensor::constant({1, B}, std::vector<double>(B, 1.0 / static_cast<double>(B))),
                          gates);
  return ad::sum(g, ad::square(g, ad::shift(g, avg, -1.0 / static_cast<double>(E))));
}

LossValues values_of(const LossTerms& t) {
  return {t.surv.item(), t.horizon.item(), t.rank.item(),
          t.smooth.item(), t.gate.item(), t.total.item()};
}

ObjectiveContext make_context(const ModelConfig& model, const LossWeights& weights,
                              std::span<const cohort::SurvivalLabel> train) {
  ObjectiveContext ctx;
  ctx.bins = model.bins;
  ctx.weights = weights;
  ctx.class_weights = horizon_class_weights(train, model.bins, weights.horizons,
                                            weights.horizon_weight_min, weights.horizon_weight_max);
  return ctx;
}

LossTerms total_loss(Graph& g, const model::ForwardResult& out,
                     std::span<const cohort::SurvivalLabel> labels, const ObjectiveContext& ctx) {
  const auto& w = ctx.weights;
  LossTerms t;
  const double ew = event_weight(labels, ctx.bins, w.event_weight_min, w.event_weight_max);
  t.surv = survival_nll(g, out.hazards, labels, ctx.bins, ew);
  const auto hl = horizon_labels(labels, ctx.bins, w.horizons, ctx.class_weights);
  t.horizon = focal_horizon(g, at_horizons(g, out.cif, ctx.bins, w.horizons),
                            at_horizons(g, out.survival, ctx.bins, w.horizons), hl, w.focal_gamma);
  t.rank = rank_loss(g, out.score, labels, ctx.bins);
  t.smooth = smoothness(g, out.hazards);
  t.gate = gate_balance(g, out.gates);

  const std::pair<const char*, const Tensor*> parts[] = {
      {"survival", &t.surv}, {"horizon", &t.horizon}, {"rank", &t.rank},
      {"smoothness", &t.smooth}, {"gate balance", &t.gate}};
  for (const auto& [name, tensor] : parts)
    if (!std::isfinite(tensor->item()))
      throw DomainError(std::string("non-finite ") + name + " loss");

  Tensor total = t.surv;
  auto add_term = [&](const Tensor& term, double lambda) {
    if (lambda != 0.0) total = ad::add(g, total, ad::scale(g, term, lambda));
  };
  add_term(t.horizon, w.lambda_h);
  add_term(t.rank, w.lambda_p);
  add_term(t.smooth, w.lambda_s);
  add_term(t.gate, w.lambda_g);
  t.total = total;
  return t;
}

}  // namespace survtx::objectives
