#include "survtx/interpret.hpp"

#include <algorithm>
#include <cmath>

#include "survtx/error.hpp"
#include "survtx/objectives.hpp"

namespace survtx::interpret {

std::vector<std::string> attribution_names(const features::Preprocessor& prep) {
  std::vector<std::string> names;
  for (const char* block : {"z:", "dz:", "slope:"})
    for (const auto& col : prep.spec.numeric) names.push_back(block + col);
  return names;
}

namespace {

model::ParamStore frozen(const model::ParamStore& params) {
  model::ParamStore out;
  for (std::size_t i = 0; i < params.size(); ++i) out.add(params.name(i), params.at(i).clone(false));
  return out;
}

}  // namespace

std::vector<Attribution> grad_times_input(const model::Model& model,
                                          const model::ParamStore& params,
                                          std::span<const features::EngineeredHistory> histories,
                                          double horizon, std::size_t batch_size) {
  const auto fixed = frozen(params);
  const auto& bins = model.config().bins;
  const std::size_t P = model.config().numeric_features, width = 3 * P;
  const double hs[] = {horizon};
  std::vector<Attribution> out;
  Rng unused(0);
  model::ForwardOptions opts;
  opts.numeric_input_grad = true;
  for (std::size_t start = 0; start < histories.size(); start += batch_size) {
    const auto chunk = histories.subspan(start, std::min(batch_size, histories.size() - start));
    ad::Graph g;
    auto r = model.forward(g, fixed, chunk, model::Mode::eval, unused, opts);
    // Subjects are independent in evaluation mode, so the gradient of the sum
    // gives each subject's own dF/dx.
    g.backward(ad::sum(g, objectives::at_horizons(g, r.cif, bins, hs)));
    const auto grad = r.numeric_input.grad();
    const auto x = r.numeric_input.data();
    std::size_t row = 0;
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      Attribution a;
      a.id = chunk[i].id;
      a.visits = r.visits[i];
      a.width = width;
      for (std::size_t v = 0; v < a.visits.size(); ++v, ++row)
        for (std::size_t c = 0; c < width; ++c)
          a.values.push_back(grad[row * 4 * P + c] * x[row * 4 * P + c]);
      out.push_back(std::move(a));
    }
  }
  return out;
}

std::vector<Importance> feature_importance(std::span<const Attribution> attributions,
                                           const std::vector<std::string>& names) {
  std::vector<Importance> imp(names.size());
  for (std::size_t c = 0; c < names.size(); ++c) imp[c].feature = names[c];
  std::size_t subjects = 0;
  for (const auto& a : attributions) {
    if (a.width != names.size()) throw DimensionError("feature_importance: width mismatch");
    if (a.visits.empty()) continue;
    ++subjects;
    for (std::size_t c = 0; c < a.width; ++c) {
      double s = 0.0;
      for (std::size_t v = 0; v < a.visits.size(); ++v) s += std::abs(a.values[v * a.width + c]);
      imp[c].mean_abs += s / static_cast<double>(a.visits.size());
    }
  }
  if (subjects)
    for (auto& i : imp) i.mean_abs /= static_cast<double>(subjects);
  std::stable_sort(imp.begin(), imp.end(), [](const auto& a, const auto& b) {
    return a.mean_abs != b.mean_abs ? a.mean_abs > b.mean_abs : a.feature < b.feature;
  });
  return imp;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("pearson: lengths differ");
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

AttentionSummary attention_summary(const model::Model& model, const model::ParamStore& params,
                                   std::span<const features::EngineeredHistory> histories) {
  if (histories.empty()) throw ContractError("attention_summary: no subjects");
  const auto preds = model::predict(model, params, histories);
  AttentionSummary s;
  double rec = 0.0, chg = 0.0, prox = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& h = histories[i];
    AttentionRecord r;
    r.id = h.id;
    r.converter = h.label.event;
    r.visits = preds[i].visits;
    r.weights = preds[i].pool_weights;
    if (r.weights.size() != r.visits.size()) {
      s.records.push_back(std::move(r));
      continue;  // no pooling (fusion disabled)
    }
    for (std::size_t v = 0; v < r.visits.size(); ++v) {
      const auto& ev = h.visits[r.visits[v]];
      r.recency.push_back(static_cast<double>(v + 1));
      double m = 0.0;
      for (double d : ev.dz) m += std::abs(d);
      r.change.push_back(ev.dz.empty() ? 0.0 : m / static_cast<double>(ev.dz.size()));
      r.years_to_index.push_back(h.label.time - ev.time);
    }
    if (r.visits.size() > 1) {
      r.recency_corr = pearson(r.weights, r.recency);
      r.change_corr = pearson(r.weights, r.change);
      if (r.converter) r.proximity_corr = pearson(r.weights, r.years_to_index);
    }
    if (r.recency_corr) {
      rec += *r.recency_corr;
      ++s.recency_n;
    }
    if (r.change_corr) {
      chg += *r.change_corr;
      ++s.change_n;
    }
    if (r.proximity_corr) {
      prox += *r.proximity_corr;
      ++s.proximity_n;
    }
    s.records.push_back(std::move(r));
  }
  if (s.recency_n) s.recency_corr = rec / static_cast<double>(s.recency_n);
  if (s.change_n) s.change_corr = chg / static_cast<double>(s.change_n);
  if (s.proximity_n) s.proximity_corr = prox / static_cast<double>(s.proximity_n);
  return s;
}

}  // namespace survtx::interpret
