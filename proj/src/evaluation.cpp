#include "survtx/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "survtx/csv.hpp"
#include "survtx/error.hpp"

namespace survtx::evaluation {

// ---- step curves ----------------------------------------------------------------

double StepCurve::at(double t) const {
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 1.0;
  return survival[static_cast<std::size_t>(it - times.begin()) - 1];
}

double StepCurve::left_limit(double t) const {
  const auto it = std::lower_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 1.0;
  return survival[static_cast<std::size_t>(it - times.begin()) - 1];
}

namespace {

StepCurve km_impl(std::span<const SurvivalLabel> labels, bool flip) {
  if (labels.empty()) throw ContractError("kaplan_meier: no subjects");
  std::vector<std::pair<double, bool>> obs;
  obs.reserve(labels.size());
  for (const auto& l : labels) {
    if (!(l.time > 0.0)) throw ContractError("kaplan_meier: times must be positive");
    obs.emplace_back(l.time, flip ? !l.event : l.event);
  }
  std::sort(obs.begin(), obs.end());
  StepCurve c;
  double s = 1.0;
  std::size_t i = 0;
  while (i < obs.size()) {
    const double t = obs[i].first;
    const std::size_t at_risk = obs.size() - i;
    std::size_t d = 0, j = i;
    for (; j < obs.size() && obs[j].first == t; ++j) d += obs[j].second ? 1 : 0;
    if (d > 0) {
      s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
      c.times.push_back(t);
      c.survival.push_back(s);
      c.at_risk.push_back(at_risk);
      c.events.push_back(d);
    }
    i = j;
  }
  return c;
}

void check_sizes(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw DimensionError(std::string(what) + ": input lengths differ");
}

// Fenwick tree over compressed score ranks.
class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : t_(n + 1, 0) {}
  void add(std::size_t i) {
    for (++i; i < t_.size(); i += i & (~i + 1)) ++t_[i];
  }
  std::uint64_t prefix(std::size_t i) const {  // count of ranks < i
    std::uint64_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += t_[i];
    return s;
  }

 private:
  std::vector<std::uint64_t> t_;
};

// (2 * concordant + ties) / (2 * total) from exact integer counts.
double half_credit(std::uint64_t wins, std::uint64_t ties, std::uint64_t total) {
  return static_cast<double>(2 * wins + ties) / static_cast<double>(2 * total);
}

// Rank statistic P(case > control) with half credit for ties.
std::optional<double> rank_statistic(std::vector<double> cases, std::vector<double> controls) {
  if (cases.empty() || controls.empty()) return std::nullopt;
  std::sort(controls.begin(), controls.end());
  std::uint64_t wins = 0, ties = 0;
  for (double s : cases) {
    const auto lo = std::lower_bound(controls.begin(), controls.end(), s);
    const auto hi = std::upper_bound(lo, controls.end(), s);
    wins += static_cast<std::uint64_t>(lo - controls.begin());
    ties += static_cast<std::uint64_t>(hi - lo);
  }
  return half_credit(wins, ties, static_cast<std::uint64_t>(cases.size()) * controls.size());
}

}  // namespace

StepCurve kaplan_meier(std::span<const SurvivalLabel> labels) { return km_impl(labels, false); }
StepCurve censoring_km(std::span<const SurvivalLabel> labels) { return km_impl(labels, true); }

// ---- ranking metrics ------------------------------------------------------------

std::optional<double> harrell_c(std::span<const double> scores,
                                std::span<const SurvivalLabel> labels) {
  check_sizes(scores.size(), labels.size(), "harrell_c");
  const std::size_t n = scores.size();
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  auto rank = [&](double s) {
    return static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), s) -
                                    sorted.begin());
  };
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](auto a, auto b) { return labels[a].time > labels[b].time; });

  // Walk times descending; the tree holds subjects with strictly larger T.
  Fenwick tree(sorted.size());
  std::uint64_t inserted = 0, wins = 0, ties = 0, total = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && labels[order[j]].time == labels[order[i]].time) ++j;
    for (std::size_t a = i; a < j; ++a) {
      const auto s = order[a];
      if (!labels[s].event) continue;
      const auto r = rank(scores[s]);
      const auto lower = tree.prefix(r);
      const auto equal = tree.prefix(r + 1) - lower;
      wins += lower;
      ties += equal;
      total += inserted;
    }
    for (std::size_t a = i; a < j; ++a) {
      tree.add(rank(scores[order[a]]));
      ++inserted;
    }
    i = j;
  }
  if (total == 0) return std::nullopt;
  return half_credit(wins, ties, total);
}

std::optional<double> td_auc(std::span<const double> risks, std::span<const SurvivalLabel> labels,
                             double t) {
  check_sizes(risks.size(), labels.size(), "td_auc");
  std::vector<double> cases, controls;
  for (std::size_t i = 0; i < risks.size(); ++i) {
    if (labels[i].event && labels[i].time <= t) cases.push_back(risks[i]);
    else if (labels[i].time > t) controls.push_back(risks[i]);
  }
  return rank_statistic(std::move(cases), std::move(controls));
}

std::optional<double> auroc(std::span<const double> scores, std::span<const double> y,
                            std::span<const double> mask) {
  check_sizes(scores.size(), y.size(), "auroc");
  check_sizes(scores.size(), mask.size(), "auroc");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!(mask[i] > 0.0)) continue;
    (y[i] > 0.5 ? pos : neg).push_back(scores[i]);
  }
  return rank_statistic(std::move(pos), std::move(neg));
}

std::optional<double> auprc(std::span<const double> scores, std::span<const double> y,
                            std::span<const double> mask) {
  check_sizes(scores.size(), y.size(), "auprc");
  check_sizes(scores.size(), mask.size(), "auprc");
  std::vector<std::pair<double, bool>> pts;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!(mask[i] > 0.0)) continue;
    pts.emplace_back(scores[i], y[i] > 0.5);
    positives += y[i] > 0.5 ? 1 : 0;
  }
  if (positives == 0 || positives == pts.size()) return std::nullopt;
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  // Sum of (R_n - R_{n-1}) * P_n over distinct thresholds, highest first.
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < pts.size()) {
    std::size_t j = i;
    for (; j < pts.size() && pts[j].first == pts[i].first; ++j) (pts[j].second ? tp : fp) += 1;
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    ap += (recall - prev_recall) * (static_cast<double>(tp) / static_cast<double>(tp + fp));
    prev_recall = recall;
    i = j;
  }
  return ap;
}

Confusion confusion_at(std::span<const double> scores, std::span<const double> y,
                       std::span<const double> mask, double threshold) {
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!(mask[i] > 0.0)) continue;
    const bool pred = scores[i] >= threshold, truth = y[i] > 0.5;
    if (pred && truth) ++c.tp;
    else if (pred) ++c.fp;
    else if (truth) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// ---- Brier ----------------------------------------------------------------------

BrierResult brier(std::span<const double> risks, std::span<const SurvivalLabel> labels, double t,
                  const StepCurve& censoring) {
  check_sizes(risks.size(), labels.size(), "brier");
  if (risks.empty()) throw ContractError("brier: no subjects");
  BrierResult r;
  double sum = 0.0;
  for (std::size_t i = 0; i < risks.size(); ++i) {
    const auto& l = labels[i];
    const double f = risks[i];
    if (l.time <= t && l.event) {
      const double g = censoring.left_limit(l.time);
      if (g > 0.0) sum += (f - 1.0) * (f - 1.0) / g;
      else ++r.zero_weight;
    } else if (l.time > t) {
      const double g = censoring.at(t);
      if (g > 0.0) sum += f * f / g;
      else ++r.zero_weight;
    }
  }
  r.value = sum / static_cast<double>(risks.size());
  return r;
}

double integrate_trapezoid(std::span<const double> grid, std::span<const double> values) {
  check_sizes(grid.size(), values.size(), "integrate_trapezoid");
  if (grid.empty()) throw ContractError("integrate_trapezoid: empty grid");
  if (grid.size() == 1) return values.front();
  double area = 0.0;
  for (std::size_t k = 1; k < grid.size(); ++k)
    area += 0.5 * (values[k] + values[k - 1]) * (grid[k] - grid[k - 1]);
  return area / (grid.back() - grid.front());
}

// ---- calibration and groups -------------------------------------------------------

std::vector<ReliabilityBin> reliability(std::span<const double> probs, std::span<const double> y,
                                        std::span<const double> mask, std::size_t bins) {
  std::vector<ReliabilityBin> out(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].lo = static_cast<double>(b) / static_cast<double>(bins);
    out[b].hi = static_cast<double>(b + 1) / static_cast<double>(bins);
  }
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(mask[i] > 0.0)) continue;
    const double p = std::clamp(probs[i], 0.0, 1.0);
    auto& bin = out[std::min(bins - 1, static_cast<std::size_t>(p * static_cast<double>(bins)))];
    ++bin.count;
    bin.mean_predicted += p;
    bin.observed += y[i];
  }
  for (auto& b : out) {
    if (b.count == 0) continue;
    b.mean_predicted /= static_cast<double>(b.count);
    b.observed /= static_cast<double>(b.count);
  }
  return out;
}

RiskGroups risk_groups(std::span<const double> scores, std::span<const SurvivalLabel> labels,
                       std::size_t k) {
  check_sizes(scores.size(), labels.size(), "risk_groups");
  const std::size_t n = scores.size();
  if (k == 0 || n < k) throw ContractError("risk_groups: need at least k subjects");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  RiskGroups g;
  g.group.assign(n, 0);
  std::size_t first_rank = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (r > 0 && scores[order[r]] != scores[order[r - 1]]) first_rank = r;
    g.group[order[r]] = std::min(k - 1, first_rank * k / n);
  }
  for (std::size_t q = 0; q < k; ++q) {
    std::vector<SurvivalLabel> members;
    for (std::size_t i = 0; i < n; ++i)
      if (g.group[i] == q) members.push_back(labels[i]);
    g.curves.push_back(members.empty() ? StepCurve{} : kaplan_meier(members));
  }
  return g;
}

// ---- full report ----------------------------------------------------------------

MetricsReport evaluate(std::span<const model::Prediction> predictions,
                       std::span<const SurvivalLabel> labels, std::span<const double> bins,
                       std::span<const double> horizons, const StepCurve& km_train,
                       const calibration::Calibration* calibration) {
  check_sizes(predictions.size(), labels.size(), "evaluate");
  if (predictions.empty()) throw ContractError("evaluate: no subjects");
  MetricsReport rep;
  const std::size_t n = predictions.size(), K = bins.size();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) scores[i] = predictions[i].score;
  rep.c_index = harrell_c(scores, labels);

  const auto cens = censoring_km(labels);
  rep.grid.assign(bins.begin(), bins.end());
  double auc_sum = 0.0;
  std::size_t auc_n = 0;
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> f(n), f_km(n, 1.0 - km_train.at(bins[k]));
    for (std::size_t i = 0; i < n; ++i) f[i] = predictions[i].cif.at(k);
    const auto auc = td_auc(f, labels, bins[k]);
    rep.td_auc.push_back(auc);
    if (auc) {
      auc_sum += *auc;
      ++auc_n;
    } else {
      rep.notices.push_back("td-AUC undefined at t = " + csv::format_double(bins[k]));
    }
    const auto b = brier(f, labels, bins[k], cens);
    rep.zero_weight = std::max(rep.zero_weight, b.zero_weight);
    rep.brier_grid.push_back(b.value);
    rep.brier_grid_km.push_back(brier(f_km, labels, bins[k], cens).value);
  }
  if (auc_n) rep.mean_td_auc = auc_sum / static_cast<double>(auc_n);
  rep.ibs = integrate_trapezoid(rep.grid, rep.brier_grid);
  rep.ibs_km = integrate_trapezoid(rep.grid, rep.brier_grid_km);

  rep.calibrated = calibration != nullptr;
  if (!calibration)
    rep.notices.push_back("no calibration: horizon classification metrics skipped");
  for (double h : horizons) {
    HorizonMetrics hm;
    hm.horizon = h;
    const auto raw = calibration::horizon_risks(predictions, bins, h);
    const auto t = calibration::horizon_targets(labels, bins, h);
    hm.brier = brier(raw, labels, h, cens).value;
    for (std::size_t i = 0; i < n; ++i) {
      if (t.mask[i] > 0.0) {
        ++hm.evaluable;
        hm.positives += t.y[i] > 0.5 ? 1 : 0;
      }
    }
    const auto* hc = calibration ? calibration->find(h) : nullptr;
    if (calibration && !hc)
      rep.notices.push_back("no calibration map for horizon " + csv::format_double(h));
    if (hc) {
      std::vector<double> cal(n);
      for (std::size_t i = 0; i < n; ++i) cal[i] = hc->map.apply(raw[i]);
      hm.auroc = auroc(cal, t.y, t.mask);
      hm.auprc = auprc(cal, t.y, t.mask);
      hm.threshold = hc->youden.threshold;
      hm.confusion = confusion_at(cal, t.y, t.mask, hc->youden.threshold);
      hm.reliability = reliability(cal, t.y, t.mask);
      hm.ece = calibration::expected_calibration_error(cal, t.y, t.mask);
      if (!hm.auroc)
        rep.notices.push_back("single class at horizon " + csv::format_double(h) +
                              ": AUROC/AUPRC missing");
    }
    rep.horizons.push_back(std::move(hm));
  }
  rep.groups = risk_groups(scores, labels, std::min<std::size_t>(3, n));
  return rep;
}

// ---- serialization ----------------------------------------------------------------

namespace {

std::string num(double x) { return csv::format_double(x); }
std::string opt(const std::optional<double>& x) { return x ? num(*x) : "NA"; }

std::optional<double> parse_opt(const std::string& s) {
  if (s == "NA") return std::nullopt;
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ParseError("metrics: bad number '" + s + "'", 0);
  return v;
}

double parse_num(const std::string& s) {
  auto v = parse_opt(s);
  if (!v) throw ParseError("metrics: unexpected NA", 0);
  return *v;
}

std::size_t parse_index(const std::string& s) { return static_cast<std::size_t>(parse_num(s)); }

}  // namespace

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  auto row = [&](const std::string& m, const std::string& h, const std::string& i,
                 const std::string& v) { csv::write_row(os, {m, h, i, v}); };
  row("metric", "horizon", "index", "value");
  row("c_index", "", "", opt(c_index));
  row("ibs", "", "", num(ibs));
  row("ibs_km", "", "", num(ibs_km));
  row("mean_td_auc", "", "", opt(mean_td_auc));
  row("zero_weight", "", "", std::to_string(zero_weight));
  row("calibrated", "", "", calibrated ? "1" : "0");
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const auto ks = std::to_string(k);
    row("grid", "", ks, num(grid[k]));
    row("td_auc", "", ks, opt(td_auc[k]));
    row("brier_t", "", ks, num(brier_grid[k]));
    row("brier_t_km", "", ks, num(brier_grid_km[k]));
  }
  for (std::size_t j = 0; j < horizons.size(); ++j) {
    const auto& h = horizons[j];
    const auto hs = num(h.horizon);
    row("brier", hs, "", num(h.brier));
    row("evaluable", hs, "", std::to_string(h.evaluable));
    row("positives", hs, "", std::to_string(h.positives));
    row("auroc", hs, "", opt(h.auroc));
    row("auprc", hs, "", opt(h.auprc));
    row("threshold", hs, "", opt(h.threshold));
    row("ece", hs, "", opt(h.ece));
    if (h.confusion) {
      row("tp", hs, "", std::to_string(h.confusion->tp));
      row("fp", hs, "", std::to_string(h.confusion->fp));
      row("tn", hs, "", std::to_string(h.confusion->tn));
      row("fn", hs, "", std::to_string(h.confusion->fn));
    }
    for (std::size_t b = 0; b < h.reliability.size(); ++b) {
      const auto& r = h.reliability[b];
      const auto bs = std::to_string(b);
      row("rel_lo", hs, bs, num(r.lo));
      row("rel_hi", hs, bs, num(r.hi));
      row("rel_count", hs, bs, std::to_string(r.count));
      row("rel_predicted", hs, bs, num(r.mean_predicted));
      row("rel_observed", hs, bs, num(r.observed));
    }
  }
  for (std::size_t i = 0; i < groups.group.size(); ++i)
    row("group_member", "", std::to_string(i), std::to_string(groups.group[i]));
  for (std::size_t g = 0; g < groups.curves.size(); ++g) {
    const auto& c = groups.curves[g];
    const auto gs = std::to_string(g);
    row("group_curve", gs, "", std::to_string(c.times.size()));
    for (std::size_t k = 0; k < c.times.size(); ++k) {
      const auto ks = std::to_string(k);
      row("group_time", gs, ks, num(c.times[k]));
      row("group_survival", gs, ks, num(c.survival[k]));
      row("group_at_risk", gs, ks, std::to_string(c.at_risk[k]));
      row("group_events", gs, ks, std::to_string(c.events[k]));
    }
  }
  for (const auto& n : notices) row("notice", "", "", n);
  return os.str();
}

MetricsReport MetricsReport::from_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  const auto table = csv::read(in);
  if (table.header != std::vector<std::string>{"metric", "horizon", "index", "value"})
    throw ParseError("metrics: unexpected header", 0);
  MetricsReport r;
  std::map<std::string, std::size_t> horizon_at;
  auto hz = [&](const std::string& h) -> HorizonMetrics& {
    auto it = horizon_at.find(h);
    if (it == horizon_at.end()) {
      it = horizon_at.emplace(h, r.horizons.size()).first;
      r.horizons.push_back({});
      r.horizons.back().horizon = parse_num(h);
    }
    return r.horizons[it->second];
  };
  auto rel = [&](HorizonMetrics& h, std::size_t b) -> ReliabilityBin& {
    if (h.reliability.size() <= b) h.reliability.resize(b + 1);
    return h.reliability[b];
  };
  auto curve = [&](const std::string& g) -> StepCurve& {
    const auto gi = parse_index(g);
    if (r.groups.curves.size() <= gi) r.groups.curves.resize(gi + 1);
    return r.groups.curves[gi];
  };
  for (const auto& row : table.rows) {
    const auto& m = row[0];
    const auto& h = row[1];
    const auto& v = row[3];
    const std::size_t idx = row[2].empty() ? 0 : parse_index(row[2]);
    if (m == "c_index") r.c_index = parse_opt(v);
    else if (m == "ibs") r.ibs = parse_num(v);
    else if (m == "ibs_km") r.ibs_km = parse_num(v);
    else if (m == "mean_td_auc") r.mean_td_auc = parse_opt(v);
    else if (m == "zero_weight") r.zero_weight = parse_index(v);
    else if (m == "calibrated") r.calibrated = v == "1";
    else if (m == "grid") r.grid.push_back(parse_num(v));
    else if (m == "td_auc") r.td_auc.push_back(parse_opt(v));
    else if (m == "brier_t") r.brier_grid.push_back(parse_num(v));
    else if (m == "brier_t_km") r.brier_grid_km.push_back(parse_num(v));
    else if (m == "brier") hz(h).brier = parse_num(v);
    else if (m == "evaluable") hz(h).evaluable = parse_index(v);
    else if (m == "positives") hz(h).positives = parse_index(v);
    else if (m == "auroc") hz(h).auroc = parse_opt(v);
    else if (m == "auprc") hz(h).auprc = parse_opt(v);
    else if (m == "threshold") hz(h).threshold = parse_opt(v);
    else if (m == "ece") hz(h).ece = parse_opt(v);
    else if (m == "tp" || m == "fp" || m == "tn" || m == "fn") {
      auto& hm = hz(h);
      if (!hm.confusion) hm.confusion = Confusion{};
      auto& c = *hm.confusion;
      (m == "tp" ? c.tp : m == "fp" ? c.fp : m == "tn" ? c.tn : c.fn) = parse_index(v);
    } else if (m == "rel_lo") rel(hz(h), idx).lo = parse_num(v);
    else if (m == "rel_hi") rel(hz(h), idx).hi = parse_num(v);
    else if (m == "rel_count") rel(hz(h), idx).count = parse_index(v);
    else if (m == "rel_predicted") rel(hz(h), idx).mean_predicted = parse_num(v);
    else if (m == "rel_observed") rel(hz(h), idx).observed = parse_num(v);
    else if (m == "group_member") {
      if (r.groups.group.size() <= idx) r.groups.group.resize(idx + 1);
      r.groups.group[idx] = parse_index(v);
    } else if (m == "group_curve") curve(h);
    else if (m == "group_time") curve(h).times.push_back(parse_num(v));
    else if (m == "group_survival") curve(h).survival.push_back(parse_num(v));
    else if (m == "group_at_risk") curve(h).at_risk.push_back(parse_index(v));
    else if (m == "group_events") curve(h).events.push_back(parse_index(v));
    else if (m == "notice") r.notices.push_back(v);
    else throw ParseError("metrics: unknown metric '" + m + "'", 0);
  }
  return r;
}

std::string MetricsReport::groups_csv() const {
  std::ostringstream os;
  csv::write_row(os, {"group", "time", "survival", "at_risk", "events"});
  for (std::size_t g = 0; g < groups.curves.size(); ++g) {
    const auto& c = groups.curves[g];
    csv::write_row(os, {std::to_string(g), "0", "1", "", ""});
    for (std::size_t k = 0; k < c.times.size(); ++k)
      csv::write_row(os, {std::to_string(g), num(c.times[k]), num(c.survival[k]),
                          std::to_string(c.at_risk[k]), std::to_string(c.events[k])});
  }
  return os.str();
}

Summary summarize(std::string metric, std::span<const double> values) {
  Summary s;
  s.metric = std::move(metric);
  s.n = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

std::vector<Summary> aggregate(std::span<const MetricsReport> reports) {
  // Headline metrics only; per-seed detail stays in each report.
  std::vector<std::pair<std::string, std::vector<double>>> cols;
  auto push = [&](const std::string& name, std::optional<double> v) {
    auto it = std::find_if(cols.begin(), cols.end(), [&](auto& c) { return c.first == name; });
    if (it == cols.end()) {
      cols.push_back({name, {}});
      it = cols.end() - 1;
    }
    if (v) it->second.push_back(*v);
  };
  for (const auto& r : reports) {
    push("c_index", r.c_index);
    push("ibs", r.ibs);
    push("ibs_km", r.ibs_km);
    push("mean_td_auc", r.mean_td_auc);
    for (const auto& h : r.horizons) {
      const auto hs = num(h.horizon);
      push("brier@" + hs, h.brier);
      push("auroc@" + hs, h.auroc);
      push("auprc@" + hs, h.auprc);
    }
  }
  std::vector<Summary> out;
  for (const auto& [name, vals] : cols) out.push_back(summarize(name, vals));
  return out;
}

std::string summary_csv(std::span<const Summary> rows) {
  std::ostringstream os;
  csv::write_row(os, {"metric", "mean", "sd", "n"});
  for (const auto& s : rows)
    csv::write_row(os, {s.metric, num(s.mean), num(s.sd), std::to_string(s.n)});
  return os.str();
}

}  // namespace survtx::evaluation
