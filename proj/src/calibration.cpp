#include "survtx/calibration.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "survtx/csv.hpp"
#include "survtx/error.hpp"
#include "survtx/objectives.hpp"

namespace survtx::calibration {

double IsotonicMap::apply(double risk) const {
  if (identity || knots.empty()) return std::clamp(risk, 0.0, 1.0);
  if (risk <= knots.front()) return values.front();
  if (risk >= knots.back()) return values.back();
  const auto i = static_cast<std::size_t>(std::upper_bound(knots.begin(), knots.end(), risk) -
                                          knots.begin());
  const double x0 = knots[i - 1], x1 = knots[i], y0 = values[i - 1], y1 = values[i];
  const double v = y0 + (risk - x0) / (x1 - x0) * (y1 - y0);
  return std::clamp(v, y0, y1);
}

namespace {

void check_lengths(std::size_t a, std::size_t b, std::size_t c, const char* what) {
  if (a != b || a != c) throw DimensionError(std::string(what) + ": input lengths differ");
}

}  // namespace

IsotonicMap fit_isotonic(std::span<const double> risks, std::span<const double> y,
                         std::span<const double> mask, std::span<const double> weights,
                         std::vector<std::string>* warnings) {
  check_lengths(risks.size(), y.size(), mask.size(), "fit_isotonic");
  if (!weights.empty() && weights.size() != risks.size())
    throw DimensionError("fit_isotonic: weight length differs");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < risks.size(); ++i)
    if (mask[i] > 0.0) idx.push_back(i);
  IsotonicMap map;
  std::size_t positives = 0;
  for (auto i : idx) positives += y[i] > 0.5 ? 1 : 0;
  if (idx.size() < 2 || positives == 0 || positives == idx.size()) {
    map.identity = true;
    if (warnings)
      warnings->push_back(idx.size() < 2 ? "fewer than two evaluable subjects; identity calibration"
                                         : "single class among evaluable subjects; identity calibration");
    return map;
  }
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return risks[a] < risks[b]; });

  struct Block {
    double x, sum_wy, sum_w;
    std::size_t first_x, last_x;  // range of distinct abscissae covered
  };
  // Distinct abscissae with pooled weighted label means.
  std::vector<double> xs, wy, w;
  for (auto i : idx) {
    const double wi = weights.empty() ? 1.0 : weights[i];
    if (xs.empty() || risks[i] != xs.back()) {
      xs.push_back(risks[i]);
      wy.push_back(0.0);
      w.push_back(0.0);
    }
    wy.back() += wi * y[i];
    w.back() += wi;
  }
  std::vector<Block> stack;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    stack.push_back({xs[k], wy[k], w[k], k, k});
    while (stack.size() >= 2) {
      auto& b = stack[stack.size() - 1];
      auto& a = stack[stack.size() - 2];
      if (a.sum_wy / a.sum_w <= b.sum_wy / b.sum_w) break;
      a.sum_wy += b.sum_wy;
      a.sum_w += b.sum_w;
      a.last_x = b.last_x;
      stack.pop_back();
    }
  }
  map.knots = xs;
  map.values.resize(xs.size());
  for (const auto& b : stack) {
    const double v = std::clamp(b.sum_wy / b.sum_w, 0.0, 1.0);
    for (std::size_t k = b.first_x; k <= b.last_x; ++k) map.values[k] = v;
  }
  return map;
}

Youden youden_threshold(std::span<const double> risks, std::span<const double> y,
                        std::span<const double> mask, std::vector<std::string>* warnings) {
  check_lengths(risks.size(), y.size(), mask.size(), "youden_threshold");
  std::vector<std::pair<double, bool>> pts;
  for (std::size_t i = 0; i < risks.size(); ++i)
    if (mask[i] > 0.0) pts.emplace_back(risks[i], y[i] > 0.5);
  std::size_t pos = 0;
  for (const auto& p : pts) pos += p.second ? 1 : 0;
  const std::size_t neg = pts.size() - pos;
  if (pos == 0 || neg == 0) {
    if (warnings) warnings->push_back("single class among evaluable subjects; threshold 0.5");
    return {0.5, 0.0, true};
  }
  std::sort(pts.begin(), pts.end());
  std::vector<double> distinct;
  for (const auto& p : pts)
    if (distinct.empty() || p.first != distinct.back()) distinct.push_back(p.first);
  if (distinct.size() == 1) return {distinct.front(), 0.0, false};

  // Sweep candidates ascending; predicted positive are points with risk >= t.
  Youden best{0.0, -2.0, false};
  std::size_t below_pos = 0, below_neg = 0, cursor = 0;
  for (std::size_t k = 0; k + 1 < distinct.size(); ++k) {
    while (cursor < pts.size() && pts[cursor].first <= distinct[k]) {
      (pts[cursor].second ? below_pos : below_neg) += 1;
      ++cursor;
    }
    const double t = 0.5 * (distinct[k] + distinct[k + 1]);
    const double tpr = static_cast<double>(pos - below_pos) / static_cast<double>(pos);
    const double fpr = static_cast<double>(neg - below_neg) / static_cast<double>(neg);
    const double j = tpr - fpr;
    if (j > best.j) best = {t, j, false};
  }
  return best;
}

double expected_calibration_error(std::span<const double> probs, std::span<const double> y,
                                  std::span<const double> mask, std::size_t bins) {
  check_lengths(probs.size(), y.size(), mask.size(), "expected_calibration_error");
  if (bins == 0) throw ContractError("expected_calibration_error: zero bins");
  std::vector<double> sp(bins, 0.0), sy(bins, 0.0);
  std::vector<std::size_t> n(bins, 0);
  std::size_t total = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(mask[i] > 0.0)) continue;
    const double p = std::clamp(probs[i], 0.0, 1.0);
    const auto b = std::min(bins - 1, static_cast<std::size_t>(p * static_cast<double>(bins)));
    sp[b] += p;
    sy[b] += y[i];
    ++n[b];
    ++total;
  }
  if (total == 0) return 0.0;
  double ece = 0.0;
  for (std::size_t b = 0; b < bins; ++b)
    if (n[b]) ece += std::abs(sp[b] - sy[b]) / static_cast<double>(total);
  return ece;
}

HorizonTargets horizon_targets(std::span<const cohort::SurvivalLabel> labels,
                               std::span<const double> bins, double horizon) {
  const double h[] = {horizon};
  const double w[] = {1.0};
  const auto hl = objectives::horizon_labels(labels, bins, h, w);
  return {hl.y, hl.mask};
}

std::vector<double> horizon_risks(std::span<const model::Prediction> predictions,
                                  std::span<const double> bins, double horizon) {
  const auto k = model::horizon_index(bins, horizon);
  std::vector<double> r;
  r.reserve(predictions.size());
  for (const auto& p : predictions) r.push_back(p.cif.at(k));
  return r;
}

Calibration fit_calibration(std::span<const model::Prediction> predictions,
                            std::span<const cohort::SurvivalLabel> labels,
                            std::span<const double> bins, std::span<const double> horizons) {
  if (predictions.size() != labels.size())
    throw DimensionError("fit_calibration: one label per prediction expected");
  Calibration cal;
  for (double h : horizons) {
    HorizonCalibration hc;
    hc.horizon = h;
    const auto t = horizon_targets(labels, bins, h);
    const auto raw = horizon_risks(predictions, bins, h);
    std::vector<std::string> warn;
    hc.map = fit_isotonic(raw, t.y, t.mask, {}, &warn);
    std::vector<double> calibrated;
    for (double r : raw) calibrated.push_back(hc.map.apply(r));
    hc.youden = youden_threshold(calibrated, t.y, t.mask, &warn);
    hc.evaluable = static_cast<std::size_t>(std::count(t.mask.begin(), t.mask.end(), 1.0));
    hc.ece_before = expected_calibration_error(raw, t.y, t.mask);
    hc.ece_after = expected_calibration_error(calibrated, t.y, t.mask);
    for (auto& w : warn) cal.warnings.push_back("horizon " + csv::format_double(h) + ": " + w);
    cal.horizons.push_back(std::move(hc));
  }
  return cal;
}

const HorizonCalibration* Calibration::find(double horizon) const {
  for (const auto& h : horizons)
    if (h.horizon == horizon) return &h;
  return nullptr;
}

namespace {

constexpr std::string_view kHeader = "survtx-calibration 1";

double parse_double(std::string_view s) {
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ParseError("calibration: bad number '" + std::string(s) + "'", 0);
  return v;
}

}  // namespace

std::string Calibration::serialize() const {
  std::ostringstream os;
  os << kHeader << '\n' << horizons.size() << '\n';
  auto d = [](double x) { return csv::format_double(x); };
  for (const auto& h : horizons) {
    os << d(h.horizon) << ' ' << d(h.youden.threshold) << ' ' << d(h.youden.j) << ' '
       << (h.youden.degenerate ? 1 : 0) << ' ' << h.evaluable << ' ' << d(h.ece_before) << ' '
       << d(h.ece_after) << ' ' << (h.map.identity ? 1 : 0) << ' ' << h.map.knots.size();
    for (double x : h.map.knots) os << ' ' << d(x);
    for (double x : h.map.values) os << ' ' << d(x);
    os << '\n';
  }
  for (const auto& w : warnings) os << "warning " << w << '\n';
  return os.str();
}

Calibration Calibration::deserialize(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kHeader)
    throw ParseError("calibration: missing header", 0);
  std::size_t n = 0;
  if (!(in >> n)) throw ParseError("calibration: missing horizon count", 1);
  Calibration cal;
  auto next = [&]() {
    std::string tok;
    if (!(in >> tok)) throw ParseError("calibration: truncated record", 0);
    return tok;
  };
  for (std::size_t i = 0; i < n; ++i) {
    HorizonCalibration h;
    h.horizon = parse_double(next());
    h.youden.threshold = parse_double(next());
    h.youden.j = parse_double(next());
    h.youden.degenerate = next() == "1";
    h.evaluable = static_cast<std::size_t>(parse_double(next()));
    h.ece_before = parse_double(next());
    h.ece_after = parse_double(next());
    h.map.identity = next() == "1";
    const auto k = static_cast<std::size_t>(parse_double(next()));
    h.map.knots.resize(k);
    h.map.values.resize(k);
    for (auto& x : h.map.knots) x = parse_double(next());
    for (auto& x : h.map.values) x = parse_double(next());
    cal.horizons.push_back(std::move(h));
  }
  std::getline(in, line);
  while (std::getline(in, line))
    if (line.rfind("warning ", 0) == 0) cal.warnings.push_back(line.substr(8));
  return cal;
}

}  // namespace survtx::calibration
