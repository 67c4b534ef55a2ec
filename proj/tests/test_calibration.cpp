#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "support/support.hpp"
#include "survtx/calibration.hpp"
#include "survtx/error.hpp"

using namespace survtx;
using namespace survtx::calibration;

namespace {

std::vector<double> ones(std::size_t n) { return std::vector<double>(n, 1.0); }

// Isotonic fit via the max-min formula over blocks of distinct abscissae.
std::vector<double> minmax_isotonic(const std::vector<double>& x, const std::vector<double>& y) {
  std::map<double, std::pair<double, double>> groups;  // x -> (sum y, count)
  for (std::size_t i = 0; i < x.size(); ++i) {
    groups[x[i]].first += y[i];
    groups[x[i]].second += 1.0;
  }
  std::vector<double> sy, n;
  for (const auto& [_, v] : groups) {
    sy.push_back(v.first);
    n.push_back(v.second);
  }
  const std::size_t m = sy.size();
  std::vector<double> fit(m);
  for (std::size_t i = 0; i < m; ++i) {
    double best = -1e300;
    for (std::size_t j = 0; j <= i; ++j) {
      double lo = 1e300;
      for (std::size_t k = i; k < m; ++k) {
        double s = 0.0, c = 0.0;
        for (std::size_t t = j; t <= k; ++t) {
          s += sy[t];
          c += n[t];
        }
        lo = std::min(lo, s / c);
      }
      best = std::max(best, lo);
    }
    fit[i] = best;
  }
  return fit;
}

}  // namespace

TEST(Isotonic, Examples) {
  const std::vector<double> r{0.1, 0.9}, y{0, 1};
  const auto m = fit_isotonic(r, y, ones(2));
  EXPECT_EQ(m.knots, r);
  EXPECT_EQ(m.values, y);
  EXPECT_EQ(m.apply(0.05), 0.0);
  EXPECT_EQ(m.apply(0.9), 1.0);
  EXPECT_DOUBLE_EQ(m.apply(0.5), 0.5);
  EXPECT_DOUBLE_EQ(m.apply(0.3), 0.25);

  const std::vector<double> r2{0.2, 0.8}, y2{1, 0};
  const auto pooled = fit_isotonic(r2, y2, ones(2));
  EXPECT_EQ(pooled.values, (std::vector<double>{0.5, 0.5}));
}

TEST(Isotonic, SingleClassIsIdentity) {
  std::vector<std::string> warnings;
  const std::vector<double> r{0.2, 0.4, 0.6}, y{1, 1, 1};
  const auto m = fit_isotonic(r, y, ones(3), {}, &warnings);
  EXPECT_TRUE(m.identity);
  EXPECT_EQ(m.apply(0.37), 0.37);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Isotonic, MatchesMinMaxOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 5 + rng.below(25);
    std::vector<double> x(n), y(n), mask(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = std::round(rng.uniform() * 20.0) / 20.0;  // ties likely
      y[i] = rng.bernoulli(x[i]) ? 1.0 : 0.0;
      mask[i] = rng.bernoulli(0.85) ? 1.0 : 0.0;
    }
    std::vector<double> xm, ym;
    for (std::size_t i = 0; i < n; ++i)
      if (mask[i] > 0) {
        xm.push_back(x[i]);
        ym.push_back(y[i]);
      }
    const auto m = fit_isotonic(x, y, mask);
    if (m.identity) continue;
    const auto expect = minmax_isotonic(xm, ym);
    ASSERT_EQ(m.values.size(), expect.size());
    for (std::size_t k = 0; k < expect.size(); ++k) EXPECT_NEAR(m.values[k], expect[k], 1e-12);
    double prev = -1.0;
    for (double q = -0.1; q <= 1.1; q += 0.001) {
      const double v = m.apply(q);
      EXPECT_GE(v, prev);
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      prev = v;
    }
  }
}

TEST(Youden, SeparatedAndDegenerate) {
  const std::vector<double> r{0.1, 0.2, 0.3, 0.7, 0.8}, y{0, 0, 0, 1, 1};
  const auto yd = youden_threshold(r, y, ones(5));
  EXPECT_GT(yd.threshold, 0.3);
  EXPECT_LT(yd.threshold, 0.7);
  EXPECT_EQ(yd.j, 1.0);

  const std::vector<double> same{0.4, 0.4, 0.4};
  const auto eq = youden_threshold(same, std::vector<double>{0, 1, 0}, ones(3));
  EXPECT_EQ(eq.j, 0.0);

  std::vector<std::string> warnings;
  const auto one = youden_threshold(r, std::vector<double>(5, 1.0), ones(5), &warnings);
  EXPECT_TRUE(one.degenerate);
  EXPECT_EQ(one.threshold, 0.5);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Youden, MatchesExhaustiveSearch) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 50;
    std::vector<double> r(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = std::round(rng.uniform() * 30.0) / 30.0;
      y[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
    }
    std::vector<double> sorted = r;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    double best_t = 0.0, best_j = -2.0;
    for (std::size_t k = 0; k + 1 < sorted.size(); ++k) {
      const double t = 0.5 * (sorted[k] + sorted[k + 1]);
      double tp = 0, fp = 0, p = 0, q = 0;
      for (std::size_t i = 0; i < n; ++i) {
        (y[i] > 0 ? p : q) += 1;
        if (r[i] >= t) (y[i] > 0 ? tp : fp) += 1;
      }
      const double j = tp / p - fp / q;
      if (j > best_j) {
        best_j = j;
        best_t = t;
      }
    }
    const auto yd = youden_threshold(r, y, ones(n));
    EXPECT_EQ(yd.threshold, best_t);
    EXPECT_NEAR(yd.j, best_j, 1e-12);
  }
}

TEST(Ece, HandValue) {
  // Bin [0.1, 0.2): mean p 0.15, observed 0.5; bin [0.9, 1]: mean p 0.95, observed 1.
  const std::vector<double> p{0.1, 0.2 - 1e-9, 0.9, 1.0}, y{0, 1, 1, 1};
  const double expect = (std::abs(0.1 + 0.2 - 1e-9 - 1.0) + std::abs(1.9 - 2.0)) / 4.0;
  EXPECT_NEAR(expected_calibration_error(p, y, ones(4)), expect, 1e-12);
  EXPECT_EQ(expected_calibration_error(p, y, std::vector<double>(4, 0.0)), 0.0);
}

TEST(Calibration, FitAndSerialize) {
  const auto hs = fixture::random_histories(40, 3, 5);
  const model::Model m(fixture::small_model());
  const auto preds = model::predict(m, m.init(1), hs);
  const auto labels = training::labels_of(hs);
  const std::vector<double> bins = fixture::small_model().bins, horizons{1, 2, 3, 5};
  const auto cal = fit_calibration(preds, labels, bins, horizons);
  ASSERT_EQ(cal.horizons.size(), 4u);
  for (const auto& hc : cal.horizons) {
    EXPECT_LE(hc.ece_after, hc.ece_before + 1e-12);
    for (std::size_t k = 1; k < hc.map.values.size(); ++k)
      EXPECT_LE(hc.map.values[k - 1], hc.map.values[k]);
  }
  const auto back = Calibration::deserialize(cal.serialize());
  EXPECT_EQ(back.serialize(), cal.serialize());
  ASSERT_NE(back.find(5.0), nullptr);
  EXPECT_EQ(back.find(5.0)->map.values, cal.find(5.0)->map.values);
  EXPECT_EQ(back.find(4.0), nullptr);
}
