#include <gtest/gtest.h>

#include <cmath>

#include "support/support.hpp"
#include "survtx/error.hpp"
#include "survtx/evaluation.hpp"

using namespace survtx;
using namespace survtx::evaluation;

namespace {

struct Instance {
  std::vector<double> scores;
  std::vector<SurvivalLabel> labels;
};

Instance random_instance(Rng& rng, std::size_t n) {
  Instance in;
  for (std::size_t i = 0; i < n; ++i) {
    in.scores.push_back(std::round(rng.uniform() * 8.0) / 8.0);  // ties on purpose
    in.labels.push_back({std::round(rng.uniform(0.1, 5.0) * 2.0) / 2.0 + 0.5, rng.bernoulli(0.5)});
  }
  return in;
}

}  // namespace

TEST(KaplanMeier, HandProducts) {
  const std::vector<SurvivalLabel> none{{1, false}, {2, false}};
  EXPECT_EQ(kaplan_meier(none).at(10.0), 1.0);

  const std::vector<SurvivalLabel> two{{1, true}, {2, true}};
  const auto km2 = kaplan_meier(two);
  EXPECT_EQ(km2.at(0.5), 1.0);
  EXPECT_NEAR(km2.at(1.0), 0.5, 1e-9);
  EXPECT_NEAR(km2.at(2.0), 0.0, 1e-9);
  EXPECT_NEAR(km2.left_limit(2.0), 0.5, 1e-9);

  const std::vector<SurvivalLabel> three{{1, true}, {1.5, false}, {2, true}};
  const auto km3 = kaplan_meier(three);
  EXPECT_NEAR(km3.at(1.7), 2.0 / 3.0, 1e-9);
  EXPECT_NEAR(km3.at(2.0), 0.0, 1e-9);
  EXPECT_EQ(km3.at_risk, (std::vector<std::size_t>{3, 1}));

  // Four subjects with a tied event time: S(1) = 1 - 2/4, S(3) = 0.5 * (1 - 1/1).
  const std::vector<SurvivalLabel> four{{1, true}, {1, true}, {2, false}, {3, true}};
  const auto km4 = kaplan_meier(four);
  EXPECT_NEAR(km4.at(1.0), 0.5, 1e-9);
  EXPECT_NEAR(km4.at(2.5), 0.5, 1e-9);
  EXPECT_NEAR(km4.at(3.0), 0.0, 1e-9);

  EXPECT_THROW(kaplan_meier({}), ContractError);
  const std::vector<SurvivalLabel> bad{{0.0, true}};
  EXPECT_THROW(kaplan_meier(bad), ContractError);
}

TEST(Brier, FourSubjectIpcw) {
  // T = (1, 2, 3, 4), events at 1 and 3. Censoring KM: G = 1 before 2, 2/3 on [2, 4), 0 from 4.
  const std::vector<SurvivalLabel> l{{1, true}, {2, false}, {3, true}, {4, false}};
  const std::vector<double> f{0.8, 0.4, 0.3, 0.1};
  const auto g = censoring_km(l);
  EXPECT_NEAR(g.at(1.5), 1.0, 1e-12);
  EXPECT_NEAR(g.at(2.5), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(g.at(4.0), 0.0, 1e-12);
  // t = 2.5: 0.2^2/1 + 0.3^2/(2/3) + 0.1^2/(2/3), over 4.
  EXPECT_NEAR(brier(f, l, 2.5, g).value, (0.04 + 0.135 + 0.015) / 4.0, 1e-9);
  // t = 3.5: subject 3 is now a case weighted by G(3-) = 2/3.
  EXPECT_NEAR(brier(f, l, 3.5, g).value, (0.04 + 0.49 * 1.5 + 0.015) / 4.0, 1e-9);
  // t = 4.5: subject 4 is censored before t and nobody remains at risk.
  const auto late = brier(f, l, 4.5, g);
  EXPECT_NEAR(late.value, (0.04 + 0.735) / 4.0, 1e-9);
  EXPECT_EQ(late.zero_weight, 0u);
  const std::vector<SurvivalLabel> tail{{1, true}, {2, false}, {3, true}, {4, false}, {5, true}};
  const std::vector<double> f5{0.8, 0.4, 0.3, 0.1, 0.9};
  // Censoring KM: 3/4 after the loss at 2, 3/8 after the loss at 4.
  const auto t5 = brier(f5, tail, 5.0, censoring_km(tail));
  EXPECT_NEAR(t5.value, (0.04 + 0.49 / 0.75 + 0.01 / 0.375) / 5.0, 1e-9);
  EXPECT_EQ(t5.zero_weight, 0u);
}

TEST(Brier, NoCensoringIsMeanSquaredError) {
  const std::vector<SurvivalLabel> l{{1, true}, {2, true}, {3, true}};
  const std::vector<double> f{0.9, 0.2, 0.6};
  const double mse = (0.01 + 0.64 + 0.36) / 3.0;
  EXPECT_NEAR(brier(f, l, 2.5, censoring_km(l)).value, mse, 1e-12);
  const std::vector<double> perfect{1, 1, 0};
  EXPECT_EQ(brier(perfect, l, 2.5, censoring_km(l)).value, 0.0);
}

TEST(Trapezoid, Average) {
  const std::vector<double> grid{0, 1, 3}, v{1, 3, 3};
  EXPECT_DOUBLE_EQ(integrate_trapezoid(grid, v), (2.0 + 6.0) / 3.0);
}

TEST(Harrell, ExamplesAndOracle) {
  const std::vector<SurvivalLabel> l{{1, true}, {2, true}, {3, true}};
  EXPECT_EQ(harrell_c(std::vector<double>{3, 2, 1}, l), 1.0);
  EXPECT_EQ(harrell_c(std::vector<double>{1, 1, 1}, l), 0.5);
  const std::vector<SurvivalLabel> censored{{1, false}, {2, false}};
  EXPECT_FALSE(harrell_c(std::vector<double>{1, 2}, censored).has_value());

  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const auto in = random_instance(rng, 2 + rng.below(29));
    EXPECT_EQ(harrell_c(in.scores, in.labels), fixture::brute_harrell(in.scores, in.labels));
    std::vector<double> transformed;
    for (double s : in.scores) transformed.push_back(std::exp(3.0 * s) - 7.0);
    EXPECT_EQ(harrell_c(transformed, in.labels), harrell_c(in.scores, in.labels));
  }
}

TEST(TdAuc, ExamplesAndOracle) {
  const std::vector<SurvivalLabel> l{{1, true}, {2, true}, {4, false}, {5, true}};
  EXPECT_EQ(td_auc(std::vector<double>{0.9, 0.8, 0.1, 0.2}, l, 2.0), 1.0);
  EXPECT_EQ(td_auc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, l, 2.0), 0.5);
  EXPECT_FALSE(td_auc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, l, 0.5).has_value());

  Rng rng(22);
  for (int trial = 0; trial < 50; ++trial) {
    const auto in = random_instance(rng, 2 + rng.below(29));
    for (double t : {1.0, 2.0, 3.0, 5.0})
      EXPECT_EQ(td_auc(in.scores, in.labels, t), fixture::brute_td_auc(in.scores, in.labels, t));
  }
}

TEST(HorizonClassification, ExamplesAndOracles) {
  const std::vector<double> y{0, 0, 1, 1}, mask{1, 1, 1, 1};
  const std::vector<double> sep{0.1, 0.2, 0.8, 0.9};
  EXPECT_EQ(auroc(sep, y, mask), 1.0);
  EXPECT_EQ(auprc(sep, y, mask), 1.0);
  EXPECT_FALSE(auroc(sep, std::vector<double>(4, 1.0), mask).has_value());
  EXPECT_FALSE(auprc(sep, std::vector<double>(4, 0.0), mask).has_value());
  const auto c = confusion_at(sep, y, mask, 0.5);
  EXPECT_EQ(c.tp, 2u);
  EXPECT_EQ(c.tn, 2u);
  EXPECT_EQ(c.fp + c.fn, 0u);

  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(29);
    std::vector<double> s(n), yy(n), m(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::round(rng.uniform() * 10.0) / 10.0;
      yy[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
      m[i] = rng.bernoulli(0.8) ? 1.0 : 0.0;
    }
    EXPECT_EQ(auroc(s, yy, m), fixture::brute_auroc(s, yy, m));
    EXPECT_EQ(auprc(s, yy, m), fixture::sweep_auprc(s, yy, m));
  }
}

TEST(HorizonClassification, RandomScoresNearPrevalence) {
  Rng rng(24);
  const std::size_t n = 20000;
  std::vector<double> s(n), y(n), m(n, 1.0);
  double pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = rng.uniform();
    y[i] = rng.bernoulli(0.3) ? 1.0 : 0.0;
    pos += y[i];
  }
  EXPECT_NEAR(*auprc(s, y, m), pos / n, 0.02);
}

TEST(RiskGroups, TiesAndSizes) {
  const std::vector<SurvivalLabel> l(9, {1.0, true});
  const auto same = risk_groups(std::vector<double>(9, 0.5), l, 3);
  for (auto g : same.group) EXPECT_EQ(g, 0u);
  std::vector<double> s{5, 3, 8, 1, 9, 2, 7, 4, 6, 10};
  const std::vector<SurvivalLabel> l10(10, {1.0, false});
  const auto rg = risk_groups(s, l10, 3);
  std::vector<std::size_t> size(3, 0);
  for (auto g : rg.group) ++size[g];
  EXPECT_LE(*std::max_element(size.begin(), size.end()) - *std::min_element(size.begin(), size.end()), 1u);
  EXPECT_EQ(rg.group[3], 0u);  // score 1
  EXPECT_EQ(rg.group[9], 2u);  // score 10
}

TEST(Summaries, SampleStandardDeviation) {
  const std::vector<double> v{0.8, 0.9, 1.0};
  const auto s = summarize("c", v);
  EXPECT_NEAR(s.mean, 0.9, 1e-12);
  EXPECT_NEAR(s.sd, 0.1, 1e-12);
  EXPECT_EQ(summarize("c", std::vector<double>{0.7}).sd, 0.0);
}

TEST(Evaluate, PlumbingAndRoundTrip) {
  const auto hs = fixture::random_histories(30, 3, 9);
  const model::Model m(fixture::small_model());
  const auto preds = model::predict(m, m.init(2), hs);
  const auto labels = training::labels_of(hs);
  const auto bins = fixture::small_model().bins;
  const std::vector<double> horizons{1, 2, 3, 5};
  const auto km = kaplan_meier(labels);
  const auto plain = evaluate(preds, labels, bins, horizons, km, nullptr);
  std::vector<double> q;
  for (const auto& p : preds) q.push_back(p.score);
  EXPECT_EQ(plain.c_index, harrell_c(q, labels));
  EXPECT_FALSE(plain.calibrated);
  EXPECT_FALSE(plain.horizons[0].auroc.has_value());
  EXPECT_FALSE(plain.notices.empty());

  const auto cal = calibration::fit_calibration(preds, labels, bins, horizons);
  const auto full = evaluate(preds, labels, bins, horizons, km, &cal);
  EXPECT_TRUE(full.calibrated);
  const auto text = full.to_csv();
  EXPECT_EQ(MetricsReport::from_csv(text).to_csv(), text);
  const auto again = evaluate(preds, labels, bins, horizons, km, &cal);
  EXPECT_EQ(again.to_csv(), text);

  const std::vector<MetricsReport> reps{plain, full};
  const auto agg = aggregate(reps);
  bool found = false;
  for (const auto& s : agg)
    if (s.metric == "c_index") {
      found = true;
      EXPECT_EQ(s.n, 2u);
      EXPECT_EQ(s.sd, 0.0);
    }
  EXPECT_TRUE(found);
}

TEST(Evaluate, OracleBeatsMarginalOnSynthetic) {
  synthetic::SyntheticSpec spec;
  spec.subjects = 400;
  const auto gen = synthetic::generate(spec, 5);
  std::vector<SurvivalLabel> labels;
  std::vector<model::Prediction> oracle;
  for (const auto& s : gen.truth.subjects) {
    const bool event = s.observed_event;
    double t = event ? s.event_time : std::min(s.censor_time, spec.censor_max);
    labels.push_back({t, event});
    model::Prediction p;
    p.cif = s.cif;
    p.score = s.cif.back();
    oracle.push_back(p);
  }
  const auto km = kaplan_meier(labels);
  const auto rep = evaluate(oracle, labels, spec.bins, std::vector<double>{1, 2, 3, 5}, km, nullptr);
  EXPECT_LT(rep.ibs, rep.ibs_km);
  // High-risk tercile has the lowest two-year survival.
  EXPECT_LT(rep.groups.curves[2].at(2.0), rep.groups.curves[0].at(2.0));
}
