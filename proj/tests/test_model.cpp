#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "support/support.hpp"
#include "survtx/error.hpp"
#include "survtx/model.hpp"

using namespace survtx;
using namespace survtx::model;

namespace {

const std::vector<double> kBins{0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0};

std::vector<Prediction> run(const ModelConfig& cfg, std::span<const features::EngineeredHistory> hs,
                            std::uint64_t seed = 0, std::size_t batch = 64) {
  const Model m(cfg);
  return predict(m, m.init(seed), hs, batch);
}

}  // namespace

TEST(VisitDropout, LatestAlwaysKept) {
  Rng rng(0);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(visit_dropout(1, 0.9, rng, Mode::train), std::vector<std::size_t>{0});
    const auto kept = visit_dropout(6, 0.9, rng, Mode::train);
    EXPECT_EQ(kept.back(), 5u);
  }
  EXPECT_EQ(visit_dropout(4, 0.0, rng, Mode::train), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(visit_dropout(4, 0.5, rng, Mode::eval), (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(VisitDropout, EmpiricalRate) {
  Rng rng(11);
  std::vector<std::size_t> dropped(4, 0);
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    const auto kept = visit_dropout(5, 0.15, rng, Mode::train);
    for (std::size_t v = 0; v < 4; ++v)
      if (std::find(kept.begin(), kept.end(), v) == kept.end()) ++dropped[v];
  }
  for (auto d : dropped) EXPECT_NEAR(static_cast<double>(d) / trials, 0.15, 0.02);
}

TEST(RetainedVisits, KeepsMostRecentValid) {
  auto h = fixture::random_histories(1, 3, 0, 1)[0];
  const auto proto = h.visits[0];
  h.visits.assign(40, proto);
  h.visits[39].valid = false;
  const auto idx = retained_visits(h, 32);
  ASSERT_EQ(idx.size(), 32u);
  EXPECT_EQ(idx.front(), 7u);
  EXPECT_EQ(idx.back(), 38u);
}

TEST(Survival, CurveAndHorizon) {
  const std::vector<double> h{0.1, 0.2, 0.3, 0.4, 0.1, 0.1, 0.1, 0.1};
  const auto c = survival_curve(h);
  EXPECT_DOUBLE_EQ(c.survival[0], 0.9);
  EXPECT_DOUBLE_EQ(c.survival[1], 0.72);
  EXPECT_DOUBLE_EQ(c.cif[1], 1.0 - 0.72);
  const auto zero = survival_curve(std::vector<double>(8, 0.0));
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_EQ(zero.survival[k], 1.0);
    EXPECT_EQ(zero.cif[k], 0.0);
  }
  EXPECT_EQ(risk_at_horizon(c.cif, kBins, 2.0), c.cif[3]);
  EXPECT_EQ(risk_at_horizon(c.cif, kBins, 3.5), c.cif[6]);
  EXPECT_EQ(horizon_index(kBins, 0.01), 0u);
  EXPECT_THROW(risk_at_horizon(c.cif, kBins, 6.0), DomainError);
  EXPECT_THROW(risk_at_horizon(c.cif, kBins, 0.0), DomainError);
  EXPECT_THROW(survival_curve(std::vector<double>{0.5, 1.5}), DomainError);
}

TEST(Survival, MixHazards) {
  // Expert-major table: expert 0 = 0.2 everywhere, expert 1 = 0.4 everywhere.
  std::vector<double> expert(2 * 3);
  for (std::size_t k = 0; k < 3; ++k) {
    expert[k] = 0.2;
    expert[3 + k] = 0.4;
  }
  const std::vector<double> gates{0.5, 0.5};
  for (double h : mix_hazards(gates, expert, 3)) EXPECT_NEAR(h, 0.3, 1e-15);
  EXPECT_THROW(mix_hazards(gates, expert, 4), DimensionError);
}

TEST(Forward, ShapesAndInvariants) {
  const auto cfg = fixture::small_model();
  const auto hs = fixture::random_histories(9, 3, 1);
  const auto preds = run(cfg, hs);
  ASSERT_EQ(preds.size(), hs.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    EXPECT_EQ(p.id, hs[i].id);
    EXPECT_EQ(p.gates.size(), cfg.experts);
    EXPECT_EQ(p.hazards.size(), cfg.bin_count());
    EXPECT_EQ(p.expert_hazards.size(), cfg.experts * cfg.bin_count());
    double gsum = 0.0;
    for (double g : p.gates) gsum += g;
    EXPECT_NEAR(gsum, 1.0, 1e-12);
    double wsum = 0.0;
    for (double w : p.pool_weights) wsum += w;
    EXPECT_NEAR(wsum, 1.0, 1e-9);
    EXPECT_EQ(p.visits.size(), hs[i].visits.size());
    if (p.visits.size() == 1) {
      EXPECT_EQ(p.pool_weights[0], 1.0);
    }
    for (std::size_t k = 0; k < cfg.bin_count(); ++k) {
      double lo = 1.0, hi = 0.0;
      for (std::size_t e = 0; e < cfg.experts; ++e) {
        lo = std::min(lo, p.expert_hazards[e * cfg.bin_count() + k]);
        hi = std::max(hi, p.expert_hazards[e * cfg.bin_count() + k]);
      }
      EXPECT_GE(p.hazards[k], lo - 1e-15);
      EXPECT_LE(p.hazards[k], hi + 1e-15);
      EXPECT_NEAR(p.survival[k] + p.cif[k], 1.0, 1e-12);
      if (k > 0) {
        EXPECT_LE(p.cif[k - 1], p.cif[k]);
      }
    }
  }
}

TEST(Forward, EvaluationIsDeterministicAndBatchInvariant) {
  const auto cfg = fixture::small_model();
  const auto hs = fixture::random_histories(7, 3, 2);
  const auto a = run(cfg, hs, 0, 64);
  const auto b = run(cfg, hs, 0, 64);
  const auto c = run(cfg, hs, 0, 1);
  for (std::size_t i = 0; i < hs.size(); ++i) {
    EXPECT_EQ(a[i].hazards, b[i].hazards);
    EXPECT_EQ(a[i].hazards, c[i].hazards);
    EXPECT_EQ(a[i].score, c[i].score);
    EXPECT_EQ(a[i].pool_weights, c[i].pool_weights);
  }
}

TEST(Forward, PaddingVisitsIgnored) {
  const auto cfg = fixture::small_model();
  auto hs = fixture::random_histories(4, 3, 3);
  const auto before = run(cfg, hs);
  for (auto& h : hs) {
    auto pad = h.visits.front();
    pad.valid = false;
    for (auto& z : pad.z) z = 1e3;
    h.visits.insert(h.visits.begin(), pad);
    h.visits.push_back(pad);
  }
  const auto after = run(cfg, hs);
  for (std::size_t i = 0; i < hs.size(); ++i) {
    EXPECT_EQ(before[i].hazards, after[i].hazards);
    EXPECT_EQ(before[i].pool_weights, after[i].pool_weights);
  }
}

TEST(Forward, MixtureOfOneExpert) {
  auto cfg = fixture::small_model();
  cfg.experts = 1;
  for (const auto& p : run(cfg, fixture::random_histories(3, 3, 4))) {
    EXPECT_EQ(p.gates, std::vector<double>{1.0});
    for (std::size_t k = 0; k < cfg.bin_count(); ++k) EXPECT_EQ(p.hazards[k], p.expert_hazards[k]);
  }
}

TEST(Forward, NoDynamicIgnoresChangeAndSlope) {
  auto cfg = fixture::small_model();
  cfg.no_dynamic = true;
  auto hs = fixture::random_histories(5, 3, 5);
  const auto a = run(cfg, hs);
  for (auto& h : hs)
    for (auto& v : h.visits) {
      for (auto& x : v.dz) x += 3.0;
      for (auto& x : v.slope) x -= 2.0;
    }
  const auto b = run(cfg, hs);
  for (std::size_t i = 0; i < hs.size(); ++i) EXPECT_EQ(a[i].hazards, b[i].hazards);
  // Switches do not change parameter shapes.
  EXPECT_EQ(Model(cfg).parameter_shapes(), Model(fixture::small_model()).parameter_shapes());
  cfg.no_fusion = true;
  EXPECT_EQ(Model(cfg).parameter_shapes(), Model(fixture::small_model()).parameter_shapes());
}

TEST(Forward, NoFusionDiffers) {
  auto cfg = fixture::small_model();
  const auto hs = fixture::random_histories(5, 3, 6);
  const auto full = run(cfg, hs);
  cfg.no_fusion = true;
  const auto cls_only = run(cfg, hs);
  bool differs = false;
  for (std::size_t i = 0; i < hs.size(); ++i) differs = differs || full[i].score != cls_only[i].score;
  EXPECT_TRUE(differs);
}

TEST(Forward, MostRecentWindow) {
  auto cfg = fixture::small_model();
  cfg.max_visits = 4;
  auto long_history = fixture::random_histories(1, 3, 7, 1)[0];
  auto proto = long_history.visits[0];
  long_history.visits.clear();
  for (int v = 0; v < 7; ++v) {
    proto.time = v;
    proto.z[0] = v;
    long_history.visits.push_back(proto);
  }
  auto tail = long_history;
  tail.visits.erase(tail.visits.begin(), tail.visits.begin() + 3);
  const std::vector<features::EngineeredHistory> a{long_history}, b{tail};
  EXPECT_EQ(run(cfg, a)[0].hazards, run(cfg, b)[0].hazards);
}

TEST(Forward, TrainModeUsesRng) {
  const auto cfg = fixture::small_model();
  const Model m(cfg);
  const auto params = m.init(0);
  const auto hs = fixture::random_histories(6, 3, 8);
  Graph g1(false), g2(false);
  Rng r1(3), r2(3);
  const auto a = m.forward(g1, params, hs, Mode::train, r1).hazards;
  const auto b = m.forward(g2, params, hs, Mode::train, r2).hazards;
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  Graph g3(false);
  Rng r3(4);
  const auto c = m.forward(g3, params, hs, Mode::train, r3).hazards;
  EXPECT_FALSE(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
}

TEST(Params, InitDeterministicAndChecked) {
  const auto cfg = fixture::small_model();
  const Model m(cfg);
  const auto a = m.init(4), b = m.init(4), c = m.init(5);
  ASSERT_EQ(a.size(), b.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.name(i), b.name(i));
    EXPECT_TRUE(std::equal(a.at(i).data().begin(), a.at(i).data().end(), b.at(i).data().begin()));
    any_diff = any_diff ||
               !std::equal(a.at(i).data().begin(), a.at(i).data().end(), c.at(i).data().begin());
  }
  EXPECT_TRUE(any_diff);
  auto other = fixture::small_model();
  other.d_model = 8;
  EXPECT_THROW(m.check(Model(other).init(0)), ContractError);
  EXPECT_NO_THROW(m.check(a));
  EXPECT_THROW(Model(ModelConfig{}), ContractError);  // no numeric features
}

TEST(Forward, RejectsEmptyInputs) {
  const auto cfg = fixture::small_model();
  const Model m(cfg);
  const auto params = m.init(0);
  Graph g(false);
  Rng rng(0);
  EXPECT_THROW(m.forward(g, params, {}, Mode::eval, rng), ContractError);
  auto h = fixture::random_histories(1, 3, 0);
  for (auto& v : h[0].visits) v.valid = false;
  EXPECT_THROW(m.forward(g, params, h, Mode::eval, rng), ContractError);
  auto wrong = fixture::random_histories(1, 2, 0);
  EXPECT_THROW(m.forward(g, params, wrong, Mode::eval, rng), DimensionError);
}
