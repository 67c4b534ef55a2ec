#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "survtx/rng.hpp"

namespace survtx::fixture {

std::optional<double> brute_harrell(std::span<const double> scores,
                                    std::span<const cohort::SurvivalLabel> labels) {
  double credit = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (!labels[i].event || !(labels[i].time < labels[j].time)) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) credit += 1.0;
      else if (scores[i] == scores[j]) credit += 0.5;
    }
  if (pairs == 0.0) return std::nullopt;
  return credit / pairs;
}

std::optional<double> brute_td_auc(std::span<const double> risks,
                                   std::span<const cohort::SurvivalLabel> labels, double t) {
  double credit = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!(labels[i].event && labels[i].time <= t)) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (!(labels[j].time > t)) continue;
      pairs += 1.0;
      if (risks[i] > risks[j]) credit += 1.0;
      else if (risks[i] == risks[j]) credit += 0.5;
    }
  }
  if (pairs == 0.0) return std::nullopt;
  return credit / pairs;
}

std::optional<double> brute_auroc(std::span<const double> scores, std::span<const double> y,
                                  std::span<const double> mask) {
  double credit = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (mask[i] == 0.0 || y[i] != 1.0) continue;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (mask[j] == 0.0 || y[j] != 0.0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) credit += 1.0;
      else if (scores[i] == scores[j]) credit += 0.5;
    }
  }
  if (pairs == 0.0) return std::nullopt;
  return credit / pairs;
}

std::optional<double> sweep_auprc(std::span<const double> scores, std::span<const double> y,
                                  std::span<const double> mask) {
  std::vector<double> thresholds;
  double positives = 0.0, negatives = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (mask[i] == 0.0) continue;
    thresholds.push_back(scores[i]);
    (y[i] == 1.0 ? positives : negatives) += 1.0;
  }
  if (positives == 0.0 || negatives == 0.0) return std::nullopt;
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double ap = 0.0, prev_recall = 0.0;
  for (double th : thresholds) {
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (mask[i] == 0.0 || scores[i] < th) continue;
      (y[i] == 1.0 ? tp : fp) += 1.0;
    }
    const double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
  }
  return ap;
}

std::vector<double> matmul_ref(std::span<const double> a, std::span<const double> b,
                               std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t r = 0; r < k; ++r) c[i * n + j] += a[i * k + r] * b[r * n + j];
  return c;
}

// ---- gradient checks -------------------------------------------------------------------

namespace {

using ad::Graph;
using ad::Tensor;

std::vector<double> random_values(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Values kept away from kinks so central differences stay valid.
std::vector<double> away_from_zero(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 1.5);
  return v;
}

// Weighted sum so every output entry carries a distinct cotangent.
Tensor project(Graph& g, const Tensor& y, std::uint64_t seed) {
  Rng rng(seed ^ 0x5eedULL);
  return ad::sum(g, ad::mul(g, y, Tensor::constant(y.shape(), random_values(rng, y.size(), -1, 1))));
}

}  // namespace

std::vector<GradResult> op_gradient_checks(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "gradcheck");
  std::vector<GradResult> out;
  auto check = [&](const std::string& name, const ad::ScalarFn& f, std::vector<double> x,
                   ad::Shape shape) {
    out.push_back({name, ad::grad_check(f, Tensor::parameter(std::move(shape), std::move(x)), 1e-5)});
  };
  const std::uint64_t ps = rng.next();
  const Tensor b34 = Tensor::constant({3, 4}, random_values(rng, 12, -1, 1));
  const Tensor b4 = Tensor::constant({4}, random_values(rng, 4, -1, 1));
  const Tensor w45 = Tensor::constant({4, 5}, random_values(rng, 20, -1, 1));

  check("matmul(left)", [&](Graph& g, const Tensor& x) { return project(g, ad::matmul(g, x, w45), ps); },
        random_values(rng, 12, -1, 1), {3, 4});
  check("matmul(right)", [&](Graph& g, const Tensor& x) { return project(g, ad::matmul(g, b34, x), ps); },
        random_values(rng, 20, -1, 1), {4, 5});
  check("add", [&](Graph& g, const Tensor& x) { return project(g, ad::add(g, x, b34), ps); },
        random_values(rng, 12, -1, 1), {3, 4});
  check("add(broadcast)", [&](Graph& g, const Tensor& x) { return project(g, ad::add(g, b34, x), ps); },
        random_values(rng, 4, -1, 1), {4});
  check("sub", [&](Graph& g, const Tensor& x) { return project(g, ad::sub(g, b34, x), ps); },
        random_values(rng, 12, -1, 1), {3, 4});
  check("mul", [&](Graph& g, const Tensor& x) { return project(g, ad::mul(g, x, x), ps); },
        random_values(rng, 12, -1, 1), {3, 4});
  check("mul(broadcast)", [&](Graph& g, const Tensor& x) { return project(g, ad::mul(g, b34, x), ps); },
        random_values(rng, 4, -1, 1), {4});
  check("sigmoid", [&](Graph& g, const Tensor& x) { return project(g, ad::sigmoid(g, x), ps); },
        random_values(rng, 12, -4, 4), {3, 4});
  check("relu", [&](Graph& g, const Tensor& x) { return project(g, ad::relu(g, x), ps); },
        away_from_zero(rng, 12), {3, 4});
  check("log", [&](Graph& g, const Tensor& x) { return project(g, ad::log(g, x), ps); },
        random_values(rng, 12, 0.2, 3), {3, 4});
  check("exp", [&](Graph& g, const Tensor& x) { return project(g, ad::exp(g, x), ps); },
        random_values(rng, 12, -2, 2), {3, 4});
  check("neg", [&](Graph& g, const Tensor& x) { return project(g, ad::neg(g, x), ps); },
        random_values(rng, 12, -1, 1), {3, 4});
  check("scale", [&](Graph& g, const Tensor& x) { return project(g, ad::scale(g, x, -2.5), ps); },
        random_values(rng, 12, -1, 1), {3, 4});
  check("shift", [&](Graph& g, const Tensor& x) { return project(g, ad::mul(g, ad::shift(g, x, 0.7), x), ps); },
        random_values(rng, 12, -1, 1), {3, 4});
  check("square", [&](Graph& g, const Tensor& x) { return project(g, ad::square(g, x), ps); },
        random_values(rng, 12, -1, 1), {3, 4});
  check("pow", [&](Graph& g, const Tensor& x) { return project(g, ad::pow(g, x, 1.5), ps); },
        random_values(rng, 12, 0.2, 2), {3, 4});
  check("softplus", [&](Graph& g, const Tensor& x) { return project(g, ad::softplus(g, x), ps); },
        random_values(rng, 12, -4, 4), {3, 4});
  std::vector<double> around_bounds(12);
  for (std::size_t i = 0; i < 12; ++i)
    around_bounds[i] = (i % 2 ? 1.0 : -1.0) * (i % 4 < 2 ? rng.uniform(0.0, 0.4) : rng.uniform(0.6, 1.2));
  check("clamp", [&](Graph& g, const Tensor& x) { return project(g, ad::clamp(g, x, -0.5, 0.5), ps); },
        around_bounds, {3, 4});
  check("softmax(axis 1)", [&](Graph& g, const Tensor& x) { return project(g, ad::softmax(g, x, 1), ps); },
        random_values(rng, 12, -2, 2), {3, 4});
  check("softmax(axis 0)", [&](Graph& g, const Tensor& x) { return project(g, ad::softmax(g, x, 0), ps); },
        random_values(rng, 12, -2, 2), {3, 4});
  const Tensor gain = Tensor::constant({4}, random_values(rng, 4, 0.5, 1.5));
  check("layer_norm(x)", [&](Graph& g, const Tensor& x) { return project(g, ad::layer_norm(g, x, gain, b4), ps); },
        random_values(rng, 12, -2, 2), {3, 4});
  const Tensor lx = Tensor::constant({3, 4}, random_values(rng, 12, -2, 2));
  check("layer_norm(gain)", [&](Graph& g, const Tensor& x) { return project(g, ad::layer_norm(g, lx, x, b4), ps); },
        random_values(rng, 4, 0.5, 1.5), {4});
  check("layer_norm(bias)", [&](Graph& g, const Tensor& x) { return project(g, ad::layer_norm(g, lx, gain, x), ps); },
        random_values(rng, 4, -1, 1), {4});
  check("layer_norm+softmax", [&](Graph& g, const Tensor& x) {
          return project(g, ad::softmax(g, ad::layer_norm(g, x, gain, b4), 1), ps);
        },
        random_values(rng, 12, -2, 2), {3, 4});
  const std::vector<std::size_t> idx{0, 2, 2, 4, 1};
  check("embedding", [&](Graph& g, const Tensor& x) { return project(g, ad::embedding_lookup(g, x, idx), ps); },
        random_values(rng, 15, -1, 1), {5, 3});
  check("concat_cols", [&](Graph& g, const Tensor& x) { return project(g, ad::concat_cols(g, {x, b34, x}), ps); },
        random_values(rng, 12, -1, 1), {3, 4});
  check("concat_rows", [&](Graph& g, const Tensor& x) { return project(g, ad::concat_rows(g, {b34, x}), ps); },
        random_values(rng, 8, -1, 1), {2, 4});
  check("reshape", [&](Graph& g, const Tensor& x) { return project(g, ad::reshape(g, ad::square(g, x), {4, 3}), ps); },
        random_values(rng, 12, -1, 1), {3, 4});
  check("sum", [&](Graph& g, const Tensor& x) { return ad::sum(g, ad::square(g, x)); },
        random_values(rng, 12, -1, 1), {3, 4});
  check("mean", [&](Graph& g, const Tensor& x) { return ad::mean(g, ad::square(g, x)); },
        random_values(rng, 12, -1, 1), {3, 4});
  check("dropout", [&](Graph& g, const Tensor& x) {
          Rng d(seed);  // same mask on every evaluation
          return project(g, ad::dropout(g, x, 0.3, d), ps);
        },
        random_values(rng, 12, -1, 1), {3, 4});
  const std::vector<ad::Segment> segs{{0, 3}, {3, 1}, {4, 2}};
  check("attention", [&](Graph& g, const Tensor& x) {
          return project(g, ad::multi_head_attention(g, x, segs, 2), ps);
        },
        random_values(rng, 6 * 12, -1, 1), {6, 12});
  const Tensor query = Tensor::constant({4}, random_values(rng, 4, -1, 1));
  const std::vector<std::vector<std::size_t>> pool_rows{{0, 1, 2}, {4}, {3, 5}};
  check("attention_pool(x)", [&](Graph& g, const Tensor& x) {
          return project(g, ad::attention_pool(g, x, query, pool_rows), ps);
        },
        random_values(rng, 24, -1, 1), {6, 4});
  const Tensor px = Tensor::constant({6, 4}, random_values(rng, 24, -1, 1));
  check("attention_pool(query)", [&](Graph& g, const Tensor& x) {
          return project(g, ad::attention_pool(g, px, x, pool_rows), ps);
        },
        random_values(rng, 4, -1, 1), {4});
  return out;
}

ModelConfig small_model() {
  ModelConfig m;
  m.d_model = 16;
  m.heads = 2;
  m.ff_dim = 24;
  m.experts = 3;
  m.cat_embed_dim = 4;
  m.numeric_features = 3;
  m.vocab_sizes = {5, 6};
  return m;
}

std::vector<features::EngineeredHistory> random_histories(std::size_t n, std::size_t p,
                                                          std::uint64_t seed,
                                                          std::size_t max_visits) {
  Rng rng = Rng::stream(seed, "histories");
  std::vector<features::EngineeredHistory> out;
  for (std::size_t i = 0; i < n; ++i) {
    features::EngineeredHistory h;
    h.id = "S" + std::to_string(i);
    const std::size_t L = 1 + static_cast<std::size_t>(rng.below(max_visits));
    double t = 0.0;
    std::vector<double> first;
    for (std::size_t v = 0; v < L; ++v) {
      features::EngineeredVisit ev;
      if (v > 0) {
        ev.gap = rng.uniform(0.2, 1.0);
        t += ev.gap;
      }
      ev.time = t;
      for (std::size_t j = 0; j < p; ++j) {
        const double z = rng.normal();
        if (v == 0) first.push_back(z);
        ev.z.push_back(z);
        ev.dz.push_back(z - first[j]);
        ev.slope.push_back((z - first[j]) / std::max(t, features::kMinSlopeTime));
        ev.mask.push_back(rng.bernoulli(0.9) ? 1.0 : 0.0);
      }
      ev.categories = {static_cast<std::size_t>(rng.below(5)), static_cast<std::size_t>(rng.below(6))};
      h.visits.push_back(std::move(ev));
    }
    h.label.time = t + rng.uniform(0.1, 2.5);
    h.label.event = rng.bernoulli(0.5);
    out.push_back(std::move(h));
  }
  return out;
}

double end_to_end_gradient_error(std::uint64_t seed, std::size_t count) {
  const auto cfg = small_model();
  const model::Model net(cfg);
  auto params = net.init(seed);
  const auto batch = random_histories(8, cfg.numeric_features, seed);
  std::vector<cohort::SurvivalLabel> labels;
  for (const auto& h : batch) labels.push_back(h.label);
  const auto ctx = objectives::make_context(cfg, LossWeights{}, labels);

  auto loss = [&](bool record) {
    Graph g(record);
    Rng rng = Rng::stream(seed, "dropout");
    const auto out = net.forward(g, params, batch, model::Mode::train, rng);
    auto terms = objectives::total_loss(g, out, labels, ctx);
    if (record) g.backward(terms.total);
    return terms.total.item();
  };
  params.zero_grad();
  loss(true);

  Rng pick = Rng::stream(seed, "pick");
  double worst = 0.0;
  const double eps = 1e-5;
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t ti = static_cast<std::size_t>(pick.below(params.size()));
    auto& t = params.at(ti);
    const std::size_t k = static_cast<std::size_t>(pick.below(t.size()));
    const double analytic = t.grad()[k];
    const double orig = t.data()[k];
    t.mutable_data()[k] = orig + eps;
    const double up = loss(false);
    t.mutable_data()[k] = orig - eps;
    const double down = loss(false);
    t.mutable_data()[k] = orig;
    const double numeric = (up - down) / (2 * eps);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

std::shared_ptr<const cohort::RawTable> table_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  return std::make_shared<const cohort::RawTable>(cohort::parse_table(in));
}

SyntheticData synthetic_data(const synthetic::SyntheticSpec& spec, std::uint64_t generator_seed,
                             const RunConfig& config) {
  SyntheticData d;
  d.generated = synthetic::generate(spec, generator_seed);
  d.table = table_from_csv(d.generated.csv);
  cohort::CohortOptions o;
  o.task = cohort::parse_task(config.task);
  o.seed = config.cohort_seed;
  o.max_row_missing = config.max_row_missing;
  o.excluded_columns = config.selection.excluded;
  d.cohort = cohort::build_cohort(d.table, o);
  d.split = cohort::stratified_split(d.cohort.subjects, config.cohort_seed);
  d.data = training::prepare_dataset(d.cohort, d.split, config.selection);
  return d;
}

}  // namespace survtx::fixture
