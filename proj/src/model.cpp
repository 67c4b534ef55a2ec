#include "survtx/model.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "survtx/error.hpp"

namespace survtx::model {

// ---- ParamStore ---------------------------------------------------------------

void ParamStore::add(std::string name, Tensor t) {
  if (contains(name)) throw ContractError("duplicate parameter '" + name + "'");
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(t));
}

bool ParamStore::contains(std::string_view name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const Tensor& ParamStore::get(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw LookupError("unknown parameter '" + std::string(name) + "'");
  return tensors_[static_cast<std::size_t>(it - names_.begin())];
}

Tensor& ParamStore::get(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (std::size_t i = 0; i < size(); ++i)
    out.add(names_[i], tensors_[i].clone(tensors_[i].requires_grad()));
  return out;
}

// ---- visit selection ----------------------------------------------------------

std::vector<std::size_t> visit_dropout(std::size_t count, double p, Rng& rng, Mode mode) {
  std::vector<std::size_t> kept;
  kept.reserve(count);
  if (mode == Mode::eval || p <= 0.0 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) kept.push_back(i);
    return kept;
  }
  for (std::size_t i = 0; i + 1 < count; ++i)
    if (!rng.bernoulli(p)) kept.push_back(i);
  kept.push_back(count - 1);
  return kept;
}

std::vector<std::size_t> retained_visits(const features::EngineeredHistory& history,
                                         std::size_t max_visits) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < history.visits.size(); ++i)
    if (history.visits[i].valid) idx.push_back(i);
  if (idx.size() > max_visits)
    idx.erase(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(idx.size() - max_visits));
  return idx;
}

// ---- Model --------------------------------------------------------------------

Model::Model(ModelConfig config) : config_(std::move(config)) {
  if (config_.numeric_features == 0) throw ContractError("model needs at least one numeric feature");
  if (config_.d_model < 2 || config_.heads == 0 || config_.d_model % config_.heads != 0)
    throw ContractError("model width must be >= 2 and divisible by the head count");
  if (config_.experts == 0 || config_.bins.empty())
    throw ContractError("model needs at least one expert and one bin");
}

std::vector<std::pair<std::string, ad::Shape>> Model::parameter_shapes() const {
  const auto& c = config_;
  const std::size_t D = c.d_model, P = c.numeric_features, K = c.bin_count(), E = c.experts;
  std::vector<std::pair<std::string, ad::Shape>> s;
  s.push_back({"tok.num.w", {4 * P, D}});
  s.push_back({"tok.num.b", {D}});
  for (std::size_t v = 0; v < c.vocab_sizes.size(); ++v)
    s.push_back({"tok.cat.emb." + std::to_string(v), {c.vocab_sizes[v], c.cat_embed_dim}});
  if (!c.vocab_sizes.empty()) {
    s.push_back({"tok.cat.w", {c.cat_embed_dim, D}});
    s.push_back({"tok.cat.b", {D}});
  }
  s.push_back({"tok.time.w", {2, D}});
  s.push_back({"tok.time.b", {D}});
  s.push_back({"tok.ln.g", {D}});
  s.push_back({"tok.ln.b", {D}});
  s.push_back({"cls", {1, D}});
  s.push_back({"pos", {c.max_visits + 1, D}});
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "enc." + std::to_string(l) + ".";
    s.push_back({p + "ln1.g", {D}});
    s.push_back({p + "ln1.b", {D}});
    s.push_back({p + "qkv.w", {D, 3 * D}});
    s.push_back({p + "qkv.b", {3 * D}});
    s.push_back({p + "out.w", {D, D}});
    s.push_back({p + "out.b", {D}});
    s.push_back({p + "ln2.g", {D}});
    s.push_back({p + "ln2.b", {D}});
    s.push_back({p + "ff1.w", {D, c.ff_dim}});
    s.push_back({p + "ff1.b", {c.ff_dim}});
    s.push_back({p + "ff2.w", {c.ff_dim, D}});
    s.push_back({p + "ff2.b", {D}});
  }
  s.push_back({"enc.ln.g", {D}});
  s.push_back({"enc.ln.b", {D}});
  s.push_back({"pool.query", {D}});
  s.push_back({"fuse.w", {3 * D, D}});
  s.push_back({"fuse.b", {D}});
  s.push_back({"fuse.ln.g", {D}});
  s.push_back({"fuse.ln.b", {D}});
  s.push_back({"score.w", {D, 1}});
  s.push_back({"score.b", {1}});
  s.push_back({"gate.w", {D, E}});
  s.push_back({"hazard.w", {D, E * K}});
  s.push_back({"hazard.b", {E * K}});
  return s;
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

constexpr double kEmbeddingStd = 0.02;
constexpr double kHazardBias = -2.0;

}  // namespace

ParamStore Model::init(std::uint64_t seed) const {
  Rng rng = Rng::stream(seed, "init");
  ParamStore store;
  for (auto& [name, shape] : parameter_shapes()) {
    std::vector<double> v(ad::shape_size(shape), 0.0);
    if (name == "hazard.b") {
      std::fill(v.begin(), v.end(), kHazardBias);
    } else if (ends_with(name, ".g")) {
      std::fill(v.begin(), v.end(), 1.0);
    } else if (ends_with(name, ".w")) {
      // Xavier uniform on [fan_in x fan_out]
      const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      for (auto& x : v) x = rng.uniform(-limit, limit);
    } else if (ends_with(name, ".b")) {
      // zero bias
    } else {
      for (auto& x : v) x = rng.normal(0.0, kEmbeddingStd);
    }
    store.add(name, Tensor::parameter(shape, std::move(v)));
  }
  return store;
}

void Model::check(const ParamStore& params) const {
  const auto shapes = parameter_shapes();
  if (params.size() != shapes.size())
    throw ContractError("parameter store has " + std::to_string(params.size()) +
                        " tensors, model expects " + std::to_string(shapes.size()));
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (params.name(i) != shapes[i].first || params.at(i).shape() != shapes[i].second)
      throw ContractError("parameter " + std::to_string(i) + " ('" + params.name(i) + "' " +
                          ad::shape_string(params.at(i).shape()) + ") does not match '" +
                          shapes[i].first + "' " + ad::shape_string(shapes[i].second));
  }
}

namespace {

Tensor linear(Graph& g, const ParamStore& p, const Tensor& x, const std::string& prefix) {
  return ad::add(g, ad::matmul(g, x, p.get(prefix + ".w")), p.get(prefix + ".b"));
}

Tensor norm(Graph& g, const ParamStore& p, const Tensor& x, const std::string& prefix) {
  return ad::layer_norm(g, x, p.get(prefix + ".g"), p.get(prefix + ".b"));
}

// Row gather from any [V x d] tensor.
Tensor rows_of(Graph& g, const Tensor& x, const std::vector<std::size_t>& idx) {
  return ad::embedding_lookup(g, x, idx);
}

}  // namespace

ForwardResult Model::forward(Graph& g, const ParamStore& params,
                             std::span<const features::EngineeredHistory> batch, Mode mode,
                             Rng& rng, const ForwardOptions& options) const {
  const auto& c = config_;
  const std::size_t B = batch.size(), D = c.d_model, P = c.numeric_features, K = c.bin_count(),
                    E = c.experts, C = c.vocab_sizes.size();
  if (B == 0) throw ContractError("forward: empty batch");
  const bool train = mode == Mode::train;

  ForwardResult r;
  r.visits.resize(B);
  std::size_t n_visits = 0;
  for (std::size_t i = 0; i < B; ++i) {
    const auto kept = retained_visits(batch[i], c.max_visits);
    if (kept.empty())
      throw ContractError("forward: subject '" + batch[i].id + "' has no valid visits");
    for (auto j : visit_dropout(kept.size(), c.visit_dropout, rng, mode))
      r.visits[i].push_back(kept[j]);
    n_visits += r.visits[i].size();
  }

  // Visit-level inputs in subject order.
  std::vector<double> num(n_visits * 4 * P, 0.0), tim(n_visits * 2, 0.0);
  std::vector<std::vector<std::size_t>> cats(C, std::vector<std::size_t>(n_visits, features::kPad));
  std::size_t row = 0;
  for (std::size_t i = 0; i < B; ++i) {
    for (auto vi : r.visits[i]) {
      const auto& v = batch[i].visits[vi];
      if (v.z.size() != P || v.dz.size() != P || v.slope.size() != P || v.mask.size() != P)
        throw DimensionError("forward: visit has " + std::to_string(v.z.size()) +
                             " numeric features, model expects " + std::to_string(P));
      if (v.categories.size() != C)
        throw DimensionError("forward: visit has " + std::to_string(v.categories.size()) +
                             " categorical features, model expects " + std::to_string(C));
      double* out = num.data() + row * 4 * P;
      for (std::size_t p = 0; p < P; ++p) {
        out[p] = v.z[p];
        if (!c.no_dynamic) {
          out[P + p] = v.dz[p];
          out[2 * P + p] = v.slope[p];
        }
        out[3 * P + p] = v.mask[p];
      }
      tim[row * 2] = v.time;
      tim[row * 2 + 1] = v.gap;
      for (std::size_t k = 0; k < C; ++k) cats[k][row] = v.categories[k];
      ++row;
    }
  }

  r.numeric_input = options.numeric_input_grad ? Tensor::parameter({n_visits, 4 * P}, std::move(num))
                                               : Tensor::constant({n_visits, 4 * P}, std::move(num));
  Tensor u = linear(g, params, r.numeric_input, "tok.num");
  if (C > 0) {
    Tensor emb;
    for (std::size_t k = 0; k < C; ++k) {
      Tensor e = ad::embedding_lookup(g, params.get("tok.cat.emb." + std::to_string(k)), cats[k]);
      emb = emb.defined() ? ad::add(g, emb, e) : e;
    }
    u = ad::add(g, u, linear(g, params, emb, "tok.cat"));
  }
  u = ad::add(g, u, linear(g, params, Tensor::constant({n_visits, 2}, std::move(tim)), "tok.time"));
  u = norm(g, params, u, "tok.ln");

  // Packed sequences: per subject [CLS, visit_1, ..., visit_L].
  std::vector<ad::Segment> segs(B);
  std::vector<std::size_t> gather, positions;
  gather.reserve(B + n_visits);
  positions.reserve(B + n_visits);
  std::size_t offset = 0, visit_row = 0;
  for (std::size_t i = 0; i < B; ++i) {
    const std::size_t len = r.visits[i].size() + 1;
    segs[i] = {offset, len};
    gather.push_back(0);
    positions.push_back(0);
    for (std::size_t j = 1; j < len; ++j) {
      gather.push_back(1 + visit_row++);
      positions.push_back(j);
    }
    offset += len;
  }
  Tensor x = rows_of(g, ad::concat_rows(g, {params.get("cls"), u}), gather);
  x = ad::add(g, x, rows_of(g, params.get("pos"), positions));

  if (options.encoder_attention) r.encoder_attention.resize(c.layers);
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "enc." + std::to_string(l) + ".";
    Tensor h = norm(g, params, x, p + "ln1");
    Tensor a = ad::multi_head_attention(g, linear(g, params, h, p + "qkv"), segs, c.heads,
                                        options.encoder_attention ? &r.encoder_attention[l] : nullptr);
    a = linear(g, params, a, p + "out");
    if (train) a = ad::dropout(g, a, c.dropout, rng);
    x = ad::add(g, x, a);
    h = norm(g, params, x, p + "ln2");
    Tensor f = linear(g, params, ad::relu(g, linear(g, params, h, p + "ff1")), p + "ff2");
    if (train) f = ad::dropout(g, f, c.dropout, rng);
    x = ad::add(g, x, f);
  }
  x = norm(g, params, x, "enc.ln");

  // Fusion of CLS, attention-pooled visits, and the latest visit.
  std::vector<std::size_t> cls_rows(B), last_rows(B);
  std::vector<std::vector<std::size_t>> pool_rows(B);
  for (std::size_t i = 0; i < B; ++i) {
    cls_rows[i] = segs[i].offset;
    last_rows[i] = segs[i].offset + segs[i].length - 1;
    for (std::size_t j = 1; j < segs[i].length; ++j) pool_rows[i].push_back(segs[i].offset + j);
  }
  Tensor cls = rows_of(g, x, cls_rows);
  Tensor pooled, latest;
  if (c.no_fusion) {
    pooled = Tensor::zeros({B, D});
    latest = Tensor::zeros({B, D});
  } else {
    pooled = ad::attention_pool(g, x, params.get("pool.query"), pool_rows, &r.pool_weights);
    latest = rows_of(g, x, last_rows);
  }
  Tensor fused = ad::relu(g, linear(g, params, ad::concat_cols(g, {cls, pooled, latest}), "fuse"));
  r.z = norm(g, params, fused, "fuse.ln");

  r.score = linear(g, params, r.z, "score");
  r.gates = ad::softmax(g, ad::matmul(g, r.z, params.get("gate.w")), 1);
  r.expert_hazards = ad::sigmoid(g, linear(g, params, r.z, "hazard"));

  // h_k = sum_e pi_e h_ek via constant 0/1 spread and reduce matrices.
  std::vector<double> spread(E * E * K, 0.0), reduce(E * K * K, 0.0), upper(K * K, 0.0);
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t k = 0; k < K; ++k) {
      spread[e * E * K + e * K + k] = 1.0;
      reduce[(e * K + k) * K + k] = 1.0;
    }
  for (std::size_t j = 0; j < K; ++j)
    for (std::size_t k = j; k < K; ++k) upper[j * K + k] = 1.0;
  Tensor weighted = ad::mul(g, ad::matmul(g, r.gates, Tensor::constant({E, E * K}, std::move(spread))),
                            r.expert_hazards);
  r.hazards = ad::matmul(g, weighted, Tensor::constant({E * K, K}, std::move(reduce)));

  Tensor log_surv = ad::log(g, ad::shift(g, ad::neg(g, r.hazards), 1.0));
  r.survival = ad::exp(g, ad::matmul(g, log_surv, Tensor::constant({K, K}, std::move(upper))));
  r.cif = ad::shift(g, ad::neg(g, r.survival), 1.0);
  return r;
}

std::vector<Prediction> predict(const Model& model, const ParamStore& params,
                                std::span<const features::EngineeredHistory> histories,
                                std::size_t batch_size) {
  std::vector<Prediction> out;
  out.reserve(histories.size());
  Rng unused(0);
  const std::size_t E = model.config().experts, K = model.config().bin_count();
  for (std::size_t start = 0; start < histories.size(); start += batch_size) {
    const auto chunk = histories.subspan(start, std::min(batch_size, histories.size() - start));
    Graph g(false);
    auto r = model.forward(g, params, chunk, Mode::eval, unused);
    auto row = [](const Tensor& t, std::size_t i, std::size_t w) {
      const auto d = t.data().subspan(i * w, w);
      return std::vector<double>(d.begin(), d.end());
    };
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      Prediction p;
      p.id = chunk[i].id;
      p.score = r.score[i];
      p.gates = row(r.gates, i, E);
      p.expert_hazards = row(r.expert_hazards, i, E * K);
      p.hazards = row(r.hazards, i, K);
      p.survival = row(r.survival, i, K);
      p.cif = row(r.cif, i, K);
      p.visits = std::move(r.visits[i]);
      if (!r.pool_weights.empty()) p.pool_weights = std::move(r.pool_weights[i]);
      out.push_back(std::move(p));
    }
  }
  return out;
}

// ---- plain-value survival algebra ---------------------------------------------

std::vector<double> mix_hazards(std::span<const double> gates, std::span<const double> expert,
                                std::size_t bins) {
  if (expert.size() != gates.size() * bins)
    throw DimensionError("mix_hazards: expert table must be E x K");
  std::vector<double> h(bins, 0.0);
  for (std::size_t e = 0; e < gates.size(); ++e)
    for (std::size_t k = 0; k < bins; ++k) h[k] += gates[e] * expert[e * bins + k];
  return h;
}

RiskCurve survival_curve(std::span<const double> hazards) {
  RiskCurve c;
  double s = 1.0;
  for (double h : hazards) {
    if (!(h >= 0.0 && h <= 1.0)) throw DomainError("survival_curve: hazard outside [0, 1]");
    s *= 1.0 - h;
    c.survival.push_back(s);
    c.cif.push_back(1.0 - s);
  }
  return c;
}

std::size_t horizon_index(std::span<const double> bins, double h) {
  if (bins.empty() || !(h > 0.0) || h > bins.back())
    throw DomainError("horizon " + std::to_string(h) + " outside the hazard grid");
  return static_cast<std::size_t>(std::lower_bound(bins.begin(), bins.end(), h) - bins.begin());
}

double risk_at_horizon(std::span<const double> cif, std::span<const double> bins, double h) {
  if (cif.size() != bins.size()) throw DimensionError("risk_at_horizon: curve and grid differ");
  return cif[horizon_index(bins, h)];
}

}  // namespace survtx::model
