#include "survtx/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "survtx/csv.hpp"
#include "survtx/error.hpp"

namespace survtx {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  s = trim(s);
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.emplace_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  v = trim(v);
  double x = 0.0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(x))
    throw ConfigError("config: '" + std::string(key) + "' expects a number, got '" +
                      std::string(v) + "'");
  return x;
}

std::size_t to_size(std::string_view key, std::string_view v) {
  v = trim(v);
  std::size_t x = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError("config: '" + std::string(key) + "' expects a non-negative integer, got '" +
                      std::string(v) + "'");
  return x;
}

bool to_bool(std::string_view key, std::string_view v) {
  v = trim(v);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: '" + std::string(key) + "' expects true/false, got '" +
                    std::string(v) + "'");
}

std::vector<double> to_doubles(std::string_view key, std::string_view v) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) out.push_back(to_double(key, item));
  return out;
}

std::string join(const std::vector<std::string>& v, const char* sep = ",") {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += sep;
    s += v[i];
  }
  return s;
}

std::string join_doubles(const std::vector<double>& v) {
  std::vector<std::string> s;
  for (double x : v) s.push_back(csv::format_double(x));
  return join(s);
}

void require(bool cond, const std::string& message) {
  if (!cond) throw ConfigError("config: " + message);
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> seeds;
  for (const auto& item : split_list(text)) {
    std::uint64_t s = 0;
    auto r = std::from_chars(item.data(), item.data() + item.size(), s);
    if (r.ec != std::errc() || r.ptr != item.data() + item.size())
      throw ConfigError("config: bad seed '" + item + "'");
    seeds.push_back(s);
  }
  if (seeds.empty()) throw ConfigError("config: empty seed list");
  return seeds;
}

void RunConfig::set(std::string_view key_in, std::string_view value) {
  const std::string key(trim(key_in));
  value = trim(value);
  auto& m = model;
  if (key == "task") task = std::string(value);
  else if (key == "cohort_seed") cohort_seed = to_size(key, value);
  else if (key == "seeds") seeds = parse_seed_list(value);
  else if (key == "max_row_missing") max_row_missing = to_double(key, value);
  else if (key == "d_model") m.d_model = to_size(key, value);
  else if (key == "layers") m.layers = to_size(key, value);
  else if (key == "heads") m.heads = to_size(key, value);
  else if (key == "ff_dim") m.ff_dim = to_size(key, value);
  else if (key == "dropout") m.dropout = to_double(key, value);
  else if (key == "experts") m.experts = to_size(key, value);
  else if (key == "cat_embed_dim") m.cat_embed_dim = to_size(key, value);
  else if (key == "max_seq_len") m.max_visits = to_size(key, value);
  else if (key == "visit_dropout") m.visit_dropout = to_double(key, value);
  else if (key == "bins") m.bins = to_doubles(key, value);
  else if (key == "lr") train.lr = to_double(key, value);
  else if (key == "weight_decay") train.weight_decay = to_double(key, value);
  else if (key == "beta1") train.beta1 = to_double(key, value);
  else if (key == "beta2") train.beta2 = to_double(key, value);
  else if (key == "adam_eps") train.adam_eps = to_double(key, value);
  else if (key == "batch_size") train.batch_size = to_size(key, value);
  else if (key == "max_epochs") train.max_epochs = to_size(key, value);
  else if (key == "patience") train.patience = to_size(key, value);
  else if (key == "clip_norm") train.clip_norm = to_double(key, value);
  else if (key == "ema_decay") train.ema_decay = to_double(key, value);
  else if (key == "lambda_h") loss.lambda_h = to_double(key, value);
  else if (key == "lambda_p") loss.lambda_p = to_double(key, value);
  else if (key == "lambda_s") loss.lambda_s = to_double(key, value);
  else if (key == "lambda_g") loss.lambda_g = to_double(key, value);
  else if (key == "focal_gamma") loss.focal_gamma = to_double(key, value);
  else if (key == "event_weight_min") loss.event_weight_min = to_double(key, value);
  else if (key == "event_weight_max") loss.event_weight_max = to_double(key, value);
  else if (key == "horizon_weight_min") loss.horizon_weight_min = to_double(key, value);
  else if (key == "horizon_weight_max") loss.horizon_weight_max = to_double(key, value);
  else if (key == "horizons") loss.horizons = to_doubles(key, value);
  else if (key == "no_dynamic") ablations.no_dynamic = to_bool(key, value);
  else if (key == "no_visit_dropout") ablations.no_visit_dropout = to_bool(key, value);
  else if (key == "no_fusion") ablations.no_fusion = to_bool(key, value);
  else if (key == "no_mixture") ablations.no_mixture = to_bool(key, value);
  else if (key == "no_rank") ablations.no_rank = to_bool(key, value);
  else if (key == "no_horizon") ablations.no_horizon = to_bool(key, value);
  else if (key == "select_max_missing") selection.max_missing = to_double(key, value);
  else if (key == "select_max_mode_share") selection.max_mode_share = to_double(key, value);
  else if (key == "categorical") selection.categorical = split_list(value);
  else if (key == "excluded") selection.excluded = split_list(value);
  else if (key.starts_with("group.")) {
    // group.<name> = <quota>:<pattern>|<pattern>...
    features::ColumnGroup g;
    g.name = key.substr(6);
    const auto colon = value.find(':');
    require(colon != std::string_view::npos && !g.name.empty(),
            "'" + key + "' expects <quota>:<pattern>|<pattern>");
    g.quota = to_size(key, value.substr(0, colon));
    g.patterns = split_list(value.substr(colon + 1), '|');
    for (auto& existing : selection.groups) {
      if (existing.name == g.name) {
        existing = std::move(g);
        return;
      }
    }
    selection.groups.push_back(std::move(g));
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + " is not key = value");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RunConfig::validate() const {
  (void)cohort::parse_task(task);
  const auto& m = model;
  require(m.d_model >= 2, "d_model must be >= 2");
  require(m.layers >= 1, "layers must be >= 1");
  require(m.heads >= 1 && m.d_model % m.heads == 0, "heads must divide d_model");
  require(m.ff_dim >= 1, "ff_dim must be >= 1");
  require(m.dropout >= 0.0 && m.dropout < 1.0, "dropout must be in [0, 1)");
  require(m.experts >= 1, "experts must be >= 1");
  require(m.cat_embed_dim >= 1, "cat_embed_dim must be >= 1");
  require(m.max_visits >= 1, "max_seq_len must be >= 1");
  require(m.visit_dropout >= 0.0 && m.visit_dropout < 1.0, "visit_dropout must be in [0, 1)");
  require(!m.bins.empty() && m.bins.front() > 0.0, "bins must be positive");
  for (std::size_t i = 1; i < m.bins.size(); ++i)
    require(m.bins[i] > m.bins[i - 1], "bins must be strictly increasing");
  require(!loss.horizons.empty(), "horizons must be non-empty");
  for (double h : loss.horizons)
    require(h > 0.0 && h <= m.bins.back(), "horizons must lie in (0, last bin]");
  for (double w : {loss.lambda_h, loss.lambda_p, loss.lambda_s, loss.lambda_g, loss.focal_gamma})
    require(w >= 0.0, "loss weights must be non-negative");
  require(loss.event_weight_min > 0.0 && loss.event_weight_min <= loss.event_weight_max,
          "event weight bounds must satisfy 0 < min <= max");
  require(loss.horizon_weight_min > 0.0 && loss.horizon_weight_min <= loss.horizon_weight_max,
          "horizon weight bounds must satisfy 0 < min <= max");
  const auto& t = train;
  require(t.batch_size >= 1, "batch_size must be >= 1");
  require(t.max_epochs >= 1, "max_epochs must be >= 1");
  require(t.patience >= 1, "patience must be >= 1");
  require(t.clip_norm > 0.0, "clip_norm must be positive");
  require(t.lr > 0.0, "lr must be positive");
  require(t.weight_decay >= 0.0, "weight_decay must be non-negative");
  require(t.beta1 >= 0.0 && t.beta1 < 1.0 && t.beta2 >= 0.0 && t.beta2 < 1.0,
          "betas must be in [0, 1)");
  require(t.adam_eps > 0.0, "adam_eps must be positive");
  require(t.ema_decay >= 0.0 && t.ema_decay <= 1.0, "ema_decay must be in [0, 1]");
  require(max_row_missing >= 0.0 && max_row_missing <= 1.0, "max_row_missing must be in [0, 1]");
  require(selection.max_missing >= 0.0 && selection.max_missing <= 1.0,
          "select_max_missing must be in [0, 1]");
  require(selection.max_mode_share > 0.0 && selection.max_mode_share <= 1.0,
          "select_max_mode_share must be in (0, 1]");
  require(!seeds.empty(), "seeds must be non-empty");
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  auto kv = [&](const char* k, const std::string& v) { os << k << " = " << v << '\n'; };
  auto d = [](double x) { return csv::format_double(x); };
  auto b = [](bool x) { return std::string(x ? "true" : "false"); };
  std::vector<std::string> seed_text;
  for (auto s : seeds) seed_text.push_back(std::to_string(s));
  os << "# cohort\n";
  kv("task", task);
  kv("cohort_seed", std::to_string(cohort_seed));
  kv("seeds", join(seed_text));
  kv("max_row_missing", d(max_row_missing));
  os << "# feature selection\n";
  kv("select_max_missing", d(selection.max_missing));
  kv("select_max_mode_share", d(selection.max_mode_share));
  kv("categorical", join(selection.categorical));
  kv("excluded", join(selection.excluded));
  for (const auto& g : selection.groups) {
    os << "group." << g.name << " = " << g.quota << ':' << join(g.patterns, "|") << '\n';
  }
  os << "# model\n";
  kv("d_model", std::to_string(model.d_model));
  kv("layers", std::to_string(model.layers));
  kv("heads", std::to_string(model.heads));
  kv("ff_dim", std::to_string(model.ff_dim));
  kv("dropout", d(model.dropout));
  kv("experts", std::to_string(model.experts));
  kv("cat_embed_dim", std::to_string(model.cat_embed_dim));
  kv("max_seq_len", std::to_string(model.max_visits));
  kv("visit_dropout", d(model.visit_dropout));
  kv("bins", join_doubles(model.bins));
  os << "# objective\n";
  kv("lambda_h", d(loss.lambda_h));
  kv("lambda_p", d(loss.lambda_p));
  kv("lambda_s", d(loss.lambda_s));
  kv("lambda_g", d(loss.lambda_g));
  kv("focal_gamma", d(loss.focal_gamma));
  kv("event_weight_min", d(loss.event_weight_min));
  kv("event_weight_max", d(loss.event_weight_max));
  kv("horizon_weight_min", d(loss.horizon_weight_min));
  kv("horizon_weight_max", d(loss.horizon_weight_max));
  kv("horizons", join_doubles(loss.horizons));
  os << "# optimization\n";
  kv("lr", d(train.lr));
  kv("weight_decay", d(train.weight_decay));
  kv("beta1", d(train.beta1));
  kv("beta2", d(train.beta2));
  kv("adam_eps", d(train.adam_eps));
  kv("batch_size", std::to_string(train.batch_size));
  kv("max_epochs", std::to_string(train.max_epochs));
  kv("patience", std::to_string(train.patience));
  kv("clip_norm", d(train.clip_norm));
  kv("ema_decay", d(train.ema_decay));
  os << "# ablations\n";
  kv("no_dynamic", b(ablations.no_dynamic));
  kv("no_visit_dropout", b(ablations.no_visit_dropout));
  kv("no_fusion", b(ablations.no_fusion));
  kv("no_mixture", b(ablations.no_mixture));
  kv("no_rank", b(ablations.no_rank));
  kv("no_horizon", b(ablations.no_horizon));
  return os.str();
}

ModelConfig RunConfig::resolved_model() const {
  ModelConfig m = model;
  if (ablations.no_mixture) m.experts = 1;
  if (ablations.no_visit_dropout) m.visit_dropout = 0.0;
  m.no_dynamic = m.no_dynamic || ablations.no_dynamic;
  m.no_fusion = m.no_fusion || ablations.no_fusion;
  return m;
}

LossWeights RunConfig::resolved_loss() const {
  LossWeights l = loss;
  if (ablations.no_rank) l.lambda_p = 0.0;
  if (ablations.no_horizon) l.lambda_h = 0.0;
  return l;
}

}  // namespace survtx
