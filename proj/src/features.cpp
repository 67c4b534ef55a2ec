#include "survtx/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include "survtx/csv.hpp"
#include "survtx/error.hpp"

namespace survtx::features {

using cohort::RawTable;
using cohort::SubjectHistory;

namespace {

std::optional<double> parse_number(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v))
    return std::nullopt;
  return v;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace

ColumnStats column_stats(const RawTable& table, std::span<const SubjectHistory> histories,
                         std::size_t column) {
  ColumnStats st;
  std::map<double, std::size_t> num_counts;
  std::map<std::string, std::size_t> str_counts;
  std::vector<double> values;
  for (const auto& h : histories) {
    for (const auto& v : h.visits) {
      ++st.total;
      auto cell = cohort::visit_cell(table, v, column);
      if (!cell) continue;
      ++st.observed;
      ++str_counts[std::string(*cell)];
      if (auto x = parse_number(*cell)) {
        ++num_counts[*x];
        values.push_back(*x);
      } else {
        st.numeric = false;
      }
    }
  }
  const auto& counts_size = st.numeric ? num_counts.size() : str_counts.size();
  st.distinct = counts_size;
  std::size_t top = 0;
  if (st.numeric) {
    for (const auto& [k, c] : num_counts) top = std::max(top, c);
  } else {
    for (const auto& [k, c] : str_counts) top = std::max(top, c);
  }
  st.mode_share = st.observed ? static_cast<double>(top) / static_cast<double>(st.observed) : 1.0;
  if (st.numeric && !values.empty()) {
    double mu = 0.0;
    for (double x : values) mu += x;
    mu /= static_cast<double>(values.size());
    double var = 0.0;
    for (double x : values) var += (x - mu) * (x - mu);
    st.stddev = std::sqrt(var / static_cast<double>(values.size()));
  }
  return st;
}

bool column_qualifies(const ColumnStats& s, const SelectionConfig& config) {
  return s.numeric && s.observed > 0 && s.missing_fraction() <= config.max_missing + 1e-12 &&
         s.distinct >= config.min_distinct && s.mode_share <= config.max_mode_share &&
         s.stddev > kMinStd;
}

FeatureSpec select_columns(const RawTable& table, std::span<const SubjectHistory> train,
                           const SelectionConfig& config) {
  FeatureSpec spec;
  struct Candidate {
    std::string name;
    double missing;
  };
  std::vector<Candidate> qualifying;
  for (auto c : cohort::candidate_columns(table, config.excluded)) {
    const auto& name = table.columns[c];
    if (contains(config.categorical, name)) continue;
    const auto st = column_stats(table, train, c);
    if (column_qualifies(st, config)) qualifying.push_back({name, st.missing_fraction()});
  }

  if (config.groups.empty()) {
    for (const auto& q : qualifying) {
      spec.numeric.push_back(q.name);
      spec.group_of.push_back("all");
    }
  } else {
    std::set<std::string> taken;
    for (const auto& group : config.groups) {
      std::vector<std::regex> res;
      for (const auto& p : group.patterns)
        res.emplace_back(p, std::regex::ECMAScript | std::regex::icase);
      std::vector<Candidate> members;
      for (const auto& q : qualifying) {
        if (taken.count(q.name)) continue;
        if (std::any_of(res.begin(), res.end(),
                        [&](const std::regex& re) { return std::regex_search(q.name, re); }))
          members.push_back(q);
      }
      if (members.empty()) {
        spec.warnings.push_back("column group '" + group.name +
                                "' has no qualifying columns; skipped");
        continue;
      }
      std::sort(members.begin(), members.end(), [](const Candidate& a, const Candidate& b) {
        if (a.missing != b.missing) return a.missing < b.missing;
        return a.name < b.name;
      });
      const std::size_t take = std::min(group.quota, members.size());
      for (std::size_t i = 0; i < take; ++i) {
        taken.insert(members[i].name);
        spec.numeric.push_back(members[i].name);
        spec.group_of.push_back(group.name);
      }
    }
  }
  for (const auto& c : config.categorical)
    if (table.find_column(c)) spec.categorical.push_back(c);
  return spec;
}

std::size_t Preprocessor::category_index(std::size_t c,
                                         std::optional<std::string_view> value) const {
  if (!value) return kMissing;
  const auto& v = vocab.at(c);
  auto it = std::lower_bound(v.begin(), v.end(), *value);
  if (it == v.end() || *it != *value) return kUnknown;
  return kReservedTokens + static_cast<std::size_t>(it - v.begin());
}

std::string Preprocessor::serialize() const {
  std::ostringstream os;
  os << "survtx-preprocessor 1\n";
  os << "numeric " << spec.numeric.size() << '\n';
  for (std::size_t i = 0; i < spec.numeric.size(); ++i) {
    os << spec.numeric[i] << '\t' << (i < spec.group_of.size() ? spec.group_of[i] : "all") << '\t'
       << csv::format_double(median[i]) << '\t' << csv::format_double(mean[i]) << '\t'
       << csv::format_double(stddev[i]) << '\n';
  }
  os << "categorical " << spec.categorical.size() << '\n';
  for (std::size_t c = 0; c < spec.categorical.size(); ++c) {
    os << spec.categorical[c] << '\t' << vocab[c].size();
    for (const auto& v : vocab[c]) os << '\t' << v;
    os << '\n';
  }
  return os.str();
}

namespace {
std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}
}  // namespace

Preprocessor Preprocessor::deserialize(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line, word;
  std::getline(in, line);
  if (line != "survtx-preprocessor 1") throw SchemaError("preprocessor: bad header '" + line + "'");
  Preprocessor p;
  std::size_t n = 0;
  std::getline(in, line);
  {
    std::istringstream ls(line);
    ls >> word >> n;
    if (word != "numeric") throw SchemaError("preprocessor: expected numeric block");
  }
  auto num = [](const std::string& s) {
    auto v = parse_number(s);
    if (!v) throw SchemaError("preprocessor: bad number '" + s + "'");
    return *v;
  };
  for (std::size_t i = 0; i < n; ++i) {
    std::getline(in, line);
    const auto f = split_tabs(line);
    if (f.size() != 5) throw SchemaError("preprocessor: malformed numeric row");
    p.spec.numeric.push_back(f[0]);
    p.spec.group_of.push_back(f[1]);
    p.median.push_back(num(f[2]));
    p.mean.push_back(num(f[3]));
    p.stddev.push_back(num(f[4]));
  }
  std::getline(in, line);
  {
    std::istringstream ls(line);
    ls >> word >> n;
    if (word != "categorical") throw SchemaError("preprocessor: expected categorical block");
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::getline(in, line);
    const auto f = split_tabs(line);
    if (f.size() < 2) throw SchemaError("preprocessor: malformed categorical row");
    p.spec.categorical.push_back(f[0]);
    const auto k = static_cast<std::size_t>(num(f[1]));
    if (f.size() != k + 2) throw SchemaError("preprocessor: vocabulary size mismatch");
    p.vocab.emplace_back(f.begin() + 2, f.end());
  }
  return p;
}

std::vector<RawVisitValues> extract_values(const RawTable& table, const SubjectHistory& history,
                                           const FeatureSpec& spec) {
  std::vector<std::size_t> num_cols, cat_cols;
  for (const auto& c : spec.numeric) num_cols.push_back(table.column(c));
  for (const auto& c : spec.categorical) cat_cols.push_back(table.column(c));
  std::vector<RawVisitValues> out;
  out.reserve(history.visits.size());
  for (const auto& v : history.visits) {
    RawVisitValues rv;
    rv.time = v.time;
    for (auto c : num_cols) {
      auto cell = cohort::visit_cell(table, v, c);
      rv.numeric.push_back(cell ? parse_number(*cell) : std::nullopt);
    }
    for (auto c : cat_cols) {
      auto cell = cohort::visit_cell(table, v, c);
      rv.categorical.push_back(cell ? std::optional<std::string>(std::string(*cell))
                                    : std::nullopt);
    }
    out.push_back(std::move(rv));
  }
  return out;
}

Preprocessor fit_preprocessor(std::span<const std::vector<RawVisitValues>> train,
                              const FeatureSpec& spec) {
  Preprocessor p;
  p.spec = spec;
  const std::size_t np = spec.numeric.size(), nc = spec.categorical.size();
  std::vector<std::vector<double>> values(np);
  std::vector<std::set<std::string>> cats(nc);
  for (const auto& subject : train) {
    for (const auto& v : subject) {
      for (std::size_t i = 0; i < np; ++i)
        if (v.numeric[i]) values[i].push_back(*v.numeric[i]);
      for (std::size_t c = 0; c < nc; ++c)
        if (v.categorical[c]) cats[c].insert(*v.categorical[c]);
    }
  }
  for (std::size_t i = 0; i < np; ++i) {
    const auto& xs = values[i];
    if (xs.empty())
      throw ContractError("fit_preprocessor: column '" + spec.numeric[i] +
                          "' has no observed training values");
    double mu = 0.0;
    for (double x : xs) mu += x;
    mu /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mu) * (x - mu);
    const double sd = std::sqrt(var / static_cast<double>(xs.size()));
    if (sd <= kMinStd)
      throw ContractError("fit_preprocessor: column '" + spec.numeric[i] +
                          "' has near-zero standard deviation");
    p.median.push_back(median_of(xs));
    p.mean.push_back(mu);
    p.stddev.push_back(sd);
  }
  for (std::size_t c = 0; c < nc; ++c) p.vocab.emplace_back(cats[c].begin(), cats[c].end());
  return p;
}

Preprocessor fit_preprocessor(const RawTable& table, std::span<const SubjectHistory> train,
                              const FeatureSpec& spec) {
  std::vector<std::vector<RawVisitValues>> values;
  values.reserve(train.size());
  for (const auto& h : train) values.push_back(extract_values(table, h, spec));
  return fit_preprocessor(values, spec);
}

std::vector<EngineeredVisit> engineer_values(std::span<const RawVisitValues> values,
                                             const Preprocessor& prep) {
  const std::size_t np = prep.numeric_count();
  std::vector<EngineeredVisit> out;
  out.reserve(values.size());
  std::vector<double> z_first;
  double prev_time = 0.0;
  for (std::size_t l = 0; l < values.size(); ++l) {
    const auto& rv = values[l];
    if (rv.numeric.size() != np || rv.categorical.size() != prep.spec.categorical.size())
      throw DimensionError("engineer_values: visit width differs from preprocessor");
    EngineeredVisit ev;
    ev.time = rv.time;
    ev.gap = l == 0 ? 0.0 : rv.time - prev_time;
    prev_time = rv.time;
    ev.z.resize(np);
    ev.dz.resize(np);
    ev.slope.resize(np);
    ev.mask.resize(np);
    for (std::size_t p = 0; p < np; ++p) {
      const bool observed = rv.numeric[p].has_value();
      const double x = observed ? *rv.numeric[p] : prep.median[p];
      ev.mask[p] = observed ? 1.0 : 0.0;
      ev.z[p] = (x - prep.mean[p]) / prep.stddev[p];
    }
    if (l == 0) z_first = ev.z;
    const double denom = std::max(rv.time, kMinSlopeTime);
    for (std::size_t p = 0; p < np; ++p) {
      ev.dz[p] = l == 0 ? 0.0 : ev.z[p] - z_first[p];
      ev.slope[p] = ev.dz[p] / denom;
    }
    for (std::size_t c = 0; c < rv.categorical.size(); ++c) {
      const auto& cv = rv.categorical[c];
      ev.categories.push_back(prep.category_index(
          c, cv ? std::optional<std::string_view>(*cv) : std::nullopt));
    }
    out.push_back(std::move(ev));
  }
  return out;
}

EngineeredHistory engineer_history(const RawTable& table, const SubjectHistory& history,
                                   const Preprocessor& prep) {
  EngineeredHistory eh;
  eh.id = history.id;
  eh.label = history.label;
  const auto values = extract_values(table, history, prep.spec);
  eh.visits = engineer_values(values, prep);
  return eh;
}

}  // namespace survtx::features
