#include "survtx/synthetic.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "survtx/cohort.hpp"
#include "survtx/csv.hpp"
#include "survtx/error.hpp"
#include "survtx/rng.hpp"

namespace survtx::synthetic {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMinEventTime = 0.1;
constexpr double kTailCap = 100.0;  // years of tail hazard before giving up on an event

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

double to_double(std::string_view key, std::string_view v) {
  v = trim(v);
  double x = 0.0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(x))
    throw ConfigError("synthetic spec: '" + std::string(key) + "' expects a number, got '" +
                      std::string(v) + "'");
  return x;
}

std::size_t to_size(std::string_view key, std::string_view v) {
  const double x = to_double(key, v);
  if (x < 0 || x != std::floor(x))
    throw ConfigError("synthetic spec: '" + std::string(key) + "' expects a non-negative integer");
  return static_cast<std::size_t>(x);
}

std::vector<double> to_list(std::string_view key, std::string_view v) {
  std::vector<double> out;
  v = trim(v);
  while (!v.empty()) {
    const auto pos = v.find(',');
    out.push_back(to_double(key, v.substr(0, pos)));
    if (pos == std::string_view::npos) break;
    v.remove_prefix(pos + 1);
  }
  return out;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + csv::format_double(v[i]);
  return s;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError("synthetic spec: " + msg);
}

std::string fixed4(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

// ---- spec -------------------------------------------------------------------------

void SyntheticSpec::set(std::string_view key_in, std::string_view value) {
  const std::string key(trim(key_in));
  value = trim(value);
  if (key == "subjects") subjects = to_size(key, value);
  else if (key == "bins") bins = to_list(key, value);
  else if (key == "signal") signal = to_double(key, value);
  else if (key == "frailty_sd") frailty_sd = to_double(key, value);
  else if (key == "frailty_drift") frailty_drift = to_double(key, value);
  else if (key == "level_sd") level_sd = to_double(key, value);
  else if (key == "slope_sd") slope_sd = to_double(key, value);
  else if (key == "noise_sd") noise_sd = to_double(key, value);
  else if (key == "jitter") jitter = to_double(key, value);
  else if (key == "min_coverage") min_coverage = to_double(key, value);
  else if (key == "censoring_rate") censoring_rate = to_double(key, value);
  else if (key == "censor_min") censor_min = to_double(key, value);
  else if (key == "censor_max") censor_max = to_double(key, value);
  else if (key == "numeric_features") numeric_features = to_size(key, value);
  else if (key == "informative_features") informative_features = to_size(key, value);
  else if (key == "categorical_features") categorical_features = to_size(key, value);
  else if (key == "missing_rate") missing_rate = to_double(key, value);
  else if (key == "min_visits") min_visits = to_size(key, value);
  else if (key == "max_visits") max_visits = to_size(key, value);
  else if (key == "cn_fraction") cn_fraction = to_double(key, value);
  else if (key == "recency_signal") recency_signal = to_size(key, value == "true" ? "1" : value == "false" ? "0" : value) != 0;
  else if (key == "recency_window") recency_window = to_double(key, value);
  else if (key == "post_index_visits") post_index_visits = to_size(key, value);
  else if (key == "groups") {
    // Replaces the group list: "groups = rapid,delayed" then group.<name> entries.
    groups.clear();
  } else if (key.starts_with("group.")) {
    // group.<name> = <proportion>;<drift>;<h1>,<h2>,...
    GroupSpec g;
    g.name = key.substr(6);
    const auto a = value.find(';');
    const auto b = a == std::string_view::npos ? a : value.find(';', a + 1);
    require(!g.name.empty() && b != std::string_view::npos,
            "'" + key + "' expects <proportion>;<drift>;<hazards>");
    g.proportion = to_double(key, value.substr(0, a));
    g.drift = to_double(key, value.substr(a + 1, b - a - 1));
    g.hazards = to_list(key, value.substr(b + 1));
    for (auto& existing : groups) {
      if (existing.name == g.name) {
        existing = std::move(g);
        return;
      }
    }
    groups.push_back(std::move(g));
  } else {
    throw ConfigError("synthetic spec: unknown key '" + key + "'");
  }
}

SyntheticSpec SyntheticSpec::parse(std::string_view text) {
  SyntheticSpec s;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("synthetic spec: line " + std::to_string(n) + " is not key = value");
    s.set(t.substr(0, eq), t.substr(eq + 1));
  }
  s.validate();
  return s;
}

SyntheticSpec SyntheticSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open synthetic spec '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void SyntheticSpec::validate() const {
  require(subjects >= 1, "subjects must be >= 1");
  require(!bins.empty() && bins.front() > 0.0, "bins must be positive");
  for (std::size_t i = 1; i < bins.size(); ++i) require(bins[i] > bins[i - 1], "bins must increase");
  require(!groups.empty(), "at least one group is required");
  double total = 0.0;
  for (const auto& g : groups) {
    require(g.proportion >= 0.0, "group proportions must be non-negative");
    require(g.hazards.size() == bins.size(), "group '" + g.name + "' needs one hazard per bin");
    for (double h : g.hazards) require(h > 0.0 && h < 1.0, "hazards must lie in (0, 1)");
    total += g.proportion;
  }
  require(std::abs(total - 1.0) < 1e-9, "group proportions must sum to 1");
  require(censoring_rate >= 0.0 && censoring_rate <= 1.0, "censoring_rate must be in [0, 1]");
  require(censor_min > 0.0 && censor_max >= censor_min, "need 0 < censor_min <= censor_max");
  require(missing_rate >= 0.0 && missing_rate < 1.0, "missing_rate must be in [0, 1)");
  require(cn_fraction >= 0.0 && cn_fraction <= 1.0, "cn_fraction must be in [0, 1]");
  require(numeric_features >= 1, "numeric_features must be >= 1");
  require(informative_features <= numeric_features, "informative_features exceeds numeric_features");
  require(categorical_features <= 2, "categorical_features must be 0, 1, or 2");
  require(min_visits >= 2 && max_visits >= min_visits, "need 2 <= min_visits <= max_visits");
  require(jitter >= 0.0 && jitter < 1.0, "jitter must be in [0, 1)");
  require(min_coverage > 0.0 && min_coverage <= 1.0, "min_coverage must be in (0, 1]");
  require(level_sd >= 0.0 && slope_sd >= 0.0 && noise_sd >= 0.0 && frailty_sd >= 0.0,
          "standard deviations must be non-negative");
  require(recency_window > 0.0, "recency_window must be positive");
}

std::string SyntheticSpec::to_text() const {
  std::ostringstream os;
  auto d = [](double x) { return csv::format_double(x); };
  os << "subjects = " << subjects << "\nbins = " << join(bins) << "\ngroups = reset\n";
  for (const auto& g : groups)
    os << "group." << g.name << " = " << d(g.proportion) << ';' << d(g.drift) << ';'
       << join(g.hazards) << '\n';
  os << "signal = " << d(signal) << "\nfrailty_sd = " << d(frailty_sd)
     << "\nfrailty_drift = " << d(frailty_drift) << "\nlevel_sd = " << d(level_sd)
     << "\nslope_sd = " << d(slope_sd) << "\nnoise_sd = " << d(noise_sd)
     << "\njitter = " << d(jitter) << "\nmin_coverage = " << d(min_coverage)
     << "\ncensoring_rate = " << d(censoring_rate)
     << "\ncensor_min = " << d(censor_min) << "\ncensor_max = " << d(censor_max)
     << "\nnumeric_features = " << numeric_features
     << "\ninformative_features = " << informative_features
     << "\ncategorical_features = " << categorical_features
     << "\nmissing_rate = " << d(missing_rate) << "\nmin_visits = " << min_visits
     << "\nmax_visits = " << max_visits << "\ncn_fraction = " << d(cn_fraction)
     << "\nrecency_signal = " << (recency_signal ? "true" : "false")
     << "\nrecency_window = " << d(recency_window)
     << "\npost_index_visits = " << post_index_visits << '\n';
  return os.str();
}

// ---- truth ------------------------------------------------------------------------

const SubjectTruth& SyntheticTruth::find(std::string_view id) const {
  for (const auto& s : subjects)
    if (s.id == id) return s;
  throw LookupError("synthetic truth: unknown subject '" + std::string(id) + "'");
}

double oracle_risk(const SyntheticTruth& truth, std::string_view id, double horizon) {
  const auto& s = truth.find(id);
  if (!(horizon > 0.0) || truth.bins.empty() || horizon > truth.bins.back())
    throw DomainError("oracle_risk: horizon outside the hazard grid");
  const auto k = static_cast<std::size_t>(
      std::lower_bound(truth.bins.begin(), truth.bins.end(), horizon) - truth.bins.begin());
  double surv = 1.0;
  for (std::size_t j = 0; j <= k; ++j) surv *= 1.0 - s.hazards[j];
  return 1.0 - surv;
}

std::string SyntheticTruth::to_csv(std::span<const double> horizons) const {
  std::ostringstream os;
  std::vector<std::string> head{"RID", "group", "frailty", "event_time", "censor_time", "event"};
  for (std::size_t k = 0; k < bins.size(); ++k) head.push_back("h" + std::to_string(k + 1));
  for (double h : horizons) head.push_back("F" + csv::format_double(h));
  csv::write_row(os, head);
  auto num = [](double x) { return std::isfinite(x) ? csv::format_double(x) : std::string("Inf"); };
  for (const auto& s : subjects) {
    std::vector<std::string> row{s.id, s.group, num(s.frailty), num(s.event_time),
                                 num(s.censor_time), s.observed_event ? "1" : "0"};
    for (double h : s.hazards) row.push_back(num(h));
    for (double h : horizons) row.push_back(num(oracle_risk(*this, s.id, h)));
    csv::write_row(os, row);
  }
  return os.str();
}

// ---- generator --------------------------------------------------------------------

namespace {

struct Labels {
  const char *dx_bl, *source_dx, *target_dx;
  const char *stable_change, *convert_change, *target_change;
};

constexpr Labels kMciSource{"LMCI", "MCI", "Dementia", "2", "5", "3"};
constexpr Labels kCnSource{"CN", "CN", "MCI", "1", "4", "2"};

// Visit times in [0, end): first at 0, the rest jittered around an even grid.
std::vector<double> schedule(std::size_t n, double end, double jitter, Rng& rng, bool include_end) {
  std::vector<double> t{0.0};
  const std::size_t slots = include_end ? n - 1 : n;
  for (std::size_t j = 1; j < slots; ++j)
    t.push_back(end * (static_cast<double>(j) + jitter * (rng.uniform() - 0.5)) /
                static_cast<double>(slots));
  if (include_end) t.push_back(end);
  return t;
}

double sample_event_time(const std::vector<double>& hazards, const std::vector<double>& bins,
                         Rng& rng) {
  double lo = 0.0;
  for (std::size_t k = 0; k < bins.size(); ++k) {
    if (rng.bernoulli(hazards[k])) return rng.uniform(std::max(lo, kMinEventTime), bins[k]);
    lo = bins[k];
  }
  // Beyond the grid the last hazard continues per one-year step.
  for (double t = bins.back(); t < kTailCap; t += 1.0)
    if (rng.bernoulli(hazards.back())) return rng.uniform(t, t + 1.0);
  return kInf;
}

}  // namespace

Generated generate(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t P = spec.numeric_features;
  std::vector<std::string> header{"RID", "EXAMDATE", "DX_bl", "DX", "DXCHANGE"};
  if (spec.categorical_features >= 1) header.push_back("PTGENDER");
  if (spec.categorical_features >= 2) header.push_back("APOE4");
  std::vector<double> loading(P, 0.0), scale(P), offset(P);
  for (std::size_t p = 0; p < P; ++p) {
    char name[32];
    std::snprintf(name, sizeof name, "X%02zu", p + 1);
    header.push_back(name);
    if (p < spec.informative_features) loading[p] = p % 2 == 0 ? 1.0 : -1.0;
    scale[p] = 1.0 + static_cast<double>(p % 5);
    offset[p] = 10.0 * static_cast<double>(p + 1);
  }
  double max_drift = 0.0;
  for (const auto& g : spec.groups) max_drift = std::max(max_drift, std::abs(g.drift));

  std::ostringstream os;
  csv::write_row(os, header);
  Generated out;
  out.truth.bins = spec.bins;
  const cohort::Date epoch{std::chrono::year{2005} / 1 / 1};

  for (std::size_t i = 0; i < spec.subjects; ++i) {
    Rng rng = Rng::derived(seed, "synthetic", i);
    SubjectTruth truth;
    truth.id = std::to_string(i + 1);

    double u = rng.uniform(), acc = 0.0;
    std::size_t gi = spec.groups.size() - 1;
    for (std::size_t g = 0; g < spec.groups.size(); ++g) {
      acc += spec.groups[g].proportion;
      if (u < acc) {
        gi = g;
        break;
      }
    }
    const auto& group = spec.groups[gi];
    truth.group = group.name;
    truth.frailty = rng.normal();
    const double mult = std::exp(spec.frailty_sd * truth.frailty);
    double surv = 1.0;
    for (double h : group.hazards) {
      const double hi = 1.0 - std::pow(1.0 - h, mult);
      truth.hazards.push_back(std::clamp(hi, 1e-12, 1.0 - 1e-12));
      surv *= 1.0 - truth.hazards.back();
      truth.cif.push_back(1.0 - surv);
    }
    truth.event_time = sample_event_time(truth.hazards, spec.bins, rng);
    truth.censor_time =
        rng.bernoulli(spec.censoring_rate) ? rng.uniform(spec.censor_min, spec.censor_max) : kInf;
    truth.observed_event = std::isfinite(truth.event_time) && truth.event_time < truth.censor_time;
    const double end = truth.observed_event
                           ? truth.event_time
                           : (std::isfinite(truth.censor_time) ? truth.censor_time : spec.censor_max);

    const bool cn_source = rng.bernoulli(spec.cn_fraction);
    const Labels& lab = cn_source ? kCnSource : kMciSource;

    // Visit schedule.
    const std::size_t span = spec.max_visits - spec.min_visits + 1;
    std::size_t n = spec.min_visits + static_cast<std::size_t>(rng.below(span));
    std::vector<double> times;
    std::size_t first_target = 0;  // index of the conversion visit, if any
    // Visits before the end are recorded over a random leading share of the span.
    const double recorded = rng.uniform(spec.min_coverage, 1.0) * end;
    if (truth.observed_event) {
      n = std::min<std::size_t>(n, std::max<std::size_t>(2, 1 + static_cast<std::size_t>(end / 0.05)));
      times = schedule(n, recorded, spec.jitter, rng, false);
      first_target = times.size();
      times.push_back(end);
      for (std::size_t k = 0; k < spec.post_index_visits; ++k)
        times.push_back(times.back() + rng.uniform(0.3, 1.0));
    } else {
      times = schedule(n, recorded, spec.jitter, rng, false);
      times.push_back(end);
      first_target = times.size();
    }

    // Subject-level feature parameters.
    const double drift = spec.signal * group.drift + spec.frailty_drift * truth.frailty;
    std::vector<double> level(P), slope(P);
    for (std::size_t p = 0; p < P; ++p) {
      level[p] = spec.level_sd * rng.normal();
      slope[p] = loading[p] * drift + spec.slope_sd * rng.normal();
    }
    const bool female = rng.bernoulli(0.5);
    const double carrier_p = 0.25 + 0.3 * (max_drift > 0.0 ? std::abs(group.drift) / max_drift : 0.0);
    const int apoe = rng.bernoulli(carrier_p) ? (rng.bernoulli(0.25) ? 2 : 1) : 0;

    const auto base = epoch + std::chrono::days{static_cast<int>(rng.below(5 * 365))};
    int last_day = -1;
    auto missing_token = [&]() { return rng.bernoulli(0.5) ? std::string("-4") : std::string(); };
    for (std::size_t v = 0; v < times.size(); ++v) {
      int day = static_cast<int>(std::lround(times[v] * cohort::kDaysPerYear));
      if (day <= last_day) day = last_day + 1;
      last_day = day;
      const bool converted = v >= first_target;
      std::vector<std::string> row{truth.id, cohort::format_date(base + std::chrono::days{day}),
                                   lab.dx_bl, converted ? lab.target_dx : lab.source_dx,
                                   v == first_target ? lab.convert_change
                                                     : (converted ? lab.target_change : lab.stable_change)};
      if (spec.categorical_features >= 1)
        row.push_back(rng.bernoulli(spec.missing_rate) ? missing_token() : (female ? "Female" : "Male"));
      if (spec.categorical_features >= 2)
        row.push_back(rng.bernoulli(spec.missing_rate) ? missing_token() : std::to_string(apoe));
      const double t_eff =
          spec.recency_signal ? std::max(0.0, times[v] - (end - spec.recency_window)) : times[v];
      for (std::size_t p = 0; p < P; ++p) {
        const double x = level[p] + slope[p] * t_eff + spec.noise_sd * rng.normal();
        row.push_back(rng.bernoulli(spec.missing_rate) ? missing_token()
                                                       : fixed4(offset[p] + scale[p] * x));
      }
      csv::write_row(os, row);
    }
    out.truth.subjects.push_back(std::move(truth));
  }
  out.csv = os.str();
  return out;
}

}  // namespace survtx::synthetic
