#include "survtx/cohort.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "survtx/csv.hpp"
#include "survtx/error.hpp"

namespace survtx::cohort {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Numeric ids compare numerically, otherwise lexicographically.
bool id_less(const std::string& a, const std::string& b) {
  long long x = 0, y = 0;
  auto ra = std::from_chars(a.data(), a.data() + a.size(), x);
  auto rb = std::from_chars(b.data(), b.data() + b.size(), y);
  const bool na = ra.ec == std::errc() && ra.ptr == a.data() + a.size();
  const bool nb = rb.ec == std::errc() && rb.ptr == b.data() + b.size();
  if (na && nb) return x < y;
  if (na != nb) return na;
  return a < b;
}

DxState source_state(Task task) { return task == Task::cn_to_mci ? DxState::cn : DxState::mci; }
DxState target_state(Task task) { return task == Task::cn_to_mci ? DxState::mci : DxState::ad; }

DxState visit_state(const RawTable& t, const Visit& v) {
  if (auto dx = visit_cell(t, v, t.dx_col)) {
    const auto s = dx_from_label(*dx);
    if (s != DxState::unknown) return s;
  }
  if (auto code = visit_cell(t, v, t.dxchange_col)) return dx_from_change(*code);
  return DxState::unknown;
}

}  // namespace

std::optional<Date> parse_date(std::string_view text) {
  text = trim(text);
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  int y = 0;
  unsigned m = 0, d = 0;
  auto ok = [](std::string_view s, auto& out) {
    auto r = std::from_chars(s.data(), s.data() + s.size(), out);
    return r.ec == std::errc() && r.ptr == s.data() + s.size();
  };
  if (!ok(text.substr(0, 4), y) || !ok(text.substr(5, 2), m) || !ok(text.substr(8, 2), d))
    return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                        std::chrono::day{d}};
  if (!ymd.ok()) return std::nullopt;
  return Date{ymd};
}

std::string format_date(Date d) {
  const std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

double years_between(Date from, Date to) {
  return static_cast<double>((to - from).count()) / kDaysPerYear;
}

bool is_missing_cell(std::string_view cell) {
  cell = trim(cell);
  return cell.empty() || cell == "-4";
}

std::size_t RawTable::column(std::string_view name) const {
  if (auto c = find_column(name)) return *c;
  throw SchemaError("missing required column '" + std::string(name) + "'");
}

std::optional<std::size_t> RawTable::find_column(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return i;
  return std::nullopt;
}

RawTable parse_table(std::istream& in) {
  auto csv = csv::read(in);
  RawTable t;
  t.columns = std::move(csv.header);
  t.subject_col = t.column(kSubjectColumn);
  t.date_col = t.column(kDateColumn);
  t.dx_bl_col = t.column(kBaselineDxColumn);
  t.dx_col = t.column(kDxColumn);
  t.dxchange_col = t.column(kDxChangeColumn);
  t.cells = std::move(csv.rows);
  t.missing.reserve(t.cells.size());
  t.dates.reserve(t.cells.size());
  for (std::size_t r = 0; r < t.cells.size(); ++r) {
    const auto& row = t.cells[r];
    std::vector<bool> miss(row.size());
    for (std::size_t c = 0; c < row.size(); ++c) miss[c] = is_missing_cell(row[c]);
    if (miss[t.subject_col]) throw ParseError("missing subject id", r);
    auto date = parse_date(row[t.date_col]);
    if (!date) throw ParseError("unparseable visit date '" + row[t.date_col] + "'", r);
    t.dates.push_back(*date);
    t.missing.push_back(std::move(miss));
  }
  return t;
}

RawTable parse_table_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_table(in);
}

Task parse_task(std::string_view text) {
  const auto s = lower(text);
  if (s == "cn-mci" || s == "cn_to_mci" || s == "cn->mci" || s == "cn2mci") return Task::cn_to_mci;
  if (s == "mci-ad" || s == "mci_to_ad" || s == "mci->ad" || s == "mci2ad") return Task::mci_to_ad;
  throw ConfigError("unknown task '" + std::string(text) + "' (expected cn-mci or mci-ad)");
}

std::string task_name(Task task) { return task == Task::cn_to_mci ? "cn-mci" : "mci-ad"; }

DxState dx_from_label(std::string_view label) {
  const auto s = lower(trim(label));
  if (s.empty() || s == "-4") return DxState::unknown;
  // Transition labels ("MCI to Dementia") describe the state after the arrow.
  std::string_view cur = s;
  if (auto pos = cur.rfind(" to "); pos != std::string_view::npos) cur = cur.substr(pos + 4);
  if (cur == "nl" || cur == "cn" || cur == "normal") return DxState::cn;
  if (cur == "mci" || cur == "emci" || cur == "lmci") return DxState::mci;
  if (cur == "dementia" || cur == "ad") return DxState::ad;
  return DxState::unknown;
}

DxState dx_from_change(std::string_view code) {
  int v = 0;
  const auto s = trim(code);
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc()) return DxState::unknown;
  switch (v) {
    case 1: case 7: case 9: return DxState::cn;
    case 2: case 4: case 8: return DxState::mci;
    case 3: case 5: case 6: return DxState::ad;
    default: return DxState::unknown;
  }
}

DxState dx_from_baseline(std::string_view label) {
  const auto s = lower(trim(label));
  if (s == "cn" || s == "smc" || s == "nl") return DxState::cn;
  if (s == "emci" || s == "lmci" || s == "mci") return DxState::mci;
  if (s == "ad" || s == "dementia") return DxState::ad;
  return DxState::unknown;
}

std::optional<std::string_view> visit_cell(const RawTable& table, const Visit& visit,
                                           std::size_t column) {
  for (auto r : visit.rows)
    if (!table.missing[r][column]) return std::string_view(table.cells[r][column]);
  return std::nullopt;
}

IndexOutcome derive_index(std::span<const DxState> states, Task task) {
  const auto source = source_state(task);
  const auto target = target_state(task);
  if (states.empty() || states[0] != source) return {IndexKind::ineligible, 0};
  for (std::size_t i = 1; i < states.size(); ++i) {
    if (states[i] == DxState::unknown || states[i] == source) continue;
    if (states[i] == target) return {IndexKind::converter, i};
    return {IndexKind::excluded, 0};
  }
  return {IndexKind::control, 0};
}

std::vector<std::optional<std::size_t>> match_pseudo_index(
    const std::vector<std::vector<double>>& visit_times,
    std::span<const double> converter_followups, Rng& rng) {
  std::vector<std::optional<std::size_t>> out(visit_times.size());
  for (std::size_t c = 0; c < visit_times.size(); ++c) {
    const auto& times = visit_times[c];
    if (times.size() < 3) continue;
    double target = std::numeric_limits<double>::infinity();
    if (!converter_followups.empty())
      target = converter_followups[static_cast<std::size_t>(rng.below(converter_followups.size()))];
    std::size_t best = 2;
    for (std::size_t p = 3; p < times.size(); ++p)
      if (std::abs(times[p] - target) < std::abs(times[best] - target)) best = p;
    out[c] = best;
  }
  return out;
}

void reset_time(SubjectHistory& h) {
  if (h.visits.empty()) return;
  const Date first = h.visits.front().date;
  for (auto& v : h.visits) v.time = years_between(first, v.date);
  h.label.time = years_between(first, h.index_date);
}

FilterStats filter_subjects(std::vector<SubjectHistory>& subjects, const RawTable& table,
                            std::span<const std::size_t> candidate_columns,
                            double max_row_missing) {
  FilterStats stats;
  for (auto& s : subjects) {
    std::vector<Visit> kept;
    for (auto& v : s.visits) {
      std::size_t miss = 0;
      for (auto c : candidate_columns)
        if (!visit_cell(table, v, c)) ++miss;
      const double frac = candidate_columns.empty()
                              ? 0.0
                              : static_cast<double>(miss) /
                                    static_cast<double>(candidate_columns.size());
      if (frac > max_row_missing) {
        stats.rows_removed += v.rows.size();
      } else {
        kept.push_back(std::move(v));
      }
    }
    s.visits = std::move(kept);
  }
  const auto before = subjects.size();
  std::erase_if(subjects, [](const SubjectHistory& s) { return s.visits.size() < 2; });
  stats.subjects_removed = before - subjects.size();
  return stats;
}

std::string split_name(SplitName s) {
  switch (s) {
    case SplitName::train: return "train";
    case SplitName::validation: return "validation";
    case SplitName::test: return "test";
  }
  return "?";
}

SplitName parse_split(std::string_view text) {
  const auto s = lower(trim(text));
  if (s == "train") return SplitName::train;
  if (s == "validation" || s == "val" || s == "valid") return SplitName::validation;
  if (s == "test") return SplitName::test;
  throw ConfigError("unknown split '" + std::string(text) + "'");
}

const std::vector<std::string>& CohortSplit::ids(SplitName s) const {
  switch (s) {
    case SplitName::train: return train;
    case SplitName::validation: return validation;
    case SplitName::test: return test;
  }
  return train;
}

namespace {

// Largest-remainder apportionment of `n` units over `fractions`; ties go to
// the earlier entry.
std::vector<std::size_t> largest_remainder(std::size_t n, std::span<const double> fractions) {
  std::vector<std::size_t> out(fractions.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t j = 0; j < fractions.size(); ++j) {
    const double exact = static_cast<double>(n) * fractions[j];
    out[j] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    used += out[j];
    rem.emplace_back(exact - static_cast<double>(out[j]), j);
  }
  std::stable_sort(rem.begin(), rem.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; used < n && i < rem.size(); ++i, ++used) ++out[rem[i].second];
  return out;
}

}  // namespace

CohortSplit stratified_split(const std::vector<SubjectHistory>& subjects, std::uint64_t seed,
                             double train_fraction, double validation_fraction) {
  if (subjects.empty()) throw ContractError("stratified_split: empty cohort");
  CohortSplit split;
  split.train_fraction = train_fraction;
  split.validation_fraction = validation_fraction;
  split.test_fraction = 1.0 - train_fraction - validation_fraction;
  const std::size_t n = subjects.size();

  // Follow-up terciles over the full cohort (rank based, ties by id).
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (subjects[a].label.time != subjects[b].label.time)
      return subjects[a].label.time < subjects[b].label.time;
    return id_less(subjects[a].id, subjects[b].id);
  });
  std::vector<int> tercile(n);
  for (std::size_t r = 0; r < n; ++r) tercile[order[r]] = static_cast<int>(3 * r / n);

  // stratum key = event * 3 + tercile
  std::map<int, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < n; ++i)
    strata[(subjects[i].label.event ? 3 : 0) + tercile[i]].push_back(i);

  for (int label = 0; label < 2; ++label) {
    bool changed = true;
    while (changed) {
      changed = false;
      std::vector<int> present;
      for (int t = 0; t < 3; ++t)
        if (strata.count(label * 3 + t)) present.push_back(t);
      if (present.size() < 2) break;
      for (int t : present) {
        auto& members = strata[label * 3 + t];
        if (members.size() >= 3) continue;
        int nearest = -1;
        for (int u : present) {
          if (u == t) continue;
          if (nearest < 0 || std::abs(u - t) < std::abs(nearest - t)) nearest = u;
        }
        auto& dest = strata[label * 3 + nearest];
        dest.insert(dest.end(), members.begin(), members.end());
        split.warnings.push_back("stratum event=" + std::to_string(label) + " tercile=" +
                                 std::to_string(t) + " has " + std::to_string(members.size()) +
                                 " subjects; merged into tercile " + std::to_string(nearest));
        strata.erase(label * 3 + t);
        changed = true;
        break;
      }
    }
  }

  const double fr[3] = {split.train_fraction, split.validation_fraction, split.test_fraction};
  const auto targets = largest_remainder(n, fr);

  // Per-stratum floors, then hand out the remaining units in order of the
  // largest fractional part while respecting both stratum sizes and split totals.
  std::vector<std::vector<std::size_t>*> groups;
  std::vector<int> keys;
  for (auto& [k, v] : strata) {
    keys.push_back(k);
    groups.push_back(&v);
  }
  const std::size_t ns = groups.size();
  std::vector<std::array<std::size_t, 3>> quota(ns);
  std::vector<std::size_t> stratum_need(ns);
  std::array<std::size_t, 3> split_need = {targets[0], targets[1], targets[2]};
  struct Cell {
    double frac;
    std::size_t s;
    std::size_t j;
  };
  std::vector<Cell> cells;
  for (std::size_t s = 0; s < ns; ++s) {
    const auto size = groups[s]->size();
    std::size_t used = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      const double exact = static_cast<double>(size) * fr[j];
      quota[s][j] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      used += quota[s][j];
      split_need[j] -= std::min(split_need[j], quota[s][j]);
      cells.push_back({exact - static_cast<double>(quota[s][j]), s, j});
    }
    stratum_need[s] = size - used;
  }
  std::stable_sort(cells.begin(), cells.end(),
                   [](const Cell& a, const Cell& b) { return a.frac > b.frac; });
  bool progress = true;
  while (progress) {
    progress = false;
    for (const auto& c : cells) {
      if (stratum_need[c.s] > 0 && split_need[c.j] > 0) {
        ++quota[c.s][c.j];
        --stratum_need[c.s];
        --split_need[c.j];
        progress = true;
      }
    }
  }
  // Any leftover (only possible with inconsistent fractions) goes to train.
  for (std::size_t s = 0; s < ns; ++s) quota[s][0] += stratum_need[s];

  Rng rng = Rng::stream(seed, "split");
  for (std::size_t s = 0; s < ns; ++s) {
    auto members = *groups[s];
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return id_less(subjects[a].id, subjects[b].id);
    });
    rng.shuffle(members);
    std::size_t pos = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      auto& dest = j == 0 ? split.train : (j == 1 ? split.validation : split.test);
      for (std::size_t q = 0; q < quota[s][j]; ++q, ++pos) dest.push_back(subjects[members[pos]].id);
    }
    const std::string key =
        std::to_string(keys[s] / 3) + ":" + std::to_string(keys[s] % 3);
    for (auto m : members) split.strata.emplace_back(subjects[m].id, key);
  }
  for (auto* v : {&split.train, &split.validation, &split.test})
    std::sort(v->begin(), v->end(), id_less);
  std::sort(split.strata.begin(), split.strata.end(),
            [](const auto& a, const auto& b) { return id_less(a.first, b.first); });
  return split;
}

std::vector<std::string> CohortOptions::default_excluded_columns() {
  return {"PTID",     "VISCODE",    "SITE",         "D1",           "D2",
          "COLPROT",  "ORIGPROT",   "EXAMDATE_bl",  "baseline_stage", "visit_stage",
          "Month",    "M",          "Month_bl",     "Years_bl",     "update_stamp",
          "FLDSTRENG", "FSVERSION", "FLDSTRENG_bl", "FSVERSION_bl"};
}

std::vector<std::size_t> candidate_columns(const RawTable& table,
                                           std::span<const std::string> excluded) {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    if (c == table.subject_col || c == table.date_col || c == table.dx_bl_col ||
        c == table.dx_col || c == table.dxchange_col)
      continue;
    if (std::find(excluded.begin(), excluded.end(), table.columns[c]) != excluded.end()) continue;
    out.push_back(c);
  }
  return out;
}

const SubjectHistory* Cohort::find(std::string_view id) const {
  for (const auto& s : subjects)
    if (s.id == id) return &s;
  return nullptr;
}

Cohort build_cohort(std::shared_ptr<const RawTable> table_ptr, const CohortOptions& options) {
  if (!table_ptr) throw ContractError("build_cohort: null table");
  const RawTable& t = *table_ptr;
  Cohort cohort;
  cohort.task = options.task;
  cohort.table = table_ptr;
  cohort.candidate_columns = candidate_columns(t, options.excluded_columns);

  // Group rows by subject; order rows by date (then file order) and merge co-dated rows.
  std::map<std::string, std::vector<std::size_t>, decltype(&id_less)> by_subject(&id_less);
  for (std::size_t r = 0; r < t.rows(); ++r)
    by_subject[std::string(trim(t.cells[r][t.subject_col]))].push_back(r);

  struct Pending {
    SubjectHistory history;
    IndexKind kind;
  };
  std::vector<Pending> pending;
  std::vector<double> converter_followups;
  for (auto& [id, rows] : by_subject) {
    std::stable_sort(rows.begin(), rows.end(),
                     [&](std::size_t a, std::size_t b) { return t.dates[a] < t.dates[b]; });
    SubjectHistory h;
    h.id = id;
    for (auto r : rows) {
      if (!h.visits.empty() && h.visits.back().date == t.dates[r]) {
        h.visits.back().rows.push_back(r);
      } else {
        h.visits.push_back(Visit{t.dates[r], 0.0, {r}});
      }
    }
    std::vector<DxState> states;
    states.reserve(h.visits.size());
    for (const auto& v : h.visits) states.push_back(visit_state(t, v));
    if (!states.empty() && states[0] == DxState::unknown) {
      if (auto bl = visit_cell(t, h.visits[0], t.dx_bl_col)) states[0] = dx_from_baseline(*bl);
    }
    const auto outcome = derive_index(states, options.task);
    switch (outcome.kind) {
      case IndexKind::converter: {
        h.index_date = h.visits[outcome.index_visit].date;
        h.visits.resize(outcome.index_visit);
        h.label.event = true;
        converter_followups.push_back(years_between(h.visits.front().date, h.index_date));
        ++cohort.counts.converters;
        pending.push_back({std::move(h), outcome.kind});
        break;
      }
      case IndexKind::control:
        pending.push_back({std::move(h), outcome.kind});
        break;
      case IndexKind::excluded:
        ++cohort.counts.excluded_inconsistent;
        break;
      case IndexKind::ineligible:
        ++cohort.counts.ineligible;
        break;
    }
  }

  std::vector<std::size_t> control_pos;
  std::vector<std::vector<double>> control_times;
  for (std::size_t i = 0; i < pending.size(); ++i) {
    if (pending[i].kind != IndexKind::control) continue;
    control_pos.push_back(i);
    std::vector<double> times;
    const auto& vs = pending[i].history.visits;
    for (const auto& v : vs) times.push_back(years_between(vs.front().date, v.date));
    control_times.push_back(std::move(times));
  }
  if (converter_followups.empty() && !control_pos.empty())
    cohort.warnings.push_back("no converters: controls indexed at their last candidate visit");
  Rng rng = Rng::stream(options.seed, "pseudo-index");
  const auto picks = match_pseudo_index(control_times, converter_followups, rng);

  std::vector<SubjectHistory> kept;
  for (std::size_t i = 0, c = 0; i < pending.size(); ++i) {
    auto& h = pending[i].history;
    if (pending[i].kind == IndexKind::control) {
      const auto pick = picks[c++];
      if (!pick) {
        ++cohort.counts.controls_without_candidate;
        continue;
      }
      h.index_date = h.visits[*pick].date;
      h.visits.resize(*pick);
      h.label.event = false;
      ++cohort.counts.controls;
    }
    kept.push_back(std::move(h));
  }

  cohort.counts.filtered =
      filter_subjects(kept, t, cohort.candidate_columns, options.max_row_missing);
  for (auto& h : kept) reset_time(h);
  cohort.subjects = std::move(kept);
  return cohort;
}

std::vector<ManifestRow> make_manifest(const Cohort& cohort, const CohortSplit& split) {
  std::map<std::string, SplitName> assign;
  for (auto s : {SplitName::train, SplitName::validation, SplitName::test})
    for (const auto& id : split.ids(s)) assign[id] = s;
  std::vector<ManifestRow> rows;
  for (const auto& h : cohort.subjects) {
    auto it = assign.find(h.id);
    if (it == assign.end()) continue;
    rows.push_back({h.id, it->second, h.label.time, h.label.event, h.visits.size()});
  }
  return rows;
}

void write_manifest(std::ostream& out, std::span<const ManifestRow> rows) {
  csv::write_row(out, {"RID", "split", "T", "event", "n_visits"});
  for (const auto& r : rows)
    csv::write_row(out, {r.id, split_name(r.split), csv::format_double(r.time),
                         r.event ? "1" : "0", std::to_string(r.visits)});
}

std::vector<ManifestRow> read_manifest(std::istream& in) {
  auto t = csv::read(in);
  const auto id = t.find("RID"), sp = t.find("split"), tt = t.find("T"), ev = t.find("event"),
             nv = t.find("n_visits");
  if (id == csv::Table::npos || sp == csv::Table::npos || tt == csv::Table::npos ||
      ev == csv::Table::npos || nv == csv::Table::npos)
    throw SchemaError("manifest must have columns RID,split,T,event,n_visits");
  std::vector<ManifestRow> rows;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    ManifestRow m;
    m.id = row[id];
    m.split = parse_split(row[sp]);
    auto res = std::from_chars(row[tt].data(), row[tt].data() + row[tt].size(), m.time);
    if (res.ec != std::errc()) throw ParseError("manifest: bad T '" + row[tt] + "'", r);
    m.event = row[ev] == "1";
    m.visits = static_cast<std::size_t>(std::stoul(row[nv]));
    rows.push_back(std::move(m));
  }
  return rows;
}

CohortSplit split_from_manifest(const Cohort& cohort, std::span<const ManifestRow> rows) {
  CohortSplit split;
  for (const auto& r : rows) {
    const auto* h = cohort.find(r.id);
    if (!h || h->label.event != r.event ||
        csv::format_double(h->label.time) != csv::format_double(r.time) ||
        h->visits.size() != r.visits)
      throw SchemaError("manifest subject " + r.id + " does not match the rebuilt cohort");
    switch (r.split) {
      case SplitName::train: split.train.push_back(r.id); break;
      case SplitName::validation: split.validation.push_back(r.id); break;
      case SplitName::test: split.test.push_back(r.id); break;
    }
  }
  return split;
}

}  // namespace survtx::cohort
