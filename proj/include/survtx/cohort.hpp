#pragma once

// Leakage-safe time-to-conversion cohorts from longitudinal visit tables.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "survtx/rng.hpp"

namespace survtx::cohort {

inline constexpr double kDaysPerYear = 365.25;

using Date = std::chrono::sys_days;

/// Parses an ISO YYYY-MM-DD date.
std::optional<Date> parse_date(std::string_view text);
std::string format_date(Date d);
double years_between(Date from, Date to);

inline constexpr std::string_view kSubjectColumn = "RID";
inline constexpr std::string_view kDateColumn = "EXAMDATE";
inline constexpr std::string_view kBaselineDxColumn = "DX_bl";
inline constexpr std::string_view kDxColumn = "DX";
inline constexpr std::string_view kDxChangeColumn = "DXCHANGE";

/// Cell text equal to "-4" or empty (after trimming) counts as missing.
bool is_missing_cell(std::string_view cell);

struct RawTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> cells;  // row-major
  std::vector<std::vector<bool>> missing;
  std::vector<Date> dates;  // parsed visit date per row

  std::size_t subject_col = 0;
  std::size_t date_col = 0;
  std::size_t dx_bl_col = 0;
  std::size_t dx_col = 0;
  std::size_t dxchange_col = 0;

  std::size_t rows() const { return cells.size(); }
  /// Throws SchemaError if absent.
  std::size_t column(std::string_view name) const;
  std::optional<std::size_t> find_column(std::string_view name) const;
};

/// Validates required columns, flags missing cells, parses dates. An
/// unparseable date raises ParseError carrying the 0-based data row index.
RawTable parse_table(std::istream& in);
RawTable parse_table_file(const std::filesystem::path& path);

enum class Task { cn_to_mci, mci_to_ad };
Task parse_task(std::string_view text);
std::string task_name(Task task);

enum class DxState { cn, mci, ad, unknown };

/// Current diagnostic state from a DX label ("NL", "MCI to Dementia", ...).
DxState dx_from_label(std::string_view label);
/// Current diagnostic state from a DXCHANGE code (1..9).
DxState dx_from_change(std::string_view code);
/// Baseline state from a DX_bl label ("CN", "SMC", "EMCI", "LMCI", "AD").
DxState dx_from_baseline(std::string_view label);

/// One dated visit. Co-dated source rows are merged; for every column the
/// first non-missing cell among `rows` wins.
struct Visit {
  Date date;
  double time = 0.0;  // years since first retained visit
  std::vector<std::size_t> rows;
};

/// Cell lookup honoring the merge rule; nullopt when all merged cells are missing.
std::optional<std::string_view> visit_cell(const RawTable& table, const Visit& visit,
                                           std::size_t column);

struct SurvivalLabel {
  double time = 0.0;  // T, years from first retained visit to index
  bool event = false;
};

struct SubjectHistory {
  std::string id;
  std::vector<Visit> visits;
  SurvivalLabel label;
  Date index_date;
};

enum class IndexKind { converter, control, excluded, ineligible };

struct IndexOutcome {
  IndexKind kind = IndexKind::ineligible;
  std::size_t index_visit = 0;  // position of the index visit (converters)
};

/// Classifies a date-ordered diagnosis sequence for a task. Converters are
/// indexed at the first post-baseline visit whose (non-missing) diagnosis is
/// the target; any earlier known diagnosis other than the source state
/// excludes the subject. Subjects whose baseline is not the source state are
/// ineligible.
IndexOutcome derive_index(std::span<const DxState> states, Task task);

/// Chooses a pseudo-index visit for each control: sample one converter
/// follow-up (with replacement), then the visit with at least two earlier
/// visits whose time from baseline is nearest (ties to the earlier visit).
/// `visit_times` are years from each control's first visit. Controls with
/// fewer than three visits get nullopt and are dropped.
std::vector<std::optional<std::size_t>> match_pseudo_index(
    const std::vector<std::vector<double>>& visit_times,
    std::span<const double> converter_followups, Rng& rng);

/// Rebases visit times and T on the first retained visit (years = days / 365.25).
void reset_time(SubjectHistory& history);

struct FilterStats {
  std::size_t rows_removed = 0;
  std::size_t subjects_removed = 0;
};

/// Drops visits whose missing fraction over `candidate_columns` exceeds
/// `max_row_missing`, then subjects left with fewer than two visits.
FilterStats filter_subjects(std::vector<SubjectHistory>& subjects, const RawTable& table,
                            std::span<const std::size_t> candidate_columns,
                            double max_row_missing = 0.10);

enum class SplitName { train, validation, test };
std::string split_name(SplitName s);
SplitName parse_split(std::string_view text);

struct CohortSplit {
  std::vector<std::string> train, validation, test;
  double train_fraction = 0.70, validation_fraction = 0.15, test_fraction = 0.15;
  /// Stratum label per subject id after merging ("event:tercile").
  std::vector<std::pair<std::string, std::string>> strata;
  std::vector<std::string> warnings;

  const std::vector<std::string>& ids(SplitName s) const;
};

/// Strata = conversion label x follow-up tercile (terciles of T over the
/// cohort). Each stratum is shuffled with `seed` and allotted by largest
/// remainder so that split totals also match the global largest-remainder
/// targets. Strata smaller than three merge into the nearest tercile of the
/// same label.
CohortSplit stratified_split(const std::vector<SubjectHistory>& subjects,
                             std::uint64_t seed, double train_fraction = 0.70,
                             double validation_fraction = 0.15);

struct CohortOptions {
  Task task = Task::mci_to_ad;
  std::uint64_t seed = 0;
  double max_row_missing = 0.10;
  /// Columns never used as predictors (identifiers, diagnosis, stage, dates).
  std::vector<std::string> excluded_columns = default_excluded_columns();

  static std::vector<std::string> default_excluded_columns();
};

struct CohortCounts {
  std::size_t converters = 0;
  std::size_t controls = 0;
  std::size_t excluded_inconsistent = 0;
  std::size_t ineligible = 0;
  std::size_t controls_without_candidate = 0;
  FilterStats filtered;
};

struct Cohort {
  Task task = Task::mci_to_ad;
  std::shared_ptr<const RawTable> table;
  std::vector<SubjectHistory> subjects;  // ordered by subject id
  std::vector<std::size_t> candidate_columns;
  CohortCounts counts;
  std::vector<std::string> warnings;

  const SubjectHistory* find(std::string_view id) const;
};

/// Full construction: group and merge rows, derive indices, match controls,
/// truncate at the index, filter, and reset time.
Cohort build_cohort(std::shared_ptr<const RawTable> table, const CohortOptions& options);

/// Columns eligible as predictors: everything except required and excluded columns.
std::vector<std::size_t> candidate_columns(const RawTable& table,
                                           std::span<const std::string> excluded);

struct ManifestRow {
  std::string id;
  SplitName split;
  double time;
  bool event;
  std::size_t visits;
};

std::vector<ManifestRow> make_manifest(const Cohort& cohort, const CohortSplit& split);
void write_manifest(std::ostream& out, std::span<const ManifestRow> rows);
std::vector<ManifestRow> read_manifest(std::istream& in);

/// Rebuilds the split assignment recorded in a manifest, checking that every
/// manifest subject exists in the cohort with the same label.
CohortSplit split_from_manifest(const Cohort& cohort, std::span<const ManifestRow> rows);

}  // namespace survtx::cohort
