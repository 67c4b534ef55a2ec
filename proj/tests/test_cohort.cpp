#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include "support/support.hpp"
#include "survtx/cohort.hpp"
#include "survtx/csv.hpp"

using namespace survtx;
using namespace survtx::cohort;

namespace {

// Two MCI->AD converters, two stable MCI controls, one inconsistent subject.
const char* kTable =
    "RID,EXAMDATE,DX_bl,DX,DXCHANGE,PTGENDER,APOE4,MMSE,ADAS\n"
    "1,2010-01-01,LMCI,MCI,2,Male,1,27,10\n"
    "1,2010-07-01,LMCI,MCI,2,Male,1,26,12\n"
    "1,2011-01-01,LMCI,MCI,2,Male,1,25,14\n"
    "1,2012-01-01,LMCI,Dementia,5,Male,1,21,20\n"
    "1,2013-01-01,LMCI,Dementia,3,Male,1,19,25\n"
    "2,2011-03-01,LMCI,MCI,2,Female,0,28,8\n"
    "2,2011-09-01,LMCI,MCI,2,Female,0,28,9\n"
    "2,2012-03-01,LMCI,Dementia,5,Female,0,24,15\n"
    "3,2010-01-01,LMCI,MCI,2,Female,0,29,7\n"
    "3,2010-07-01,LMCI,MCI,2,Female,0,29,7\n"
    "3,2011-01-01,LMCI,MCI,2,Female,0,28,8\n"
    "3,2012-01-01,LMCI,MCI,2,Female,0,28,8\n"
    "3,2013-01-01,LMCI,MCI,2,Female,0,28,9\n"
    "4,2010-02-01,LMCI,MCI,2,Male,2,27,9\n"
    "4,2010-08-01,LMCI,MCI,2,Male,2,27,10\n"
    "4,2011-02-01,LMCI,MCI,2,Male,2,26,11\n"
    "4,2011-08-01,LMCI,,-4,Male,2,26,11\n"
    "5,2010-01-01,LMCI,MCI,2,Male,0,28,9\n"
    "5,2010-06-01,LMCI,CN,7,Male,0,29,8\n"
    "5,2011-01-01,LMCI,Dementia,5,Male,0,22,18\n";

std::shared_ptr<const RawTable> table_of(const std::string& csv) { return fixture::table_from_csv(csv); }

CohortOptions mci_ad() {
  CohortOptions o;
  o.task = Task::mci_to_ad;
  return o;
}

}  // namespace

TEST(ParseTable, MissingMarkers) {
  const auto t = table_of("RID,EXAMDATE,DX_bl,DX,DXCHANGE,X\n1,2010-01-01,CN,CN,1,-4\n1,2010-02-01,CN,CN,1,\n"
                          "1,2010-03-01,CN,CN,1,23.5\n");
  const auto x = t->column("X");
  EXPECT_TRUE(t->missing[0][x]);
  EXPECT_TRUE(t->missing[1][x]);
  EXPECT_FALSE(t->missing[2][x]);
  EXPECT_EQ(std::stod(t->cells[2][x]), 23.5);
}

TEST(ParseTable, SchemaAndDateErrors) {
  EXPECT_THROW(table_of("RID,EXAMDATE,DX,DXCHANGE\n1,2010-01-01,CN,1\n"), SchemaError);
  try {
    table_of("RID,EXAMDATE,DX_bl,DX,DXCHANGE\n1,2010-01-01,CN,CN,1\n1,2010-13-45,CN,CN,1\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 1u);
  }
}

TEST(DeriveIndex, Examples) {
  const DxState cn = DxState::cn, mci = DxState::mci, ad = DxState::ad;
  auto conv = derive_index(std::vector{cn, cn, mci}, Task::cn_to_mci);
  EXPECT_EQ(conv.kind, IndexKind::converter);
  EXPECT_EQ(conv.index_visit, 2u);
  EXPECT_EQ(derive_index(std::vector{cn, cn, cn}, Task::cn_to_mci).kind, IndexKind::control);
  EXPECT_EQ(derive_index(std::vector{cn, ad, mci}, Task::cn_to_mci).kind, IndexKind::excluded);
  EXPECT_EQ(derive_index(std::vector{mci, mci}, Task::cn_to_mci).kind, IndexKind::ineligible);
  // Missing diagnoses are skipped, not treated as the target.
  auto skip = derive_index(std::vector{mci, DxState::unknown, ad}, Task::mci_to_ad);
  EXPECT_EQ(skip.kind, IndexKind::converter);
  EXPECT_EQ(skip.index_visit, 2u);
}

TEST(DxLabels, ChangeCodesAndLabels) {
  EXPECT_EQ(dx_from_change("1"), DxState::cn);
  EXPECT_EQ(dx_from_change("4"), DxState::mci);
  EXPECT_EQ(dx_from_change("5"), DxState::ad);
  EXPECT_EQ(dx_from_label("Dementia"), DxState::ad);
  EXPECT_EQ(dx_from_label("MCI to Dementia"), DxState::ad);
  EXPECT_EQ(dx_from_label("-4"), DxState::unknown);
  EXPECT_EQ(dx_from_baseline("LMCI"), DxState::mci);
}

TEST(PseudoIndex, NearestCandidateWithTwoEarlierVisits) {
  Rng rng(1);
  const std::vector<double> follow{1.1};
  const auto picks = match_pseudo_index({{0, 0.5, 1, 2}, {0, 1}}, follow, rng);
  ASSERT_TRUE(picks[0].has_value());
  EXPECT_EQ(*picks[0], 2u);  // the year-1 visit
  EXPECT_FALSE(picks[1].has_value());

  const std::vector<double> many{0.7, 1.9, 3.2, 2.2};
  const std::vector<std::vector<double>> times{{0, 0.5, 1, 1.5, 2, 3}, {0, 1, 2, 3, 4}};
  Rng a(5), b(5);
  EXPECT_EQ(match_pseudo_index(times, many, a), match_pseudo_index(times, many, b));
}

TEST(ResetTime, DayArithmetic) {
  SubjectHistory h;
  h.visits.push_back({*parse_date("2010-01-01"), 0, {}});
  h.visits.push_back({*parse_date("2011-01-01"), 0, {}});
  h.index_date = *parse_date("2010-01-01") + std::chrono::days{730};
  reset_time(h);
  EXPECT_EQ(h.visits[0].time, 0.0);
  EXPECT_DOUBLE_EQ(h.visits[1].time, 365.0 / 365.25);
  EXPECT_DOUBLE_EQ(h.label.time, 730.0 / 365.25);

  SubjectHistory one;
  one.visits.push_back({*parse_date("2015-05-05"), 3.0, {}});
  one.index_date = *parse_date("2016-05-05");
  reset_time(one);
  EXPECT_EQ(one.visits[0].time, 0.0);
}

TEST(BuildCohort, ConvertersControlsExclusions) {
  const auto c = build_cohort(table_of(kTable), mci_ad());
  EXPECT_EQ(c.counts.converters, 2u);
  EXPECT_EQ(c.counts.excluded_inconsistent, 1u);  // subject 5 passes through CN
  const auto* s1 = c.find("1");
  ASSERT_NE(s1, nullptr);
  EXPECT_TRUE(s1->label.event);
  EXPECT_EQ(s1->visits.size(), 3u);  // visits on/after the index are excluded
  EXPECT_DOUBLE_EQ(s1->label.time, 730.0 / 365.25);
  for (const auto& h : c.subjects) {
    EXPECT_GE(h.visits.size(), 2u);
    EXPECT_EQ(h.visits.front().time, 0.0);
    EXPECT_GE(h.label.time, h.visits.back().time);
    for (const auto& v : h.visits) EXPECT_LT(v.date, h.index_date);
  }
}

TEST(BuildCohort, TaskSelectsSourceState) {
  synthetic::SyntheticSpec spec;
  spec.subjects = 120;
  spec.cn_fraction = 0.5;
  const auto gen = synthetic::generate(spec, 3);
  CohortOptions a = mci_ad(), b;
  b.task = Task::cn_to_mci;
  const auto ca = build_cohort(fixture::table_from_csv(gen.csv), a);
  const auto cb = build_cohort(fixture::table_from_csv(gen.csv), b);
  std::set<std::string> ida, idb;
  for (const auto& h : ca.subjects) ida.insert(h.id);
  for (const auto& h : cb.subjects) idb.insert(h.id);
  EXPECT_FALSE(ida.empty());
  EXPECT_FALSE(idb.empty());
  for (const auto& id : ida) EXPECT_EQ(idb.count(id), 0u);
}

TEST(FilterSubjects, RowMissingnessThreshold) {
  // Ten candidate columns; one missing = 10% (kept), two missing = 20% (removed).
  std::string csv = "RID,EXAMDATE,DX_bl,DX,DXCHANGE";
  for (int i = 0; i < 10; ++i) csv += ",X" + std::to_string(i);
  csv += "\n";
  auto row = [&](const char* id, const char* date, const char* dx, int missing) {
    std::string r = std::string(id) + "," + date + ",LMCI," + dx + ",2";
    for (int i = 0; i < 10; ++i) r += i < missing ? ",-4" : "," + std::to_string(i + 1);
    csv += r + "\n";
  };
  row("1", "2010-01-01", "MCI", 1);
  row("1", "2010-06-01", "MCI", 0);
  row("1", "2011-01-01", "Dementia", 0);
  row("2", "2010-01-01", "MCI", 2);
  row("2", "2010-06-01", "MCI", 0);
  row("2", "2011-01-01", "Dementia", 0);
  const auto c = build_cohort(table_of(csv), mci_ad());
  ASSERT_NE(c.find("1"), nullptr);
  EXPECT_EQ(c.find("1")->visits.size(), 2u);
  EXPECT_EQ(c.find("2"), nullptr);  // one visit left after the 20% row is removed
  EXPECT_EQ(c.counts.filtered.rows_removed, 1u);
  EXPECT_EQ(c.counts.filtered.subjects_removed, 1u);
}

TEST(Leakage, PostIndexRowsDoNotChangeHistories) {
  const auto base = build_cohort(table_of(kTable), mci_ad());
  // Mutate every post-index row of the converters (values and diagnoses).
  std::string mutated = kTable;
  auto replace = [&](const std::string& from, const std::string& to) {
    const auto p = mutated.find(from);
    ASSERT_NE(p, std::string::npos);
    mutated.replace(p, from.size(), to);
  };
  replace("1,2012-01-01,LMCI,Dementia,5,Male,1,21,20", "1,2012-01-01,LMCI,Dementia,5,Female,0,-4,999");
  replace("1,2013-01-01,LMCI,Dementia,3,Male,1,19,25", "1,2013-01-01,LMCI,MCI,2,,,1,1");
  replace("2,2012-03-01,LMCI,Dementia,5,Female,0,24,15", "2,2012-03-01,LMCI,Dementia,5,Male,2,0,0");
  const auto other = build_cohort(table_of(mutated), mci_ad());
  for (const char* id : {"1", "2"}) {
    const auto* a = base.find(id);
    const auto* b = other.find(id);
    ASSERT_TRUE(a && b);
    EXPECT_EQ(a->label.time, b->label.time);
    EXPECT_EQ(a->label.event, b->label.event);
    ASSERT_EQ(a->visits.size(), b->visits.size());
    for (std::size_t v = 0; v < a->visits.size(); ++v) {
      EXPECT_EQ(a->visits[v].time, b->visits[v].time);
      EXPECT_EQ(a->visits[v].rows, b->visits[v].rows);
    }
  }
}

TEST(Split, LargestRemainderAndStrata) {
  std::vector<SubjectHistory> subjects;
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    SubjectHistory h;
    h.id = std::to_string(1000 + i);
    h.label.event = i < 40;
    h.label.time = rng.uniform(0.5, 5.0);
    subjects.push_back(h);
  }
  const auto s = stratified_split(subjects, 7);
  EXPECT_EQ(s.train.size(), 70u);
  EXPECT_EQ(s.validation.size(), 15u);
  EXPECT_EQ(s.test.size(), 15u);
  std::set<std::string> all;
  for (auto which : {SplitName::train, SplitName::validation, SplitName::test}) {
    std::size_t events = 0;
    for (const auto& id : s.ids(which)) {
      EXPECT_TRUE(all.insert(id).second);
      events += std::stoi(id) - 1000 < 40 ? 1 : 0;
    }
    const double rate = static_cast<double>(events) / static_cast<double>(s.ids(which).size());
    EXPECT_NEAR(rate, 0.40, 0.1);
  }
  EXPECT_EQ(all.size(), 100u);
  const auto again = stratified_split(subjects, 7);
  EXPECT_EQ(again.train, s.train);
  EXPECT_EQ(again.test, s.test);
}

TEST(Split, SingleStratum) {
  std::vector<SubjectHistory> subjects;
  for (int i = 0; i < 20; ++i) {
    SubjectHistory h;
    h.id = std::to_string(i);
    h.label = {1.0, false};
    subjects.push_back(h);
  }
  const auto s = stratified_split(subjects, 1);
  EXPECT_EQ(s.train.size(), 14u);
  EXPECT_EQ(s.validation.size(), 3u);
  EXPECT_EQ(s.test.size(), 3u);
}

TEST(Manifest, RoundTripAndRebuild) {
  synthetic::SyntheticSpec spec;
  spec.subjects = 80;
  const auto gen = synthetic::generate(spec, 1);
  const auto c = build_cohort(fixture::table_from_csv(gen.csv), mci_ad());
  const auto split = stratified_split(c.subjects, 0);
  const auto rows = make_manifest(c, split);
  EXPECT_EQ(rows.size(), c.subjects.size());
  std::stringstream ss;
  write_manifest(ss, rows);
  const auto back = read_manifest(ss);
  const auto rebuilt = split_from_manifest(c, back);
  EXPECT_EQ(rebuilt.train, split.train);
  EXPECT_EQ(rebuilt.validation, split.validation);
  EXPECT_EQ(rebuilt.test, split.test);
}
