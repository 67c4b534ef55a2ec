#pragma once

// Command-line pipeline: synth, build-cohort, train, calibrate, evaluate,
// interpret. Exit codes: 0 success, 1 runtime failure, 2 configuration error.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "survtx/cohort.hpp"
#include "survtx/config.hpp"
#include "survtx/features.hpp"

namespace survtx::cli {

inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kConfigError = 2;

cohort::CohortOptions cohort_options(const RunConfig& config);

/// Parses the visit table and builds the cohort for the configured task.
cohort::Cohort load_cohort(const std::filesystem::path& csv, const RunConfig& config);

/// Engineers only the subjects of one split with a fitted preprocessor; other
/// splits' rows and labels are never read.
std::vector<features::EngineeredHistory> engineer_split(const cohort::Cohort& cohort,
                                                        const cohort::CohortSplit& split,
                                                        cohort::SplitName which,
                                                        const features::Preprocessor& prep);

/// Entry point; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace survtx::cli
