#pragma once

// Versioned binary checkpoint: magic, format version, config block, named
// parameter table (little-endian f64), preprocessor, optional calibration.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "survtx/calibration.hpp"
#include "survtx/config.hpp"
#include "survtx/features.hpp"
#include "survtx/model.hpp"

namespace survtx::checkpoint {

inline constexpr std::string_view kMagic = "SURVTXCK";
inline constexpr std::uint32_t kVersion = 1;

struct Checkpoint {
  RunConfig config;  // ablations already folded into model/loss fields
  std::uint64_t seed = 0;
  std::size_t best_epoch = 0;
  features::Preprocessor preprocessor;
  model::ParamStore params;
  std::optional<calibration::Calibration> calibration;

  ModelConfig model_config() const;
};

/// Config with ablation switches resolved, as stored in checkpoints.
RunConfig resolved(const RunConfig& config);

std::string encode(const Checkpoint& ckpt);
/// ParseError on bad magic, unsupported version, or truncation.
Checkpoint decode(std::string_view bytes);

void save(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load(const std::filesystem::path& path);

}  // namespace survtx::checkpoint
