#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace survtx::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column position, or npos when absent.
  std::size_t find(std::string_view name) const;
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

/// RFC 4180-style reader: quoted fields, doubled quotes, CRLF tolerant.
/// Short rows are padded with empty cells.
Table read(std::istream& in);
Table read_file(const std::filesystem::path& path);

void write_row(std::ostream& out, const std::vector<std::string>& cells);
std::string escape(std::string_view cell);

/// Shortest round-trippable decimal form of a double.
std::string format_double(double value);

/// Writes `content` to `path` via a temporary file and rename, so readers never
/// observe a partially written file.
void atomic_write(const std::filesystem::path& path, std::string_view content);

}  // namespace survtx::csv
