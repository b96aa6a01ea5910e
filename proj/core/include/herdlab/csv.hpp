#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace herdlab::csv {

/// Numeric table with a string header row. All data cells are doubles;
/// files are written RFC-4180 (CRLF line endings) with 17-significant-digit
/// floats so that round-trips and byte-level determinism hold.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

std::string format_double(double v);

void write(const Table& t, const std::filesystem::path& to);
Table read(const std::filesystem::path& from);

}  // namespace herdlab::csv
