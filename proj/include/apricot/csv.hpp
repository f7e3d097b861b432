#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace apricot::csv {

// Shortest round-trip decimal form; NaN is written as an empty field.
std::string fmt(double value);

// Fixed form with `digits` significant digits, used in reports so output is
// byte-stable across runs.
std::string fmt_report(double value, int digits = 10);

std::vector<std::string> split_line(std::string_view line);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index by name; throws naming the file when absent.
  std::size_t column(std::string_view name) const;
  std::filesystem::path source;
};

Table read(const std::filesystem::path& path);

double parse_double(std::string_view text, std::string_view context);
long long parse_int(std::string_view text, std::string_view context);

}  // namespace apricot::csv
