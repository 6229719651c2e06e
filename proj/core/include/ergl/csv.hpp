#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ergl::csv {

// Minimal RFC 4180 reader/writer: comma separated, double-quoted fields may
// contain commas and "" escapes. No embedded newlines.
std::vector<std::string> split_line(std::string_view line);
std::string join_line(const std::vector<std::string>& fields);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row
};

// Every row must have as many fields as the header; blank lines are skipped.
Table read_file(const std::filesystem::path& path);

}  // namespace ergl::csv
