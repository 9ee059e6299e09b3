#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace causalnav::io {

/// Shortest round-trip decimal representation; independent of the C locale.
std::string format_double(double v);

double parse_double(std::string_view s);
long long parse_int(std::string_view s);

/// Splits on commas; no quoting support (none of our fields contain commas).
std::vector<std::string_view> split_csv(std::string_view line);

/// Reads the next non-empty line, stripping a trailing '\r'. False at end of stream.
bool next_line(std::istream& is, std::string& line);

/// Verifies a header row against the expected column names.
void expect_header(std::istream& is, const std::vector<std::string>& columns, std::string_view what);

void write_header(std::ostream& os, const std::vector<std::string>& columns);

}  // namespace causalnav::io
