#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace balsens {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

/// Parses a full field as a double; accepts "inf", "-inf", "nan".
bool parse_double(std::string_view text, double& out);

/// Splits one CSV line. Double-quoted fields may contain commas; "" escapes a quote.
std::vector<std::string> split_csv_line(std::string_view line);

std::string_view trim(std::string_view text);

}  // namespace balsens
