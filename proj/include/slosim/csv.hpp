#pragma once

#include <string>
#include <vector>

namespace slosim::csv {

// Shortest decimal representation that round-trips the double exactly.
std::string format_double(double v);

std::string join(const std::vector<std::string>& fields);

// Splits one CSV line on commas. No quoting: none of our formats embed commas.
std::vector<std::string> split(const std::string& line, char sep = ',');

double parse_double(const std::string& s);
long long parse_int(const std::string& s);

}  // namespace slosim::csv
