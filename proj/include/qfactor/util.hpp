#ifndef QFACTOR_UTIL_HPP
#define QFACTOR_UTIL_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace qfactor {

// Truncate toward zero at two decimals. Reported rates and ratios follow
// this convention throughout (e.g. 5.1988% prints as 5.19).
double floor2(double value);

// Locale-independent fixed-point formatting.
std::string format_fixed(double value, int decimals);

// FNV-1a 64-bit over a byte string; used for artifact manifests.
std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t value);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);
bool file_exists(const std::string& path);

std::vector<std::string> split_string(const std::string& text, char sep);
std::string join_strings(const std::vector<std::string>& parts,
                         const std::string& sep);

}  // namespace qfactor

#endif  // QFACTOR_UTIL_HPP
