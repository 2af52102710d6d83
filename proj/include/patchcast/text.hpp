#pragma once

#include "patchcast/errors.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace patchcast::text {

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

// Parsers report failures as ConfigError naming `field`.
long long parse_int(std::string_view value, std::string_view field);
std::uint64_t parse_uint(std::string_view value, std::string_view field);
double parse_double(std::string_view value, std::string_view field);
bool parse_bool(std::string_view value, std::string_view field);
std::vector<long long> parse_int_list(std::string_view value, std::string_view field);
std::vector<double> parse_double_list(std::string_view value, std::string_view field);

// Shortest representation that parses back to the identical double.
std::string format_double(double value);

template <class T>
std::string join(const std::vector<T>& items, std::string_view sep = ",") {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        if constexpr (std::is_floating_point_v<T>) {
            out += format_double(static_cast<double>(items[i]));
        } else if constexpr (std::is_convertible_v<T, std::string_view>) {
            out += std::string_view(items[i]);
        } else {
            out += std::to_string(items[i]);
        }
    }
    return out;
}

// FNV-1a, 64 bit.
std::uint64_t fnv1a(std::string_view data);
std::string hex64(std::uint64_t value);

} // namespace patchcast::text
