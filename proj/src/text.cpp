#include "patchcast/text.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>

namespace patchcast::text {

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

namespace {

[[noreturn]] void bad_value(std::string_view value, std::string_view field, std::string_view what) {
    throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(field) +
                      ": expected " + std::string(what));
}

} // namespace

long long parse_int(std::string_view value, std::string_view field) {
    const std::string v = trim(value);
    long long out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) bad_value(value, field, "an integer");
    return out;
}

std::uint64_t parse_uint(std::string_view value, std::string_view field) {
    const std::string v = trim(value);
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
        bad_value(value, field, "a non-negative integer");
    }
    return out;
}

double parse_double(std::string_view value, std::string_view field) {
    const std::string v = trim(value);
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
        bad_value(value, field, "a finite number");
    }
    return out;
}

bool parse_bool(std::string_view value, std::string_view field) {
    std::string v = trim(value);
    for (auto& c : v) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad_value(value, field, "a boolean (true/false)");
}

std::vector<long long> parse_int_list(std::string_view value, std::string_view field) {
    std::vector<long long> out;
    if (trim(value).empty()) return out;
    for (const auto& item : split(value, ',')) out.push_back(parse_int(item, field));
    return out;
}

std::vector<double> parse_double_list(std::string_view value, std::string_view field) {
    std::vector<double> out;
    if (trim(value).empty()) return out;
    for (const auto& item : split(value, ',')) out.push_back(parse_double(item, field));
    return out;
}

std::string format_double(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc()) return std::to_string(value);
    return std::string(buf, ptr);
}

std::uint64_t fnv1a(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

} // namespace patchcast::text
