#ifndef POLYFOLIO_CSV_HPP
#define POLYFOLIO_CSV_HPP

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "polyfolio/errors.hpp"

namespace polyfolio::csv {

// Plain comma-separated records with a header row. Fields are identifier
// tokens and numbers, so quoting is not supported.

inline std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline double parse_double(std::string_view s, const std::string& where) {
    s = trim(s);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
        throw InputError(where + ": not a finite number: '" + std::string(s) + "'");
    return v;
}

/// Shortest representation that round-trips.
inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

/// Reads `path`, checks the header matches `expected` exactly, and calls
/// row(fields, line_number) for every non-empty data line.
inline void read(const std::string& path, const std::vector<std::string>& expected,
                 const std::function<void(const std::vector<std::string_view>&, std::size_t)>& row) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw InputError(path + ": missing header row");
    auto header = split(trim(line));
    bool ok = header.size() == expected.size();
    for (std::size_t i = 0; ok && i < header.size(); ++i) ok = trim(header[i]) == expected[i];
    if (!ok) {
        std::string want;
        for (auto& e : expected) want += (want.empty() ? "" : ",") + e;
        throw InputError(path + ": header must be '" + want + "'");
    }
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto fields = split(trim(line));
        if (fields.size() != expected.size())
            throw InputError(path + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(expected.size()) + " fields");
        for (auto& f : fields) f = trim(f);
        row(fields, lineno);
    }
}

} // namespace polyfolio::csv

#endif
