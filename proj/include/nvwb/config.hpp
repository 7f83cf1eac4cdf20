#pragma once

// Flat `key = value` text format shared by rate tables, protocol specs and
// CLI configs. `#` starts a comment line.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nvwb/errors.hpp"

namespace nvwb {

/// Shortest text that parses back to the same double (17 significant digits).
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

inline double parse_double(std::string_view text, std::string_view what) {
    const auto t = trim(text);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) {
        throw ValidationError(std::string(what) + ": '" + std::string(text) + "' is not a number");
    }
    return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

}  // namespace detail

/// Numeric list: `a:b:step` (inclusive of b when it lands on the grid),
/// `v1, v2, ...`, or a single value.
inline std::vector<double> parse_number_list(std::string_view text, std::string_view what = "list") {
    const auto t = detail::trim(text);
    if (t.empty()) throw ValidationError(std::string(what) + " is empty");
    if (t.find(':') != std::string_view::npos) {
        const auto parts = detail::split(t, ':');
        if (parts.size() != 3) throw ValidationError(std::string(what) + ": range must be start:stop:step");
        const double start = detail::parse_double(parts[0], what);
        const double stop = detail::parse_double(parts[1], what);
        const double step = detail::parse_double(parts[2], what);
        if (!(step > 0.0) || !(stop >= start) || !std::isfinite(stop) || !std::isfinite(start)) {
            throw ValidationError(std::string(what) + ": range needs step > 0 and stop >= start");
        }
        const auto count = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
        if (count > 10'000'000) throw ValidationError(std::string(what) + ": range too long");
        std::vector<double> out(count);
        for (std::size_t k = 0; k < count; ++k) out[k] = start + static_cast<double>(k) * step;
        return out;
    }
    std::vector<double> out;
    for (auto part : detail::split(t, ',')) out.push_back(detail::parse_double(part, what));
    return out;
}

class KeyValueConfig {
  public:
    static KeyValueConfig parse(std::string_view text, const std::string& source = "<text>") {
        KeyValueConfig cfg;
        std::size_t line_no = 0;
        for (auto line : detail::split(text, '\n')) {
            ++line_no;
            const auto t = detail::trim(line);
            if (t.empty() || t.front() == '#') continue;
            const auto eq = t.find('=');
            const std::string where = source + ":" + std::to_string(line_no);
            if (eq == std::string_view::npos) throw ValidationError(where + ": expected 'key = value'");
            const std::string key(detail::trim(t.substr(0, eq)));
            const std::string value(detail::trim(t.substr(eq + 1)));
            if (key.empty()) throw ValidationError(where + ": empty key");
            if (cfg.values_.count(key)) throw ValidationError(where + ": duplicate key '" + key + "'");
            cfg.order_.push_back(key);
            cfg.values_[key] = value;
        }
        return cfg;
    }

    static KeyValueConfig load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config '" + path.string() + "'");
        std::stringstream buf;
        buf << in.rdbuf();
        return parse(buf.str(), path.string());
    }

    /// Sets or replaces a value; used for command-line overrides.
    void set(const std::string& key, const std::string& value) {
        if (!values_.count(key)) order_.push_back(key);
        values_[key] = value;
    }

    /// Applies a `key=value` override string.
    void apply_override(std::string_view assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string_view::npos) {
            throw ValidationError("override '" + std::string(assignment) + "' must be key=value");
        }
        const std::string key(detail::trim(assignment.substr(0, eq)));
        if (key.empty()) throw ValidationError("override has an empty key");
        set(key, std::string(detail::trim(assignment.substr(eq + 1))));
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::optional<std::string> get(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return std::nullopt;
        return it->second;
    }

    std::string text(const std::string& key) const {
        auto v = get(key);
        if (!v) throw ValidationError("missing key '" + key + "'");
        return *v;
    }
    std::string text_or(const std::string& key, const std::string& fallback) const {
        return get(key).value_or(fallback);
    }

    double number(const std::string& key) const { return detail::parse_double(text(key), key); }
    double number_or(const std::string& key, double fallback) const {
        return has(key) ? number(key) : fallback;
    }

    std::int64_t integer(const std::string& key) const {
        const std::string v = text(key);
        std::int64_t out = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec == std::errc{} && ptr == v.data() + v.size()) return out;
        const double d = number(key);
        if (std::floor(d) != d || std::abs(d) > 9e15) throw ValidationError(key + ": '" + v + "' is not an integer");
        return static_cast<std::int64_t>(d);
    }
    std::int64_t integer_or(const std::string& key, std::int64_t fallback) const {
        return has(key) ? integer(key) : fallback;
    }

    bool boolean(const std::string& key) const {
        const std::string v = text(key);
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw ValidationError(key + ": '" + v + "' is not a boolean");
    }
    bool boolean_or(const std::string& key, bool fallback) const { return has(key) ? boolean(key) : fallback; }

    std::vector<double> list(const std::string& key) const { return parse_number_list(text(key), key); }

    const std::vector<std::string>& keys() const { return order_; }

    /// Rejects keys outside `allowed`.
    void require_known(const std::set<std::string>& allowed, std::string_view context) const {
        for (const auto& k : order_) {
            if (!allowed.count(k)) throw ValidationError("unknown key '" + k + "' in " + std::string(context));
        }
    }

    std::string serialize() const {
        std::string out;
        for (const auto& k : order_) out += k + " = " + values_.at(k) + "\n";
        return out;
    }

  private:
    std::vector<std::string> order_;
    std::map<std::string, std::string> values_;
};

}  // namespace nvwb
