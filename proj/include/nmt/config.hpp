#pragma once

// Plain-text key/value configuration.
//
//   # comment
//   key = value
//   list_key = 1, 2, 3
//   range_key = 0:0.5:4          (start:step:stop, stop inclusive)
//
// Keys are case-sensitive; later assignments override earlier ones.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nmt/error.hpp"

namespace nmt {

namespace detail {
inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string& s, const std::string& key) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw InvalidArgument("config: key '" + key + "' expects a number, got '" + s + "'");
    }
    if (trim(s.substr(pos)).size() != 0) {
        throw InvalidArgument("config: key '" + key + "' expects a number, got '" + s + "'");
    }
    return v;
}

/// Shortest representation that round-trips exactly.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}
}  // namespace detail

class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig parse(std::istream& is) {
        KeyValueConfig cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            const std::string t = detail::trim(line);
            if (t.empty()) continue;
            cfg.set_assignment(t, "line " + std::to_string(lineno));
        }
        return cfg;
    }

    static KeyValueConfig parse_string(const std::string& text) {
        std::istringstream is(text);
        return parse(is);
    }

    static KeyValueConfig load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw InvalidArgument("config: cannot open " + path);
        return parse(is);
    }

    /// Apply a single "key=value" override.
    void set_assignment(const std::string& text, const std::string& where = "override") {
        const auto eq = text.find('=');
        if (eq == std::string::npos) throw InvalidArgument("config: " + where + ": expected key = value");
        const std::string key = detail::trim(std::string_view(text).substr(0, eq));
        if (key.empty()) throw InvalidArgument("config: " + where + ": empty key");
        values_[key] = detail::trim(std::string_view(text).substr(eq + 1));
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    void set(const std::string& key, double value) { values_[key] = detail::format_double(value); }

    [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) != 0; }

    [[nodiscard]] std::string get_string(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw InvalidArgument("config: missing key '" + key + "'");
        return it->second;
    }
    [[nodiscard]] std::string get_string(const std::string& key, const std::string& fallback) const {
        return has(key) ? get_string(key) : fallback;
    }

    [[nodiscard]] double get_double(const std::string& key) const {
        return detail::parse_double(get_string(key), key);
    }
    [[nodiscard]] double get_double(const std::string& key, double fallback) const {
        return has(key) ? get_double(key) : fallback;
    }
    [[nodiscard]] std::optional<double> get_optional(const std::string& key) const {
        if (!has(key)) return std::nullopt;
        return get_double(key);
    }

    [[nodiscard]] long long get_int(const std::string& key) const {
        const double v = get_double(key);
        if (v != std::floor(v)) throw InvalidArgument("config: key '" + key + "' expects an integer");
        return static_cast<long long>(v);
    }
    [[nodiscard]] long long get_int(const std::string& key, long long fallback) const {
        return has(key) ? get_int(key) : fallback;
    }

    [[nodiscard]] std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        if (!has(key)) return fallback;
        const std::string s = get_string(key);
        std::uint64_t v = 0;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || ptr != s.data() + s.size()) {
            throw InvalidArgument("config: key '" + key + "' expects an unsigned integer");
        }
        return v;
    }

    /// Comma-separated list, or a start:step:stop range (stop inclusive up to
    /// rounding).
    [[nodiscard]] std::vector<double> get_list(const std::string& key) const {
        const std::string s = get_string(key);
        std::vector<double> out;
        if (s.empty()) return out;
        if (s.find(':') != std::string::npos) {
            std::vector<double> parts;
            std::stringstream ss(s);
            std::string item;
            while (std::getline(ss, item, ':')) parts.push_back(detail::parse_double(detail::trim(item), key));
            if (parts.size() != 3 || parts[1] <= 0.0 || parts[2] < parts[0]) {
                throw InvalidArgument("config: key '" + key + "' range must be start:step:stop with step > 0");
            }
            const auto count = static_cast<long long>(std::floor((parts[2] - parts[0]) / parts[1] + 1e-9));
            for (long long i = 0; i <= count; ++i) out.push_back(parts[0] + static_cast<double>(i) * parts[1]);
            return out;
        }
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ',')) {
            const std::string t = detail::trim(item);
            if (!t.empty()) out.push_back(detail::parse_double(t, key));
        }
        return out;
    }
    [[nodiscard]] std::vector<double> get_list(const std::string& key, std::vector<double> fallback) const {
        return has(key) ? get_list(key) : fallback;
    }

    [[nodiscard]] const std::map<std::string, std::string>& entries() const noexcept { return values_; }

    /// Canonical text: sorted keys, one "key = value" per line.
    [[nodiscard]] std::string canonical() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
        return out;
    }

private:
    std::map<std::string, std::string> values_;
};

/// FNV-1a 64-bit, used to stamp outputs with the config they came from.
[[nodiscard]] constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace nmt
