#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "lcfm/errors.hpp"

namespace lcfm {

/// Flat key=value run configuration: '#' comments, one pair per line,
/// later sources override earlier ones. The canonical echo is sorted, so
/// echo -> parse -> echo is a fixed point.
class KvConfig {
public:
    static KvConfig parse(std::istream& in) {
        KvConfig cfg;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                raise(ErrorCode::BadKey, "line " + std::to_string(lineno) + ": expected key=value");
            cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        return cfg;
    }

    static KvConfig parse_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) raise(ErrorCode::IoError, "cannot open config " + path);
        return parse(f);
    }

    void set(const std::string& key, const std::string& value) {
        if (key.empty()) raise(ErrorCode::BadKey, "empty key");
        values_[key] = value;
    }

    void merge(const KvConfig& overrides) {
        for (const auto& [k, v] : overrides.values_) values_[k] = v;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_str(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            return std::stod(it->second);
        } catch (...) {
            raise(ErrorCode::BadKey, key + ": not a number: " + it->second);
        }
    }

    std::size_t get_size(const std::string& key, std::size_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            return static_cast<std::size_t>(std::stoull(it->second));
        } catch (...) {
            raise(ErrorCode::BadKey, key + ": not a non-negative integer: " + it->second);
        }
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            return std::stoull(it->second);
        } catch (...) {
            raise(ErrorCode::BadKey, key + ": not a non-negative integer: " + it->second);
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        raise(ErrorCode::BadKey, key + ": expected true/false: " + it->second);
    }

    /// Unknown keys are configuration errors, not typos to ignore.
    void require_known(const std::set<std::string>& known) const {
        for (const auto& [k, v] : values_)
            if (!known.count(k)) raise(ErrorCode::BadKey, "unknown key '" + k + "'");
    }

    /// Canonical sorted serialisation; written next to every run's outputs.
    std::string echo() const {
        std::ostringstream out;
        for (const auto& [k, v] : values_) out << k << '=' << v << '\n';
        return out.str();
    }

    const std::map<std::string, std::string>& items() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> values_;
};

}  // namespace lcfm
