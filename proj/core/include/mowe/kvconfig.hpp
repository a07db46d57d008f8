#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mowe/common.hpp"

namespace mowe {

/// Flat key = value configuration file. Lines starting with '#' and blank
/// lines are ignored. Values are parsed on access; command-line overrides are
/// applied with set().
class KvConfig {
public:
    KvConfig() = default;

    static KvConfig parse_file(const std::string& path);
    static KvConfig parse_text(const std::string& text, const std::string& origin);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

    std::string get_str(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int(const std::string& key) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    double get_real(const std::string& key) const;
    double get_real(const std::string& key, double fallback) const;

    /// Comma-separated list of reals; a single scalar is accepted anywhere a
    /// list is expected.
    std::vector<double> get_reals(const std::string& key) const;
    std::vector<double> get_reals(const std::string& key, const std::vector<double>& fallback) const;
    std::vector<std::uint32_t> get_u32s(const std::string& key) const;

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    std::map<std::string, std::string> values_;
    std::string origin_ = "<memory>";

    [[noreturn]] void missing(const std::string& key) const;
};

}  // namespace mowe
