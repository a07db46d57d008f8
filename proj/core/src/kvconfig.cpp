#include "mowe/kvconfig.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace mowe {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

KvConfig KvConfig::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_text(ss.str(), path);
}

KvConfig KvConfig::parse_text(const std::string& text, const std::string& origin) {
    KvConfig cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + t + "'");
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        cfg.values_[key] = val;
    }
    return cfg;
}

void KvConfig::missing(const std::string& key) const {
    throw ConfigError(origin_ + ": missing required key '" + key + "'");
}

std::string KvConfig::get_str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) missing(key);
    return it->second;
}

std::string KvConfig::get_str(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

std::int64_t KvConfig::get_int(const std::string& key) const {
    const std::string s = get_str(key);
    char* end = nullptr;
    errno = 0;
    long long v = std::strtoll(s.c_str(), &end, 10);
    if (errno != 0 || end == s.c_str() || *end != '\0')
        throw ConfigError(origin_ + ": key '" + key + "' is not an integer: '" + s + "'");
    return v;
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) const {
    return has(key) ? get_int(key) : fallback;
}

double KvConfig::get_real(const std::string& key) const {
    const std::string s = get_str(key);
    char* end = nullptr;
    errno = 0;
    double v = std::strtod(s.c_str(), &end);
    if (errno != 0 || end == s.c_str() || *end != '\0')
        throw ConfigError(origin_ + ": key '" + key + "' is not a number: '" + s + "'");
    return v;
}

double KvConfig::get_real(const std::string& key, double fallback) const {
    return has(key) ? get_real(key) : fallback;
}

std::vector<double> KvConfig::get_reals(const std::string& key) const {
    const std::string s = get_str(key);
    std::vector<double> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty())
            throw ConfigError(origin_ + ": key '" + key + "' has an empty list element");
        char* end = nullptr;
        errno = 0;
        double v = std::strtod(item.c_str(), &end);
        if (errno != 0 || end == item.c_str() || *end != '\0')
            throw ConfigError(origin_ + ": key '" + key + "' has a non-numeric element '" +
                              item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw ConfigError(origin_ + ": key '" + key + "' is an empty list");
    return out;
}

std::vector<double> KvConfig::get_reals(const std::string& key,
                                        const std::vector<double>& fallback) const {
    return has(key) ? get_reals(key) : fallback;
}

std::vector<std::uint32_t> KvConfig::get_u32s(const std::string& key) const {
    std::vector<double> reals = get_reals(key);
    std::vector<std::uint32_t> out;
    out.reserve(reals.size());
    for (double v : reals) {
        if (v < 0 || v != static_cast<double>(static_cast<std::uint32_t>(v)))
            throw ConfigError(origin_ + ": key '" + key + "' needs unsigned integers");
        out.push_back(static_cast<std::uint32_t>(v));
    }
    return out;
}

}  // namespace mowe
