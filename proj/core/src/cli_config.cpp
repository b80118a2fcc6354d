#include "knowexpert/cli_config.hpp"

#include <fstream>
#include <stdexcept>

namespace knowexpert {

namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace

CliConfig CliConfig::from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    CliConfig cfg;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected key=value");
        const std::string key = trim(t.substr(0, eq));
        if (key.empty())
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": empty key");
        cfg.values[key] = trim(t.substr(eq + 1));
    }
    return cfg;
}

std::string CliConfig::get_str(const std::string& key, const std::string& fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
}

long CliConfig::get_int(const std::string& key, long fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        size_t pos = 0;
        const long v = std::stol(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("config key '" + key + "': not an integer: " + it->second);
    }
}

double CliConfig::get_double(const std::string& key, double fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("config key '" + key + "': not a number: " + it->second);
    }
}

std::vector<Turn> parse_history_arg(const std::string& arg) {
    std::vector<Turn> turns;
    size_t at = 0;
    while (at <= arg.size()) {
        size_t bar = arg.find('|', at);
        if (bar == std::string::npos) bar = arg.size();
        const std::string piece = trim(arg.substr(at, bar - at));
        at = bar + 1;
        if (piece.empty()) continue;
        Role role;
        if (piece.rfind("u:", 0) == 0) {
            role = Role::User;
        } else if (piece.rfind("s:", 0) == 0) {
            role = Role::System;
        } else {
            throw std::invalid_argument("history turn must start with 'u:' or 's:': " + piece);
        }
        const std::string text = trim(piece.substr(2));
        if (text.empty()) throw std::invalid_argument("empty history turn: " + piece);
        turns.push_back({role, text});
    }
    if (turns.empty()) throw std::invalid_argument("empty history");
    if (turns.back().role != Role::User)
        throw std::invalid_argument("history must end with a user turn");
    return turns;
}

}  // namespace knowexpert
