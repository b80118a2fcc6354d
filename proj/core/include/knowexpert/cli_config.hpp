#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "knowexpert/corpus.hpp"

namespace knowexpert {

// Flat key=value configuration; flag overrides win over file values.
// Keys are stage-scoped, e.g. "experts.lr" or "model.h".
struct CliConfig {
    std::map<std::string, std::string> values;

    static CliConfig from_file(const std::string& path);

    void set(const std::string& key, const std::string& value) { values[key] = value; }
    bool has(const std::string& key) const { return values.count(key) != 0; }

    std::string get_str(const std::string& key, const std::string& fallback) const;
    long get_int(const std::string& key, long fallback) const;
    double get_double(const std::string& key, double fallback) const;
};

// "u: hello|s: hi there|u: and you?" -> turns. Only "u:"/"s:" prefixes are
// accepted; the parsed history must end with a user turn.
std::vector<Turn> parse_history_arg(const std::string& arg);

}  // namespace knowexpert
