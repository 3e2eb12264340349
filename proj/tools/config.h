#pragma once

#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

namespace vps::cli {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// TOML-style sections of key = value pairs, '#'/';' comments. Keys are
// validated against the known schema so typos fail loudly.
class Config {
public:
    void parse_file(const std::string& path);
    void parse_line(const std::string& line, const std::string& source, int lineno);

    bool has(const std::string& section, const std::string& key) const {
        return values_.count(section + "." + key) > 0;
    }
    std::string get_str(const std::string& section, const std::string& key,
                        const std::string& fallback = "") const;
    double get_num(const std::string& section, const std::string& key,
                   double fallback) const;
    int get_int(const std::string& section, const std::string& key, int fallback) const;
    bool get_flag(const std::string& section, const std::string& key,
                  bool fallback) const;

    void set(const std::string& section, const std::string& key,
             const std::string& value) {
        values_[section + "." + key] = value;
    }

private:
    std::map<std::string, std::string> values_;
};

} // namespace vps::cli
