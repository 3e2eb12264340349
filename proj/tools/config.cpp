#include "config.h"

#include <algorithm>
#include <fstream>

namespace vps::cli {

namespace {

const std::map<std::string, std::set<std::string>> kSchema = {
    {"dataset",
     {"dir", "max_frames", "max_depth", "fx", "fy", "cx", "cy", "width", "height",
      "depth_scale"}},
    {"grid", {"voxel_size", "truncation"}},
    {"tracking", {"stride", "max_iters", "step_tol", "min_inliers"}},
    {"refine",
     {"model", "sigma_cauchy", "gn_damping", "eikonal_weight", "convergence_tol",
      "max_iters", "upsample_at_iter", "keyframe_fraction", "eval_at", "eikonal",
      "refine_poses", "per_channel_light"}},
    {"synth",
     {"seed", "scene", "width", "height", "fx", "frames", "arc_deg", "orbit_radius",
      "orbit_height", "noise", "model", "albedo", "fps", "sh_light", "pls_intensity",
      "checker_scale"}},
    {"eval", {"n_bins"}},
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

void Config::parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(path + ":" + std::to_string(lineno) +
                                  ": malformed section header '" + line + "'");
            section = trim(line.substr(1, line.size() - 2));
            if (kSchema.find(section) == kSchema.end())
                throw ConfigError(path + ":" + std::to_string(lineno) +
                                  ": unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected key = value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty())
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": key '" + key + "' outside any section");
        const auto& allowed = kSchema.at(section);
        if (allowed.find(key) == allowed.end())
            throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" +
                              key + "' in section [" + section + "]");
        values_[section + "." + key] = value;
    }
}

std::string Config::get_str(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
    const auto it = values_.find(section + "." + key);
    return it == values_.end() ? fallback : it->second;
}

double Config::get_num(const std::string& section, const std::string& key,
                       double fallback) const {
    const auto it = values_.find(section + "." + key);
    if (it == values_.end()) return fallback;
    try {
        size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw ConfigError("key '" + section + "." + key + "' is not a number: '" +
                          it->second + "'");
    }
}

int Config::get_int(const std::string& section, const std::string& key,
                    int fallback) const {
    return static_cast<int>(get_num(section, key, fallback));
}

bool Config::get_flag(const std::string& section, const std::string& key,
                      bool fallback) const {
    const auto it = values_.find(section + "." + key);
    if (it == values_.end()) return fallback;
    std::string v = it->second;
    std::transform(v.begin(), v.end(), v.begin(), ::tolower);
    if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
    if (v == "off" || v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("key '" + section + "." + key + "' is not a flag: '" + it->second +
                      "'");
}

} // namespace vps::cli
