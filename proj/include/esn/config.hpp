#pragma once

#include "esn/network.hpp"
#include "esn/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace esn {

// Flat "section.key" -> string store behind the INI-style experiment config.
// Defaults carry every training constant; a file and command-line overrides
// layer on top. Unknown keys are rejected.
class Config {
public:
    static Config defaults();
    static Config load_file(const std::string& path);  // defaults + file contents

    void set(const std::string& key, const std::string& value);
    // "section.key=value" form used by --set overrides
    void apply_override(const std::string& assignment);

    bool has(const std::string& key) const;
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    long long get_int(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<double> get_list(const std::string& key) const;  // comma-separated

    // Keys under a prefix ("data." -> dataset ids), sorted.
    std::vector<std::string> keys_with_prefix(const std::string& prefix) const;

    NetworkConfig network_config() const;

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    static bool known_key(const std::string& key);
    std::map<std::string, std::string> values_;
};

}  // namespace esn
