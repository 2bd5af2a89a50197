#include "esn/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace esn {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

}  // namespace

Config Config::defaults() {
    Config c;
    auto& v = c.values_;
    v["model.variant"] = "esnet";
    v["model.preset"] = "paper";
    v["model.channels"] = "";
    v["model.d_max"] = "40";
    v["model.fmm_offsets"] = "-2,-1,0,1,2";
    v["model.blocks_per_scale"] = "0";

    v["train.batch_size"] = "16";
    v["train.seed"] = "1729";
    v["train.beta1"] = "0.9";
    v["train.beta2"] = "0.999";
    v["train.adam_eps"] = "1e-8";

    v["loss.lambda1"] = "5";
    v["loss.lambda2"] = "0.1";
    v["loss.alpha"] = "0.85";
    v["loss.num_scales"] = "4";
    v["loss.full_res_compare"] = "false";
    v["loss.mixed_weight"] = "0";

    v["data.split"] = "0.9";

    v["schedule.order"] = "SF+DS+K";
    v["schedule.pretrain.epochs"] = "30";
    v["schedule.pretrain.lr"] = "1e-4";

    v["schedule.SF.epochs"] = "20,20,20,30";
    v["schedule.SF.lr"] = "1e-4";
    v["schedule.SF.lr_policy"] = "step:10:0.5";
    v["schedule.SF.crop"] = "384x768";

    v["schedule.DS.epochs"] = "7,7,7,10";
    v["schedule.DS.lr"] = "1e-4";
    v["schedule.DS.lr_policy"] = "constant";
    v["schedule.DS.crop"] = "256x768";

    v["schedule.K.epochs"] = "1200,1200,1200";
    v["schedule.K.lr"] = "1e-5";
    v["schedule.K.lr_policy"] = "milestone:600:0.1";
    v["schedule.K.crop"] = "256x512";

    // Per-round scale weights, coarse-heavy first, fine-heavy last. Stages
    // with fewer rounds use the tail of this list.
    v["schedule.omega1"] = "0.05,0.1,0.2,0.4,0.8,1.0,1.0";
    v["schedule.omega2"] = "0.2,0.4,0.6,0.8,0.8,0.6,0.4";
    v["schedule.omega3"] = "0.6,0.8,0.8,0.6,0.4,0.2,0.1";
    v["schedule.omega4"] = "1.0,0.8,0.5,0.2,0.1,0.05,0.05";

    v["eval.rule"] = "paper_or";
    v["eval.max_disparity"] = "64";
    v["eval.max_error"] = "5";
    return c;
}

bool Config::known_key(const std::string& key) {
    static const char* exact[] = {
        "model.variant",      "model.preset",        "model.channels",
        "model.d_max",        "model.fmm_offsets",   "model.blocks_per_scale",
        "train.batch_size",   "train.seed",          "train.beta1",
        "train.beta2",        "train.adam_eps",      "loss.lambda1",
        "loss.lambda2",       "loss.alpha",          "loss.num_scales",
        "loss.full_res_compare", "loss.mixed_weight", "data.split",
        "schedule.order",     "schedule.pretrain.epochs", "schedule.pretrain.lr",
        "eval.rule",          "eval.max_disparity",  "eval.max_error",
    };
    for (const char* k : exact) {
        if (key == k) return true;
    }
    if (key.rfind("schedule.omega", 0) == 0) return true;
    // data.<ID>: dataset directory bindings
    if (key.rfind("data.", 0) == 0 && key.find('.', 5) == std::string::npos) return true;
    // schedule.<ID>.{epochs,lr,lr_policy,crop,omega<N>}
    if (key.rfind("schedule.", 0) == 0) {
        const std::size_t dot = key.find('.', 9);
        if (dot != std::string::npos) {
            const std::string leaf = key.substr(dot + 1);
            if (leaf == "epochs" || leaf == "lr" || leaf == "lr_policy" || leaf == "crop" ||
                leaf.rfind("omega", 0) == 0) {
                return true;
            }
        }
    }
    return false;
}

void Config::set(const std::string& key, const std::string& value) {
    if (!known_key(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
}

void Config::apply_override(const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override '" + assignment + "' must have the form key=value");
    }
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

Config Config::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    Config c = defaults();
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        if (section.empty()) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": key outside a section");
        }
        try {
            c.set(section + "." + key, trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return c;
}

bool Config::has(const std::string& key) const { return values_.count(key) != 0; }

const std::string& Config::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
    return it->second;
}

std::string Config::get_or(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key) const {
    try {
        return std::stod(get(key));
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not a number: '" + get(key) + "'");
    }
}

long long Config::get_int(const std::string& key) const {
    try {
        return std::stoll(get(key));
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not an integer: '" + get(key) + "'");
    }
}

bool Config::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "' is not a boolean: '" + v + "'");
}

std::vector<double> Config::get_list(const std::string& key) const {
    const std::string& v = get(key);
    std::vector<double> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' has a non-numeric entry '" + tok + "'");
        }
    }
    return out;
}

std::vector<std::string> Config::keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
        if (k.rfind(prefix, 0) == 0) out.push_back(k);
    }
    return out;
}

NetworkConfig Config::network_config() const {
    NetworkConfig nc;
    nc.variant = variant_from_string(get("model.variant"));
    nc.preset = preset_from_string(get("model.preset"));
    nc.d_max_base = static_cast<int>(get_int("model.d_max"));
    nc.blocks_per_scale = static_cast<int>(get_int("model.blocks_per_scale"));
    if (!get("model.channels").empty()) {
        const auto ch = get_list("model.channels");
        if (ch.size() != 7) throw ConfigError("model.channels needs 7 entries");
        for (int i = 0; i < 7; ++i) nc.channels[i] = static_cast<int>(ch[i]);
    }
    nc.fmm_offsets.clear();
    for (double d : get_list("model.fmm_offsets")) nc.fmm_offsets.push_back(static_cast<int>(d));
    nc.validate();
    return nc;
}

}  // namespace esn
