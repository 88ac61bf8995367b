#pragma once

// Key=value configuration with [section] grouping. Every key the pipeline
// understands is registered in the defaults; files and overrides may only
// touch registered keys, so typos fail loudly instead of silently running
// with stale values.

#include <cstdio>
#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include "sgwb/common.hpp"
#include "sgwb/hash.hpp"

namespace sgwb {

struct Config {
    std::map<std::string, std::string> kv; // "section.key" -> value

    bool has(const std::string& key) const { return kv.count(key) != 0; }

    const std::string& raw(const std::string& key) const {
        auto it = kv.find(key);
        if (it == kv.end()) throw InputError("unknown config key: " + key);
        return it->second;
    }

    void set(const std::string& key, const std::string& value) {
        auto it = kv.find(key);
        if (it == kv.end()) throw InputError("unknown config key: " + key);
        it->second = value;
    }

    int64_t get_int(const std::string& key) const {
        const std::string& s = raw(key);
        char* end = nullptr;
        const long long v = std::strtoll(s.c_str(), &end, 10);
        if (end == s.c_str() || *end != '\0')
            throw InputError("config key " + key + ": not an integer: '" + s + "'");
        return int64_t(v);
    }

    double get_double(const std::string& key) const {
        const std::string& s = raw(key);
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (end == s.c_str() || *end != '\0')
            throw InputError("config key " + key + ": not a number: '" + s + "'");
        return v;
    }

    bool get_bool(const std::string& key) const {
        const std::string& s = raw(key);
        if (s == "1" || s == "true" || s == "on") return true;
        if (s == "0" || s == "false" || s == "off") return false;
        throw InputError("config key " + key + ": not a boolean: '" + s + "'");
    }
};

inline Config default_config() {
    Config c;
    c.kv = {
        {"data.n", "20"},
        {"data.size", "32"},
        {"data.magnitude", "1.5"},
        {"data.slip", "1.0"},
        {"data.holdout", "4"},

        {"nets.reg_features", "8"},
        {"nets.reg_gain", "8.0"},
        {"nets.syn_features", "8"},
        {"nets.dis_features", "8"},
        {"nets.seg_features", "8"},
        {"nets.mine_width", "64"},

        {"losses.lambda", "1.0"},
        {"losses.w_l1", "1.0"},
        {"losses.w_edge", "1.0"},
        {"losses.w_adv", "0.05"},
        {"losses.w_sem", "0.1"},
        {"losses.tau", "0.1"},
        {"losses.pairs", "4096"},
        {"losses.exclusion_radius", "2"},
        {"losses.exclude_sliding", "1"},
        {"losses.feats_per_organ", "8"},
        {"losses.canny_sigma", "1.0"},
        {"losses.canny_lo", "0.1"},
        {"losses.canny_hi", "0.2"},
        {"losses.use_reg", "1"},
        {"losses.use_edge", "1"},
        {"losses.use_adv", "1"},
        {"losses.use_sem", "1"},

        {"train.lr_reg", "4e-4"},
        {"train.lr_syn", "2e-4"},
        {"train.lr_seg", "1e-3"},
        {"train.lr_critic", "1e-3"},
        {"train.batch", "4"},
        {"train.epochs_reg", "30"},
        {"train.epochs_syn", "30"},
        {"train.seg_steps", "60"},
        {"train.aug_p", "0.2"},
        {"train.critic_inner", "6"},
        {"train.warmup", "200"},
        {"train.seed", "1"},

        {"eval.angles", "48"},
    };
    return c;
}

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
    return s.substr(a, b - a);
}

} // namespace detail

// "key=value" with an optional "section." prefix already folded in.
inline void apply_override(Config& c, const std::string& kvpair) {
    const size_t eq = kvpair.find('=');
    if (eq == std::string::npos || eq == 0)
        throw InputError("override must look like key=value: '" + kvpair + "'");
    c.set(detail::trim(kvpair.substr(0, eq)), detail::trim(kvpair.substr(eq + 1)));
}

inline void apply_config_file(Config& c, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw ArtifactError("cannot open config file: " + path);
    std::string text;
    char buf[4096];
    size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, n);
    std::fclose(f);

    std::string section;
    size_t lineno = 0, pos = 0;
    while (pos <= text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw InputError(path + ":" + std::to_string(lineno) + ": unclosed section");
            section = detail::trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw InputError(path + ":" + std::to_string(lineno) + ": empty section name");
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos || eq == 0)
            throw InputError(path + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = detail::trim(line.substr(0, eq));
        if (!section.empty()) key = section + "." + key;
        c.set(key, detail::trim(line.substr(eq + 1)));
    }
}

// Order-independent digest of the full key=value state.
inline uint64_t config_hash(const Config& c) {
    Fnv1a h;
    for (const auto& [k, v] : c.kv) { // std::map iterates sorted
        h.update(k.data(), k.size());
        h.update("=", 1);
        h.update(v.data(), v.size());
        h.update("\n", 1);
    }
    return h.digest();
}

} // namespace sgwb
