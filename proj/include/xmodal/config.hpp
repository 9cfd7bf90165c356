// SPDX-License-Identifier: Apache-2.0
//
// Line-based sectioned config format: `[section]` headers, `key = value`
// pairs, full-line `#` comments. Values are typed as integer, real, boolean,
// string, or comma-separated list. parse(render(cfg)) == cfg.

#pragma once

#include <charconv>
#include <cstdlib>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "xmodal/error.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

struct ConfigValue {
    enum class Kind { Int, Real, Bool, Str, List };
    Kind kind = Kind::Str;
    long long i = 0;
    double r = 0.0;
    bool b = false;
    std::string s;
    std::vector<ConfigValue> list;

    static ConfigValue of_int(long long v) {
        ConfigValue c;
        c.kind = Kind::Int;
        c.i = v;
        return c;
    }
    static ConfigValue of_real(double v) {
        ConfigValue c;
        c.kind = Kind::Real;
        c.r = v;
        return c;
    }
    static ConfigValue of_bool(bool v) {
        ConfigValue c;
        c.kind = Kind::Bool;
        c.b = v;
        return c;
    }
    static ConfigValue of_str(std::string v) {
        ConfigValue c;
        c.kind = Kind::Str;
        c.s = std::move(v);
        return c;
    }

    bool operator==(const ConfigValue& o) const {
        if (kind != o.kind) return false;
        switch (kind) {
            case Kind::Int: return i == o.i;
            case Kind::Real: return r == o.r;
            case Kind::Bool: return b == o.b;
            case Kind::Str: return s == o.s;
            case Kind::List: return list == o.list;
        }
        return false;
    }
};

using ConfigSection = std::map<std::string, ConfigValue>;

struct PipelineConfig {
    std::map<std::string, ConfigSection> sections;
    std::map<std::string, std::string> stage_choices;  // stage name -> module name
    std::string task;

    bool operator==(const PipelineConfig& o) const {
        return sections == o.sections && task == o.task;
    }

    bool has(const std::string& sec, const std::string& key) const {
        auto s = sections.find(sec);
        return s != sections.end() && s->second.count(key) > 0;
    }

    const ConfigValue* find(const std::string& sec, const std::string& key) const {
        auto s = sections.find(sec);
        if (s == sections.end()) return nullptr;
        auto k = s->second.find(key);
        return k == s->second.end() ? nullptr : &k->second;
    }

    long long get_int(const std::string& sec, const std::string& key, long long def) const {
        const ConfigValue* v = find(sec, key);
        if (!v) return def;
        if (v->kind != ConfigValue::Kind::Int) {
            throw ConfigError("[" + sec + "] " + key + " must be an integer");
        }
        return v->i;
    }

    double get_real(const std::string& sec, const std::string& key, double def) const {
        const ConfigValue* v = find(sec, key);
        if (!v) return def;
        if (v->kind == ConfigValue::Kind::Int) return static_cast<double>(v->i);
        if (v->kind != ConfigValue::Kind::Real) {
            throw ConfigError("[" + sec + "] " + key + " must be a number");
        }
        return v->r;
    }

    bool get_bool(const std::string& sec, const std::string& key, bool def) const {
        const ConfigValue* v = find(sec, key);
        if (!v) return def;
        if (v->kind != ConfigValue::Kind::Bool) {
            throw ConfigError("[" + sec + "] " + key + " must be true or false");
        }
        return v->b;
    }

    std::string get_str(const std::string& sec, const std::string& key, const std::string& def) const {
        const ConfigValue* v = find(sec, key);
        if (!v) return def;
        if (v->kind == ConfigValue::Kind::Str) return v->s;
        if (v->kind == ConfigValue::Kind::Bool) return v->b ? "true" : "false";
        if (v->kind == ConfigValue::Kind::Int) return std::to_string(v->i);
        throw ConfigError("[" + sec + "] " + key + " must be a string");
    }

    void set(const std::string& sec, const std::string& key, ConfigValue v) {
        sections[sec][key] = std::move(v);
    }

    std::string stage(const std::string& name) const {
        auto it = stage_choices.find(name);
        return it == stage_choices.end() ? std::string() : it->second;
    }
};

namespace detail {

inline bool valid_section_name(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!((c >= 'a' && c <= 'z') || c == '_')) return false;
    return true;
}

inline bool valid_key_name(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '.')) return false;
    return true;
}

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline ConfigValue type_scalar(const std::string& raw) {
    if (raw == "true") return ConfigValue::of_bool(true);
    if (raw == "false") return ConfigValue::of_bool(false);
    {
        long long v = 0;
        auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
        if (ec == std::errc() && p == raw.data() + raw.size()) return ConfigValue::of_int(v);
    }
    {
        char* end = nullptr;
        const double v = std::strtod(raw.c_str(), &end);
        if (end == raw.c_str() + raw.size() && !raw.empty()) return ConfigValue::of_real(v);
    }
    return ConfigValue::of_str(raw);
}

inline ConfigValue type_value(const std::string& raw) {
    if (raw.find(',') != std::string::npos) {
        ConfigValue c;
        c.kind = ConfigValue::Kind::List;
        std::size_t start = 0;
        while (true) {
            std::size_t comma = raw.find(',', start);
            std::string piece = trim(comma == std::string::npos ? raw.substr(start) : raw.substr(start, comma - start));
            c.list.push_back(type_scalar(piece));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        return c;
    }
    return type_scalar(raw);
}

inline std::string render_scalar(const ConfigValue& v) {
    switch (v.kind) {
        case ConfigValue::Kind::Int:
            return std::to_string(v.i);
        case ConfigValue::Kind::Real: {
            char buf[64];
            auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v.r);
            std::string s(buf, p);
            // keep the value re-typeable as a real
            if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
                s.find("inf") == std::string::npos && s.find("nan") == std::string::npos) {
                s += ".0";
            }
            return s;
        }
        case ConfigValue::Kind::Bool:
            return v.b ? "true" : "false";
        case ConfigValue::Kind::Str:
            return v.s;
        case ConfigValue::Kind::List: {
            std::string out;
            for (std::size_t i = 0; i < v.list.size(); ++i) {
                if (i) out += ", ";
                out += render_scalar(v.list[i]);
            }
            return out;
        }
    }
    return "";
}

}  // namespace detail

inline const std::set<std::string>& known_tasks() {
    static const std::set<std::string> tasks = {"captioning", "vlp", "vqa", "retrieval", "vcr"};
    return tasks;
}

// Stage names in pipeline order.
inline const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {"preprocess", "encoder",  "interaction", "decoder",
                                                   "decode",     "training", "pretraining"};
    return names;
}

inline PipelineConfig parse_config(const std::string& text) {
    PipelineConfig cfg;
    std::string current;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        std::string line = nl == std::string::npos ? text.substr(pos) : text.substr(pos, nl - pos);
        pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": unterminated section header", line_no);
            std::string name = t.substr(1, t.size() - 2);
            if (!detail::valid_section_name(name)) {
                throw ConfigError("line " + std::to_string(line_no) + ": invalid section name '" + name + "'", line_no);
            }
            current = name;
            cfg.sections[current];  // section may stay empty
            continue;
        }
        std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" + t + "'", line_no);
        }
        std::string key = detail::trim(t.substr(0, eq));
        std::string value = detail::trim(t.substr(eq + 1));
        if (!detail::valid_key_name(key)) {
            throw ConfigError("line " + std::to_string(line_no) + ": invalid key '" + key + "'", line_no);
        }
        if (current.empty()) {
            throw ConfigError("line " + std::to_string(line_no) + ": key before any [section]", line_no);
        }
        cfg.sections[current][key] = detail::type_value(value);
    }

    if (!cfg.sections.count("pipeline")) throw ConfigError("missing [pipeline] section");
    cfg.task = cfg.get_str("pipeline", "task", "");
    if (!known_tasks().count(cfg.task)) {
        throw ConfigError("unknown task value '" + cfg.task + "' (expected captioning, vlp, vqa, retrieval, or vcr)");
    }

    // Stage choices: [pipeline] key first, then the stage section's own name
    // key, then a default.
    auto choose = [&cfg](const std::string& stage, const std::string& section, const std::string& section_key,
                         const std::string& def) {
        std::string v = cfg.get_str("pipeline", stage, "");
        if (v.empty()) v = cfg.get_str(section, section_key, "");
        if (v.empty()) v = def;
        cfg.stage_choices[stage] = v;
    };
    choose("preprocess", "preprocess", "name", "default");
    choose("encoder", "encoder", "name", "lstm");
    choose("interaction", "interaction", "name", "attention");
    choose("decoder", "decoder", "name", "lstm");
    choose("decode", "decode", "name", "greedy");
    choose("training", "training", "strategy", "ce");
    choose("pretraining", "pretraining", "name", cfg.task == "vlp" ? "vlp" : "none");
    return cfg;
}

// Deterministic inverse of parse_config over parsed configs.
inline std::string render_config(const PipelineConfig& cfg) {
    std::string out;
    bool first = true;
    for (const auto& [sec, entries] : cfg.sections) {
        if (!first) out += "\n";
        first = false;
        out += "[" + sec + "]\n";
        for (const auto& [key, value] : entries) {
            out += key + " = " + detail::render_scalar(value) + "\n";
        }
    }
    return out;
}

inline std::uint64_t config_hash(const PipelineConfig& cfg) {
    return fnv1a64(render_config(cfg));
}

}  // namespace xmodal
