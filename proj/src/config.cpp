#include "nichemap/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace nichemap {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

// Removes a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

Config::Scalar parse_scalar(const std::string& raw, int lineno) {
    Config::Scalar sc;
    const std::string v = trim(raw);
    if (v.empty()) throw config_error("config line " + std::to_string(lineno) + ": empty value");
    if (v == "true" || v == "false") {
        sc.kind = Config::Scalar::Kind::boolean;
        sc.b = (v == "true");
        return sc;
    }
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"')
            throw config_error("config line " + std::to_string(lineno) + ": unterminated string");
        sc.kind = Config::Scalar::Kind::string;
        sc.s = v.substr(1, v.size() - 2);
        return sc;
    }
    // integer or float
    char* end = nullptr;
    const long long as_int = std::strtoll(v.c_str(), &end, 10);
    if (end && *end == '\0') {
        sc.kind = Config::Scalar::Kind::integer;
        sc.i = as_int;
        return sc;
    }
    end = nullptr;
    const double as_dbl = std::strtod(v.c_str(), &end);
    if (end && *end == '\0') {
        sc.kind = Config::Scalar::Kind::floating;
        sc.d = as_dbl;
        return sc;
    }
    throw config_error("config line " + std::to_string(lineno) + ": cannot parse value '" + v + "'");
}

std::string scalar_to_string(const Config::Scalar& sc) {
    switch (sc.kind) {
        case Config::Scalar::Kind::boolean:
            return sc.b ? "true" : "false";
        case Config::Scalar::Kind::integer:
            return std::to_string(sc.i);
        case Config::Scalar::Kind::floating: {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.17g", sc.d);
            return buf;
        }
        case Config::Scalar::Kind::string:
            return "\"" + sc.s + "\"";
    }
    return {};
}

double scalar_as_double(const Config::Scalar& sc, const std::string& where) {
    if (sc.kind == Config::Scalar::Kind::floating) return sc.d;
    if (sc.kind == Config::Scalar::Kind::integer) return static_cast<double>(sc.i);
    throw config_error("config key " + where + ": expected a number");
}

}  // namespace

Config Config::parse(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw config_error("config line " + std::to_string(lineno) + ": malformed section");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw config_error("config line " + std::to_string(lineno) + ": empty section name");
            cfg.sections_[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(lineno) + ": expected key = value");
        if (section.empty())
            throw config_error("config line " + std::to_string(lineno) +
                               ": key outside any [section]");
        const std::string key = trim(line.substr(0, eq));
        const std::string raw = trim(line.substr(eq + 1));
        if (key.empty())
            throw config_error("config line " + std::to_string(lineno) + ": empty key");
        Value val;
        if (!raw.empty() && raw.front() == '[') {
            if (raw.back() != ']')
                throw config_error("config line " + std::to_string(lineno) + ": unterminated array");
            val.is_list = true;
            std::string body = raw.substr(1, raw.size() - 2);
            std::string item;
            bool in_string = false;
            for (char c : body) {
                if (c == '"') in_string = !in_string;
                if (c == ',' && !in_string) {
                    if (!trim(item).empty()) val.list.push_back(parse_scalar(item, lineno));
                    item.clear();
                } else {
                    item.push_back(c);
                }
            }
            if (!trim(item).empty()) val.list.push_back(parse_scalar(item, lineno));
        } else {
            val.scalar = parse_scalar(raw, lineno);
        }
        cfg.sections_[section][key] = val;
    }
    return cfg;
}

Config Config::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

const Config::Value* Config::find(const std::string& section, const std::string& key) const {
    auto sit = sections_.find(section);
    if (sit == sections_.end()) return nullptr;
    auto kit = sit->second.find(key);
    if (kit == sit->second.end()) return nullptr;
    return &kit->second;
}

bool Config::has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
    const Value* v = find(section, key);
    if (!v) return fallback;
    if (v->is_list || v->scalar.kind != Scalar::Kind::boolean)
        throw config_error("config key " + section + "." + key + ": expected a boolean");
    return v->scalar.b;
}

std::int64_t Config::get_int(const std::string& section, const std::string& key,
                             std::int64_t fallback) const {
    const Value* v = find(section, key);
    if (!v) return fallback;
    if (v->is_list || v->scalar.kind != Scalar::Kind::integer)
        throw config_error("config key " + section + "." + key + ": expected an integer");
    return v->scalar.i;
}

double Config::get_double(const std::string& section, const std::string& key,
                          double fallback) const {
    const Value* v = find(section, key);
    if (!v) return fallback;
    if (v->is_list) throw config_error("config key " + section + "." + key + ": expected a number");
    return scalar_as_double(v->scalar, section + "." + key);
}

std::string Config::get_string(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
    const Value* v = find(section, key);
    if (!v) return fallback;
    if (v->is_list || v->scalar.kind != Scalar::Kind::string)
        throw config_error("config key " + section + "." + key + ": expected a string");
    return v->scalar.s;
}

std::string Config::require_string(const std::string& section, const std::string& key) const {
    if (!has(section, key))
        throw config_error("missing required config key " + section + "." + key);
    return get_string(section, key, "");
}

std::int64_t Config::require_int(const std::string& section, const std::string& key) const {
    if (!has(section, key))
        throw config_error("missing required config key " + section + "." + key);
    return get_int(section, key, 0);
}

std::vector<double> Config::get_double_list(const std::string& section, const std::string& key,
                                            std::vector<double> fallback) const {
    const Value* v = find(section, key);
    if (!v) return fallback;
    if (!v->is_list) throw config_error("config key " + section + "." + key + ": expected an array");
    std::vector<double> out;
    for (const auto& sc : v->list) out.push_back(scalar_as_double(sc, section + "." + key));
    return out;
}

std::vector<std::int64_t> Config::get_int_list(const std::string& section, const std::string& key,
                                               std::vector<std::int64_t> fallback) const {
    const Value* v = find(section, key);
    if (!v) return fallback;
    if (!v->is_list) throw config_error("config key " + section + "." + key + ": expected an array");
    std::vector<std::int64_t> out;
    for (const auto& sc : v->list) {
        if (sc.kind != Scalar::Kind::integer)
            throw config_error("config key " + section + "." + key + ": expected integer array");
        out.push_back(sc.i);
    }
    return out;
}

void Config::set(const std::string& section, const std::string& key, const Value& v) {
    sections_[section][key] = v;
}

std::string Config::dump() const {
    std::ostringstream out;
    for (const auto& [section, keys] : sections_) {
        out << "[" << section << "]\n";
        for (const auto& [key, val] : keys) {
            out << key << " = ";
            if (val.is_list) {
                out << "[";
                for (std::size_t i = 0; i < val.list.size(); ++i) {
                    if (i) out << ", ";
                    out << scalar_to_string(val.list[i]);
                }
                out << "]";
            } else {
                out << scalar_to_string(val.scalar);
            }
            out << "\n";
        }
    }
    return out.str();
}

std::string Config::dump_sections(const std::vector<std::string>& wanted) const {
    std::ostringstream out;
    for (const auto& [section, keys] : sections_) {
        bool take = false;
        for (const auto& w : wanted)
            if (w == section) take = true;
        if (!take) continue;
        out << "[" << section << "]\n";
        for (const auto& [key, val] : keys) {
            out << key << " = ";
            if (val.is_list) {
                out << "[";
                for (std::size_t i = 0; i < val.list.size(); ++i) {
                    if (i) out << ", ";
                    out << scalar_to_string(val.list[i]);
                }
                out << "]";
            } else {
                out << scalar_to_string(val.scalar);
            }
            out << "\n";
        }
    }
    return out.str();
}

}  // namespace nichemap
