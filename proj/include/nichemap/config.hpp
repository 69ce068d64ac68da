#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nichemap/errors.hpp"

namespace nichemap {

// Minimal TOML-style config: [section] headers, key = value lines, `#`
// comments. Values: booleans, integers, floats, "quoted strings", and
// flat [..] arrays of those. One file is the canonical record of a run.
class Config {
public:
    struct Scalar {
        enum class Kind { boolean, integer, floating, string } kind;
        bool b = false;
        std::int64_t i = 0;
        double d = 0.0;
        std::string s;
    };
    struct Value {
        bool is_list = false;
        Scalar scalar;
        std::vector<Scalar> list;
    };

    static Config parse(const std::string& text);
    static Config parse_file(const std::string& path);

    bool has(const std::string& section, const std::string& key) const;

    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
    std::int64_t get_int(const std::string& section, const std::string& key, std::int64_t fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const;

    // Required variants throw config_error when absent.
    std::string require_string(const std::string& section, const std::string& key) const;
    std::int64_t require_int(const std::string& section, const std::string& key) const;

    std::vector<double> get_double_list(const std::string& section, const std::string& key,
                                        std::vector<double> fallback) const;
    std::vector<std::int64_t> get_int_list(const std::string& section, const std::string& key,
                                           std::vector<std::int64_t> fallback) const;

    void set(const std::string& section, const std::string& key, const Value& v);

    // Canonical serialization: sections and keys sorted, values normalized.
    // Used for the effective-config dump and for stage config hashes.
    std::string dump() const;
    std::string dump_sections(const std::vector<std::string>& sections) const;

private:
    const Value* find(const std::string& section, const std::string& key) const;
    std::map<std::string, std::map<std::string, Value>> sections_;
};

}  // namespace nichemap
