#include "nichemap/manifest.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "nichemap/errors.hpp"

namespace nichemap {

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= static_cast<std::uint64_t>(c);
        h *= 1099511628211ull;
    }
    return h;
}

std::string hash_hex(std::string_view bytes) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes)));
    return std::string(buf);
}

std::string hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw stage_error("cannot open file for hashing: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return hash_hex(ss.str());
}

Manifest Manifest::load(const std::string& path) {
    Manifest m;
    std::ifstream in(path);
    if (!in) return m;
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw stage_error("manifest parse failure in " + path + ": " + e.what());
    }
    if (!j.contains("stages")) return m;
    for (const auto& [name, rec] : j.at("stages").items()) {
        StageRecord r;
        r.config_hash = rec.value("config_hash", "");
        r.runtime_seconds = rec.value("runtime_seconds", 0.0);
        if (rec.contains("inputs"))
            for (const auto& [p, h] : rec.at("inputs").items())
                r.inputs[p] = h.get<std::string>();
        if (rec.contains("outputs"))
            for (const auto& [p, h] : rec.at("outputs").items())
                r.outputs[p] = h.get<std::string>();
        m.stages[name] = std::move(r);
    }
    return m;
}

void Manifest::save(const std::string& path) const {
    nlohmann::json j;
    j["stages"] = nlohmann::json::object();
    for (const auto& [name, r] : stages) {
        nlohmann::json rec;
        rec["config_hash"] = r.config_hash;
        rec["runtime_seconds"] = r.runtime_seconds;
        rec["inputs"] = nlohmann::json::object();
        for (const auto& [p, h] : r.inputs) rec["inputs"][p] = h;
        rec["outputs"] = nlohmann::json::object();
        for (const auto& [p, h] : r.outputs) rec["outputs"][p] = h;
        j["stages"][name] = std::move(rec);
    }
    std::ofstream out(path);
    if (!out) throw stage_error("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace nichemap
