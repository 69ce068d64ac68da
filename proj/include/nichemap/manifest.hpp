#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace nichemap {

std::uint64_t fnv1a64(std::string_view bytes);
std::string hash_hex(std::string_view bytes);
std::string hash_file(const std::string& path);

// Per-stage bookkeeping written to <workdir>/manifest.json. A stage is up
// to date when its config hash, input hashes, and output hashes all still
// match. Runtime is informational only.
struct StageRecord {
    std::string config_hash;
    std::map<std::string, std::string> inputs;   // path (workdir-relative) -> hash
    std::map<std::string, std::string> outputs;  // path -> hash
    double runtime_seconds = 0.0;
};

struct Manifest {
    std::map<std::string, StageRecord> stages;

    static Manifest load(const std::string& path);  // missing file -> empty manifest
    void save(const std::string& path) const;
};

}  // namespace nichemap
