#pragma once

#include <string>
#include <vector>

#include "nichemap/config.hpp"

namespace nichemap::pipeline {

// Stage names in dependency order: ingest, vectorize, cluster, smap,
// episodes, panel, simulate, report.
const std::vector<std::string>& stage_names();
bool known_stage(const std::string& name);

// Config sections whose canonical dump forms the stage's config hash.
std::vector<std::string> stage_sections(const std::string& stage);
std::string stage_config_hash(const std::string& stage, const Config& cfg);

struct StageStatus {
    std::string stage;
    bool skipped = false;  // inputs, outputs, and config all unchanged
    double runtime_seconds = 0.0;
    std::vector<std::string> outputs;  // workdir-relative
};

// Runs one stage against <run.workdir>, recording a manifest entry. Skips
// with skipped=true when the manifest shows the stage current. Throws
// stage_error when a required input is missing (naming the producing stage)
// or when an upstream stage is stale; `force` bypasses both the staleness
// refusal and the up-to-date skip. Relative paths in the config resolve
// against the workdir.
StageStatus run_stage(const std::string& stage, const Config& cfg, bool force = false);

}  // namespace nichemap::pipeline
