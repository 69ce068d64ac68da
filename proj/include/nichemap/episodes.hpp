#pragma once

#include <string>
#include <vector>

#include "nichemap/smap.hpp"

namespace nichemap {

enum class EpisodeSign { mutualism, competition };

std::string episode_sign_to_string(EpisodeSign s);
EpisodeSign episode_sign_from_string(const std::string& s);

// Maximal run of strictly same-signed interaction values for one directed
// pair: source drives target. Exact zeros and missing weeks end runs and
// belong to no episode.
struct Episode {
    std::string cluster_id;
    std::string source;
    std::string target;
    int start_week = 0;
    int duration = 0;  // weeks, >= 1
    EpisodeSign sign = EpisodeSign::mutualism;
    double mean_strength = 0.0;  // mean |value| over the run
    double mean_value = 0.0;     // signed mean over the run
};

// Runs of c[target][source] over the sequence's weeks. Gaps in the week
// column terminate runs. Unknown community names are an error.
std::vector<Episode> extract_episodes(const JacobianSequence& sequence,
                                      const std::string& target, const std::string& source);

// All ordered pairs (target, source), target != source, in community order.
std::vector<Episode> extract_all_episodes(const JacobianSequence& sequence);

struct SignSummary {
    long long count = 0;
    double mean_duration = 0.0;
    double p80_duration = 0.0;
    double p95_duration = 0.0;
    double p99_duration = 0.0;
    double mean_strength = 0.0;  // mean over episodes of mean |value|
    double p50_strength = 0.0;
    double p95_strength = 0.0;
};

struct EpisodeStats {
    long long total = 0;
    double mutualism_share = 0.0;
    SignSummary mutualism;
    SignSummary competition;
    double mean_duration = 0.0;            // pooled over both signs
    double grand_mean_value = 0.0;         // mean over episodes of mean_value
    double grand_mean_value_weekly = 0.0;  // duration-weighted signed mean
};

EpisodeStats summarize(const std::vector<Episode>& episodes);

struct HistogramOptions {
    int duration_cap = 15;           // runs longer than this are omitted
    double strength_bin_width = 0.05;
    double strength_cap = 1.0;       // strengths >= cap are omitted
};

struct DurationRow {
    int duration = 0;
    long long mutualism = 0;
    long long competition = 0;
};

struct StrengthRow {
    double bin_low = 0.0;
    double bin_high = 0.0;
    long long mutualism = 0;
    long long competition = 0;
};

struct JointRow {
    int duration = 0;
    double bin_low = 0.0;
    double bin_high = 0.0;
    long long count = 0;  // both signs pooled
};

struct DistributionTables {
    std::vector<DurationRow> duration;
    std::vector<StrengthRow> strength;
    std::vector<JointRow> joint;
};

DistributionTables emit_distribution_tables(const std::vector<Episode>& episodes,
                                            const HistogramOptions& options = {});

void write_episodes_csv(const std::string& path, const std::vector<Episode>& episodes);
std::vector<Episode> read_episodes_csv(const std::string& path);
void write_episode_stats_json(const std::string& path, const EpisodeStats& stats);
void write_distribution_tables_csv(const std::string& duration_path,
                                   const std::string& strength_path,
                                   const std::string& joint_path,
                                   const DistributionTables& tables);

}  // namespace nichemap
