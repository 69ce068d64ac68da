#include "nichemap/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "nichemap/csv.hpp"
#include "nichemap/errors.hpp"
#include "nichemap/stats.hpp"

namespace nichemap {

std::string episode_sign_to_string(EpisodeSign s) {
    return s == EpisodeSign::mutualism ? "mutualism" : "competition";
}

EpisodeSign episode_sign_from_string(const std::string& s) {
    if (s == "mutualism") return EpisodeSign::mutualism;
    if (s == "competition") return EpisodeSign::competition;
    throw config_error("unknown episode sign: " + s);
}

namespace {

int community_index(const JacobianSequence& sequence, const std::string& name) {
    for (std::size_t i = 0; i < sequence.communities.size(); ++i)
        if (sequence.communities[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("community not in cluster " + sequence.cluster_id + ": " + name);
}

}  // namespace

std::vector<Episode> extract_episodes(const JacobianSequence& sequence,
                                      const std::string& target, const std::string& source) {
    const int a = community_index(sequence, target);
    const int b = community_index(sequence, source);
    if (a == b) throw std::invalid_argument("episode pair must be two distinct communities");
    if (sequence.c.empty()) throw std::invalid_argument("episode extraction on empty sequence");

    std::vector<Episode> out;
    int run_start = 0, run_sign = 0;
    double run_sum = 0.0, run_abs = 0.0;
    int run_len = 0;

    const auto close_run = [&]() {
        if (run_sign == 0) return;
        Episode e;
        e.cluster_id = sequence.cluster_id;
        e.source = source;
        e.target = target;
        e.start_week = run_start;
        e.duration = run_len;
        e.sign = run_sign > 0 ? EpisodeSign::mutualism : EpisodeSign::competition;
        e.mean_strength = run_abs / run_len;
        e.mean_value = run_sum / run_len;
        out.push_back(e);
        run_sign = 0;
    };

    int prev_week = sequence.week.front() - 1;
    for (std::size_t k = 0; k < sequence.c.size(); ++k) {
        const int week = sequence.week[k];
        if (week != prev_week + 1) close_run();  // missing weeks end runs
        prev_week = week;
        const double v = sequence.c[k](a, b);
        const int s = v > 0.0 ? 1 : (v < 0.0 ? -1 : 0);
        if (s != run_sign) close_run();
        if (s == 0) continue;  // exact zeros belong to no episode
        if (run_sign == 0) {
            run_sign = s;
            run_start = week;
            run_sum = run_abs = 0.0;
            run_len = 0;
        }
        run_sum += v;
        run_abs += std::abs(v);
        ++run_len;
    }
    close_run();
    return out;
}

std::vector<Episode> extract_all_episodes(const JacobianSequence& sequence) {
    std::vector<Episode> out;
    for (const std::string& target : sequence.communities)
        for (const std::string& source : sequence.communities) {
            if (target == source) continue;
            auto part = extract_episodes(sequence, target, source);
            out.insert(out.end(), part.begin(), part.end());
        }
    return out;
}

namespace {

SignSummary summarize_sign(const std::vector<const Episode*>& eps) {
    SignSummary s;
    s.count = static_cast<long long>(eps.size());
    if (eps.empty()) return s;
    std::vector<double> durations, strengths;
    durations.reserve(eps.size());
    strengths.reserve(eps.size());
    for (const Episode* e : eps) {
        durations.push_back(static_cast<double>(e->duration));
        strengths.push_back(e->mean_strength);
    }
    s.mean_duration = stats::mean(durations);
    s.p80_duration = stats::percentile(durations, 0.80);
    s.p95_duration = stats::percentile(durations, 0.95);
    s.p99_duration = stats::percentile(durations, 0.99);
    s.mean_strength = stats::mean(strengths);
    s.p50_strength = stats::percentile(strengths, 0.50);
    s.p95_strength = stats::percentile(strengths, 0.95);
    return s;
}

}  // namespace

EpisodeStats summarize(const std::vector<Episode>& episodes) {
    if (episodes.empty()) throw std::invalid_argument("summarize on empty episode list");
    std::vector<const Episode*> mut, comp;
    double sum_value = 0.0, sum_weekly = 0.0, sum_duration = 0.0, weeks = 0.0;
    for (const Episode& e : episodes) {
        (e.sign == EpisodeSign::mutualism ? mut : comp).push_back(&e);
        sum_value += e.mean_value;
        sum_weekly += e.mean_value * e.duration;
        sum_duration += e.duration;
        weeks += e.duration;
    }
    EpisodeStats st;
    st.total = static_cast<long long>(episodes.size());
    st.mutualism = summarize_sign(mut);
    st.competition = summarize_sign(comp);
    st.mutualism_share = static_cast<double>(mut.size()) / static_cast<double>(episodes.size());
    st.mean_duration = sum_duration / static_cast<double>(episodes.size());
    st.grand_mean_value = sum_value / static_cast<double>(episodes.size());
    st.grand_mean_value_weekly = sum_weekly / weeks;
    return st;
}

DistributionTables emit_distribution_tables(const std::vector<Episode>& episodes,
                                            const HistogramOptions& options) {
    if (episodes.empty()) throw std::invalid_argument("distribution tables on empty episode list");
    if (options.duration_cap < 1 || options.strength_bin_width <= 0.0 || options.strength_cap <= 0.0)
        throw config_error("histogram caps must be positive");

    DistributionTables t;
    const int nbins =
        static_cast<int>(std::ceil(options.strength_cap / options.strength_bin_width));
    t.duration.resize(options.duration_cap);
    for (int d = 0; d < options.duration_cap; ++d) t.duration[d].duration = d + 1;
    t.strength.resize(nbins);
    for (int b = 0; b < nbins; ++b) {
        t.strength[b].bin_low = b * options.strength_bin_width;
        t.strength[b].bin_high = (b + 1) * options.strength_bin_width;
    }
    std::vector<std::vector<long long>> joint(options.duration_cap,
                                              std::vector<long long>(nbins, 0));
    for (const Episode& e : episodes) {
        const bool mut = e.sign == EpisodeSign::mutualism;
        const bool duration_in = e.duration <= options.duration_cap;
        const int bin = static_cast<int>(e.mean_strength / options.strength_bin_width);
        const bool strength_in = e.mean_strength < options.strength_cap && bin < nbins;
        if (duration_in)
            (mut ? t.duration[e.duration - 1].mutualism : t.duration[e.duration - 1].competition)++;
        if (strength_in) (mut ? t.strength[bin].mutualism : t.strength[bin].competition)++;
        if (duration_in && strength_in) joint[e.duration - 1][bin]++;
    }
    for (int d = 0; d < options.duration_cap; ++d)
        for (int b = 0; b < nbins; ++b)
            t.joint.push_back({d + 1, b * options.strength_bin_width,
                               (b + 1) * options.strength_bin_width, joint[d][b]});
    return t;
}

void write_episodes_csv(const std::string& path, const std::vector<Episode>& episodes) {
    std::ofstream out(path);
    if (!out) throw stage_error("cannot write episode file: " + path);
    out << "cluster,source,target,start_week,duration,sign,mean_strength,mean_value\n";
    for (const Episode& e : episodes)
        out << e.cluster_id << ',' << e.source << ',' << e.target << ',' << e.start_week << ','
            << e.duration << ',' << episode_sign_to_string(e.sign) << ','
            << csv::num(e.mean_strength) << ',' << csv::num(e.mean_value) << '\n';
}

std::vector<Episode> read_episodes_csv(const std::string& path) {
    const csv::Table t = csv::read_table_file(path);
    const int c_cluster = t.column("cluster"), c_source = t.column("source");
    const int c_target = t.column("target"), c_start = t.column("start_week");
    const int c_dur = t.column("duration"), c_sign = t.column("sign");
    const int c_strength = t.column("mean_strength"), c_value = t.column("mean_value");
    std::vector<Episode> out;
    out.reserve(t.rows.size());
    for (const auto& row : t.rows) {
        Episode e;
        e.cluster_id = row[c_cluster];
        e.source = row[c_source];
        e.target = row[c_target];
        e.start_week = std::stoi(row[c_start]);
        e.duration = std::stoi(row[c_dur]);
        e.sign = episode_sign_from_string(row[c_sign]);
        e.mean_strength = std::stod(row[c_strength]);
        e.mean_value = std::stod(row[c_value]);
        out.push_back(e);
    }
    return out;
}

namespace {

nlohmann::json sign_json(const SignSummary& s) {
    return {{"count", s.count},
            {"mean_duration", s.mean_duration},
            {"p80_duration", s.p80_duration},
            {"p95_duration", s.p95_duration},
            {"p99_duration", s.p99_duration},
            {"mean_strength", s.mean_strength},
            {"p50_strength", s.p50_strength},
            {"p95_strength", s.p95_strength}};
}

}  // namespace

void write_episode_stats_json(const std::string& path, const EpisodeStats& stats) {
    nlohmann::json j{{"total_episodes", stats.total},
                     {"mutualism_share", stats.mutualism_share},
                     {"mean_duration", stats.mean_duration},
                     {"grand_mean_value", stats.grand_mean_value},
                     {"grand_mean_value_weekly", stats.grand_mean_value_weekly},
                     {"mutualism", sign_json(stats.mutualism)},
                     {"competition", sign_json(stats.competition)}};
    std::ofstream out(path);
    if (!out) throw stage_error("cannot write episode stats: " + path);
    out << j.dump(2) << '\n';
}

void write_distribution_tables_csv(const std::string& duration_path,
                                   const std::string& strength_path,
                                   const std::string& joint_path,
                                   const DistributionTables& tables) {
    {
        std::ofstream out(duration_path);
        if (!out) throw stage_error("cannot write duration histogram: " + duration_path);
        out << "duration,mutualism,competition\n";
        for (const DurationRow& r : tables.duration)
            out << r.duration << ',' << r.mutualism << ',' << r.competition << '\n';
    }
    {
        std::ofstream out(strength_path);
        if (!out) throw stage_error("cannot write strength histogram: " + strength_path);
        out << "bin_low,bin_high,mutualism,competition\n";
        for (const StrengthRow& r : tables.strength)
            out << csv::num(r.bin_low) << ',' << csv::num(r.bin_high) << ',' << r.mutualism << ','
                << r.competition << '\n';
    }
    {
        std::ofstream out(joint_path);
        if (!out) throw stage_error("cannot write joint histogram: " + joint_path);
        out << "duration,bin_low,bin_high,count\n";
        for (const JointRow& r : tables.joint)
            out << r.duration << ',' << csv::num(r.bin_low) << ',' << csv::num(r.bin_high) << ','
                << r.count << '\n';
    }
}

}  // namespace nichemap
