#include "nichemap/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nichemap/cluster.hpp"
#include "nichemap/corpus.hpp"
#include "nichemap/csv.hpp"
#include "nichemap/episodes.hpp"
#include "nichemap/errors.hpp"
#include "nichemap/manifest.hpp"
#include "nichemap/oracle.hpp"
#include "nichemap/panel.hpp"
#include "nichemap/parallel.hpp"
#include "nichemap/smap.hpp"
#include "nichemap/vectorize.hpp"

namespace nichemap::pipeline {

namespace {

using nlohmann::json;

std::string resolve(const std::string& workdir, const std::string& path) {
    if (!path.empty() && path.front() == '/') return path;
    return workdir + "/" + path;
}

bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw stage_error("cannot open json file: " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw stage_error("cannot parse " + path + ": " + e.what());
    }
}

void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw stage_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

// Report-layer floats carry 6 significant digits.
json round6(const json& j) {
    if (j.is_number_float()) return json(std::atof(csv::num6(j.get<double>()).c_str()));
    if (j.is_object()) {
        json out = json::object();
        for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = round6(it.value());
        return out;
    }
    if (j.is_array()) {
        json out = json::array();
        for (const auto& v : j) out.push_back(round6(v));
        return out;
    }
    return j;
}

// What a runner consumed and produced, as manifest keys (workdir-relative
// for stage files, as-configured for external paths).
struct RunOutcome {
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
};

StudyWindow window_from_config(const Config& cfg) {
    return StudyWindow(cfg.require_string("ingest", "window_start"),
                       cfg.require_string("ingest", "window_end"));
}

EligibilityThresholds thresholds_from_config(const Config& cfg) {
    EligibilityThresholds t;
    t.min_active_week_share = cfg.get_double("ingest", "min_active_week_share", t.min_active_week_share);
    t.max_nsfw_share = cfg.get_double("ingest", "max_nsfw_share", t.max_nsfw_share);
    return t;
}

std::vector<ContributionRecord> ingest_records(const Config& cfg, const std::string& wd,
                                               const StudyWindow& window, IngestTally& tally) {
    const std::string input = cfg.require_string("ingest", "input");
    return ingest_ndjson_file(resolve(wd, input), window, tally);
}

// ---------------------------------------------------------------- ingest

RunOutcome run_ingest(const Config& cfg, const std::string& wd, std::uint64_t, int) {
    const StudyWindow window = window_from_config(cfg);
    const EligibilityThresholds thresholds = thresholds_from_config(cfg);
    IngestTally tally;
    const std::vector<ContributionRecord> records = ingest_records(cfg, wd, window, tally);
    const std::set<std::string> eligible = filter_eligible(records, window, thresholds);
    if (eligible.empty()) throw stage_error("no community passes the eligibility thresholds");
    const std::vector<std::string> communities(eligible.begin(), eligible.end());

    const WeeklyActivityPanel panel = build_panel(records, communities, window);
    write_panel_csv(panel, wd + "/activity.csv");

    json j;
    j["window"] = {{"start", window.start_date()},
                   {"end", window.end_date()},
                   {"weeks", window.weeks()}};
    j["thresholds"] = {{"min_active_week_share", thresholds.min_active_week_share},
                       {"max_nsfw_share", thresholds.max_nsfw_share}};
    j["tallies"] = {{"lines", tally.lines},
                    {"parsed", tally.parsed},
                    {"malformed", tally.malformed},
                    {"out_of_window", tally.out_of_window},
                    {"dropped_author", tally.dropped_author}};
    j["records_in_window"] = records.size();
    j["communities"] = communities;
    write_json_file(wd + "/ingest.json", j);

    return {{cfg.require_string("ingest", "input")}, {"activity.csv", "ingest.json"}};
}

// -------------------------------------------------------------- vectorize

// Greedy longest-match counting can leave a feature counted in exactly one
// community even though its raw document frequency passed the vocabulary
// floor. Such features would be fatal downstream (idf = ln(df) with df < 2),
// so prune and recount until the counted frequencies are clean. Removals
// re-route tokens to other features, which can create new df = 1 entries;
// each pass removes at least one entry, so the loop terminates.
PhraseVocabulary prune_vocabulary(const std::vector<TokenizedDoc>& docs, PhraseVocabulary vocab,
                                  const std::vector<std::string>& communities) {
    for (;;) {
        const SparseCountMatrix counts = count_vocabulary(docs, vocab, communities);
        const std::vector<int> df = document_frequency(counts);
        std::vector<char> drop(vocab.entries.size(), 0);
        bool any = false;
        for (std::size_t f = 0; f < df.size(); ++f)
            if (df[f] == 1) drop[f] = 1, any = true;
        if (!any) return vocab;
        PhraseVocabulary next;
        for (std::size_t f = 0; f < vocab.entries.size(); ++f)
            if (!drop[f]) next.entries.push_back(std::move(vocab.entries[f]));
        vocab = std::move(next);
        if (vocab.entries.empty())
            throw stage_error("vocabulary is empty after document-frequency pruning");
    }
}

int clip_dim(int want, const SparseCountMatrix& m) {
    const int cap = std::min(m.rows(), m.cols());
    return std::max(1, std::min(want, cap));
}

RunOutcome run_vectorize(const Config& cfg, const std::string& wd, std::uint64_t seed, int) {
    const StudyWindow window = window_from_config(cfg);
    IngestTally tally;
    const std::vector<ContributionRecord> records = ingest_records(cfg, wd, window, tally);
    const std::vector<std::string> communities = read_panel_csv(wd + "/activity.csv").communities;

    PhraseOptions opts;
    opts.max_len = static_cast<int>(cfg.get_int("vectorize", "phrase_max_len", opts.max_len));
    opts.pmi_min = cfg.get_double("vectorize", "pmi_min", opts.pmi_min);
    opts.min_count = cfg.get_int("vectorize", "min_count", opts.min_count);
    opts.min_df = static_cast<int>(cfg.get_int("vectorize", "min_df", opts.min_df));
    opts.sample_rate = cfg.get_double("vectorize", "sample_rate", opts.sample_rate);
    opts.seed = seed;

    const std::vector<TokenizedDoc> docs = tokenize_records(records, communities, window);
    PhraseVocabulary vocab =
        detect_phrases(docs, static_cast<int>(communities.size()), opts);
    if (vocab.entries.empty()) throw stage_error("phrase detection produced an empty vocabulary");
    vocab = prune_vocabulary(docs, vocab, communities);
    write_vocabulary_tsv(wd + "/vocabulary.tsv", vocab);

    const SparseCountMatrix author_full = build_author_matrix(records, communities);
    if (author_full.cols() == 0) throw stage_error("no authors in window; cannot vectorize");
    const SparseCountMatrix counts_full = count_vocabulary(docs, vocab, communities);
    const std::vector<int> df = document_frequency(counts_full);
    const SparseCountMatrix tfidf_full = apply_tfidf(counts_full, df);

    const int user_dim = clip_dim(
        static_cast<int>(cfg.get_int("vectorize", "user_dim", 100)), author_full);
    const int topic_dim = clip_dim(
        static_cast<int>(cfg.get_int("vectorize", "topic_dim", 50)), tfidf_full);
    const LsaModel user_model = fit_lsa(author_full, user_dim, seed, "authors");
    const LsaModel topic_model = fit_lsa(tfidf_full, topic_dim, seed, "topics");
    write_lsa_model(wd + "/lsa_user.bin", user_model);
    write_lsa_model(wd + "/lsa_topic.bin", topic_model);

    const std::vector<SparseCountMatrix> weekly_author =
        weekly_author_matrices(records, communities, window, author_full.feature_ids);
    std::vector<SparseCountMatrix> weekly_topic;
    weekly_topic.reserve(window.weeks());
    for (int w = 0; w < window.weeks(); ++w)
        weekly_topic.push_back(apply_tfidf(count_vocabulary(docs, vocab, communities, w), df));

    std::vector<std::pair<int, int>> pairs;
    for (std::size_t i = 0; i < communities.size(); ++i)
        for (std::size_t j = i + 1; j < communities.size(); ++j)
            pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));

    const std::vector<MetricSeries> user_series =
        weekly_overlap_series(user_model, author_full, weekly_author, pairs);
    const std::vector<MetricSeries> topic_series =
        weekly_overlap_series(topic_model, tfidf_full, weekly_topic, pairs);
    write_overlap_csv(wd + "/overlap.csv", communities, user_series, topic_series);

    return {{cfg.require_string("ingest", "input"), "activity.csv"},
            {"vocabulary.tsv", "lsa_user.bin", "lsa_topic.bin", "overlap.csv"}};
}

// ---------------------------------------------------------------- cluster

Eigen::MatrixXd project_rows(const SparseCountMatrix& m, const LsaModel& model) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m.rows(), model.k);
    for (int r = 0; r < m.rows(); ++r)
        for (std::size_t p = m.row_ptr[r]; p < m.row_ptr[r + 1]; ++p)
            out.row(r) += m.value[p] * model.basis.row(m.col[p]);
    return out;
}

RunOutcome run_cluster(const Config& cfg, const std::string& wd, std::uint64_t seed, int threads) {
    const StudyWindow window = window_from_config(cfg);
    IngestTally tally;
    const std::vector<ContributionRecord> records = ingest_records(cfg, wd, window, tally);
    const std::vector<std::string> communities = read_panel_csv(wd + "/activity.csv").communities;
    const SparseCountMatrix author_full = build_author_matrix(records, communities);
    if (author_full.cols() == 0) throw stage_error("no authors in window; cannot cluster");

    GridSearchSpec spec;
    const std::vector<std::int64_t> want =
        cfg.get_int_list("cluster", "dims", {2, 5, 10, 25, 50});
    std::set<int> dims;
    for (std::int64_t d : want) dims.insert(clip_dim(static_cast<int>(d), author_full));
    spec.dims.assign(dims.begin(), dims.end());
    const std::vector<std::int64_t> sizes = cfg.get_int_list(
        "cluster", "min_cluster_sizes", {2, 3, 4, 5, 6, 7, 8, 9, 10});
    spec.min_cluster_sizes.assign(sizes.begin(), sizes.end());
    const std::vector<std::int64_t> samples =
        cfg.get_int_list("cluster", "min_samples", {1, 2, 3, 4, 5});
    spec.min_samples.assign(samples.begin(), samples.end());
    const double noise_share = cfg.get_double("cluster", "max_noise_share", 0.5);
    spec.noise_ceiling = std::max(
        1, static_cast<int>(std::lround(noise_share * static_cast<double>(communities.size()))));
    spec.silhouette_cap = static_cast<int>(cfg.get_int("cluster", "silhouette_cap", 5000));
    spec.seed = seed;
    spec.threads = threads;

    std::map<int, Eigen::MatrixXd> points_by_dim;
    for (int dim : spec.dims)
        points_by_dim.emplace(dim, project_rows(author_full, fit_lsa(author_full, dim, seed, "authors")));

    const GridSearchResult result = grid_search(spec, points_by_dim, communities);
    const int max_size = static_cast<int>(cfg.get_int("cluster", "max_cluster_size", 28));
    const CapResult cap = cap_cluster_size(result.assignment, max_size);
    write_assignment_csv(wd + "/assignment.csv", cap.assignment);
    write_grid_report(wd + "/grid_report.json", result.report);

    json j;
    j["best"] = {{"dim", result.best.dim},
                 {"min_cluster_size", result.best.min_cluster_size},
                 {"min_samples", result.best.min_samples},
                 {"silhouette", result.best.silhouette},
                 {"n_clusters", result.best.n_clusters},
                 {"n_noise", result.best.n_noise}};
    j["silhouette_sample_size"] = result.score.sample_size;
    j["cap"] = {{"max_cluster_size", max_size},
                {"removed_clusters", cap.removed_clusters},
                {"removed_points", cap.removed_points}};
    j["final"] = {{"n_clusters", cap.assignment.n_clusters},
                  {"n_noise", cap.assignment.n_noise},
                  {"communities", cap.assignment.communities.size()}};
    write_json_file(wd + "/cluster_summary.json", j);

    return {{cfg.require_string("ingest", "input"), "activity.csv"},
            {"assignment.csv", "grid_report.json", "cluster_summary.json"}};
}

// ------------------------------------------------------------------ smap

std::vector<SmapHyperparameters> grid_from_config(const Config& cfg) {
    const std::vector<double> thetas =
        cfg.get_double_list("smap", "theta_grid", {0.0, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0});
    const std::vector<double> alphas = cfg.get_double_list("smap", "alpha_grid", {0.05, 0.5, 0.95});
    std::vector<double> lambdas = cfg.get_double_list("smap", "lambda_grid", {});
    if (lambdas.empty())
        for (int k = 0; k < 7; ++k) lambdas.push_back(std::pow(10.0, -4.0 + 5.0 * k / 6.0));
    std::vector<SmapHyperparameters> grid;
    for (double th : thetas)
        for (double al : alphas)
            for (double la : lambdas) grid.push_back({th, al, la});
    return grid;
}

// Pairs estimated matrices with truth matrices cell-for-cell: clusters are
// matched by id, weeks by value, communities by name (truth columns are
// reordered into the estimated order).
void align_truth(const std::vector<JacobianSequence>& estimated,
                 const std::vector<JacobianSequence>& truth,
                 std::vector<Eigen::MatrixXd>& est_out, std::vector<Eigen::MatrixXd>& truth_out) {
    for (const JacobianSequence& est : estimated) {
        const JacobianSequence* tru = nullptr;
        for (const JacobianSequence& t : truth)
            if (t.cluster_id == est.cluster_id) tru = &t;
        if (tru == nullptr) continue;
        std::map<std::string, int> truth_index;
        for (std::size_t i = 0; i < tru->communities.size(); ++i)
            truth_index[tru->communities[i]] = static_cast<int>(i);
        std::vector<int> remap(est.communities.size(), -1);
        bool complete = true;
        for (std::size_t i = 0; i < est.communities.size(); ++i) {
            const auto it = truth_index.find(est.communities[i]);
            if (it == truth_index.end()) complete = false;
            else remap[i] = it->second;
        }
        if (!complete) continue;
        std::map<int, std::size_t> truth_week;
        for (std::size_t k = 0; k < tru->week.size(); ++k) truth_week[tru->week[k]] = k;
        const int n = static_cast<int>(est.communities.size());
        for (std::size_t k = 0; k < est.week.size(); ++k) {
            const auto it = truth_week.find(est.week[k]);
            if (it == truth_week.end()) continue;
            Eigen::MatrixXd t(n, n);
            for (int a = 0; a < n; ++a)
                for (int b = 0; b < n; ++b) t(a, b) = tru->c[it->second](remap[a], remap[b]);
            est_out.push_back(est.c[k]);
            truth_out.push_back(t);
        }
    }
}

RunOutcome run_smap(const Config& cfg, const std::string& wd, std::uint64_t, int threads) {
    const WeeklyActivityPanel panel = read_panel_csv(wd + "/activity.csv");
    const ClusterAssignment assignment = read_assignment_csv(wd + "/assignment.csv");
    const StateTransform transform =
        transform_from_string(cfg.get_string("smap", "transform", "log1p_standardize"));
    const int min_length = static_cast<int>(cfg.get_int("smap", "min_length", -1));
    const std::vector<SmapHyperparameters> grid = grid_from_config(cfg);

    std::vector<int> week_of(panel.weeks);
    for (int w = 0; w < panel.weeks; ++w) week_of[w] = w;

    std::vector<JacobianSequence> sequences;
    json report = json::array();
    const std::vector<std::vector<int>> members = assignment.members();
    for (std::size_t label = 0; label < members.size(); ++label) {
        const std::vector<int>& rows = members[label];
        if (rows.size() < 2) continue;
        const std::string cluster_id = "cluster" + std::to_string(label);
        std::vector<std::string> names;
        for (int r : rows) names.push_back(assignment.communities[r]);
        Eigen::MatrixXd raw(panel.weeks, static_cast<int>(rows.size()));
        for (std::size_t c = 0; c < rows.size(); ++c) {
            const int idx = panel.index_of(names[c]);
            if (idx < 0) throw stage_error("community in assignment.csv missing from activity.csv: " + names[c]);
            for (int w = 0; w < panel.weeks; ++w) raw(w, static_cast<int>(c)) = panel.group_size[idx][w];
        }
        json entry;
        entry["cluster"] = cluster_id;
        entry["communities"] = names;
        try {
            const StateTrajectory traj =
                preprocess(cluster_id, names, raw, week_of, transform, min_length);
            const CvReport cv = loocv_grid_search(traj, grid, threads);
            sequences.push_back(jacobian_sequence(traj, cv.selected, threads));
            entry["selected"] = {{"theta", cv.selected.theta},
                                 {"alpha", cv.selected.alpha},
                                 {"lambda", cv.selected.lambda},
                                 {"rmse", cv.selected_rmse}};
            json cells = json::array();
            for (const CvEntry& g : cv.grid)
                cells.push_back({{"theta", g.hp.theta},
                                 {"alpha", g.hp.alpha},
                                 {"lambda", g.hp.lambda},
                                 {"rmse", g.rmse}});
            entry["grid"] = std::move(cells);
        } catch (const numerical_error& e) {
            entry["skipped"] = e.what();
        } catch (const stage_error& e) {
            entry["skipped"] = e.what();
        }
        report.push_back(std::move(entry));
    }
    if (sequences.empty())
        throw stage_error("no cluster with two or more members produced a fit");
    write_jacobians_csv(sequences, wd + "/jacobians.csv");
    write_json_file(wd + "/cv_report.json", report);

    RunOutcome outcome{{"activity.csv", "assignment.csv"}, {"jacobians.csv", "cv_report.json"}};
    if (file_exists(wd + "/truth_jacobians.csv")) {
        const std::vector<JacobianSequence> truth = read_jacobians_csv(wd + "/truth_jacobians.csv");
        std::vector<Eigen::MatrixXd> est_aligned, truth_aligned;
        align_truth(sequences, truth, est_aligned, truth_aligned);
        json rec;
        if (est_aligned.empty()) {
            rec["cells"] = 0;
            rec["weeks_matched"] = 0;
        } else {
            const RecoveryScore score = recovery_score(est_aligned, truth_aligned);
            rec["cells"] = score.cells;
            rec["weeks_matched"] = est_aligned.size();
            rec["sign_accuracy"] = score.sign_accuracy;
            rec["correlation"] = score.correlation;
            rec["scale_ratio"] = score.scale_ratio;
        }
        write_json_file(wd + "/recovery.json", rec);
        outcome.inputs.push_back("truth_jacobians.csv");
        outcome.outputs.push_back("recovery.json");
    }
    return outcome;
}

// -------------------------------------------------------------- episodes

RunOutcome run_episodes(const Config& cfg, const std::string& wd, std::uint64_t, int) {
    const std::vector<JacobianSequence> sequences = read_jacobians_csv(wd + "/jacobians.csv");
    std::vector<Episode> episodes;
    for (const JacobianSequence& seq : sequences) {
        const std::vector<Episode> part = extract_all_episodes(seq);
        episodes.insert(episodes.end(), part.begin(), part.end());
    }
    HistogramOptions opts;
    opts.duration_cap = static_cast<int>(cfg.get_int("episodes", "duration_cap", opts.duration_cap));
    opts.strength_bin_width =
        cfg.get_double("episodes", "strength_bin_width", opts.strength_bin_width);
    opts.strength_cap = cfg.get_double("episodes", "strength_cap", opts.strength_cap);

    write_episodes_csv(wd + "/episodes.csv", episodes);
    write_episode_stats_json(wd + "/stats.json", summarize(episodes));
    write_distribution_tables_csv(wd + "/dist_duration.csv", wd + "/dist_strength.csv",
                                  wd + "/dist_joint.csv", emit_distribution_tables(episodes, opts));
    return {{"jacobians.csv"},
            {"episodes.csv", "stats.json", "dist_duration.csv", "dist_strength.csv",
             "dist_joint.csv"}};
}

// ----------------------------------------------------------------- panel

RunOutcome run_panel(const Config& cfg, const std::string& wd, std::uint64_t, int threads) {
    const std::vector<JacobianSequence> sequences = read_jacobians_csv(wd + "/jacobians.csv");
    const OverlapTable overlap = read_overlap_csv(wd + "/overlap.csv");
    const DyadPanel panel = build_dyad_panel(sequences, overlap);
    write_panel_csv(wd + "/panel.csv", panel);

    PanelModelOptions opts;
    opts.include_level_variants = cfg.get_bool("panel", "include_level_variants", false);
    opts.threads = threads;
    write_fit_json(wd + "/fits.json", fit_panel_models(panel, opts));
    return {{"jacobians.csv", "overlap.csv"}, {"panel.csv", "fits.json"}};
}

// -------------------------------------------------------------- simulate

Eigen::MatrixXd matrix_from_json(const json& j, int n, const std::string& what) {
    if (!j.is_array() || static_cast<int>(j.size()) != n)
        throw config_error("scenario " + what + " must be an " + std::to_string(n) + "x" +
                           std::to_string(n) + " array");
    Eigen::MatrixXd m(n, n);
    for (int r = 0; r < n; ++r) {
        const json& row = j.at(r);
        if (!row.is_array() || static_cast<int>(row.size()) != n)
            throw config_error("scenario " + what + " row " + std::to_string(r) + " has wrong length");
        for (int c = 0; c < n; ++c) m(r, c) = row.at(c).get<double>();
    }
    return m;
}

Eigen::VectorXd vector_from_json(const json& j, int n, const std::string& what) {
    if (!j.is_array() || static_cast<int>(j.size()) != n)
        throw config_error("scenario " + what + " must have length " + std::to_string(n));
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = j.at(i).get<double>();
    return v;
}

struct TrajectoryScenario {
    SyntheticModel model;
    int T = 0;
    double scale = 40.0;
    double offset = 0.0;
};

TrajectoryScenario trajectory_from_json(const json& j) {
    TrajectoryScenario sc;
    sc.model.family = family_from_string(j.at("family").get<std::string>());
    sc.model.n = j.at("n").get<int>();
    if (sc.model.n < 1) throw config_error("scenario n must be >= 1");
    sc.T = j.at("T").get<int>();
    if (sc.T < 2) throw config_error("scenario T must be >= 2");
    const json& p = j.at("params");
    sc.model.a = matrix_from_json(p.at("a"), sc.model.n, "params.a");
    sc.model.r = p.contains("r") ? vector_from_json(p.at("r"), sc.model.n, "params.r")
                                 : Eigen::VectorXd::Zero(sc.model.n).eval();
    sc.model.x0 = vector_from_json(p.at("x0"), sc.model.n, "params.x0");
    if (sc.model.family == MapFamily::regime_switch) {
        sc.model.a_post = matrix_from_json(p.at("a_post"), sc.model.n, "params.a_post");
        sc.model.switch_time = p.at("switch_time").get<int>();
    }
    sc.model.noise_sd = j.value("noise", 0.0);
    sc.model.seed = j.at("seed").get<std::uint64_t>();
    sc.scale = p.value("scale", 40.0);
    sc.offset = p.value("offset", 0.0);
    return sc;
}

std::vector<double> share_series(const json& j, int weeks, const std::string& what) {
    std::vector<double> out;
    if (j.is_number()) {
        out.assign(weeks, j.get<double>());
    } else if (j.is_array()) {
        if (static_cast<int>(j.size()) != weeks)
            throw config_error("scenario " + what + " must have one value per week");
        for (const json& v : j) out.push_back(v.get<double>());
    } else {
        throw config_error("scenario " + what + " must be a number or an array");
    }
    for (double v : out)
        if (v < 0.0 || v > 1.0) throw config_error("scenario " + what + " outside [0, 1]");
    return out;
}

CorpusSchedule schedule_from_json(const json& j) {
    CorpusSchedule sch;
    const json& p = j.at("params");
    sch.communities = p.at("communities").get<int>();
    sch.weeks = p.at("weeks").get<int>();
    sch.authors_per_community = p.value("authors_per_community", sch.authors_per_community);
    sch.tokens_per_community = p.value("tokens_per_community", sch.tokens_per_community);
    sch.active_authors_per_week = p.value("active_authors_per_week", sch.active_authors_per_week);
    sch.messages_per_author = p.value("messages_per_author", sch.messages_per_author);
    sch.window_start = p.value("window_start", sch.window_start);
    sch.seed = j.at("seed").get<std::uint64_t>();
    if (p.contains("pairs")) {
        for (const json& e : p.at("pairs")) {
            PairSchedule pair;
            pair.i = e.at("i").get<int>();
            pair.j = e.at("j").get<int>();
            pair.author_share = share_series(e.at("author_share"), sch.weeks, "pairs.author_share");
            pair.token_share = share_series(e.at("token_share"), sch.weeks, "pairs.token_share");
            sch.pairs.push_back(std::move(pair));
        }
    }
    if (p.contains("group_size")) {
        const TrajectoryScenario nested = trajectory_from_json(p.at("group_size"));
        if (nested.model.n != sch.communities)
            throw config_error("scenario group_size.n must equal params.communities");
        if (nested.T != sch.weeks)
            throw config_error("scenario group_size.T must equal params.weeks");
        const GroundTruth truth = simulate(nested.model, nested.T);
        sch.group_size.resize(sch.communities, sch.weeks);
        for (int c = 0; c < sch.communities; ++c)
            for (int w = 0; w < sch.weeks; ++w)
                sch.group_size(c, w) = nested.scale * truth.trajectory(w, c) + nested.offset;
    }
    return sch;
}

std::vector<std::string> numbered_communities(int n) {
    std::vector<std::string> out;
    for (int c = 0; c < n; ++c) out.push_back("community" + std::to_string(c));
    return out;
}

RunOutcome run_simulate(const Config& cfg, const std::string& wd, std::uint64_t, int) {
    const std::string scenario_key = cfg.require_string("simulate", "scenario");
    const std::string scenario_path = resolve(wd, scenario_key);
    if (!file_exists(scenario_path)) throw config_error("scenario file not found: " + scenario_path);
    json j;
    try {
        std::ifstream in(scenario_path);
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw config_error("cannot parse scenario " + scenario_path + ": " + e.what());
    }
    std::string family;
    try {
        family = j.at("family").get<std::string>();
    } catch (const json::exception&) {
        throw config_error("scenario is missing the family field");
    }

    try {
        if (family == "corpus") {
            const CorpusSchedule schedule = schedule_from_json(j);
            const std::vector<ContributionRecord> records = synthetic_corpus(schedule);
            std::ofstream out(wd + "/corpus.ndjson");
            if (!out) throw stage_error("cannot write corpus.ndjson");
            for (const ContributionRecord& r : records) {
                json line;
                line["subreddit"] = r.community_id;
                line["author"] = r.author_id;
                line["created_utc"] = r.timestamp;
                line["body"] = r.text;
                out << line.dump() << '\n';
            }
            out.close();

            std::ofstream sched(wd + "/truth_schedule.csv");
            if (!sched) throw stage_error("cannot write truth_schedule.csv");
            sched << "i,j,week,author_share,token_share\n";
            for (const PairSchedule& pair : schedule.pairs)
                for (int w = 0; w < schedule.weeks; ++w)
                    sched << "community" << pair.i << ",community" << pair.j << ',' << w << ','
                          << csv::num(pair.author_share[w]) << ',' << csv::num(pair.token_share[w])
                          << '\n';
            return {{scenario_key}, {"corpus.ndjson", "truth_schedule.csv"}};
        }

        const TrajectoryScenario sc = trajectory_from_json(j);
        const GroundTruth truth = simulate(sc.model, sc.T);

        WeeklyActivityPanel panel;
        panel.communities = numbered_communities(sc.model.n);
        panel.weeks = sc.T;
        panel.group_size.assign(sc.model.n, std::vector<int>(sc.T, 0));
        panel.messages = panel.group_size;
        for (int c = 0; c < sc.model.n; ++c)
            for (int t = 0; t < sc.T; ++t) {
                const long v = std::lround(sc.scale * truth.trajectory(t, c) + sc.offset);
                panel.group_size[c][t] = static_cast<int>(std::max(0L, v));
                panel.messages[c][t] = panel.group_size[c][t];
            }
        write_panel_csv(panel, wd + "/activity.csv");

        ClusterAssignment assignment;
        assignment.communities = panel.communities;
        assignment.label.assign(sc.model.n, 0);
        assignment.n_clusters = 1;
        assignment.n_noise = 0;
        write_assignment_csv(wd + "/assignment.csv", assignment);

        JacobianSequence seq;
        seq.cluster_id = "cluster0";
        seq.communities = panel.communities;
        for (int t = 0; t + 1 < sc.T; ++t) {
            seq.target.push_back(t + 1);
            seq.week.push_back(t + 1);  // jacobians[t] covers x(t) -> x(t+1)
            seq.c.push_back(truth.jacobians[t]);
            seq.intercept.push_back(Eigen::VectorXd::Zero(sc.model.n));
        }
        write_jacobians_csv({seq}, wd + "/truth_jacobians.csv");
        return {{scenario_key}, {"activity.csv", "assignment.csv", "truth_jacobians.csv"}};
    } catch (const json::exception& e) {
        throw config_error("bad scenario " + scenario_path + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        // infeasible schedules and malformed model parameters surface here
        throw config_error("bad scenario " + scenario_path + ": " + e.what());
    }
}

// ---------------------------------------------------------------- report

void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& rows) {
    if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it)
            flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), rows);
    } else if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i)
            flatten(j.at(i), prefix + "." + std::to_string(i), rows);
    } else if (j.is_number_float()) {
        rows.emplace_back(prefix, csv::num6(j.get<double>()));
    } else if (j.is_null()) {
        rows.emplace_back(prefix, "");
    } else if (j.is_string()) {
        rows.emplace_back(prefix, j.get<std::string>());
    } else {
        rows.emplace_back(prefix, j.dump());
    }
}

RunOutcome run_report(const Config& cfg, const std::string& wd, std::uint64_t, int) {
    const std::string format = cfg.get_string("report", "format", "json");
    if (format != "json" && format != "csv")
        throw config_error("report format must be json or csv, got: " + format);

    RunOutcome outcome;
    json root;
    const auto embed = [&](const std::string& file, const std::string& key) {
        if (!file_exists(wd + "/" + file)) return;
        root[key] = read_json_file(wd + "/" + file);
        outcome.inputs.push_back(file);
    };
    embed("ingest.json", "ingest");
    embed("cluster_summary.json", "clusters");
    embed("cv_report.json", "smap");
    embed("stats.json", "episodes");
    embed("fits.json", "models");
    embed("recovery.json", "recovery");
    if (root.contains("smap"))  // keep the bundle lean; the full grid stays in cv_report.json
        for (json& entry : root["smap"]) entry.erase("grid");

    json trends = json::array();
    if (file_exists(wd + "/overlap.csv")) {
        const OverlapTable overlap = read_overlap_csv(wd + "/overlap.csv");
        outcome.inputs.push_back("overlap.csv");
        std::map<std::string, int> index;
        for (std::size_t i = 0; i < overlap.communities.size(); ++i)
            index[overlap.communities[i]] = static_cast<int>(i);
        const auto series_of = [&](const std::string& a, const std::string& b) -> const MetricSeries* {
            const auto ia = index.find(a), ib = index.find(b);
            if (ia == index.end() || ib == index.end()) return nullptr;
            for (const MetricSeries& s : overlap.user)
                if ((s.i == ia->second && s.j == ib->second) ||
                    (s.i == ib->second && s.j == ia->second))
                    return &s;
            return nullptr;
        };
        const auto opt_array = [](const std::vector<std::optional<double>>& v) {
            json a = json::array();
            for (const std::optional<double>& x : v)
                a.push_back(x.has_value() ? json(*x) : json());
            return a;
        };
        if (file_exists(wd + "/truth_schedule.csv")) {
            const csv::Table t = csv::read_table_file(wd + "/truth_schedule.csv");
            outcome.inputs.push_back("truth_schedule.csv");
            const int ii = t.column("i"), jj = t.column("j"), wk = t.column("week");
            const int as = t.column("author_share"), ts = t.column("token_share");
            std::map<std::pair<std::string, std::string>, std::map<int, std::pair<double, double>>> sched;
            for (const auto& row : t.rows)
                sched[{row[ii], row[jj]}][std::stoi(row[wk])] = {std::stod(row[as]),
                                                                 std::stod(row[ts])};
            for (const auto& [names, weeks] : sched) {
                const MetricSeries* user = series_of(names.first, names.second);
                if (user == nullptr) continue;
                const MetricSeries* topic = &overlap.topic[user - overlap.user.data()];
                json entry;
                entry["i"] = names.first;
                entry["j"] = names.second;
                json weeks_a = json::array(), au = json::array(), to = json::array();
                for (const auto& [w, shares] : weeks) {
                    weeks_a.push_back(w);
                    au.push_back(shares.first);
                    to.push_back(shares.second);
                }
                entry["weeks"] = std::move(weeks_a);
                entry["author_share"] = std::move(au);
                entry["token_share"] = std::move(to);
                entry["user_overlap"] = opt_array(user->weekly);
                entry["topic_overlap"] = opt_array(topic->weekly);
                trends.push_back(std::move(entry));
            }
            root["overlap_trends"] = trends;
        } else {
            json full = json::array();
            for (std::size_t p = 0; p < overlap.user.size(); ++p) {
                const MetricSeries& u = overlap.user[p];
                const MetricSeries& s = overlap.topic[p];
                json entry;
                entry["i"] = overlap.communities[u.i];
                entry["j"] = overlap.communities[u.j];
                entry["user_full"] = u.full.has_value() ? json(*u.full) : json();
                entry["topic_full"] = s.full.has_value() ? json(*s.full) : json();
                full.push_back(std::move(entry));
            }
            root["overlap_full"] = std::move(full);
        }
    }

    root = round6(root);
    if (format == "json") {
        write_json_file(wd + "/report.json", root);
        outcome.outputs = {"report.json"};
        return outcome;
    }

    json flat = root;
    flat.erase("overlap_trends");
    std::vector<std::pair<std::string, std::string>> rows;
    flatten(flat, "", rows);
    std::ofstream out(wd + "/report.csv");
    if (!out) throw stage_error("cannot write report.csv");
    out << "key,value\n";
    for (const auto& [key, value] : rows) out << key << ',' << value << '\n';
    out.close();
    outcome.outputs = {"report.csv"};

    if (root.contains("overlap_trends")) {
        std::ofstream tr(wd + "/report_trends.csv");
        if (!tr) throw stage_error("cannot write report_trends.csv");
        tr << "i,j,week,author_share,token_share,user_overlap,topic_overlap\n";
        for (const json& entry : root["overlap_trends"]) {
            const json& weeks = entry["weeks"];
            for (std::size_t k = 0; k < weeks.size(); ++k) {
                const auto cell = [&](const json& arr) -> std::string {
                    const json& v = arr.at(k);
                    return v.is_null() ? "" : csv::num6(v.get<double>());
                };
                tr << entry["i"].get<std::string>() << ',' << entry["j"].get<std::string>() << ','
                   << weeks.at(k).get<int>() << ',' << cell(entry["author_share"]) << ','
                   << cell(entry["token_share"]) << ',' << cell(entry["user_overlap"]) << ','
                   << cell(entry["topic_overlap"]) << '\n';
            }
        }
        outcome.outputs.push_back("report_trends.csv");
    }
    return outcome;
}

// ----------------------------------------------------------- orchestration

struct StageDef {
    std::vector<std::string> sections;
    // Required input files ("$input"/"$scenario" resolve through the config)
    // and optional ones consumed only when present.
    std::vector<std::string> required;
    std::vector<std::string> optional;
    RunOutcome (*run)(const Config&, const std::string&, std::uint64_t, int);
};

const std::map<std::string, StageDef>& stage_table() {
    static const std::map<std::string, StageDef> table{
        {"ingest", {{"run", "ingest"}, {"$input"}, {}, run_ingest}},
        {"vectorize",
         {{"run", "ingest", "vectorize"}, {"$input", "activity.csv"}, {}, run_vectorize}},
        {"cluster", {{"run", "ingest", "cluster"}, {"$input", "activity.csv"}, {}, run_cluster}},
        {"smap",
         {{"run", "smap"}, {"activity.csv", "assignment.csv"}, {"truth_jacobians.csv"}, run_smap}},
        {"episodes", {{"run", "episodes"}, {"jacobians.csv"}, {}, run_episodes}},
        {"panel", {{"run", "panel"}, {"jacobians.csv", "overlap.csv"}, {}, run_panel}},
        {"simulate", {{"run", "simulate"}, {"$scenario"}, {}, run_simulate}},
        {"report",
         {{"run", "report"},
          {"stats.json"},
          {"ingest.json", "cluster_summary.json", "cv_report.json", "fits.json", "recovery.json",
           "overlap.csv", "truth_schedule.csv"},
          run_report}},
    };
    return table;
}

// First-choice producer per stage file, for dependency error messages.
const std::map<std::string, std::string>& producer_hint() {
    static const std::map<std::string, std::string> hints{
        {"activity.csv", "ingest"},        {"ingest.json", "ingest"},
        {"vocabulary.tsv", "vectorize"},   {"lsa_user.bin", "vectorize"},
        {"lsa_topic.bin", "vectorize"},    {"overlap.csv", "vectorize"},
        {"assignment.csv", "cluster"},     {"grid_report.json", "cluster"},
        {"cluster_summary.json", "cluster"},
        {"jacobians.csv", "smap"},         {"cv_report.json", "smap"},
        {"recovery.json", "smap"},         {"episodes.csv", "episodes"},
        {"stats.json", "episodes"},        {"dist_duration.csv", "episodes"},
        {"dist_strength.csv", "episodes"}, {"dist_joint.csv", "episodes"},
        {"panel.csv", "panel"},            {"fits.json", "panel"},
        {"corpus.ndjson", "simulate"},     {"truth_jacobians.csv", "simulate"},
        {"truth_schedule.csv", "simulate"},
    };
    return hints;
}

std::string resolve_token(const std::string& token, const Config& cfg) {
    if (token == "$input") return cfg.require_string("ingest", "input");
    if (token == "$scenario") return cfg.require_string("simulate", "scenario");
    return token;
}

// The manifest stage entry whose recorded outputs include `file`. When two
// stages claim the same file (ingest and simulate can both write
// activity.csv), the one matching the bytes on disk wins.
const std::string* find_producer(const Manifest& manifest, const std::string& wd,
                                 const std::string& file) {
    const std::string* fallback = nullptr;
    for (const auto& [stage, rec] : manifest.stages) {
        const auto it = rec.outputs.find(file);
        if (it == rec.outputs.end()) continue;
        fallback = &stage;
        if (file_exists(resolve(wd, file)) && hash_file(resolve(wd, file)) == it->second)
            return &manifest.stages.find(stage)->first;
    }
    return fallback;
}

bool stage_current(const std::string& stage, const Config& cfg, const std::string& wd,
                   const Manifest& manifest, std::map<std::string, bool>& memo,
                   std::set<std::string>& visiting) {
    const auto cached = memo.find(stage);
    if (cached != memo.end()) return cached->second;
    if (!visiting.insert(stage).second) return true;  // cycle guard; never expected

    bool ok = true;
    const auto rec_it = manifest.stages.find(stage);
    if (rec_it == manifest.stages.end()) {
        ok = false;
    } else {
        const StageRecord& rec = rec_it->second;
        if (rec.config_hash != stage_config_hash(stage, cfg)) ok = false;
        if (ok)
            for (const auto& [path, hash] : rec.inputs) {
                const std::string full = resolve(wd, path);
                if (!file_exists(full) || hash_file(full) != hash) {
                    ok = false;
                    break;
                }
            }
        if (ok)
            for (const auto& [path, hash] : rec.outputs) {
                const std::string full = resolve(wd, path);
                if (!file_exists(full) || hash_file(full) != hash) {
                    ok = false;
                    break;
                }
            }
        if (ok)
            for (const auto& [path, hash] : rec.inputs) {
                const std::string* producer = find_producer(manifest, wd, path);
                if (producer != nullptr &&
                    !stage_current(*producer, cfg, wd, manifest, memo, visiting)) {
                    ok = false;
                    break;
                }
            }
    }
    visiting.erase(stage);
    memo[stage] = ok;
    return ok;
}

}  // namespace

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names{"ingest", "vectorize", "cluster",  "smap",
                                                "episodes", "panel",   "simulate", "report"};
    return names;
}

bool known_stage(const std::string& name) {
    return stage_table().count(name) > 0;
}

std::vector<std::string> stage_sections(const std::string& stage) {
    const auto it = stage_table().find(stage);
    if (it == stage_table().end()) throw config_error("unknown stage: " + stage);
    return it->second.sections;
}

std::string stage_config_hash(const std::string& stage, const Config& cfg) {
    return hash_hex(cfg.dump_sections(stage_sections(stage)));
}

StageStatus run_stage(const std::string& stage, const Config& cfg, bool force) {
    const auto def_it = stage_table().find(stage);
    if (def_it == stage_table().end()) throw config_error("unknown stage: " + stage);
    const StageDef& def = def_it->second;

    const std::string wd = cfg.require_string("run", "workdir");
    const std::uint64_t seed = static_cast<std::uint64_t>(cfg.require_int("run", "seed"));
    int threads = static_cast<int>(cfg.get_int("run", "threads", 0));
    if (threads <= 0) threads = default_threads();
    std::filesystem::create_directories(wd);

    const std::string manifest_path = wd + "/manifest.json";
    Manifest manifest = Manifest::load(manifest_path);

    std::vector<std::string> expected;
    for (const std::string& token : def.required) {
        const std::string path = resolve_token(token, cfg);
        if (!file_exists(resolve(wd, path))) {
            const auto hint = producer_hint().find(path);
            if (hint == producer_hint().end())  // external reference, not a stage product
                throw config_error("stage '" + stage + "' requires " + path +
                                   ", which does not exist");
            throw stage_error("stage '" + stage + "' requires " + path + "; run '" +
                              hint->second + "' first");
        }
        expected.push_back(path);
    }
    for (const std::string& token : def.optional)
        if (file_exists(resolve(wd, token))) expected.push_back(token);

    std::map<std::string, bool> memo;
    std::set<std::string> visiting;
    if (!force) {
        for (const std::string& path : expected) {
            const std::string* producer = find_producer(manifest, wd, path);
            if (producer == nullptr || *producer == stage) continue;
            if (!stage_current(*producer, cfg, wd, manifest, memo, visiting))
                throw stage_error("input " + path + " is stale: stage '" + *producer +
                                  "' ran under a different configuration or inputs; rerun '" +
                                  *producer + "' or pass --force");
        }

        const auto rec_it = manifest.stages.find(stage);
        if (rec_it != manifest.stages.end()) {
            std::set<std::string> recorded;
            for (const auto& [path, hash] : rec_it->second.inputs) recorded.insert(path);
            if (recorded == std::set<std::string>(expected.begin(), expected.end()) &&
                stage_current(stage, cfg, wd, manifest, memo, visiting))
                return {stage, true, 0.0, {}};
        }
    }

    const auto t0 = std::chrono::steady_clock::now();
    const RunOutcome outcome = def.run(cfg, wd, seed, threads);
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    StageRecord rec;
    rec.config_hash = stage_config_hash(stage, cfg);
    for (const std::string& path : outcome.inputs) rec.inputs[path] = hash_file(resolve(wd, path));
    for (const std::string& path : outcome.outputs)
        rec.outputs[path] = hash_file(resolve(wd, path));
    rec.runtime_seconds = dt;
    manifest.stages[stage] = std::move(rec);
    manifest.save(manifest_path);

    return {stage, false, dt, outcome.outputs};
}

}  // namespace nichemap::pipeline
