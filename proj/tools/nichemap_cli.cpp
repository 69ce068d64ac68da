#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "nichemap/config.hpp"
#include "nichemap/errors.hpp"
#include "nichemap/pipeline.hpp"

namespace {

const char* stage_help(const std::string& stage) {
    if (stage == "ingest") return "Read the NDJSON corpus into the weekly activity panel";
    if (stage == "vectorize") return "Build vocabulary, LSA models, and weekly overlap series";
    if (stage == "cluster") return "Group communities by shared authorship (HDBSCAN grid)";
    if (stage == "smap") return "Fit regularized S-Maps per cluster and emit Jacobians";
    if (stage == "episodes") return "Extract signed interaction episodes and distributions";
    if (stage == "panel") return "Fit dyad-week panel regressions of overlap on interaction";
    if (stage == "simulate") return "Generate a synthetic scenario (trajectory or corpus)";
    if (stage == "report") return "Bundle stage outputs into one report";
    return "";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"nichemap: time-varying interaction analysis for overlapping communities"};
    app.require_subcommand(1);

    std::string config_path;
    std::string workdir_override;
    std::string format_override;
    long long threads_override = 0;
    bool force = false;

    for (const std::string& stage : nichemap::pipeline::stage_names()) {
        CLI::App* sub = app.add_subcommand(stage, stage_help(stage));
        sub->add_option("--config", config_path, "Run configuration file")->required();
        sub->add_option("--workdir", workdir_override, "Override [run].workdir");
        sub->add_option("--threads", threads_override, "Override [run].threads");
        sub->add_flag("--force", force, "Run even when the manifest says up to date or stale");
        if (stage == "report")
            sub->add_option("--format", format_override, "Output format: json or csv");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // bad usage is a configuration error
    }

    const std::string stage = app.get_subcommands().front()->get_name();
    try {
        nichemap::Config cfg = nichemap::Config::parse_file(config_path);
        const auto set_string = [&cfg](const std::string& section, const std::string& key,
                                       const std::string& value) {
            nichemap::Config::Value v;
            v.scalar.kind = nichemap::Config::Scalar::Kind::string;
            v.scalar.s = value;
            cfg.set(section, key, v);
        };
        if (!workdir_override.empty()) set_string("run", "workdir", workdir_override);
        if (!format_override.empty()) set_string("report", "format", format_override);
        if (threads_override > 0) {
            nichemap::Config::Value v;
            v.scalar.kind = nichemap::Config::Scalar::Kind::integer;
            v.scalar.i = threads_override;
            cfg.set("run", "threads", v);
        }

        std::printf("# effective config for '%s'\n%s", stage.c_str(),
                    cfg.dump_sections(nichemap::pipeline::stage_sections(stage)).c_str());
        const nichemap::pipeline::StageStatus status =
            nichemap::pipeline::run_stage(stage, cfg, force);
        if (status.skipped) {
            std::printf("%s: up to date\n", stage.c_str());
        } else {
            std::string files;
            for (const std::string& f : status.outputs) {
                if (!files.empty()) files += ", ";
                files += f;
            }
            std::printf("%s: wrote %s (%.2fs)\n", stage.c_str(), files.c_str(),
                        status.runtime_seconds);
        }
        return 0;
    } catch (const nichemap::config_error& e) {
        std::fprintf(stderr, "%s: config error: %s\n", stage.c_str(), e.what());
        return 2;
    } catch (const nichemap::numerical_error& e) {
        std::fprintf(stderr, "%s: numerical error: %s\n", stage.c_str(), e.what());
        return 4;
    } catch (const nichemap::stage_error& e) {
        std::fprintf(stderr, "%s: %s\n", stage.c_str(), e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "%s: %s\n", stage.c_str(), e.what());
        return 3;
    }
}
