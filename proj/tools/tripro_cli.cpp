// tripro: synthetic data, training, evaluation and ablations from one config file.

#include "tripro/config.hpp"
#include "tripro/errors.hpp"
#include "tripro/experiment.hpp"
#include "tripro/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <regex>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tripro;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct ConfigArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string dataset;
    std::string output;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args, bool required) {
    auto* opt = cmd->add_option("-c,--config", args.config_path, "experiment config (JSON)");
    if (required) opt->required()->check(CLI::ExistingFile);
    cmd->add_option("--set", args.overrides, "override a config key, e.g. --set prompts.cmp_length=40")
        ->allow_extra_args(false);
    cmd->add_option("--dataset", args.dataset, "dataset root (overrides dataset_root)");
    cmd->add_option("--output", args.output, "output directory (overrides output_dir)");
}

config::ExperimentConfig resolve_config(const ConfigArgs& args, config::ExperimentConfig base) {
    auto cfg = args.config_path.empty() ? std::move(base) : config::load_config(args.config_path);
    for (const auto& item : args.overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + item + "'");
        const auto key = item.substr(0, eq);
        const auto text = item.substr(eq + 1);
        json value = json::parse(text, nullptr, false);
        if (value.is_discarded()) value = text;
        config::set_by_path(cfg, key, value);
    }
    if (!args.dataset.empty()) cfg.dataset_root = args.dataset;
    if (!args.output.empty()) cfg.output_dir = args.output;
    return cfg;
}

// Only entries a dataset generator writes are cleared on --force.
void clear_dataset_dir(const fs::path& dir) {
    static const std::regex identity_dir(R"(\d{4})");
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name == "attributes.csv" || name == "manifest.json" ||
            (entry.is_directory() && std::regex_match(name, identity_dir)))
            fs::remove_all(entry.path());
    }
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ',');) {
        if (part.empty()) continue;
        try {
            seeds.push_back(std::stoull(part));
        } catch (const std::exception&) {
            throw ConfigError("bad seed '" + part + "' in --seeds");
        }
    }
    if (seeds.empty()) throw ConfigError("--seeds is empty");
    return seeds;
}

void print_metrics(const eval::Metrics& m) {
    std::cout << "mAP " << m.map << "  rank1 " << m.rank1 << "  rank5 " << m.rank5 << "  rank10 " << m.rank10
              << "  (" << m.n_query << " queries, " << m.n_gallery << " gallery)\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"RGB-Event person re-identification with tri-modal prompts"};
    app.require_subcommand(1);

    // synth-data
    auto* synth_cmd = app.add_subcommand("synth-data", "generate a synthetic RGB-Event re-ID dataset");
    synth::SynthOptions synth_opts;
    std::string synth_out;
    bool synth_force = false;
    synth_cmd->add_option("-o,--out", synth_out, "dataset root to create")->required();
    synth_cmd->add_option("--identities", synth_opts.identities, "number of identities")->check(CLI::Range(1, 9999));
    synth_cmd->add_option("--tracklets", synth_opts.tracklets_per_id, "tracklets per identity")
        ->check(CLI::Range(1, 999));
    synth_cmd->add_option("--frames", synth_opts.frames, "frames per tracklet")->check(CLI::Range(1, 99999));
    synth_cmd->add_option("--height", synth_opts.height, "frame height")->check(CLI::Range(16, 4096));
    synth_cmd->add_option("--width", synth_opts.width, "frame width")->check(CLI::Range(16, 4096));
    synth_cmd->add_option("--seed", synth_opts.seed, "generator seed");
    synth_cmd->add_option("--threshold", synth_opts.contrast_threshold, "event contrast threshold")
        ->check(CLI::PositiveNumber);
    synth_cmd->add_flag("--force", synth_force, "overwrite a non-empty output directory");

    // init-config
    auto* init_cmd = app.add_subcommand("init-config", "write the default experiment config");
    std::string init_out;
    init_cmd->add_option("-o,--out", init_out, "config file to write")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "run stages 1-3 and evaluate the final model");
    ConfigArgs train_args;
    std::string resume_from;
    bool train_force = false;
    add_config_options(train_cmd, train_args, false);
    train_cmd->add_option("--resume", resume_from, "checkpoint directory to resume from")
        ->check(CLI::ExistingDirectory);
    train_cmd->add_flag("--force", train_force, "reuse a non-empty run directory");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    ConfigArgs eval_args;
    std::string eval_ckpt, eval_report;
    add_config_options(eval_cmd, eval_args, false);
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--report", eval_report, "metrics report path (default <checkpoint>/eval_metrics.json)");

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate every row of one ablation axis");
    ConfigArgs ablate_args;
    std::string axis, seeds_text = "0", ablate_report;
    add_config_options(ablate_cmd, ablate_args, false);
    ablate_cmd->add_option("--axis", axis, "pnap_mode | cmp_length | cmp_depth | projector | direction | modules")
        ->required();
    ablate_cmd->add_option("--seeds", seeds_text, "comma-separated seeds; rows report the median");
    ablate_cmd->add_option("--report", ablate_report, "report path (default <output>/ablation/<axis>.json)");

    // export-ranklist
    auto* export_cmd = app.add_subcommand("export-ranklist", "write rank-list montages of a checkpoint");
    ConfigArgs export_args;
    std::string export_ckpt, export_out;
    std::size_t top_n = 10;
    add_config_options(export_cmd, export_args, false);
    export_cmd->add_option("--checkpoint", export_ckpt, "checkpoint directory")
        ->required()
        ->check(CLI::ExistingDirectory);
    export_cmd->add_option("-o,--out", export_out, "montage directory")->required();
    export_cmd->add_option("--top", top_n, "gallery entries per query")->check(CLI::Range(1, 1000));

    // convert-events
    auto* convert_cmd = app.add_subcommand("convert-events", "synthesize an EVRD event file from RGB frames");
    std::string frames_dir, evrd_out;
    double threshold = 0.2;
    convert_cmd->add_option("--frames", frames_dir, "directory of rgb_NNNNN.png frames")
        ->required()
        ->check(CLI::ExistingDirectory);
    convert_cmd->add_option("-o,--out", evrd_out, "output .evrd file")->required();
    convert_cmd->add_option("--threshold", threshold, "contrast threshold")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*synth_cmd) {
            const fs::path out = synth_out;
            if (experiment::non_empty_dir(out)) {
                if (!synth_force) throw ConfigError("output directory " + out.string() + " is not empty (use --force)");
                clear_dataset_dir(out);
            }
            experiment::DirectoryLock lock(out);
            synth::generate_dataset(out, synth_opts);
            std::cout << "wrote " << synth_opts.identities * synth_opts.tracklets_per_id << " tracklets to " << out
                      << '\n';
        } else if (*init_cmd) {
            config::save_config(init_out, config::default_config());
            std::cout << "wrote " << init_out << '\n';
        } else if (*train_cmd) {
            auto cfg = resolve_config(train_args, config::default_config());
            experiment::DirectoryLock lock(cfg.output_dir);
            const auto run_dir = fs::path(cfg.output_dir) / "runs" / cfg.name;
            if (resume_from.empty()) {
                if (experiment::non_empty_dir(run_dir) && !train_force)
                    throw ConfigError("run directory " + run_dir.string() + " is not empty (use --force or --resume)");
                const auto outcome = experiment::run_training(cfg, &std::cout);
                std::cout << "final checkpoint " << outcome.final_checkpoint << '\n';
                print_metrics(outcome.metrics);
            } else {
                experiment::Session session(cfg);
                session.resume(run_dir, resume_from, &std::cout);
                train::save_model(run_dir / "final", *session.model(), config::to_json(cfg).dump());
                const auto metrics = session.evaluate();
                eval::write_metrics_report(run_dir / "metrics.json", metrics, config::config_hash(cfg));
                print_metrics(metrics);
            }
        } else if (*eval_cmd) {
            const auto cfg = resolve_config(eval_args, experiment::config_from_checkpoint(eval_ckpt));
            const fs::path report = eval_report.empty() ? fs::path(eval_ckpt) / "eval_metrics.json" : fs::path(eval_report);
            experiment::DirectoryLock lock(report.has_parent_path() ? report.parent_path() : fs::path("."));
            const auto metrics = experiment::run_evaluation(cfg, eval_ckpt, report);
            print_metrics(metrics);
            std::cout << "report " << report << '\n';
        } else if (*ablate_cmd) {
            const auto cfg = resolve_config(ablate_args, config::default_config());
            experiment::ablation_rows(cfg, axis); // unknown axis fails before any work
            experiment::DirectoryLock lock(cfg.output_dir);
            const auto rows = experiment::run_ablation(cfg, axis, parse_seeds(seeds_text), &std::cout);
            const fs::path report =
                ablate_report.empty() ? fs::path(cfg.output_dir) / "ablation" / (axis + ".json") : fs::path(ablate_report);
            experiment::write_ablation_report(report, axis, rows, config::config_hash(cfg));
            for (const auto& r : rows) {
                std::cout << axis << '=' << r.label;
                if (r.skipped)
                    std::cout << "  skipped: " << r.reason << '\n';
                else
                    std::cout << "  mAP " << r.median_map << "  rank1 " << r.median_rank1 << '\n';
            }
            std::cout << "report " << report << '\n';
        } else if (*export_cmd) {
            const auto cfg = resolve_config(export_args, experiment::config_from_checkpoint(export_ckpt));
            experiment::DirectoryLock lock(export_out);
            const auto result = experiment::run_export(cfg, export_ckpt, export_out, top_n);
            for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
            std::cout << "wrote " << result.montages_written << " montages to " << export_out << '\n';
        } else if (*convert_cmd) {
            const auto n = experiment::convert_events(frames_dir, evrd_out, threshold);
            std::cout << "wrote " << n << " events to " << evrd_out << '\n';
        }
    } catch (const ConfigError& e) {
        std::cerr << "tripro: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "tripro: " << e.what() << '\n';
        return kExitFailure;
    }
    return 0;
}
