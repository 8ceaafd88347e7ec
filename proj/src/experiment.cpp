#include "tripro/experiment.hpp"

#include "tripro/errors.hpp"
#include "tripro/events.hpp"

#include <algorithm>
#include <cstdlib>
#include <fcntl.h>
#include <fstream>
#include <unistd.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace tripro::experiment {

namespace {

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<eval::FeatureRow> feature_rows(Session& s, const std::vector<int>& ids) {
    const auto& cfg = s.config();
    const model::StageContext context{cfg.model.prompts.use_cmp, cfg.model.prompts.use_pnap};
    const auto feats = train::extract_features(*s.model(), s.loader(), s.attributes(), ids, cfg.frames, context);
    std::vector<eval::FeatureRow> rows;
    for (std::size_t i = 0; i < ids.size(); ++i)
        rows.push_back({ids[i], s.manifest().tracklet(ids[i]).identity, feats[i]});
    return rows;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << text;
}

} // namespace

std::shared_ptr<const BpeTokenizer> default_tokenizer() {
    fs::path path = fs::path(TRIPRO_DATA_DIR) / "bpe_merges.txt";
    if (const char* env = std::getenv("TRIPRO_BPE")) path = env;
    return std::make_shared<const BpeTokenizer>(BpeTokenizer::from_file(path));
}

// Session -----------------------------------------------------------------------

Session::Session(config::ExperimentConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.dataset_root.empty()) throw ConfigError("dataset_root is not set");
    manifest_ = data::build_manifest(cfg_.dataset_root, cfg_.split_seed);
    tokenizer_ = default_tokenizer();
    train::LoaderOptions lo;
    lo.height = cfg_.model.encoder.image_height;
    lo.width = cfg_.model.encoder.image_width;
    lo.event_scale = cfg_.event_scale;
    lo.rgb_blur_sigma = cfg_.test_rgb_blur_sigma;
    loader_ = std::make_unique<train::TrackletLoader>(cfg_.dataset_root, manifest_, lo);
    if (cfg_.attributes == "ground_truth")
        attributes_ = std::make_unique<model::GroundTruthAttributes>(manifest_);
    else
        attributes_ = std::make_unique<model::ConstantAttributes>(
            model::AttributeReport{{}, manifest_.attribute_vocabulary});
    torch::manual_seed(cfg_.seed);
    model_ = model::TriProModel(cfg_.model, manifest_.train_identities(), tokenizer_);
}

data::EvalPartition Session::partition() const {
    return cfg_.eval_split == "held_in" ? data::held_in_partition(manifest_, cfg_.split_seed)
                                        : data::test_partition(manifest_);
}

eval::Metrics Session::evaluate(std::vector<eval::RankingResult>* results) {
    const auto part = partition();
    const auto queries = feature_rows(*this, part.query);
    const auto gallery = feature_rows(*this, part.gallery);
    auto ranked = eval::rank(queries, gallery);
    const auto metrics = eval::summarize(ranked, gallery.size());
    if (results) *results = std::move(ranked);
    return metrics;
}

train::TrainerOptions Session::trainer_options(const fs::path& run_dir, std::ostream* log) {
    train::TrainerOptions o;
    o.frames = cfg_.frames;
    o.checkpoint_root = run_dir;
    o.keep_checkpoints = cfg_.checkpoint_keep;
    o.config_json = config::to_json(cfg_).dump();
    if (cfg_.eval_each_epoch)
        o.evaluate = [this](model::TriProModelImpl&) {
            const auto m = evaluate();
            return std::map<std::string, double>{{"mAP", m.map}, {"rank1", m.rank1}};
        };
    if (log)
        o.on_epoch = [log](const train::EpochRecord& r) {
            *log << "stage " << r.stage << " epoch " << r.epoch << " lr " << r.lr;
            for (const auto& [k, v] : r.losses) *log << ' ' << k << '=' << v;
            for (const auto& [k, v] : r.metrics) *log << ' ' << k << '=' << v;
            *log << '\n';
        };
    return o;
}

train::RunState Session::train(const fs::path& run_dir, std::ostream* log) {
    train::Trainer trainer(model_, *loader_, attributes_.get(), trainer_options(run_dir, log));
    train::RunState state;
    state.seed = cfg_.seed;
    trainer.run_all(cfg_.stages, state);
    return state;
}

train::RunState Session::resume(const fs::path& run_dir, const fs::path& checkpoint, std::ostream* log) {
    std::ifstream in(checkpoint / "state.json");
    if (!in) throw FormatError("no state.json in " + checkpoint.string());
    auto state = train::run_state_from_json({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()});
    train::load_model(checkpoint, *model_);
    train::Trainer trainer(model_, *loader_, attributes_.get(), trainer_options(run_dir, log));
    trainer.run_all(cfg_.stages, state);
    return state;
}

// Commands ----------------------------------------------------------------------

TrainOutcome run_training(const config::ExperimentConfig& cfg, std::ostream* log) {
    Session session(cfg);
    TrainOutcome out;
    out.run_dir = fs::path(cfg.output_dir) / "runs" / cfg.name;
    fs::create_directories(out.run_dir);
    config::save_config(out.run_dir / "config.json", cfg);
    data::save_manifest(out.run_dir / "manifest.json", session.manifest());
    out.state = session.train(out.run_dir, log);
    out.final_checkpoint = out.run_dir / "final";
    train::save_model(out.final_checkpoint, *session.model(), config::to_json(cfg).dump());
    write_text(out.run_dir / "history.json", train::run_state_to_json(out.state));
    out.metrics = session.evaluate();
    eval::write_metrics_report(out.run_dir / "metrics.json", out.metrics, config::config_hash(cfg));
    return out;
}

config::ExperimentConfig config_from_checkpoint(const fs::path& checkpoint) {
    const auto meta = json::parse(train::read_model_meta(checkpoint));
    if (!meta.contains("experiment")) throw FormatError("checkpoint does not embed an experiment config");
    return config::from_json(meta.at("experiment"));
}

eval::Metrics run_evaluation(const config::ExperimentConfig& cfg, const fs::path& checkpoint,
                             const fs::path& report_path) {
    Session session(cfg);
    train::load_model(checkpoint, *session.model());
    const auto metrics = session.evaluate();
    if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
    eval::write_metrics_report(report_path, metrics, config::config_hash(cfg));
    return metrics;
}

eval::RankListExport run_export(const config::ExperimentConfig& cfg, const fs::path& checkpoint,
                                const fs::path& output_dir, std::size_t top_n) {
    Session session(cfg);
    train::load_model(checkpoint, *session.model());
    std::vector<eval::RankingResult> results;
    session.evaluate(&results);
    const fs::path root = cfg.dataset_root;
    const auto& manifest = session.manifest();
    auto frames = [&](int id) -> std::optional<Image8> {
        try {
            const auto& t = manifest.tracklet(id);
            const auto path = data::frame_path(root, t, "rgb_", 0);
            if (!fs::exists(path)) return std::nullopt;
            return read_png(path);
        } catch (const Error&) {
            return std::nullopt;
        }
    };
    auto exported = eval::export_rank_list(results, top_n, output_dir, frames);
    const json info = {{"config_hash", config::config_hash(cfg)},
                       {"checkpoint", fs::absolute(checkpoint).string()},
                       {"top_n", top_n},
                       {"montages_written", exported.montages_written},
                       {"warnings", exported.warnings}};
    write_text(output_dir / "export.json", info.dump(2) + "\n");
    return exported;
}

// Ablation ----------------------------------------------------------------------

const std::vector<std::string>& ablation_axes() {
    static const std::vector<std::string> axes = {"pnap_mode", "cmp_length", "cmp_depth",
                                                  "projector", "direction",  "modules"};
    return axes;
}

std::vector<AblationRow> ablation_rows(const config::ExperimentConfig& base, const std::string& axis) {
    std::vector<AblationRow> rows;
    auto add = [&](const std::string& label, const std::vector<std::pair<std::string, json>>& settings) {
        AblationRow r;
        r.label = label;
        r.config = base;
        r.config.name = base.name + "_" + axis + "_" + label;
        for (const auto& [path, value] : settings) config::set_by_path(r.config, path, value);
        auto a = config::to_json(base), b = config::to_json(r.config);
        a.erase("name");
        b.erase("name");
        r.diff = json::diff(a, b);
        const auto& p = r.config.model.prompts;
        if (p.use_cmp && p.cmp_depth > r.config.model.encoder.depth) {
            r.skipped = true;
            r.reason = "cmp_depth " + std::to_string(p.cmp_depth) + " exceeds encoder depth " +
                       std::to_string(r.config.model.encoder.depth);
        }
        rows.push_back(std::move(r));
    };
    if (axis == "pnap_mode") {
        for (const char* m : {"full", "positive_only", "no_context"}) add(m, {{"prompts.pnap_mode", m}});
    } else if (axis == "cmp_length") {
        for (int n : {10, 20, 40}) add(std::to_string(n), {{"prompts.cmp_length", n}});
    } else if (axis == "cmp_depth") {
        for (int d : {3, 6, 12}) add(std::to_string(d), {{"prompts.cmp_depth", d}});
    } else if (axis == "projector") {
        for (const char* p : {"fc", "adapter", "none"}) add(p, {{"prompts.projector", p}});
    } else if (axis == "direction") {
        for (const char* d : {"rgb_to_event", "event_to_rgb", "bidirectional"}) add(d, {{"prompts.direction", d}});
    } else if (axis == "modules") {
        add("base", {{"prompts.use_pnap", false}, {"prompts.use_cmp", false}});
        add("pnap", {{"prompts.use_pnap", true}, {"prompts.use_cmp", false}});
        add("cmp", {{"prompts.use_pnap", false}, {"prompts.use_cmp", true}});
        add("pnap_cmp", {{"prompts.use_pnap", true}, {"prompts.use_cmp", true}});
    } else {
        throw ConfigError("unknown ablation axis '" + axis + "'");
    }
    return rows;
}

std::vector<AblationRow> run_ablation(const config::ExperimentConfig& base, const std::string& axis,
                                      const std::vector<std::uint64_t>& seeds, std::ostream* log) {
    if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
    auto rows = ablation_rows(base, axis);
    const auto root = fs::path(base.output_dir) / "ablation" / axis;
    for (auto& row : rows) {
        if (row.skipped) {
            if (log) *log << axis << '=' << row.label << ": skipped (" << row.reason << ")\n";
            continue;
        }
        std::vector<double> maps, r1s;
        for (auto seed : seeds) {
            auto cfg = row.config;
            cfg.seed = seed;
            cfg.name = row.config.name + "_seed" + std::to_string(seed);
            cfg.output_dir = root.string();
            const auto outcome = run_training(cfg);
            row.per_seed.push_back(outcome.metrics);
            maps.push_back(outcome.metrics.map);
            r1s.push_back(outcome.metrics.rank1);
            if (log)
                *log << axis << '=' << row.label << " seed " << seed << ": mAP " << outcome.metrics.map << " rank1 "
                     << outcome.metrics.rank1 << '\n';
        }
        row.median_map = median(maps);
        row.median_rank1 = median(r1s);
    }
    return rows;
}

void write_ablation_report(const fs::path& path, const std::string& axis, const std::vector<AblationRow>& rows,
                           const std::string& base_hash) {
    json out = {{"axis", axis}, {"base_config_hash", base_hash}, {"rows", json::array()}};
    for (const auto& r : rows) {
        json seeds = json::array();
        for (const auto& m : r.per_seed)
            seeds.push_back({{"mAP", m.map}, {"rank1", m.rank1}, {"rank5", m.rank5}, {"rank10", m.rank10}});
        out["rows"].push_back({{"label", r.label},
                               {"config_hash", config::config_hash(r.config)},
                               {"diff", r.diff},
                               {"skipped", r.skipped},
                               {"reason", r.reason},
                               {"per_seed", seeds},
                               {"median_mAP", r.median_map},
                               {"median_rank1", r.median_rank1}});
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_text(path, out.dump(2) + "\n");
}

// Events ------------------------------------------------------------------------

std::size_t convert_events(const fs::path& frames_dir, const fs::path& output, double contrast_threshold) {
    std::vector<Image8> frames;
    for (int f = 0;; ++f) {
        char name[32];
        std::snprintf(name, sizeof name, "rgb_%05d.png", f);
        if (!fs::exists(frames_dir / name)) break;
        frames.push_back(read_png(frames_dir / name));
    }
    if (frames.empty()) throw InputError("no rgb_00000.png frames in " + frames_dir.string());
    std::vector<std::uint64_t> stamps;
    if (fs::exists(frames_dir / "meta.json")) {
        std::ifstream in(frames_dir / "meta.json");
        const auto meta = json::parse(in);
        if (meta.contains("timestamps_us")) stamps = meta.at("timestamps_us").get<std::vector<std::uint64_t>>();
    }
    if (stamps.empty())
        for (std::size_t i = 0; i < frames.size(); ++i) stamps.push_back(i * events::kDefaultWindowUs);
    if (stamps.size() != frames.size()) throw InputError("timestamp count differs from frame count");
    events::EvrdFile file;
    file.width = static_cast<std::uint16_t>(frames[0].width);
    file.height = static_cast<std::uint16_t>(frames[0].height);
    file.contrast_threshold = contrast_threshold;
    file.events = events::synthesize_events(frames, stamps, contrast_threshold);
    if (output.has_parent_path()) fs::create_directories(output.parent_path());
    events::write_evrd(output, file);
    return file.events.size();
}

// Locking -----------------------------------------------------------------------

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".tripro.lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
        throw ConfigError("output directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
    const auto pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
}

DirectoryLock::~DirectoryLock() {
    if (fd_ >= 0) {
        ::close(fd_);
        std::error_code ec;
        fs::remove(path_, ec);
    }
}

bool non_empty_dir(const fs::path& dir) {
    std::error_code ec;
    return fs::is_directory(dir, ec) && fs::directory_iterator(dir) != fs::directory_iterator();
}

} // namespace tripro::experiment
