#pragma once

#include "tripro/config.hpp"
#include "tripro/dataset.hpp"
#include "tripro/evaluation.hpp"
#include "tripro/model.hpp"
#include "tripro/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

namespace tripro::experiment {

/// Tokenizer from the shipped merge table (TRIPRO_BPE overrides the path).
std::shared_ptr<const BpeTokenizer> default_tokenizer();

/// Dataset, loader, attribute source and a freshly initialized model for one config.
class Session {
public:
    explicit Session(config::ExperimentConfig cfg);

    const config::ExperimentConfig& config() const { return cfg_; }
    const data::DatasetManifest& manifest() const { return manifest_; }
    model::TriProModel& model() { return model_; }
    train::TrackletLoader& loader() { return *loader_; }
    model::AttributePredictor* attributes() { return attributes_.get(); }

    /// Query/gallery of the configured eval split.
    data::EvalPartition partition() const;

    /// Ranks the eval partition with the full (stage 3) prompt context.
    eval::Metrics evaluate(std::vector<eval::RankingResult>* results = nullptr);

    /// Runs every stage; checkpoints under run_dir when it is non-empty.
    train::RunState train(const std::filesystem::path& run_dir, std::ostream* log = nullptr);

    /// Resumes from a checkpoint directory written by train().
    train::RunState resume(const std::filesystem::path& run_dir, const std::filesystem::path& checkpoint,
                           std::ostream* log = nullptr);

private:
    train::TrainerOptions trainer_options(const std::filesystem::path& run_dir, std::ostream* log);

    config::ExperimentConfig cfg_;
    data::DatasetManifest manifest_;
    std::shared_ptr<const BpeTokenizer> tokenizer_;
    std::unique_ptr<train::TrackletLoader> loader_;
    std::unique_ptr<model::AttributePredictor> attributes_;
    model::TriProModel model_{nullptr};
};

struct TrainOutcome {
    train::RunState state;
    eval::Metrics metrics;
    std::filesystem::path run_dir;
    std::filesystem::path final_checkpoint;
};

/// Trains into <output_dir>/runs/<name>, saves final/ and metrics.json.
TrainOutcome run_training(const config::ExperimentConfig& cfg, std::ostream* log = nullptr);

/// Evaluates a checkpoint and writes the metrics report.
eval::Metrics run_evaluation(const config::ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                             const std::filesystem::path& report_path);

/// Experiment config stored inside a checkpoint.
config::ExperimentConfig config_from_checkpoint(const std::filesystem::path& checkpoint);

struct AblationRow {
    std::string label;
    config::ExperimentConfig config;
    nlohmann::json diff;            ///< JSON patch from the base config
    bool skipped = false;
    std::string reason;
    std::vector<eval::Metrics> per_seed;
    double median_map = 0.0;
    double median_rank1 = 0.0;
};

/// Axes: pnap_mode, cmp_length, cmp_depth, projector, direction, and modules
/// (base / PNAP only / CMP only / both).
const std::vector<std::string>& ablation_axes();

/// Row configs of an axis; ConfigError for an unknown axis.
std::vector<AblationRow> ablation_rows(const config::ExperimentConfig& base, const std::string& axis);

/// Trains and evaluates every row for each seed under <output_dir>/ablation/<axis>.
std::vector<AblationRow> run_ablation(const config::ExperimentConfig& base, const std::string& axis,
                                      const std::vector<std::uint64_t>& seeds, std::ostream* log = nullptr);

void write_ablation_report(const std::filesystem::path& path, const std::string& axis,
                           const std::vector<AblationRow>& rows, const std::string& base_hash);

eval::RankListExport run_export(const config::ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                                const std::filesystem::path& output_dir, std::size_t top_n);

/// Reads rgb_NNNNN.png frames (and meta.json timestamps if present) from a
/// directory and writes their event stream. Returns the event count.
std::size_t convert_events(const std::filesystem::path& frames_dir, const std::filesystem::path& output,
                           double contrast_threshold);

/// Exclusive lock file inside an output directory, released on destruction.
class DirectoryLock {
public:
    explicit DirectoryLock(const std::filesystem::path& dir);
    ~DirectoryLock();
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    std::filesystem::path path_;
    int fd_ = -1;
};

/// True when `dir` exists and holds anything.
bool non_empty_dir(const std::filesystem::path& dir);

} // namespace tripro::experiment
