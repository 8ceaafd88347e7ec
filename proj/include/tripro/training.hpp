#pragma once

#include "tripro/dataset.hpp"
#include "tripro/model.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace tripro::train {

enum class OptimizerKind { Sgd, AdamW };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

struct StagePlan {
    int stage = 1;
    std::vector<std::string> trainable; ///< parameter groups; every other group is frozen
    OptimizerKind optimizer = OptimizerKind::Sgd;
    double lr = 3.5e-3;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int batch_size = 64;       ///< tracklets per batch = P * K
    int tracklets_per_id = 4;  ///< K
    int epochs = 20;
    int warmup_epochs = 0;     ///< linear warmup from lr/warmup to lr
    double clip_norm = 0.0;    ///< 0 disables clipping
    std::vector<std::string> losses;

    std::vector<std::string> frozen() const;
    void validate() const;

    friend bool operator==(const StagePlan&, const StagePlan&) = default;
};

/// Three plans: prompts, then CMP, then visual fine-tuning.
std::vector<StagePlan> configure_defaults(bool desk_preset = false);

using Checksums = std::map<std::string, std::uint64_t>;

/// FNV-1a over the raw bytes of every parameter of each group.
Checksums group_checksums(model::TriProModelImpl& model);

/// Decoded frames of one dataset root, cached per tracklet.
struct LoaderOptions {
    int height = 128;
    int width = 64;
    double event_scale = 4.0;      ///< event count mapped to 1.0
    double rgb_blur_sigma = 0.0;   ///< applied to RGB frames of tracklets in `blur_splits`
    std::set<data::Split> blur_splits = {data::Split::Query, data::Split::Gallery};
};

class TrackletLoader {
public:
    TrackletLoader(std::filesystem::path root, const data::DatasetManifest& manifest, LoaderOptions options);

    const std::vector<Image8>& rgb_frames(int tracklet_id);
    const std::vector<Image8>& event_frames(int tracklet_id);

    /// ([T, 3, H, W] RGB in [0,1], [T, 3, H, W] events in [0,1]) for the sampled frames.
    std::pair<torch::Tensor, torch::Tensor> load(const data::TrackletSample& sample);

    const data::DatasetManifest& manifest() const { return *manifest_; }
    const LoaderOptions& options() const { return options_; }

private:
    std::filesystem::path root_;
    const data::DatasetManifest* manifest_;
    LoaderOptions options_;
    std::map<int, std::vector<Image8>> rgb_, event_;
};

struct EpochRecord {
    int stage = 0;
    int epoch = 0;   ///< 1-based
    int steps = 0;
    double lr = 0.0;
    std::map<std::string, double> losses;  ///< per-term means and "total"
    std::map<std::string, double> metrics; ///< stage 3 evaluation, when enabled

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct RunState {
    int stage = 0;  ///< stage of the last completed epoch
    int epoch = 0;  ///< last completed epoch within `stage`
    std::int64_t step = 0;
    std::uint64_t seed = 0;
    std::string rng_state;
    std::vector<std::string> lineage; ///< checkpoint directories, oldest first
    std::vector<EpochRecord> history;
};

std::string run_state_to_json(const RunState& state);
RunState run_state_from_json(const std::string& text);

/// Called after each stage-3 epoch; returns metrics to log.
using Evaluator = std::function<std::map<std::string, double>(model::TriProModelImpl&)>;

struct TrainerOptions {
    int frames = 8;                          ///< T per tracklet
    std::filesystem::path checkpoint_root;   ///< runs/<name>; empty disables checkpoints
    bool verify_freeze = true;
    int keep_checkpoints = 0;                ///< older epoch checkpoints are deleted; 0 keeps all
    Evaluator evaluate;                      ///< optional
    std::function<void(const EpochRecord&)> on_epoch;
    /// Extra payload written into every checkpoint's state.json (e.g. the experiment config).
    std::string config_json;
};

class Trainer {
public:
    Trainer(model::TriProModel model, TrackletLoader& loader, model::AttributePredictor* attributes,
            TrainerOptions options);

    /// Runs the remaining epochs of a stage. Resumes when `state` already holds
    /// completed epochs of this stage and `resume_dir` names their checkpoint.
    void run_stage(const StagePlan& plan, RunState& state, const std::filesystem::path& resume_dir = {});

    /// Runs the given plans in order, skipping stage 2 when CMP is disabled.
    void run_all(const std::vector<StagePlan>& plans, RunState& state);

    /// Loads the frames and attribute reports of sampled tracklets.
    model::FrameBatch make_batch(const std::vector<data::TrackletSample>& samples);

    model::StageContext context_for(int stage) const;

    /// Per-term losses of one batch under a stage's loss set (no optimizer step).
    std::map<std::string, torch::Tensor> compute_losses(const StagePlan& plan, const model::FrameBatch& batch);

    model::TriProModel& model() { return model_; }

private:
    void prepare_stage(const StagePlan& plan, bool fresh);
    std::unique_ptr<torch::optim::Optimizer> make_optimizer(const StagePlan& plan);
    void save_checkpoint(const StagePlan& plan, RunState& state, torch::optim::Optimizer& optimizer);

    model::TriProModel model_;
    TrackletLoader* loader_;
    model::AttributePredictor* attributes_;
    TrainerOptions options_;
    std::map<int, model::AttributeReport> report_cache_;
    torch::Tensor text_cache_; ///< [Y, E] identity text features for stages 2-3
};

/// Model checkpoint: model.pt (named tensors) + model.json (format version,
/// encoder config, train identities, tensor names and shapes).
inline constexpr int kCheckpointVersion = 1;
void save_model(const std::filesystem::path& dir, model::TriProModelImpl& model, const std::string& config_json = "");
/// Loads weights into a model of identical structure; FormatError on mismatch.
void load_model(const std::filesystem::path& dir, model::TriProModelImpl& model);
/// Reads model.json of a checkpoint.
std::string read_model_meta(const std::filesystem::path& dir);

/// Pooled features of whole tracklets (deterministic frame selection), in
/// input order, computed in chunks without gradients.
std::vector<std::vector<double>> extract_features(model::TriProModelImpl& model, TrackletLoader& loader,
                                                  model::AttributePredictor* attributes,
                                                  const std::vector<int>& tracklet_ids, int frames,
                                                  const model::StageContext& context);

} // namespace tripro::train
