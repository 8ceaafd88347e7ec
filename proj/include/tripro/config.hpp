#pragma once

#include "tripro/model.hpp"
#include "tripro/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tripro::config {

/// Everything an experiment needs. Serialized as JSON; unknown keys are rejected,
/// missing keys keep their defaults.
struct ExperimentConfig {
    std::string name = "run";
    std::string dataset_root;
    std::string output_dir = "out";
    std::uint64_t seed = 0;
    std::uint64_t split_seed = 0;
    std::string eval_split = "test"; ///< "test" or "held_in"
    int frames = 8;                  ///< T per tracklet
    double event_scale = 4.0;
    double test_rgb_blur_sigma = 0.0;
    std::string attributes = "ground_truth"; ///< "ground_truth" or "constant"
    bool eval_each_epoch = false;
    int checkpoint_keep = 2;         ///< newest epoch checkpoints kept per run; 0 keeps all
    model::ModelConfig model;
    std::vector<train::StagePlan> stages = train::configure_defaults(true);
};

/// Desk-scale defaults.
ExperimentConfig default_config();

nlohmann::json to_json(const model::EncoderConfig& c);
nlohmann::json to_json(const model::PromptConfig& c);
nlohmann::json to_json(const model::LossConfig& c);
nlohmann::json to_json(const train::StagePlan& p);
nlohmann::json to_json(const ExperimentConfig& c);

model::EncoderConfig encoder_from_json(const nlohmann::json& j);
model::PromptConfig prompts_from_json(const nlohmann::json& j);
model::LossConfig loss_from_json(const nlohmann::json& j);
train::StagePlan stage_from_json(const nlohmann::json& j);
ExperimentConfig from_json(const nlohmann::json& j);

/// FNV-1a of the canonical (sorted-key, compact) JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& c);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& c);

/// Sets a value by dotted path ("prompts.cmp_length"), for CLI overrides and ablation.
void set_by_path(ExperimentConfig& c, const std::string& path, const nlohmann::json& value);

} // namespace tripro::config
