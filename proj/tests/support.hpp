#pragma once

// Shared fixtures: scratch directories, a tiny model config and small synthetic datasets.

#include "tripro/experiment.hpp"
#include "tripro/synth.hpp"

#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

namespace support {

namespace fs = std::filesystem;

inline fs::path scratch_root() {
    return fs::temp_directory_path() / ("tripro_tests_" + std::to_string(::getpid()));
}

// Removes this process's scratch area at exit.
inline struct ScratchCleanup {
    ~ScratchCleanup() {
        std::error_code ec;
        fs::remove_all(scratch_root(), ec);
    }
} scratch_cleanup;

inline fs::path scratch(const std::string& name) {
    const auto dir = scratch_root() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

/// Small enough that a forward pass over a batch takes milliseconds.
inline tripro::model::ModelConfig tiny_model() {
    tripro::model::ModelConfig c;
    auto& e = c.encoder;
    e.image_height = 32;
    e.image_width = 16;
    e.patch_size = 8;
    e.depth = 3;
    e.width = 24;
    e.heads = 2;
    e.text_width = 16;
    e.text_depth = 1;
    e.text_heads = 2;
    e.embed_dim = 16;
    auto& p = c.prompts;
    p.id_tokens = 2;
    p.n_ctx = 2;
    p.cmp_length = 4;
    p.cmp_depth = 3;
    return c;
}

/// Synthetic dataset under the scratch area, generated once per process.
inline fs::path dataset(const std::string& name, int identities, int tracklets, int frames, int height, int width,
                        std::uint64_t seed = 0) {
    const auto root = scratch_root() / ("data_" + name);
    if (fs::exists(root / "attributes.csv")) return root;
    fs::create_directories(root);
    tripro::synth::SynthOptions o;
    o.identities = identities;
    o.tracklets_per_id = tracklets;
    o.frames = frames;
    o.height = height;
    o.width = width;
    o.seed = seed;
    tripro::synth::generate_dataset(root, o);
    return root;
}

/// Experiment config for the tiny model on a tiny dataset with short stages.
inline tripro::config::ExperimentConfig tiny_experiment(const fs::path& data, const fs::path& out) {
    auto cfg = tripro::config::default_config();
    cfg.dataset_root = data.string();
    cfg.output_dir = out.string();
    cfg.frames = 4;
    cfg.model = tiny_model();
    for (auto& s : cfg.stages) {
        s.epochs = 1;
        s.warmup_epochs = 0;
        s.batch_size = 4;
        s.tracklets_per_id = 2;
    }
    return cfg;
}

inline std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace support
