#pragma once

// Synthetic stand-in for an RGB-Event re-ID corpus: walking figures whose
// colours and shapes follow per-identity attribute flags, filmed by two
// static cameras. Event frames come from the reference event synthesis.

#include "tripro/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tripro::synth {

struct SynthOptions {
    int identities = 8;
    int tracklets_per_id = 4;
    int frames = 8;
    int height = 128;
    int width = 64;
    std::uint64_t seed = 0;
    double contrast_threshold = 0.2;
    std::uint64_t frame_interval_us = 33333;
};

const std::vector<std::string>& attribute_vocabulary();

/// Attribute flags (over attribute_vocabulary()) of identities 1..n, mutually consistent
/// (one gender, one lower garment, no long hair on a bald head).
std::vector<std::vector<int>> sample_attributes(int identities, std::uint64_t seed);

/// RGB frames of one tracklet.
std::vector<Image8> render_tracklet(const SynthOptions& options, int identity, int tracklet,
                                    const std::vector<int>& attributes);

/// Writes the dataset layout (attributes.csv, frames, meta.json, events.evrd).
void generate_dataset(const std::filesystem::path& root, const SynthOptions& options);

} // namespace tripro::synth
