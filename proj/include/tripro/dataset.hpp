#pragma once

// Dataset manifest, identity-disjoint split, single-shot query/gallery
// partition and PK tracklet sampling.
//
// On-disk layout under a dataset root:
//   attributes.csv                      identity,<attr 1>,<attr 2>,...  (0/1 flags)
//   <identity:04d>/<tracklet:03d>/rgb_<frame:05d>.png
//   <identity:04d>/<tracklet:03d>/evt_<frame:05d>.png
//   <identity:04d>/<tracklet:03d>/meta.json   optional {camera_view, timestamps_us}
//   <identity:04d>/<tracklet:03d>/events.evrd optional raw event stream

#include "tripro/image.hpp"
#include "tripro/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace tripro::data {

inline constexpr int kManifestVersion = 1;

enum class Split { Train, Query, Gallery };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct TrackletDescriptor {
    int tracklet_id = 0;   ///< global, dense, assigned in (identity, local index) order
    int identity = 0;      ///< >= 1
    int local_index = 0;   ///< <tracklet:03d> directory number
    int camera_view = 0;
    std::string path;      ///< relative to the dataset root
    int num_frames = 0;
    std::vector<std::uint64_t> timestamps_us;
    bool has_events = false;

    friend bool operator==(const TrackletDescriptor&, const TrackletDescriptor&) = default;
};

struct DatasetManifest {
    int version = kManifestVersion;
    std::uint64_t split_seed = 0;
    std::vector<std::string> attribute_vocabulary;
    std::vector<TrackletDescriptor> tracklets; ///< index == tracklet_id
    std::map<int, Split> split;                ///< tracklet_id -> split
    std::map<int, std::vector<int>> attributes; ///< identity -> flags over the vocabulary

    const TrackletDescriptor& tracklet(int id) const;
    std::vector<int> identities() const;        ///< sorted
    std::vector<int> train_identities() const;  ///< sorted
    std::vector<int> test_identities() const;   ///< sorted
    std::vector<int> tracklets_of(int identity) const;
    std::vector<int> tracklets_in(Split s) const;

    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Number of training identities for n identities under the 70/30 split.
int train_identity_count(int n_identities);

/// Scans a dataset root and derives the split. Deterministic for a fixed seed.
DatasetManifest build_manifest(const std::filesystem::path& root, std::uint64_t split_seed);

/// Assigns the split of an already populated manifest (tracklets + attributes).
void assign_split(DatasetManifest& manifest, std::uint64_t split_seed);

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Query/gallery tracklet lists for evaluation.
struct EvalPartition {
    std::vector<int> query;
    std::vector<int> gallery;
};

/// The manifest's test-split partition.
EvalPartition test_partition(const DatasetManifest& manifest);

/// Same single-shot rule applied to the training identities (held-in evaluation).
EvalPartition held_in_partition(const DatasetManifest& manifest, std::uint64_t seed);

struct BatchSpec {
    int identities = 4;         ///< P
    int tracklets_per_id = 4;   ///< K
    int frames = 8;             ///< T
};

/// A tracklet selected for a batch with the frame indices to load.
struct TrackletSample {
    int tracklet_id = 0;
    int identity = 0;
    std::vector<int> frame_indices; ///< exactly T entries
};

/// Uniform-stride chunk of T frames out of n. Random phase when rng is given,
/// phase 0 otherwise. Short tracklets are loop-padded: [0,1,...,n-1,0,1,...].
std::vector<int> select_frames(int num_frames, int t, Rng* rng);

/// P identities x K tracklets from the train split.
std::vector<TrackletSample> sample_batch(const DatasetManifest& manifest, const BatchSpec& spec, Rng& rng);

/// Whole-tracklet sample with deterministic stride, used for evaluation.
TrackletSample eval_sample(const DatasetManifest& manifest, int tracklet_id, int frames);

// Disk access --------------------------------------------------------------

std::filesystem::path frame_path(const std::filesystem::path& root, const TrackletDescriptor& t,
                                 const std::string& prefix, int frame);

std::vector<std::string> read_attribute_vocabulary(const std::filesystem::path& attributes_csv);

} // namespace tripro::data
