#pragma once

#include "tripro/image.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tripro::eval {

/// One retrieval unit: a tracklet's pooled feature plus its labels.
struct FeatureRow {
    int tracklet_id = 0;
    int identity = 0;
    std::vector<double> feature;
};

struct RankingResult {
    int query_id = 0;
    int query_identity = 0;
    std::vector<int> ordered_gallery; ///< gallery tracklet ids, most similar first
    std::vector<bool> match_flags;    ///< same identity as the query
};

/// Cosine ranking. Ties keep ascending gallery tracklet id; the query's own
/// tracklet is dropped from its list. Throws if the gallery is empty.
std::vector<RankingResult> rank(std::span<const FeatureRow> queries, std::span<const FeatureRow> gallery);

/// Mean over queries of AP = mean_{true positions r} (#true in top r) / r.
double compute_map(std::span<const RankingResult> results);

/// Rank-K accuracy for each K: fraction of queries whose first match is at position <= K.
std::vector<double> compute_cmc(std::span<const RankingResult> results, std::span<const int> ks);

struct Metrics {
    double map = 0.0;
    double rank1 = 0.0;
    double rank5 = 0.0;
    double rank10 = 0.0;
    std::size_t n_query = 0;
    std::size_t n_gallery = 0;
};

Metrics summarize(std::span<const RankingResult> results, std::size_t n_gallery);

/// JSON metrics report {mAP, rank1, rank5, rank10, n_query, n_gallery, config_hash}.
void write_metrics_report(const std::filesystem::path& path, const Metrics& metrics,
                          const std::string& config_hash);
Metrics read_metrics_report(const std::filesystem::path& path, std::string* config_hash = nullptr);

/// Supplies a representative frame for a tracklet, or nullopt if unavailable.
using FrameProvider = std::function<std::optional<Image8>(int tracklet_id)>;

struct RankListExport {
    std::size_t montages_written = 0;
    std::vector<std::string> warnings;
};

/// Writes query_<id>.png montages (query + top_n gallery frames, green border on
/// correct matches, red on wrong) and index.csv with one row per query.
RankListExport export_rank_list(std::span<const RankingResult> results, std::size_t top_n,
                                const std::filesystem::path& output_dir, const FrameProvider& frames);

} // namespace tripro::eval
