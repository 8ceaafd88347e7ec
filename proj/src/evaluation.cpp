#include "tripro/evaluation.hpp"

#include "tripro/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace tripro::eval {

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::size_t first_match(const RankingResult& r) {
    const auto it = std::find(r.match_flags.begin(), r.match_flags.end(), true);
    if (it == r.match_flags.end())
        throw InputError("query " + std::to_string(r.query_id) + " has no true match in the gallery");
    return static_cast<std::size_t>(it - r.match_flags.begin());
}

} // namespace

std::vector<RankingResult> rank(std::span<const FeatureRow> queries, std::span<const FeatureRow> gallery) {
    if (gallery.empty()) throw InputError("rank: empty gallery");
    const std::size_t dim = gallery.front().feature.size();
    for (const auto& g : gallery)
        if (g.feature.size() != dim) throw InputError("rank: inconsistent gallery feature width");

    std::vector<std::size_t> order(gallery.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return gallery[a].tracklet_id < gallery[b].tracklet_id; });

    std::vector<RankingResult> results;
    results.reserve(queries.size());
    std::vector<double> sim(gallery.size());
    for (const auto& q : queries) {
        if (q.feature.size() != dim) throw InputError("rank: query feature width differs from gallery");
        for (std::size_t j = 0; j < gallery.size(); ++j) sim[j] = cosine(q.feature, gallery[j].feature);
        std::vector<std::size_t> idx;
        idx.reserve(order.size());
        for (auto j : order)
            if (gallery[j].tracklet_id != q.tracklet_id) idx.push_back(j);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });

        RankingResult r;
        r.query_id = q.tracklet_id;
        r.query_identity = q.identity;
        for (auto j : idx) {
            r.ordered_gallery.push_back(gallery[j].tracklet_id);
            r.match_flags.push_back(gallery[j].identity == q.identity);
        }
        results.push_back(std::move(r));
    }
    return results;
}

double compute_map(std::span<const RankingResult> results) {
    if (results.empty()) throw InputError("compute_map: no queries");
    double total = 0.0;
    for (const auto& r : results) {
        std::size_t hits = 0;
        double precision_sum = 0.0;
        for (std::size_t i = 0; i < r.match_flags.size(); ++i) {
            if (!r.match_flags[i]) continue;
            ++hits;
            precision_sum += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
        if (hits == 0)
            throw InputError("query " + std::to_string(r.query_id) + " has no true match in the gallery");
        total += precision_sum / static_cast<double>(hits);
    }
    return total / static_cast<double>(results.size());
}

std::vector<double> compute_cmc(std::span<const RankingResult> results, std::span<const int> ks) {
    for (int k : ks)
        if (k < 1) throw ConfigError("compute_cmc: K must be >= 1");
    if (results.empty()) throw InputError("compute_cmc: no queries");
    std::vector<std::size_t> firsts;
    firsts.reserve(results.size());
    for (const auto& r : results) firsts.push_back(first_match(r));
    std::vector<double> rates;
    for (int k : ks) {
        const auto within = std::count_if(firsts.begin(), firsts.end(),
                                          [k](std::size_t f) { return f < static_cast<std::size_t>(k); });
        rates.push_back(static_cast<double>(within) / static_cast<double>(results.size()));
    }
    return rates;
}

Metrics summarize(std::span<const RankingResult> results, std::size_t n_gallery) {
    static constexpr int ks[] = {1, 5, 10};
    const auto cmc = compute_cmc(results, ks);
    return Metrics{compute_map(results), cmc[0], cmc[1], cmc[2], results.size(), n_gallery};
}

void write_metrics_report(const std::filesystem::path& path, const Metrics& m, const std::string& config_hash) {
    nlohmann::json j;
    j["mAP"] = m.map;
    j["rank1"] = m.rank1;
    j["rank5"] = m.rank5;
    j["rank10"] = m.rank10;
    j["n_query"] = m.n_query;
    j["n_gallery"] = m.n_gallery;
    j["config_hash"] = config_hash;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot write metrics report: " + path.string());
    out << j.dump(2) << '\n';
}

Metrics read_metrics_report(const std::filesystem::path& path, std::string* config_hash) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read metrics report: " + path.string());
    const auto j = nlohmann::json::parse(in);
    if (config_hash) *config_hash = j.at("config_hash").get<std::string>();
    return Metrics{j.at("mAP").get<double>(),          j.at("rank1").get<double>(),
                   j.at("rank5").get<double>(),        j.at("rank10").get<double>(),
                   j.at("n_query").get<std::size_t>(), j.at("n_gallery").get<std::size_t>()};
}

namespace {

constexpr int kBorder = 2;

void paste(Image8& canvas, const Image8& tile, int x0, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const int th = tile.height + 2 * kBorder;
    const int tw = tile.width + 2 * kBorder;
    for (int y = 0; y < th && y < canvas.height; ++y)
        for (int x = 0; x < tw; ++x) {
            const bool border = y < kBorder || x < kBorder || y >= th - kBorder || x >= tw - kBorder;
            for (int c = 0; c < 3; ++c) {
                std::uint8_t v;
                if (border) {
                    v = c == 0 ? r : (c == 1 ? g : b);
                } else {
                    const int sc = tile.channels == 3 ? c : 0;
                    v = tile.at(y - kBorder, x - kBorder, sc);
                }
                canvas.at(y, x0 + x, c) = v;
            }
        }
}

} // namespace

RankListExport export_rank_list(std::span<const RankingResult> results, std::size_t top_n,
                                const std::filesystem::path& output_dir, const FrameProvider& frames) {
    std::filesystem::create_directories(output_dir);
    RankListExport report;
    std::ostringstream index;
    index << "query_id,query_identity,montage,gallery_ids,matches\n";

    for (const auto& r : results) {
        const std::size_t n = std::min(top_n, r.ordered_gallery.size());
        std::string ids, flags;
        for (std::size_t i = 0; i < n; ++i) {
            if (i) {
                ids += ';';
                flags += ';';
            }
            ids += std::to_string(r.ordered_gallery[i]);
            flags += r.match_flags[i] ? '1' : '0';
        }

        std::vector<Image8> tiles;
        bool complete = true;
        for (std::size_t i = 0; i <= n && complete; ++i) {
            const int id = i == 0 ? r.query_id : r.ordered_gallery[i - 1];
            auto frame = frames(id);
            if (!frame || frame->empty()) {
                report.warnings.push_back("query " + std::to_string(r.query_id) + ": missing frame for tracklet " +
                                          std::to_string(id) + ", montage skipped");
                complete = false;
            } else {
                tiles.push_back(std::move(*frame));
            }
        }

        std::string montage_name;
        if (complete) {
            const int tile_h = tiles.front().height + 2 * kBorder;
            int total_w = 0;
            int max_h = tile_h;
            for (const auto& t : tiles) {
                total_w += t.width + 2 * kBorder;
                max_h = std::max(max_h, t.height + 2 * kBorder);
            }
            Image8 canvas(max_h, total_w, 3, 255);
            int x0 = 0;
            for (std::size_t i = 0; i < tiles.size(); ++i) {
                if (i == 0)
                    paste(canvas, tiles[i], x0, 40, 80, 220);
                else if (r.match_flags[i - 1])
                    paste(canvas, tiles[i], x0, 0, 200, 0);
                else
                    paste(canvas, tiles[i], x0, 220, 0, 0);
                x0 += tiles[i].width + 2 * kBorder;
            }
            montage_name = "query_" + std::to_string(r.query_id) + ".png";
            write_png(output_dir / montage_name, canvas);
            ++report.montages_written;
        }
        index << r.query_id << ',' << r.query_identity << ',' << montage_name << ',' << ids << ',' << flags << '\n';
    }

    std::ofstream out(output_dir / "index.csv", std::ios::trunc);
    if (!out) throw InputError("cannot write rank-list index in " + output_dir.string());
    out << index.str();
    return report;
}

} // namespace tripro::eval
