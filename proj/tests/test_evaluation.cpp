#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "testing.hpp"

#include "metric_checks.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include "tripro/errors.hpp"
#include "tripro/evaluation.hpp"

#include <random>

using namespace tripro;
using namespace tripro::eval;

namespace {

RankingResult result(std::vector<bool> flags) {
    RankingResult r;
    r.query_id = 1000;
    for (std::size_t i = 0; i < flags.size(); ++i) r.ordered_gallery.push_back(static_cast<int>(i));
    r.match_flags = std::move(flags);
    return r;
}

// First match at a given 1-based rank out of n.
RankingResult first_match_at(int rank, int n) {
    std::vector<bool> f(n, false);
    f[rank - 1] = true;
    return result(f);
}

} // namespace

TEST_CASE("AP and CMC examples") {
    const auto r = result({true, false, true, false});
    CHECK(compute_map(std::vector<RankingResult>{r}) == doctest::Approx(0.8333333333333334).epsilon(1e-15));
    CHECK(compute_map(std::vector<RankingResult>{result({true, true, false})}) == 1.0);
    CHECK(compute_map(std::vector<RankingResult>{first_match_at(7, 7)}) == doctest::Approx(1.0 / 7));

    const std::vector<RankingResult> three{first_match_at(1, 12), first_match_at(6, 12), first_match_at(2, 12)};
    const std::vector<int> ks{1, 5, 10};
    const auto cmc = compute_cmc(three, ks);
    CHECK(cmc[0] == doctest::Approx(1.0 / 3));
    CHECK(cmc[1] == doctest::Approx(2.0 / 3));
    CHECK(cmc[2] == 1.0);

    const std::vector<RankingResult> all_first{first_match_at(1, 3), first_match_at(1, 5)};
    for (double v : compute_cmc(all_first, ks)) CHECK(v == 1.0);
}

TEST_CASE("metric errors") {
    const std::vector<RankingResult> none{result({false, false})};
    CHECK_THROWS_AS(compute_map(none), InputError);
    const std::vector<int> zero{0};
    CHECK_THROWS_AS(compute_cmc(std::vector<RankingResult>{result({true})}, zero), ConfigError);
    CHECK_THROWS_AS(rank(std::vector<FeatureRow>{{0, 1, {1.0}}}, std::vector<FeatureRow>{}), InputError);
}

TEST_CASE("rank examples") {
    const std::vector<FeatureRow> one{{5, 2, {1.0, 0.0}}};
    const auto r = rank(std::vector<FeatureRow>{{1, 2, {0.3, 0.1}}}, one);
    REQUIRE(r.size() == 1);
    CHECK(r[0].match_flags == std::vector<bool>{true});

    const std::vector<FeatureRow> gallery{{10, 1, {0, 1, 0}}, {11, 2, {1, 0, 0}}, {12, 3, {0, 0, 1}}};
    const auto hit = rank(std::vector<FeatureRow>{{1, 2, {2, 0, 0}}}, gallery);
    CHECK(hit[0].ordered_gallery.front() == 11);

    // ties keep ascending gallery id and the query's own tracklet is dropped
    const std::vector<FeatureRow> tied{{9, 1, {1, 0}}, {3, 2, {1, 0}}, {4, 1, {1, 0}}};
    const auto t = rank(std::vector<FeatureRow>{{4, 1, {1, 0}}}, tied);
    CHECK(t[0].ordered_gallery == std::vector<int>{3, 9});
}

TEST_CASE("rank, mAP and CMC agree with brute force on random instances") {
    std::mt19937_64 gen(2024);
    const std::vector<int> ks{1, 5, 10};
    for (int trial = 0; trial < 200; ++trial) {
        const auto in = metric_checks::random_instance(gen);
        const auto results = rank(in.queries, in.gallery);
        std::vector<std::pair<int, std::vector<double>>> g;
        for (const auto& row : in.gallery) g.push_back({row.tracklet_id, row.feature});
        std::map<int, int> identity_of;
        for (const auto& row : in.gallery) identity_of[row.tracklet_id] = row.identity;

        std::vector<std::vector<bool>> flags;
        for (std::size_t q = 0; q < in.queries.size(); ++q) {
            const auto order = oracle::ranking(in.queries[q].feature, in.queries[q].tracklet_id, g);
            REQUIRE(results[q].ordered_gallery == order);
            std::vector<bool> f;
            for (int id : order) f.push_back(identity_of[id] == in.queries[q].identity);
            CHECK(results[q].match_flags == f);
            flags.push_back(f);
        }
        CHECK(std::fabs(compute_map(results) - oracle::mean_ap(flags)) <= 1e-12);
        const auto cmc = compute_cmc(results, ks);
        for (std::size_t i = 0; i < ks.size(); ++i) CHECK(std::fabs(cmc[i] - oracle::rank_k(flags, ks[i])) <= 1e-12);
        CHECK(cmc[0] <= cmc[1]);
        CHECK(cmc[1] <= cmc[2]);
    }
}

TEST_CASE("positive rescaling leaves rankings unchanged") {
    std::mt19937_64 gen(8);
    std::normal_distribution<double> n;
    std::vector<FeatureRow> q, g;
    for (int i = 0; i < 6; ++i) q.push_back({100 + i, 1 + i % 3, {n(gen), n(gen), n(gen)}});
    for (int i = 0; i < 15; ++i) g.push_back({i, 1 + i % 3, {n(gen), n(gen), n(gen)}});
    const auto base = rank(q, g);
    for (double s : {1e-3, 0.5, 7.0, 1e4}) {
        auto q2 = q, g2 = g;
        for (auto& r : q2)
            for (auto& v : r.feature) v *= s;
        for (auto& r : g2)
            for (auto& v : r.feature) v *= s * 1.7;
        const auto scaled = rank(q2, g2);
        for (std::size_t i = 0; i < base.size(); ++i) CHECK(scaled[i].ordered_gallery == base[i].ordered_gallery);
    }
}

TEST_CASE("perfect embeddings give mAP = rank1 = 1") {
    std::vector<FeatureRow> q, g;
    for (int id = 1; id <= 4; ++id) {
        std::vector<double> f(4, 0.0);
        f[id - 1] = 1.0;
        q.push_back({100 + id, id, f});
        for (int k = 0; k < 3; ++k) g.push_back({id * 10 + k, id, f});
    }
    const auto m = summarize(rank(q, g), g.size());
    CHECK(m.map == 1.0);
    CHECK(m.rank1 == 1.0);
}

TEST_CASE("metrics report round trip") {
    const auto dir = support::scratch("report");
    Metrics m{0.5, 0.75, 0.875, 1.0, 8, 24};
    write_metrics_report(dir / "m.json", m, "abc123");
    std::string hash;
    const auto back = read_metrics_report(dir / "m.json", &hash);
    CHECK(hash == "abc123");
    CHECK(back.map == 0.5);
    CHECK(back.rank1 == 0.75);
    CHECK(back.rank10 == 1.0);
    CHECK(back.n_query == 8);
    CHECK(back.n_gallery == 24);
}

TEST_CASE("rank-list export") {
    const auto dir = support::scratch("ranklist");
    std::vector<RankingResult> results{result({true, false, true}), result({false, true, false})};
    results[1].query_id = 1001;
    auto frames = [](int id) -> std::optional<Image8> { return Image8(8, 4, 3, static_cast<std::uint8_t>(id)); };

    const auto a = export_rank_list(results, 5, dir / "a", frames);
    CHECK(a.montages_written == 2);
    CHECK(a.warnings.empty());
    const auto montage = read_png(dir / "a" / "query_1000.png");
    CHECK(montage.width == 4 * (4 + 2 * 2)); // query + 3 clamped gallery tiles, 2-pixel borders
    const auto index = support::slurp(dir / "a" / "index.csv");
    CHECK(std::count(index.begin(), index.end(), '\n') == 3);

    export_rank_list(results, 5, dir / "b", frames);
    CHECK(support::slurp(dir / "a" / "query_1000.png") == support::slurp(dir / "b" / "query_1000.png"));
    CHECK(index == support::slurp(dir / "b" / "index.csv"));

    auto missing = [](int id) -> std::optional<Image8> {
        if (id == 1) return std::nullopt;
        return Image8(8, 4, 3, 9);
    };
    const auto c = export_rank_list(results, 5, dir / "c", missing);
    CHECK(c.montages_written == 0);
    CHECK(c.warnings.size() == 2);
    const auto skipped = support::slurp(dir / "c" / "index.csv");
    CHECK(std::count(skipped.begin(), skipped.end(), '\n') == 3);
}
