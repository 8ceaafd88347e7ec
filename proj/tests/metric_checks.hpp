#pragma once

// Random retrieval instances and their comparison against the brute-force
// ranking, AP and CMC, shared by the unit tests and the acceptance run.

#include "oracles.hpp"

#include "tripro/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <vector>

namespace metric_checks {

struct Instance {
    std::vector<tripro::eval::FeatureRow> queries, gallery;
};

// Small integer features so that exact ties occur regularly.
inline Instance random_instance(std::mt19937_64& gen) {
    Instance in;
    const int dim = 1 + static_cast<int>(gen() % 4);
    const int nq = 1 + static_cast<int>(gen() % 20);
    const int ng = nq + static_cast<int>(gen() % (51 - nq));
    const int ids = 1 + static_cast<int>(gen() % 8);
    auto feature = [&] {
        std::vector<double> f(dim);
        do {
            for (auto& v : f) v = static_cast<double>(static_cast<int>(gen() % 5) - 2);
        } while (std::all_of(f.begin(), f.end(), [](double v) { return v == 0.0; }));
        return f;
    };
    int next_id = 0;
    for (int g = 0; g < ng; ++g) in.gallery.push_back({next_id++, 1 + static_cast<int>(gen() % ids), feature()});
    for (int q = 0; q < nq; ++q) {
        // identity of a random gallery item guarantees a match
        const int identity = in.gallery[gen() % in.gallery.size()].identity;
        in.queries.push_back({next_id++, identity, feature()});
    }
    return in;
}

struct Outcome {
    int ranking_mismatches = 0;
    double worst_error = 0.0; ///< over mAP and CMC@{1,5,10}
};

inline Outcome run(int instances, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    const std::vector<int> ks{1, 5, 10};
    Outcome out;
    for (int trial = 0; trial < instances; ++trial) {
        const auto in = random_instance(gen);
        const auto results = tripro::eval::rank(in.queries, in.gallery);
        std::vector<std::pair<int, std::vector<double>>> g;
        std::map<int, int> identity_of;
        for (const auto& row : in.gallery) {
            g.push_back({row.tracklet_id, row.feature});
            identity_of[row.tracklet_id] = row.identity;
        }
        std::vector<std::vector<bool>> flags;
        for (std::size_t q = 0; q < in.queries.size(); ++q) {
            const auto order = oracle::ranking(in.queries[q].feature, in.queries[q].tracklet_id, g);
            std::vector<bool> f;
            for (int id : order) f.push_back(identity_of[id] == in.queries[q].identity);
            if (results[q].ordered_gallery != order || results[q].match_flags != f) ++out.ranking_mismatches;
            flags.push_back(f);
        }
        out.worst_error = std::max(out.worst_error, std::fabs(tripro::eval::compute_map(results) - oracle::mean_ap(flags)));
        const auto cmc = tripro::eval::compute_cmc(results, ks);
        for (std::size_t i = 0; i < ks.size(); ++i)
            out.worst_error = std::max(out.worst_error, std::fabs(cmc[i] - oracle::rank_k(flags, ks[i])));
    }
    return out;
}

} // namespace metric_checks
