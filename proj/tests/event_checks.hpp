#pragma once

// Random log-intensity videos and the synthesis invariants checked on them,
// shared by the unit tests and the acceptance run.

#include "oracles.hpp"

#include "tripro/events.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace event_checks {

inline tripro::events::LogFrame make_log(const oracle::Matrix& m) {
    tripro::events::LogFrame f;
    f.height = static_cast<int>(m.size());
    f.width = static_cast<int>(m[0].size());
    for (const auto& row : m) f.values.insert(f.values.end(), row.begin(), row.end());
    return f;
}

inline std::vector<oracle::Matrix> random_video(std::mt19937_64& gen, int h, int w, int n) {
    std::uniform_real_distribution<double> u(std::log(1e-3), 0.0);
    std::vector<oracle::Matrix> video(n, oracle::Matrix(h, std::vector<double>(w)));
    for (auto& f : video)
        for (auto& row : f)
            for (auto& v : row) v = u(gen);
    return video;
}

inline std::vector<std::uint64_t> random_stamps(std::mt19937_64& gen, int n) {
    std::vector<std::uint64_t> t{gen() % 1000};
    while (static_cast<int>(t.size()) < n) t.push_back(t.back() + 1 + gen() % 50000);
    return t;
}

inline std::vector<tripro::events::Event> fire(const std::vector<oracle::Matrix>& video,
                                               const std::vector<std::uint64_t>& t, double c) {
    std::vector<tripro::events::LogFrame> logs;
    for (const auto& f : video) logs.push_back(make_log(f));
    return tripro::events::synthesize_from_log(logs, t, c);
}

inline std::vector<oracle::Matrix> negated(std::vector<oracle::Matrix> video) {
    for (auto& f : video)
        for (auto& row : f)
            for (auto& v : row) v = -v;
    return video;
}

/// Number of videos violating each invariant.
struct Outcome {
    int antisymmetry = 0; ///< negated video does not give the polarity-flipped stream
    int conservation = 0; ///< per-pixel interval counts or stacked totals disagree with the oracle
    int ordering = 0;     ///< stream not sorted by (t, y, x, p)
    std::size_t events = 0;
};

inline Outcome run(int videos, std::uint64_t seed) {
    using namespace tripro::events;
    std::mt19937_64 gen(seed);
    Outcome out;
    for (int trial = 0; trial < videos; ++trial) {
        const int h = 1 + static_cast<int>(gen() % 8), w = 1 + static_cast<int>(gen() % 8);
        const int n = 2 + static_cast<int>(gen() % 5);
        const double c = 0.05 + 0.3 * static_cast<double>(gen() % 1000) / 1000.0;
        const auto video = random_video(gen, h, w, n);
        const auto t = random_stamps(gen, n);
        const auto ev = fire(video, t, c);
        out.events += ev.size();

        if (!std::is_sorted(ev.begin(), ev.end(), event_less)) ++out.ordering;

        auto flipped = fire(negated(video), t, c);
        for (auto& e : flipped) e.p = static_cast<std::int8_t>(-e.p);
        std::sort(flipped.begin(), flipped.end(), event_less);
        if (flipped != ev) ++out.antisymmetry;

        std::map<std::tuple<std::size_t, int, int>, oracle::IntervalCount> got;
        bool inside = true;
        for (const auto& e : ev) {
            const auto k = static_cast<std::size_t>(std::upper_bound(t.begin(), t.end(), e.t) - t.begin()) - 1;
            if (k + 1 >= t.size()) inside = false;
            auto& cell = got[std::make_tuple(k, static_cast<int>(e.y), static_cast<int>(e.x))];
            (e.p > 0 ? cell.positive : cell.negative)++;
        }
        std::uint64_t stacked = 0;
        for (const auto& frame : stack_aligned(ev, t, h, w, kNoCap)) stacked += frame.total();
        if (!inside || got != oracle::event_counts(video, c) || stacked != ev.size()) ++out.conservation;
    }
    return out;
}

} // namespace event_checks
