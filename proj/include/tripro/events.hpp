#pragma once

// Reference RGB -> event synthesis, event-frame stacking and the EVRD codec.
//
// Everything here is deterministic and runs in double precision so that an
// independent implementation following the same operation order produces
// byte-identical EVRD files.

#include "tripro/image.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

namespace tripro::events {

inline constexpr double kLogEpsilon = 1e-3;
inline constexpr double kDefaultContrastThreshold = 0.2;
inline constexpr std::uint32_t kDefaultCap = 255;
inline constexpr std::uint32_t kNoCap = std::numeric_limits<std::uint32_t>::max();
inline constexpr std::uint64_t kDefaultWindowUs = 33'333;

struct Event {
    std::uint64_t t = 0; ///< microseconds
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    std::int8_t p = 1; ///< +1 or -1

    friend bool operator==(const Event&, const Event&) = default;
};

/// Total order (t, y, x, p) with positive polarity before negative.
inline bool event_less(const Event& a, const Event& b) {
    if (a.t != b.t) return a.t < b.t;
    if (a.y != b.y) return a.y < b.y;
    if (a.x != b.x) return a.x < b.x;
    return a.p > b.p;
}

/// Per-pixel log-intensity frame.
struct LogFrame {
    int height = 0;
    int width = 0;
    std::vector<double> values; ///< row-major
};

/// log(I + eps) of the luma I = (0.299 r + 0.587 g + 0.114 b) / 255.
LogFrame log_intensity(const Image8& rgb);

/// Fires floor(|L - ref| / C) events per pixel per frame interval, ref being the
/// level of the last event. Times are interpolated linearly inside the interval
/// and truncated to whole microseconds. Output sorted by event_less.
std::vector<Event> synthesize_events(std::span<const Image8> frames,
                                     std::span<const std::uint64_t> timestamps_us,
                                     double contrast_threshold = kDefaultContrastThreshold);

/// Same rule on precomputed log-intensity frames.
std::vector<Event> synthesize_from_log(std::span<const LogFrame> frames,
                                       std::span<const std::uint64_t> timestamps_us,
                                       double contrast_threshold = kDefaultContrastThreshold);

/// Two-channel polarity histogram; channel 0 counts positive, channel 1 negative events.
struct EventFrame {
    int height = 0;
    int width = 0;
    std::vector<std::uint32_t> counts; ///< [y][x][channel]

    EventFrame() = default;
    EventFrame(int h, int w) : height(h), width(w), counts(static_cast<std::size_t>(h) * w * 2, 0) {}

    std::uint32_t at(int y, int x, int c) const {
        return counts[(static_cast<std::size_t>(y) * width + x) * 2 + c];
    }
    std::uint64_t total() const;
};

struct TimeWindow {
    std::uint64_t begin = 0; ///< inclusive
    std::uint64_t end = 0;   ///< exclusive
    friend bool operator==(const TimeWindow&, const TimeWindow&) = default;
};

/// Histogram of the events with t in [window.begin, window.end), clipped at cap.
EventFrame stack_events(std::span<const Event> events, TimeWindow window, int height, int width,
                        std::uint32_t cap = kDefaultCap);

struct FramePairing {
    std::size_t rgb_index = 0;
    TimeWindow window;
};

/// Frame i gets [t_i, t_{i+1}); the last frame gets [t_{N-1}, t_{N-1} + median gap).
/// A single frame uses kDefaultWindowUs.
std::vector<FramePairing> align_pairs(std::span<const std::uint64_t> rgb_timestamps_us);

/// align_pairs followed by stack_events per window.
std::vector<EventFrame> stack_aligned(std::span<const Event> events,
                                      std::span<const std::uint64_t> rgb_timestamps_us,
                                      int height, int width, std::uint32_t cap = kDefaultCap);

/// Encoder-ready 3-channel image: (pos, neg, pos) counts scaled by 255/cap into 8 bits.
Image8 event_frame_to_image(const EventFrame& frame, std::uint32_t cap = kDefaultCap);

// ---------------------------------------------------------------------------
// EVRD binary format, little-endian, packed:
//   magic "EVRD" | version u16 = 1 | width u16 | height u16 | count u64 | threshold f64
//   count x { t u64 | x u16 | y u16 | p u8 (1 = positive, 0 = negative) }
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kEvrdVersion = 1;
inline constexpr std::size_t kEvrdHeaderBytes = 26;
inline constexpr std::size_t kEvrdRecordBytes = 13;

struct EvrdFile {
    std::uint16_t width = 0;
    std::uint16_t height = 0;
    double contrast_threshold = kDefaultContrastThreshold;
    std::vector<Event> events;

    friend bool operator==(const EvrdFile&, const EvrdFile&) = default;
};

std::vector<std::uint8_t> encode_evrd(const EvrdFile& file);
/// Validates magic, version, length, bounds and sort order.
EvrdFile decode_evrd(std::span<const std::uint8_t> bytes);

void write_evrd(const std::filesystem::path& path, const EvrdFile& file);
EvrdFile read_evrd(const std::filesystem::path& path);

} // namespace tripro::events
