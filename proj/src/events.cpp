#include "tripro/events.hpp"

#include "tripro/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace tripro::events {

namespace {

void check_timestamps(std::span<const std::uint64_t> ts) {
    for (std::size_t i = 1; i < ts.size(); ++i)
        if (ts[i] <= ts[i - 1])
            throw InputError("timestamps must be strictly increasing (index " + std::to_string(i) + ")");
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    static_assert(std::endian::native == std::endian::little, "big-endian hosts unsupported");
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T get_le(std::span<const std::uint8_t> in, std::size_t offset) {
    T value;
    std::memcpy(&value, in.data() + offset, sizeof(T));
    return value;
}

} // namespace

LogFrame log_intensity(const Image8& rgb) {
    if (rgb.channels != 3) throw InputError("log_intensity expects an RGB frame");
    LogFrame out{rgb.height, rgb.width, {}};
    out.values.resize(static_cast<std::size_t>(rgb.height) * rgb.width);
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        const double r = rgb.data[i * 3 + 0];
        const double g = rgb.data[i * 3 + 1];
        const double b = rgb.data[i * 3 + 2];
        const double intensity = (0.299 * r + 0.587 * g + 0.114 * b) / 255.0;
        out.values[i] = std::log(intensity + kLogEpsilon);
    }
    return out;
}

std::vector<Event> synthesize_from_log(std::span<const LogFrame> frames,
                                       std::span<const std::uint64_t> timestamps_us,
                                       double contrast_threshold) {
    if (frames.size() < 2) throw InputError("event synthesis needs at least two frames");
    if (frames.size() != timestamps_us.size())
        throw InputError("one timestamp per frame required");
    if (!(contrast_threshold > 0.0)) throw InputError("contrast threshold must be positive");
    check_timestamps(timestamps_us);
    const int height = frames.front().height;
    const int width = frames.front().width;
    for (const auto& f : frames)
        if (f.height != height || f.width != width ||
            f.values.size() != static_cast<std::size_t>(height) * width)
            throw InputError("frame size mismatch");

    std::vector<double> reference = frames.front().values;
    std::vector<Event> events;
    const double c = contrast_threshold;

    for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
        const auto& prev = frames[k].values;
        const auto& next = frames[k + 1].values;
        const std::uint64_t t0 = timestamps_us[k];
        const std::uint64_t dt = timestamps_us[k + 1] - t0;
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * width + x;
                const double l0 = prev[i];
                const double l1 = next[i];
                // Order: subtract, absolute, divide, floor.
                const double delta = l1 - reference[i];
                const double n = std::floor(std::fabs(delta) / c);
                if (n < 1.0) continue;
                const double pol = delta > 0.0 ? 1.0 : -1.0;
                const auto count = static_cast<std::uint64_t>(n);
                for (std::uint64_t j = 1; j <= count; ++j) {
                    const double level = reference[i] + pol * (static_cast<double>(j) * c);
                    double frac = l1 != l0 ? (level - l0) / (l1 - l0) : 1.0;
                    frac = std::clamp(frac, 0.0, 1.0);
                    auto offset = static_cast<std::uint64_t>(std::floor(frac * static_cast<double>(dt)));
                    offset = std::min(offset, dt - 1);
                    events.push_back(Event{t0 + offset, static_cast<std::uint16_t>(x),
                                           static_cast<std::uint16_t>(y),
                                           static_cast<std::int8_t>(pol > 0.0 ? 1 : -1)});
                }
                reference[i] = reference[i] + pol * (n * c);
            }
        }
    }
    std::sort(events.begin(), events.end(), event_less);
    return events;
}

std::vector<Event> synthesize_events(std::span<const Image8> frames,
                                     std::span<const std::uint64_t> timestamps_us,
                                     double contrast_threshold) {
    if (frames.size() < 2) throw InputError("event synthesis needs at least two frames");
    std::vector<LogFrame> logs;
    logs.reserve(frames.size());
    for (const auto& f : frames) {
        if (!f.same_shape(frames.front())) throw InputError("frame size mismatch");
        logs.push_back(log_intensity(f));
    }
    return synthesize_from_log(logs, timestamps_us, contrast_threshold);
}

std::uint64_t EventFrame::total() const {
    std::uint64_t sum = 0;
    for (auto v : counts) sum += v;
    return sum;
}

EventFrame stack_events(std::span<const Event> events, TimeWindow window, int height, int width,
                        std::uint32_t cap) {
    if (window.begin >= window.end) throw InputError("stack window must satisfy t0 < t1");
    EventFrame frame(height, width);
    for (const auto& e : events) {
        if (e.t < window.begin || e.t >= window.end) continue;
        if (e.x >= width || e.y >= height) throw InputError("event outside sensor bounds");
        auto& cell = frame.counts[(static_cast<std::size_t>(e.y) * width + e.x) * 2 + (e.p > 0 ? 0 : 1)];
        if (cell < cap) ++cell;
    }
    return frame;
}

std::vector<FramePairing> align_pairs(std::span<const std::uint64_t> ts) {
    check_timestamps(ts);
    std::vector<FramePairing> pairs;
    if (ts.empty()) return pairs;
    std::uint64_t last_gap = kDefaultWindowUs;
    if (ts.size() > 1) {
        std::vector<std::uint64_t> gaps;
        for (std::size_t i = 1; i < ts.size(); ++i) gaps.push_back(ts[i] - ts[i - 1]);
        std::sort(gaps.begin(), gaps.end());
        const std::size_t mid = gaps.size() / 2;
        last_gap = gaps.size() % 2 == 1 ? gaps[mid] : (gaps[mid - 1] + gaps[mid]) / 2;
    }
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const std::uint64_t end = i + 1 < ts.size() ? ts[i + 1] : ts[i] + last_gap;
        pairs.push_back({i, {ts[i], end}});
    }
    return pairs;
}

std::vector<EventFrame> stack_aligned(std::span<const Event> events,
                                      std::span<const std::uint64_t> ts, int height, int width,
                                      std::uint32_t cap) {
    std::vector<EventFrame> frames;
    for (const auto& pair : align_pairs(ts))
        frames.push_back(stack_events(events, pair.window, height, width, cap));
    return frames;
}

Image8 event_frame_to_image(const EventFrame& frame, std::uint32_t cap) {
    if (cap == 0 || cap == kNoCap) throw InputError("event image needs a finite positive cap");
    Image8 out(frame.height, frame.width, 3);
    for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x) {
            const auto scale = [&](std::uint32_t v) {
                return static_cast<std::uint8_t>((std::min(v, cap) * 255u + cap / 2) / cap);
            };
            const std::uint8_t pos = scale(frame.at(y, x, 0));
            const std::uint8_t neg = scale(frame.at(y, x, 1));
            out.at(y, x, 0) = pos;
            out.at(y, x, 1) = neg;
            out.at(y, x, 2) = pos;
        }
    return out;
}

std::vector<std::uint8_t> encode_evrd(const EvrdFile& file) {
    std::vector<std::uint8_t> out;
    out.reserve(kEvrdHeaderBytes + kEvrdRecordBytes * file.events.size());
    out.insert(out.end(), {'E', 'V', 'R', 'D'});
    put_le<std::uint16_t>(out, kEvrdVersion);
    put_le<std::uint16_t>(out, file.width);
    put_le<std::uint16_t>(out, file.height);
    put_le<std::uint64_t>(out, file.events.size());
    put_le<double>(out, file.contrast_threshold);
    for (const auto& e : file.events) {
        if (e.x >= file.width || e.y >= file.height) throw InputError("event outside sensor bounds");
        put_le<std::uint64_t>(out, e.t);
        put_le<std::uint16_t>(out, e.x);
        put_le<std::uint16_t>(out, e.y);
        put_le<std::uint8_t>(out, e.p > 0 ? 1 : 0);
    }
    return out;
}

EvrdFile decode_evrd(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kEvrdHeaderBytes) throw FormatError("EVRD: truncated header");
    if (std::memcmp(bytes.data(), "EVRD", 4) != 0) throw FormatError("EVRD: bad magic");
    const auto version = get_le<std::uint16_t>(bytes, 4);
    if (version != kEvrdVersion) throw FormatError("EVRD: unsupported version " + std::to_string(version));
    EvrdFile file;
    file.width = get_le<std::uint16_t>(bytes, 6);
    file.height = get_le<std::uint16_t>(bytes, 8);
    const auto count = get_le<std::uint64_t>(bytes, 10);
    file.contrast_threshold = get_le<double>(bytes, 18);
    if ((bytes.size() - kEvrdHeaderBytes) / kEvrdRecordBytes != count ||
        (bytes.size() - kEvrdHeaderBytes) % kEvrdRecordBytes != 0)
        throw FormatError("EVRD: length does not match record count");
    file.events.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::size_t off = kEvrdHeaderBytes + i * kEvrdRecordBytes;
        Event e;
        e.t = get_le<std::uint64_t>(bytes, off);
        e.x = get_le<std::uint16_t>(bytes, off + 8);
        e.y = get_le<std::uint16_t>(bytes, off + 10);
        const auto p = get_le<std::uint8_t>(bytes, off + 12);
        if (p > 1) throw FormatError("EVRD: polarity byte must be 0 or 1");
        e.p = p == 1 ? 1 : -1;
        if (e.x >= file.width || e.y >= file.height) throw FormatError("EVRD: record outside sensor");
        if (!file.events.empty() && event_less(e, file.events.back()))
            throw FormatError("EVRD: records not sorted at index " + std::to_string(i));
        file.events.push_back(e);
    }
    return file;
}

void write_evrd(const std::filesystem::path& path, const EvrdFile& file) {
    const auto bytes = encode_evrd(file);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("write failed: " + path.string());
}

EvrdFile read_evrd(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_evrd(bytes);
}

} // namespace tripro::events
