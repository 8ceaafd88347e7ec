#include "tripro/synth.hpp"

#include "tripro/errors.hpp"
#include "tripro/events.hpp"
#include "tripro/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace fs = std::filesystem;

namespace tripro::synth {

namespace {

enum Attr { Male, Female, LongHair, Bald, Hat, Glasses, ShortSleeves, LongSleeves, Jacket, Backpack, Trousers, Skirt };

using Rgb = std::array<double, 3>;

Rgb hsv(double h, double s, double v) {
    h = std::fmod(h, 1.0) * 6.0;
    const int i = static_cast<int>(h);
    const double f = h - i, p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (i % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
    }
}

struct Look {
    Rgb shirt, jacket, lower, skin, hair, hat, pack;
};

Look identity_look(int identity, std::uint64_t seed) {
    Rng rng(seed * 7919 + static_cast<std::uint64_t>(identity));
    const double hue = std::fmod(identity * 0.61803398875, 1.0);
    Look l;
    l.shirt = hsv(hue, 0.75, 0.85);
    l.jacket = hsv(hue + 0.5, 0.5, 0.45);
    l.lower = hsv(hue + 0.33 + rng.uniform(-0.05, 0.05), 0.6, rng.uniform(0.25, 0.6));
    const double tone = rng.uniform(0.55, 0.85);
    l.skin = {tone, tone * 0.78, tone * 0.62};
    const double dark = rng.uniform(0.08, 0.3);
    l.hair = {dark * 1.2, dark, dark * 0.8};
    l.hat = hsv(hue + 0.15, 0.8, 0.7);
    l.pack = hsv(hue + 0.75, 0.4, 0.3);
    return l;
}

struct Canvas {
    int h, w;
    std::vector<Rgb> px;
    Canvas(int h_, int w_) : h(h_), w(w_), px(static_cast<std::size_t>(h_) * w_) {}
    void rect(double x0, double y0, double x1, double y1, const Rgb& c) {
        const int ya = std::max(0, static_cast<int>(std::floor(y0))), yb = std::min(h, static_cast<int>(std::ceil(y1)));
        const int xa = std::max(0, static_cast<int>(std::floor(x0))), xb = std::min(w, static_cast<int>(std::ceil(x1)));
        for (int y = ya; y < yb; ++y)
            for (int x = xa; x < xb; ++x) px[static_cast<std::size_t>(y) * w + x] = c;
    }
    void ellipse(double cx, double cy, double rx, double ry, const Rgb& c) {
        for (int y = std::max(0, static_cast<int>(cy - ry)); y < std::min(h, static_cast<int>(cy + ry) + 1); ++y)
            for (int x = std::max(0, static_cast<int>(cx - rx)); x < std::min(w, static_cast<int>(cx + rx) + 1); ++x) {
                const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
                if (dx * dx + dy * dy <= 1.0) px[static_cast<std::size_t>(y) * w + x] = c;
            }
    }
    // Trapezoid with horizontal top [tx0, tx1] at y0 and bottom [bx0, bx1] at y1.
    void trapezoid(double y0, double y1, double tx0, double tx1, double bx0, double bx1, const Rgb& c) {
        for (int y = std::max(0, static_cast<int>(y0)); y < std::min(h, static_cast<int>(std::ceil(y1))); ++y) {
            const double a = (y + 0.5 - y0) / (y1 - y0);
            rect(tx0 + a * (bx0 - tx0), y, tx1 + a * (bx1 - tx1), y + 1, c);
        }
    }
};

void draw_person(Canvas& c, const std::vector<int>& a, const Look& look, double cx, double phase) {
    const double H = c.h;
    const double s = H / 128.0;            // scale unit
    const double top = 10 * s + 1.5 * s * std::abs(std::sin(phase));
    const double head_r = 8 * s;
    const double head_cy = top + head_r;
    const double shoulder = head_cy + head_r + 2 * s;
    const double waist = shoulder + 36 * s;
    const double feet = std::min(H - 2 * s, waist + 44 * s);
    const double half = (a[Female] ? 9 : 11) * s;
    const double swing = 7 * s * std::sin(phase);

    if (a[Backpack]) c.rect(cx + half - 2 * s, shoulder + 3 * s, cx + half + 6 * s, waist - 6 * s, look.pack);
    if (a[LongHair] && !a[Bald]) c.rect(cx - head_r - 1 * s, head_cy, cx + head_r + 1 * s, shoulder + 12 * s, look.hair);

    // Legs or skirt.
    if (a[Skirt]) {
        c.trapezoid(waist, waist + 22 * s, cx - half, cx + half, cx - half - 6 * s, cx + half + 6 * s, look.lower);
        c.rect(cx - 6 * s + swing * 0.4, waist + 22 * s, cx - 2 * s + swing * 0.4, feet, look.skin);
        c.rect(cx + 2 * s - swing * 0.4, waist + 22 * s, cx + 6 * s - swing * 0.4, feet, look.skin);
    } else {
        c.rect(cx - 8 * s + swing, waist, cx - 1 * s + swing, feet, look.lower);
        c.rect(cx + 1 * s - swing, waist, cx + 8 * s - swing, feet, look.lower);
    }
    c.rect(cx - 9 * s + swing, feet - 3 * s, cx - 1 * s + swing, feet, {0.1, 0.1, 0.1});
    c.rect(cx + 1 * s - swing, feet - 3 * s, cx + 9 * s - swing, feet, {0.1, 0.1, 0.1});

    // Torso and arms.
    const bool long_sleeves = a[LongSleeves] || a[Jacket];
    const Rgb& upper = a[Jacket] ? look.jacket : look.shirt;
    c.rect(cx - half, shoulder, cx + half, waist, upper);
    if (a[Jacket]) c.rect(cx - 3 * s, shoulder, cx + 3 * s, waist, look.shirt);
    const double arm_w = 5 * s;
    const double elbow = shoulder + (long_sleeves ? 34 : 12) * s;
    for (int side : {-1, 1}) {
        const double x0 = side < 0 ? cx - half - arm_w : cx + half;
        const double dx = -side * swing * 0.5;
        c.rect(x0 + dx, shoulder, x0 + arm_w + dx, elbow, upper);
        if (!long_sleeves) c.rect(x0 + dx, elbow, x0 + arm_w + dx, shoulder + 34 * s, look.skin);
    }

    // Head.
    c.ellipse(cx, head_cy, head_r, head_r * 1.1, look.skin);
    if (a[Hat]) {
        c.rect(cx - head_r - 2 * s, head_cy - head_r * 1.1, cx + head_r + 2 * s, head_cy - head_r * 0.35, look.hat);
    } else if (!a[Bald]) {
        c.rect(cx - head_r, head_cy - head_r * 1.1, cx + head_r, head_cy - head_r * 0.45, look.hair);
    }
    if (a[Glasses]) c.rect(cx - head_r * 0.8, head_cy - 1 * s, cx + head_r * 0.8, head_cy + 1.5 * s, {0.05, 0.05, 0.05});
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << text;
}

std::string numbered(int value, int digits) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%0*d", digits, value);
    return buf;
}

} // namespace

const std::vector<std::string>& attribute_vocabulary() {
    static const std::vector<std::string> vocab = {"Male",          "Female",       "Long Hair", "Bald",
                                                   "Hat",           "Glasses",      "Short Sleeves", "Long Sleeves",
                                                   "Jacket",        "Backpack",     "Trousers",  "Skirt"};
    return vocab;
}

std::vector<std::vector<int>> sample_attributes(int identities, std::uint64_t seed) {
    Rng rng(seed ^ 0xA77121B07E5ULL);
    std::vector<std::vector<int>> out;
    for (int i = 0; i < identities; ++i) {
        std::vector<int> a(attribute_vocabulary().size(), 0);
        const bool female = rng.uniform() < 0.5;
        a[female ? Female : Male] = 1;
        if (female ? rng.uniform() < 0.7 : rng.uniform() < 0.1)
            a[LongHair] = 1;
        else if (!female && rng.uniform() < 0.3)
            a[Bald] = 1;
        a[Hat] = rng.uniform() < 0.25;
        a[Glasses] = rng.uniform() < 0.25;
        const double upper = rng.uniform();
        if (upper < 0.3) {
            a[Jacket] = 1;
            a[LongSleeves] = 1;
        } else {
            a[upper < 0.65 ? ShortSleeves : LongSleeves] = 1;
        }
        a[Backpack] = rng.uniform() < 0.35;
        a[female && rng.uniform() < 0.45 ? Skirt : Trousers] = 1;
        out.push_back(std::move(a));
    }
    if (identities >= 2 && std::all_of(out.begin(), out.end(), [&](const auto& v) { return v == out[0]; })) {
        std::swap(out[1][Male], out[1][Female]);
        if (out[1][Skirt] && out[1][Male]) std::swap(out[1][Skirt], out[1][Trousers]);
    }
    return out;
}

std::vector<Image8> render_tracklet(const SynthOptions& o, int identity, int tracklet,
                                    const std::vector<int>& attributes) {
    Rng rng(o.seed * 1000003 + static_cast<std::uint64_t>(identity) * 131 + static_cast<std::uint64_t>(tracklet));
    const Look look = identity_look(identity, o.seed);
    const int camera = tracklet % 2;
    const double base = camera == 0 ? 0.55 : 0.35;
    const double tint = rng.uniform(-0.05, 0.05);
    const double s = o.height / 128.0;
    const double direction = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double speed = rng.uniform(0.8, 1.6) * s * direction;
    const double start = o.width / 2.0 - speed * o.frames / 2.0 + rng.uniform(-4, 4) * s;
    const double phase0 = rng.uniform(0, 6.283);

    // Static textured background per tracklet.
    Canvas bg(o.height, o.width);
    for (int y = 0; y < o.height; ++y)
        for (int x = 0; x < o.width; ++x) {
            const double g = base + 0.08 * y / o.height + tint + 0.02 * std::sin(x * 0.7 + camera) * std::cos(y * 0.3);
            bg.px[static_cast<std::size_t>(y) * o.width + x] = {g, g * (camera ? 1.05 : 0.97), g * (camera ? 0.9 : 1.03)};
        }

    std::vector<Image8> frames;
    for (int f = 0; f < o.frames; ++f) {
        Canvas c = bg;
        draw_person(c, attributes, look, start + speed * f, phase0 + 0.9 * f);
        Image8 img(o.height, o.width, 3);
        for (int y = 0; y < o.height; ++y)
            for (int x = 0; x < o.width; ++x)
                for (int ch = 0; ch < 3; ++ch) {
                    const double noise = rng.uniform(-1.5, 1.5);
                    const double v = c.px[static_cast<std::size_t>(y) * o.width + x][static_cast<std::size_t>(ch)] * 255.0;
                    img.at(y, x, ch) = static_cast<std::uint8_t>(std::clamp(std::lround(v + noise), 0L, 255L));
                }
        frames.push_back(std::move(img));
    }
    return frames;
}

void generate_dataset(const fs::path& root, const SynthOptions& o) {
    if (o.identities < 1 || o.tracklets_per_id < 1 || o.frames < 1) throw ConfigError("synth sizes must be >= 1");
    if (o.height < 16 || o.width < 16 || o.height > 65535 || o.width > 65535)
        throw ConfigError("synth frame size out of range");
    fs::create_directories(root);
    const auto& vocab = attribute_vocabulary();
    const auto attrs = sample_attributes(o.identities, o.seed);

    std::string csv = "identity";
    for (const auto& name : vocab) csv += "," + name;
    csv += "\n";
    for (int i = 0; i < o.identities; ++i) {
        csv += std::to_string(i + 1);
        for (int v : attrs[static_cast<std::size_t>(i)]) csv += "," + std::to_string(v);
        csv += "\n";
    }
    write_text(root / "attributes.csv", csv);

    for (int i = 1; i <= o.identities; ++i) {
        const auto& a = attrs[static_cast<std::size_t>(i - 1)];
        for (int t = 0; t < o.tracklets_per_id; ++t) {
            const auto dir = root / numbered(i, 4) / numbered(t, 3);
            fs::create_directories(dir);
            const auto frames = render_tracklet(o, i, t, a);
            std::vector<std::uint64_t> stamps;
            const std::uint64_t t0 = 1000000ULL * static_cast<std::uint64_t>(t + 1);
            for (int f = 0; f < o.frames; ++f) stamps.push_back(t0 + static_cast<std::uint64_t>(f) * o.frame_interval_us);

            const auto events = events::synthesize_events(frames, stamps, o.contrast_threshold);
            const auto stacked = events::stack_aligned(events, stamps, o.height, o.width);
            for (int f = 0; f < o.frames; ++f) {
                write_png(dir / ("rgb_" + numbered(f, 5) + ".png"), frames[static_cast<std::size_t>(f)]);
                write_png(dir / ("evt_" + numbered(f, 5) + ".png"),
                          events::event_frame_to_image(stacked[static_cast<std::size_t>(f)]));
            }
            events::EvrdFile file;
            file.width = static_cast<std::uint16_t>(o.width);
            file.height = static_cast<std::uint16_t>(o.height);
            file.contrast_threshold = o.contrast_threshold;
            file.events = events;
            events::write_evrd(dir / "events.evrd", file);
            const nlohmann::json meta = {{"camera_view", t % 2}, {"timestamps_us", stamps}};
            write_text(dir / "meta.json", meta.dump(1) + "\n");
        }
    }
}

} // namespace tripro::synth
