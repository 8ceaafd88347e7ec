#include "tripro/dataset.hpp"

#include "tripro/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace tripro::data {

std::string to_string(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Query: return "query";
    case Split::Gallery: return "gallery";
    }
    return "?";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "query") return Split::Query;
    if (s == "gallery") return Split::Gallery;
    throw FormatError("unknown split label: " + s);
}

const TrackletDescriptor& DatasetManifest::tracklet(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tracklets.size())
        throw LookupError("unknown tracklet id " + std::to_string(id));
    return tracklets[static_cast<std::size_t>(id)];
}

std::vector<int> DatasetManifest::identities() const {
    std::set<int> ids;
    for (const auto& t : tracklets) ids.insert(t.identity);
    return {ids.begin(), ids.end()};
}

namespace {

std::vector<int> identities_with(const DatasetManifest& m, bool train) {
    std::set<int> ids;
    for (const auto& t : m.tracklets) {
        const auto it = m.split.find(t.tracklet_id);
        if (it == m.split.end()) continue;
        if ((it->second == Split::Train) == train) ids.insert(t.identity);
    }
    return {ids.begin(), ids.end()};
}

bool parse_int(const std::string& s, int& out) {
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        cells.push_back(cell);
    }
    return cells;
}

std::map<int, std::vector<int>> read_attribute_rows(const fs::path& csv, std::size_t vocab_size) {
    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);
    std::map<int, std::vector<int>> rows;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        int identity = 0;
        if (cells.empty() || !parse_int(cells[0], identity))
            throw ManifestError("attributes file: bad identity in row '" + line + "'");
        if (cells.size() != vocab_size + 1)
            throw ManifestError("attributes file: identity " + std::to_string(identity) + " has " +
                                std::to_string(cells.size() - 1) + " flags, expected " +
                                std::to_string(vocab_size));
        std::vector<int> flags;
        for (std::size_t i = 1; i < cells.size(); ++i) {
            int v = 0;
            if (!parse_int(cells[i], v) || (v != 0 && v != 1))
                throw ManifestError("attributes file: non-binary flag for identity " + std::to_string(identity));
            flags.push_back(v);
        }
        rows[identity] = std::move(flags);
    }
    return rows;
}

std::vector<fs::path> numbered_subdirs(const fs::path& dir, std::size_t digits) {
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_directory()) continue;
        const auto name = entry.path().filename().string();
        if (name.size() == digits && std::all_of(name.begin(), name.end(), ::isdigit)) out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::string frame_file(const std::string& prefix, int frame) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05d.png", frame);
    return prefix + buf;
}

int count_frames(const fs::path& dir, const std::string& prefix) {
    int n = 0;
    while (fs::exists(dir / frame_file(prefix, n))) ++n;
    return n;
}

EvalPartition single_shot(const DatasetManifest& m, const std::vector<int>& identities, Rng& rng) {
    EvalPartition p;
    for (int id : identities) {
        auto tracklets = m.tracklets_of(id);
        if (tracklets.size() < 2)
            throw ManifestError("identity " + std::to_string(id) +
                                " needs at least two tracklets for a query/gallery split");
        const auto q = rng.below(tracklets.size());
        for (std::size_t i = 0; i < tracklets.size(); ++i)
            (i == q ? p.query : p.gallery).push_back(tracklets[i]);
    }
    std::sort(p.query.begin(), p.query.end());
    std::sort(p.gallery.begin(), p.gallery.end());
    return p;
}

} // namespace

std::vector<int> DatasetManifest::train_identities() const { return identities_with(*this, true); }
std::vector<int> DatasetManifest::test_identities() const { return identities_with(*this, false); }

std::vector<int> DatasetManifest::tracklets_of(int identity) const {
    std::vector<int> out;
    for (const auto& t : tracklets)
        if (t.identity == identity) out.push_back(t.tracklet_id);
    return out;
}

std::vector<int> DatasetManifest::tracklets_in(Split s) const {
    std::vector<int> out;
    for (const auto& [id, split_of] : split)
        if (split_of == s) out.push_back(id);
    return out;
}

int train_identity_count(int n) { return (7 * n + 5) / 10; }

void assign_split(DatasetManifest& m, std::uint64_t seed) {
    m.split_seed = seed;
    m.split.clear();
    auto ids = m.identities();
    if (ids.size() < 2) throw ManifestError("need at least two identities for a train/test split");
    for (int id : ids)
        if (!m.attributes.contains(id))
            throw ManifestError("missing attribute entries for identity " + std::to_string(id));

    Rng rng(seed);
    rng.shuffle(ids);
    const auto n_train = static_cast<std::size_t>(train_identity_count(static_cast<int>(ids.size())));
    std::vector<int> train(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<int> test(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    if (test.empty()) throw ManifestError("split leaves no test identities");

    for (int id : train)
        for (int t : m.tracklets_of(id)) m.split[t] = Split::Train;
    const auto part = single_shot(m, test, rng);
    for (int t : part.query) m.split[t] = Split::Query;
    for (int t : part.gallery) m.split[t] = Split::Gallery;
}

DatasetManifest build_manifest(const fs::path& root, std::uint64_t split_seed) {
    if (!fs::is_directory(root)) throw ManifestError("dataset root is not a directory: " + root.string());
    const auto attributes_csv = root / "attributes.csv";
    if (!fs::exists(attributes_csv)) throw ManifestError("missing attributes.csv in " + root.string());

    DatasetManifest m;
    m.attribute_vocabulary = read_attribute_vocabulary(attributes_csv);
    m.attributes = read_attribute_rows(attributes_csv, m.attribute_vocabulary.size());

    for (const auto& id_dir : numbered_subdirs(root, 4)) {
        int identity = 0;
        parse_int(id_dir.filename().string(), identity);
        if (identity < 1) throw ManifestError("identity directories start at 0001: " + id_dir.string());
        for (const auto& t_dir : numbered_subdirs(id_dir, 3)) {
            TrackletDescriptor d;
            d.tracklet_id = static_cast<int>(m.tracklets.size());
            d.identity = identity;
            parse_int(t_dir.filename().string(), d.local_index);
            d.path = fs::relative(t_dir, root).generic_string();
            d.num_frames = count_frames(t_dir, "rgb_");
            if (d.num_frames == 0) throw ManifestError("tracklet with zero frames: " + t_dir.string());
            if (count_frames(t_dir, "evt_") != d.num_frames)
                throw ManifestError("event frame count differs from RGB frame count: " + t_dir.string());
            d.has_events = fs::exists(t_dir / "events.evrd");
            if (fs::exists(t_dir / "meta.json")) {
                std::ifstream in(t_dir / "meta.json");
                const auto meta = json::parse(in);
                d.camera_view = meta.value("camera_view", 0);
                if (meta.contains("timestamps_us"))
                    d.timestamps_us = meta.at("timestamps_us").get<std::vector<std::uint64_t>>();
            }
            if (d.timestamps_us.empty())
                for (int f = 0; f < d.num_frames; ++f) d.timestamps_us.push_back(static_cast<std::uint64_t>(f) * 33'333);
            if (d.timestamps_us.size() != static_cast<std::size_t>(d.num_frames))
                throw ManifestError("timestamp count differs from frame count: " + t_dir.string());
            m.tracklets.push_back(std::move(d));
        }
    }
    if (m.tracklets.empty()) throw ManifestError("no tracklets found under " + root.string());
    // Attribute rows for identities with no tracklets are ignored.
    std::map<int, std::vector<int>> used;
    for (int id : m.identities()) {
        const auto it = m.attributes.find(id);
        if (it == m.attributes.end())
            throw ManifestError("missing attribute entries for identity " + std::to_string(id));
        used.insert(*it);
    }
    m.attributes = std::move(used);
    assign_split(m, split_seed);
    return m;
}

std::string manifest_to_json(const DatasetManifest& m) {
    json j;
    j["version"] = m.version;
    j["split_seed"] = m.split_seed;
    j["attribute_vocabulary"] = m.attribute_vocabulary;
    json tracklets = json::array();
    for (const auto& t : m.tracklets)
        tracklets.push_back({{"id", t.tracklet_id},
                             {"identity", t.identity},
                             {"index", t.local_index},
                             {"camera_view", t.camera_view},
                             {"path", t.path},
                             {"frames", t.num_frames},
                             {"timestamps_us", t.timestamps_us},
                             {"has_events", t.has_events}});
    j["tracklets"] = std::move(tracklets);
    json split = json::object();
    for (const auto& [id, s] : m.split) split[std::to_string(id)] = to_string(s);
    j["split"] = std::move(split);
    json attrs = json::object();
    for (const auto& [id, flags] : m.attributes) attrs[std::to_string(id)] = flags;
    j["attributes"] = std::move(attrs);
    return j.dump(1) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
    try {
        const auto j = json::parse(text);
        DatasetManifest m;
        m.version = j.at("version").get<int>();
        if (m.version != kManifestVersion) throw FormatError("unsupported manifest version " + std::to_string(m.version));
        m.split_seed = j.value("split_seed", std::uint64_t{0});
        m.attribute_vocabulary = j.at("attribute_vocabulary").get<std::vector<std::string>>();
        for (const auto& t : j.at("tracklets")) {
            TrackletDescriptor d;
            d.tracklet_id = t.at("id").get<int>();
            d.identity = t.at("identity").get<int>();
            d.local_index = t.at("index").get<int>();
            d.camera_view = t.at("camera_view").get<int>();
            d.path = t.at("path").get<std::string>();
            d.num_frames = t.at("frames").get<int>();
            d.timestamps_us = t.at("timestamps_us").get<std::vector<std::uint64_t>>();
            d.has_events = t.value("has_events", false);
            if (d.tracklet_id != static_cast<int>(m.tracklets.size()))
                throw FormatError("manifest tracklet ids must be dense and ordered");
            m.tracklets.push_back(std::move(d));
        }
        for (const auto& [k, v] : j.at("split").items()) m.split[std::stoi(k)] = split_from_string(v.get<std::string>());
        for (const auto& [k, v] : j.at("attributes").items()) m.attributes[std::stoi(k)] = v.get<std::vector<int>>();
        return m;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed manifest: ") + e.what());
    }
}

void save_manifest(const fs::path& path, const DatasetManifest& m) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw InputError("cannot write manifest: " + path.string());
    out << manifest_to_json(m);
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read manifest: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return manifest_from_json(ss.str());
}

EvalPartition test_partition(const DatasetManifest& m) {
    return EvalPartition{m.tracklets_in(Split::Query), m.tracklets_in(Split::Gallery)};
}

EvalPartition held_in_partition(const DatasetManifest& m, std::uint64_t seed) {
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    return single_shot(m, m.train_identities(), rng);
}

std::vector<int> select_frames(int n, int t, Rng* rng) {
    if (n < 1) throw InputError("tracklet has no frames");
    if (t < 1) throw ConfigError("frames per tracklet must be >= 1");
    std::vector<int> idx(static_cast<std::size_t>(t));
    if (n < t) {
        for (int i = 0; i < t; ++i) idx[static_cast<std::size_t>(i)] = i % n;
        return idx;
    }
    const int stride = n / t;
    const int phase = rng ? static_cast<int>(rng->below(static_cast<std::uint64_t>(stride))) : 0;
    for (int i = 0; i < t; ++i) idx[static_cast<std::size_t>(i)] = phase + i * stride;
    return idx;
}

std::vector<TrackletSample> sample_batch(const DatasetManifest& m, const BatchSpec& spec, Rng& rng) {
    if (spec.identities < 1 || spec.tracklets_per_id < 1 || spec.frames < 1)
        throw ConfigError("batch spec entries must be positive");
    auto ids = m.train_identities();
    if (static_cast<std::size_t>(spec.identities) > ids.size())
        throw ConfigError("batch asks for " + std::to_string(spec.identities) + " identities but the train split has " +
                          std::to_string(ids.size()));
    const auto train_tracklets = m.tracklets_in(Split::Train);
    if (static_cast<std::size_t>(spec.identities * spec.tracklets_per_id) > train_tracklets.size())
        throw ConfigError("batch larger than the train split");

    // Partial Fisher-Yates: the first P entries become the chosen identities.
    for (int i = 0; i < spec.identities; ++i) {
        const auto j = static_cast<std::size_t>(i) + rng.below(ids.size() - static_cast<std::size_t>(i));
        std::swap(ids[static_cast<std::size_t>(i)], ids[j]);
    }

    std::vector<TrackletSample> batch;
    batch.reserve(static_cast<std::size_t>(spec.identities * spec.tracklets_per_id));
    for (int i = 0; i < spec.identities; ++i) {
        const int identity = ids[static_cast<std::size_t>(i)];
        auto pool = m.tracklets_of(identity);
        std::vector<int> chosen;
        if (pool.size() >= static_cast<std::size_t>(spec.tracklets_per_id)) {
            for (int k = 0; k < spec.tracklets_per_id; ++k) {
                const auto j = static_cast<std::size_t>(k) + rng.below(pool.size() - static_cast<std::size_t>(k));
                std::swap(pool[static_cast<std::size_t>(k)], pool[j]);
                chosen.push_back(pool[static_cast<std::size_t>(k)]);
            }
        } else {
            for (int k = 0; k < spec.tracklets_per_id; ++k) chosen.push_back(pool[rng.below(pool.size())]);
        }
        for (int tid : chosen) {
            const auto& d = m.tracklet(tid);
            batch.push_back({tid, identity, select_frames(d.num_frames, spec.frames, &rng)});
        }
    }
    return batch;
}

TrackletSample eval_sample(const DatasetManifest& m, int tracklet_id, int frames) {
    const auto& d = m.tracklet(tracklet_id);
    return {tracklet_id, d.identity, select_frames(d.num_frames, frames, nullptr)};
}

fs::path frame_path(const fs::path& root, const TrackletDescriptor& t, const std::string& prefix, int frame) {
    return root / t.path / frame_file(prefix, frame);
}

std::vector<std::string> read_attribute_vocabulary(const fs::path& csv) {
    std::ifstream in(csv);
    if (!in) throw ManifestError("cannot read attributes file: " + csv.string());
    std::string header;
    std::getline(in, header);
    auto cells = split_csv_line(header);
    if (cells.empty() || cells[0] != "identity")
        throw ManifestError("attributes file header must start with 'identity'");
    cells.erase(cells.begin());
    if (cells.empty()) throw ManifestError("attributes file declares an empty vocabulary");
    return cells;
}

} // namespace tripro::data
