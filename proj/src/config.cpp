#include "tripro/config.hpp"

#include "tripro/errors.hpp"
#include "tripro/hash.hpp"

#include <cstdio>
#include <fstream>
#include <set>

using nlohmann::json;

namespace tripro {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace tripro

namespace tripro::config {

namespace {

void check_keys(const json& j, std::initializer_list<const char*> known, const char* where) {
    if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
    std::set<std::string> allowed(known.begin(), known.end());
    for (const auto& item : j.items())
        if (!allowed.contains(item.key())) throw ConfigError(std::string("unknown key '") + item.key() + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

} // namespace

ExperimentConfig default_config() { return ExperimentConfig{}; }

json to_json(const model::EncoderConfig& c) {
    return {{"image_height", c.image_height}, {"image_width", c.image_width},
            {"patch_size", c.patch_size},     {"depth", c.depth},
            {"width", c.width},               {"heads", c.heads},
            {"pre_norm", c.pre_norm},         {"rgb_branch", c.rgb_branch},
            {"event_branch", c.event_branch}, {"text_width", c.text_width},
            {"text_depth", c.text_depth},     {"text_heads", c.text_heads},
            {"text_context_length", c.text_context_length}, {"embed_dim", c.embed_dim}};
}

json to_json(const model::PromptConfig& c) {
    return {{"id_tokens", c.id_tokens},
            {"n_ctx", c.n_ctx},
            {"use_pnap", c.use_pnap},
            {"pnap_mode", model::to_string(c.pnap_mode)},
            {"pnap_layer", c.pnap_layer},
            {"use_cmp", c.use_cmp},
            {"cmp_length", c.cmp_length},
            {"cmp_depth", c.cmp_depth},
            {"projector", model::to_string(c.projector)},
            {"direction", model::to_string(c.direction)}};
}

json to_json(const model::LossConfig& c) {
    return {{"tau_init", c.tau_init}, {"margin", c.margin}, {"label_smoothing", c.label_smoothing},
            {"w_v2t", c.w_v2t},       {"w_t2v", c.w_t2v},   {"w_id", c.w_id},
            {"w_tri", c.w_tri}};
}

json to_json(const train::StagePlan& p) {
    return {{"stage", p.stage},
            {"trainable", p.trainable},
            {"optimizer", train::to_string(p.optimizer)},
            {"lr", p.lr},
            {"momentum", p.momentum},
            {"weight_decay", p.weight_decay},
            {"batch_size", p.batch_size},
            {"tracklets_per_id", p.tracklets_per_id},
            {"epochs", p.epochs},
            {"warmup_epochs", p.warmup_epochs},
            {"clip_norm", p.clip_norm},
            {"losses", p.losses}};
}

json to_json(const ExperimentConfig& c) {
    json stages = json::array();
    for (const auto& s : c.stages) stages.push_back(to_json(s));
    return {{"name", c.name},
            {"dataset_root", c.dataset_root},
            {"output_dir", c.output_dir},
            {"seed", c.seed},
            {"split_seed", c.split_seed},
            {"eval_split", c.eval_split},
            {"frames", c.frames},
            {"event_scale", c.event_scale},
            {"test_rgb_blur_sigma", c.test_rgb_blur_sigma},
            {"attributes", c.attributes},
            {"eval_each_epoch", c.eval_each_epoch},
            {"checkpoint_keep", c.checkpoint_keep},
            {"encoder", to_json(c.model.encoder)},
            {"prompts", to_json(c.model.prompts)},
            {"loss", to_json(c.model.loss)},
            {"stages", stages}};
}

model::EncoderConfig encoder_from_json(const json& j) {
    check_keys(j,
               {"image_height", "image_width", "patch_size", "depth", "width", "heads", "pre_norm", "rgb_branch",
                "event_branch", "text_width", "text_depth", "text_heads", "text_context_length", "embed_dim"},
               "encoder");
    model::EncoderConfig c;
    read(j, "image_height", c.image_height);
    read(j, "image_width", c.image_width);
    read(j, "patch_size", c.patch_size);
    read(j, "depth", c.depth);
    read(j, "width", c.width);
    read(j, "heads", c.heads);
    read(j, "pre_norm", c.pre_norm);
    read(j, "rgb_branch", c.rgb_branch);
    read(j, "event_branch", c.event_branch);
    read(j, "text_width", c.text_width);
    read(j, "text_depth", c.text_depth);
    read(j, "text_heads", c.text_heads);
    read(j, "text_context_length", c.text_context_length);
    read(j, "embed_dim", c.embed_dim);
    return c;
}

model::PromptConfig prompts_from_json(const json& j) {
    check_keys(j,
               {"id_tokens", "n_ctx", "use_pnap", "pnap_mode", "pnap_layer", "use_cmp", "cmp_length", "cmp_depth",
                "projector", "direction"},
               "prompts");
    model::PromptConfig c;
    read(j, "id_tokens", c.id_tokens);
    read(j, "n_ctx", c.n_ctx);
    read(j, "use_pnap", c.use_pnap);
    read(j, "pnap_layer", c.pnap_layer);
    read(j, "use_cmp", c.use_cmp);
    read(j, "cmp_length", c.cmp_length);
    read(j, "cmp_depth", c.cmp_depth);
    if (j.contains("pnap_mode")) c.pnap_mode = model::pnap_mode_from_string(j.at("pnap_mode").get<std::string>());
    if (j.contains("projector")) c.projector = model::projector_from_string(j.at("projector").get<std::string>());
    if (j.contains("direction")) c.direction = model::direction_from_string(j.at("direction").get<std::string>());
    return c;
}

model::LossConfig loss_from_json(const json& j) {
    check_keys(j, {"tau_init", "margin", "label_smoothing", "w_v2t", "w_t2v", "w_id", "w_tri"}, "loss");
    model::LossConfig c;
    read(j, "tau_init", c.tau_init);
    read(j, "margin", c.margin);
    read(j, "label_smoothing", c.label_smoothing);
    read(j, "w_v2t", c.w_v2t);
    read(j, "w_t2v", c.w_t2v);
    read(j, "w_id", c.w_id);
    read(j, "w_tri", c.w_tri);
    if (c.tau_init <= 0.0) throw ConfigError("tau_init must be positive");
    return c;
}

train::StagePlan stage_from_json(const json& j) {
    check_keys(j,
               {"stage", "trainable", "optimizer", "lr", "momentum", "weight_decay", "batch_size",
                "tracklets_per_id", "epochs", "warmup_epochs", "clip_norm", "losses"},
               "stage plan");
    int stage = 0;
    read(j, "stage", stage);
    if (stage < 1 || stage > 3) throw ConfigError("stage plan needs \"stage\" in 1..3");
    auto p = train::configure_defaults(true)[static_cast<std::size_t>(stage - 1)];
    read(j, "trainable", p.trainable);
    if (j.contains("optimizer")) p.optimizer = train::optimizer_from_string(j.at("optimizer").get<std::string>());
    read(j, "lr", p.lr);
    read(j, "momentum", p.momentum);
    read(j, "weight_decay", p.weight_decay);
    read(j, "batch_size", p.batch_size);
    read(j, "tracklets_per_id", p.tracklets_per_id);
    read(j, "epochs", p.epochs);
    read(j, "warmup_epochs", p.warmup_epochs);
    read(j, "clip_norm", p.clip_norm);
    read(j, "losses", p.losses);
    p.validate();
    return p;
}

ExperimentConfig from_json(const json& j) {
    check_keys(j,
               {"name", "dataset_root", "output_dir", "seed", "split_seed", "eval_split", "frames", "event_scale",
                "test_rgb_blur_sigma", "attributes", "eval_each_epoch", "checkpoint_keep", "encoder", "prompts", "loss", "stages"},
               "experiment config");
    ExperimentConfig c;
    read(j, "name", c.name);
    read(j, "dataset_root", c.dataset_root);
    read(j, "output_dir", c.output_dir);
    read(j, "seed", c.seed);
    read(j, "split_seed", c.split_seed);
    read(j, "eval_split", c.eval_split);
    read(j, "frames", c.frames);
    read(j, "event_scale", c.event_scale);
    read(j, "test_rgb_blur_sigma", c.test_rgb_blur_sigma);
    read(j, "attributes", c.attributes);
    read(j, "eval_each_epoch", c.eval_each_epoch);
    read(j, "checkpoint_keep", c.checkpoint_keep);
    if (j.contains("encoder")) c.model.encoder = encoder_from_json(j.at("encoder"));
    if (j.contains("prompts")) c.model.prompts = prompts_from_json(j.at("prompts"));
    if (j.contains("loss")) c.model.loss = loss_from_json(j.at("loss"));
    if (j.contains("stages")) {
        c.stages.clear();
        for (const auto& s : j.at("stages")) c.stages.push_back(stage_from_json(s));
    }
    if (c.eval_split != "test" && c.eval_split != "held_in") throw ConfigError("eval_split must be test or held_in");
    if (c.attributes != "ground_truth" && c.attributes != "constant")
        throw ConfigError("attributes must be ground_truth or constant");
    if (c.frames < 1) throw ConfigError("frames must be >= 1");
    if (c.event_scale <= 0.0) throw ConfigError("event_scale must be positive");
    if (c.checkpoint_keep < 0) throw ConfigError("checkpoint_keep must be >= 0");
    return c;
}

std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a(to_json(c).dump())); }

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config: " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& c) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write config: " + path.string());
    out << to_json(c).dump(2) << '\n';
}

void set_by_path(ExperimentConfig& c, const std::string& path, const json& value) {
    json j = to_json(c);
    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const auto key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (node->is_array()) {
            std::size_t idx = 0;
            try {
                idx = std::stoul(key);
            } catch (const std::exception&) {
                throw ConfigError("config path " + path + ": '" + key + "' is not an index");
            }
            if (idx >= node->size()) throw ConfigError("config path " + path + ": index out of range");
            node = &(*node)[idx];
        } else {
            if (!node->is_object() || !node->contains(key)) throw ConfigError("unknown config key: " + path);
            node = &(*node)[key];
        }
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = value;
    c = from_json(j);
}

} // namespace tripro::config
