#include "tripro/training.hpp"

#include "tripro/config.hpp"
#include "tripro/errors.hpp"
#include "tripro/hash.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace tripro::train {

namespace {

bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

const std::vector<std::string> kLossNames = {"v2t", "t2v", "id", "triplet"};

torch::Tensor image_to_tensor(const Image8& image, int height, int width, double scale, bool clamp) {
    const auto resized = resize_image(image, height, width);
    if (resized.channels != 3) throw InputError("expected a 3-channel frame");
    auto t = torch::from_blob(const_cast<std::uint8_t*>(resized.data.data()), {height, width, 3}, torch::kUInt8)
                 .permute({2, 0, 1})
                 .to(torch::kFloat)
                 .div(scale);
    return clamp ? t.clamp_max(1.0) : t;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::pair<std::string, torch::Tensor>> named_tensors(model::TriProModelImpl& model) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& p : model.named_parameters(true)) out.emplace_back(p.key(), p.value());
    for (const auto& b : model.named_buffers(true)) out.emplace_back(b.key(), b.value());
    return out;
}

model::FrameBatch load_batch(TrackletLoader& loader, model::AttributePredictor* attributes, bool need_reports,
                             std::map<int, model::AttributeReport>& cache,
                             const std::vector<data::TrackletSample>& samples) {
    model::FrameBatch batch;
    std::vector<torch::Tensor> rgb, event;
    for (const auto& s : samples) {
        auto [r, e] = loader.load(s);
        rgb.push_back(r);
        event.push_back(e);
        batch.identities.push_back(s.identity);
        batch.tracklet_ids.push_back(s.tracklet_id);
        if (need_reports) {
            if (!attributes) throw ConfigError("attribute prompts need an attribute predictor");
            auto it = cache.find(s.tracklet_id);
            if (it == cache.end())
                it = cache.emplace(s.tracklet_id, attributes->predict(s.tracklet_id, loader.rgb_frames(s.tracklet_id)))
                         .first;
            it->second.validate(loader.manifest().attribute_vocabulary);
            batch.reports.push_back(it->second);
        }
    }
    batch.rgb = torch::stack(rgb);
    batch.event = torch::stack(event);
    return batch;
}

} // namespace

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adamw"; }

OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "adamw") return OptimizerKind::AdamW;
    throw ConfigError("unknown optimizer: " + s);
}

std::vector<std::string> StagePlan::frozen() const {
    std::vector<std::string> out;
    for (const auto& g : model::kParameterGroups)
        if (!contains(trainable, g)) out.push_back(g);
    return out;
}

void StagePlan::validate() const {
    if (stage < 1 || stage > 3) throw ConfigError("stage must be 1, 2 or 3");
    for (const auto& g : trainable) {
        if (!contains(model::kParameterGroups, g)) throw ConfigError("unknown parameter group: " + g);
        if (g == "text") throw ConfigError("the text encoder stays frozen in every stage");
    }
    for (const auto& l : losses)
        if (!contains(kLossNames, l)) throw ConfigError("unknown loss: " + l);
    if (losses.empty()) throw ConfigError("stage " + std::to_string(stage) + " has no losses");
    if (lr < 0.0 || weight_decay < 0.0 || momentum < 0.0) throw ConfigError("negative optimizer setting");
    if (tracklets_per_id < 1 || batch_size < tracklets_per_id || batch_size % tracklets_per_id != 0)
        throw ConfigError("batch_size must be a positive multiple of tracklets_per_id");
    if (epochs < 0 || warmup_epochs < 0) throw ConfigError("epochs must be >= 0");
    if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
}

std::vector<StagePlan> configure_defaults(bool desk_preset) {
    StagePlan s1;
    s1.stage = 1;
    s1.trainable = {"id_prompts"};
    s1.optimizer = OptimizerKind::Sgd;
    s1.lr = 3.5e-3;
    s1.batch_size = desk_preset ? 16 : 64;
    s1.epochs = 20;
    s1.losses = {"v2t", "t2v"};

    StagePlan s2 = s1;
    s2.stage = 2;
    s2.trainable = {"cmp"};
    s2.epochs = 10;

    StagePlan s3;
    s3.stage = 3;
    s3.trainable = {"visual", "pnap", "cmp", "classifier", "temperature"};
    s3.optimizer = OptimizerKind::AdamW;
    s3.lr = 5e-6;
    s3.batch_size = 8;
    s3.epochs = 40;
    s3.warmup_epochs = 5;
    s3.clip_norm = 5.0;
    s3.losses = {"id", "triplet", "v2t", "t2v"};
    return {s1, s2, s3};
}

Checksums group_checksums(model::TriProModelImpl& model) {
    Checksums out;
    for (const auto& [group, params] : model.parameter_groups()) {
        std::uint64_t h = kFnvOffset;
        for (const auto& p : params) {
            const auto c = p.detach().contiguous();
            h = fnv1a(c.data_ptr(), c.nbytes(), h);
        }
        out[group] = h;
    }
    return out;
}

// Frames ------------------------------------------------------------------------

TrackletLoader::TrackletLoader(fs::path root, const data::DatasetManifest& manifest, LoaderOptions options)
    : root_(std::move(root)), manifest_(&manifest), options_(std::move(options)) {}

const std::vector<Image8>& TrackletLoader::rgb_frames(int id) {
    auto it = rgb_.find(id);
    if (it != rgb_.end()) return it->second;
    const auto& t = manifest_->tracklet(id);
    const auto split = manifest_->split.at(id);
    const bool blur = options_.rgb_blur_sigma > 0.0 && options_.blur_splits.contains(split);
    std::vector<Image8> frames;
    for (int f = 0; f < t.num_frames; ++f) {
        auto img = read_png(data::frame_path(root_, t, "rgb_", f));
        frames.push_back(blur ? gaussian_blur(img, options_.rgb_blur_sigma) : std::move(img));
    }
    return rgb_.emplace(id, std::move(frames)).first->second;
}

const std::vector<Image8>& TrackletLoader::event_frames(int id) {
    auto it = event_.find(id);
    if (it != event_.end()) return it->second;
    const auto& t = manifest_->tracklet(id);
    std::vector<Image8> frames;
    for (int f = 0; f < t.num_frames; ++f) frames.push_back(read_png(data::frame_path(root_, t, "evt_", f)));
    return event_.emplace(id, std::move(frames)).first->second;
}

std::pair<torch::Tensor, torch::Tensor> TrackletLoader::load(const data::TrackletSample& sample) {
    const auto& rgb = rgb_frames(sample.tracklet_id);
    const auto& event = event_frames(sample.tracklet_id);
    std::vector<torch::Tensor> r, e;
    for (int f : sample.frame_indices) {
        const auto i = static_cast<std::size_t>(f);
        r.push_back(image_to_tensor(rgb.at(i), options_.height, options_.width, 255.0, false));
        e.push_back(image_to_tensor(event.at(i), options_.height, options_.width, options_.event_scale, true));
    }
    return {torch::stack(r), torch::stack(e)};
}

// Run state ---------------------------------------------------------------------

std::string run_state_to_json(const RunState& s) {
    json history = json::array();
    for (const auto& r : s.history)
        history.push_back({{"stage", r.stage},
                           {"epoch", r.epoch},
                           {"steps", r.steps},
                           {"lr", r.lr},
                           {"losses", r.losses},
                           {"metrics", r.metrics}});
    json j = {{"stage", s.stage},         {"epoch", s.epoch},     {"step", s.step}, {"seed", s.seed},
              {"rng_state", s.rng_state}, {"lineage", s.lineage}, {"history", history}};
    return j.dump(1);
}

RunState run_state_from_json(const std::string& text) {
    try {
        const auto j = json::parse(text);
        RunState s;
        s.stage = j.at("stage").get<int>();
        s.epoch = j.at("epoch").get<int>();
        s.step = j.at("step").get<std::int64_t>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.rng_state = j.at("rng_state").get<std::string>();
        s.lineage = j.at("lineage").get<std::vector<std::string>>();
        for (const auto& r : j.at("history")) {
            EpochRecord e;
            e.stage = r.at("stage").get<int>();
            e.epoch = r.at("epoch").get<int>();
            e.steps = r.at("steps").get<int>();
            e.lr = r.at("lr").get<double>();
            e.losses = r.at("losses").get<std::map<std::string, double>>();
            e.metrics = r.at("metrics").get<std::map<std::string, double>>();
            s.history.push_back(std::move(e));
        }
        return s;
    } catch (const json::exception& e) {
        throw FormatError(std::string("corrupt run state: ") + e.what());
    }
}

// Checkpoints -------------------------------------------------------------------

void save_model(const fs::path& dir, model::TriProModelImpl& model, const std::string& config_json) {
    fs::create_directories(dir);
    torch::serialize::OutputArchive archive;
    json tensors = json::array();
    for (const auto& [name, t] : named_tensors(model)) {
        archive.write(name, t.detach());
        tensors.push_back({{"name", name}, {"shape", t.sizes().vec()}});
    }
    archive.save_to((dir / "model.pt").string());
    json meta = {{"format_version", kCheckpointVersion},
                 {"encoder", config::to_json(model.config().encoder)},
                 {"prompts", config::to_json(model.config().prompts)},
                 {"train_identities", model.train_identities()},
                 {"tensors", tensors}};
    if (!config_json.empty()) meta["experiment"] = json::parse(config_json);
    write_text(dir / "model.json", meta.dump(1));
}

std::string read_model_meta(const fs::path& dir) { return read_text(dir / "model.json"); }

void load_model(const fs::path& dir, model::TriProModelImpl& model) {
    json meta;
    try {
        meta = json::parse(read_model_meta(dir));
    } catch (const json::exception& e) {
        throw FormatError("corrupt checkpoint metadata in " + dir.string() + ": " + e.what());
    }
    if (meta.value("format_version", 0) != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version in " + dir.string());
    if (meta.at("train_identities").get<std::vector<int>>() != model.train_identities())
        throw FormatError("checkpoint was trained on different identities");
    const auto expected = named_tensors(model);
    if (meta.at("tensors").size() != expected.size())
        throw FormatError("checkpoint holds " + std::to_string(meta.at("tensors").size()) + " tensors, model has " +
                          std::to_string(expected.size()));
    torch::serialize::InputArchive archive;
    try {
        archive.load_from((dir / "model.pt").string());
    } catch (const c10::Error& e) {
        throw FormatError("cannot read " + (dir / "model.pt").string());
    }
    torch::NoGradGuard guard;
    for (const auto& [name, target] : expected) {
        torch::Tensor value;
        if (!archive.try_read(name, value)) throw FormatError("checkpoint lacks tensor " + name);
        if (value.sizes() != target.sizes()) throw FormatError("shape mismatch for tensor " + name);
        target.copy_(value);
    }
}

// Trainer -----------------------------------------------------------------------

Trainer::Trainer(model::TriProModel model, TrackletLoader& loader, model::AttributePredictor* attributes,
                 TrainerOptions options)
    : model_(std::move(model)), loader_(&loader), attributes_(attributes), options_(std::move(options)) {
    if (options_.frames < 1) throw ConfigError("frames per tracklet must be >= 1");
}

model::StageContext Trainer::context_for(int stage) const {
    const auto& p = model_->config().prompts;
    if (stage == 1) return {};
    if (stage == 2) return {p.use_cmp, false};
    return {p.use_cmp, p.use_pnap};
}

model::FrameBatch Trainer::make_batch(const std::vector<data::TrackletSample>& samples) {
    return load_batch(*loader_, attributes_, static_cast<bool>(model_->pnap), report_cache_, samples);
}

std::map<std::string, torch::Tensor> Trainer::compute_losses(const StagePlan& plan, const model::FrameBatch& batch) {
    const auto context = context_for(plan.stage);
    const auto& lc = model_->config().loss;
    std::vector<int> labels;
    for (int id : batch.identities) labels.push_back(model_->label_of(id));

    auto fused = model_->fused_features(batch, context);
    std::map<std::string, torch::Tensor> out;
    const bool contrastive = contains(plan.losses, "v2t") || contains(plan.losses, "t2v");
    if (contrastive) {
        auto v = model_->embed_visual(fused);
        torch::Tensor t;
        if (text_cache_.defined()) {
            std::vector<int64_t> rows;
            for (int l : labels) rows.push_back(l - 1);
            t = text_cache_.index_select(0, torch::tensor(rows, torch::kLong));
        } else {
            t = model_->identity_text(batch.identities);
        }
        auto tau = model_->tau();
        if (contains(plan.losses, "v2t")) out["v2t"] = model::contrastive_v2t(v, t, tau) * lc.w_v2t;
        if (contains(plan.losses, "t2v")) out["t2v"] = model::contrastive_t2v(t, v, tau) * lc.w_t2v;
    }
    if (contains(plan.losses, "id")) out["id"] = model::id_loss(model_->logits(fused), labels, lc.label_smoothing) * lc.w_id;
    if (contains(plan.losses, "triplet")) out["triplet"] = model::triplet_loss(fused, labels, lc.margin) * lc.w_tri;
    return out;
}

void Trainer::prepare_stage(const StagePlan& plan, bool fresh) {
    for (auto& [group, params] : model_->parameter_groups()) {
        const bool on = contains(plan.trainable, group) && group != "text";
        for (auto& p : params) p.set_requires_grad(on);
    }
    text_cache_ = torch::Tensor();
    if (!contains(plan.trainable, "id_prompts")) {
        torch::NoGradGuard guard;
        text_cache_ = model_->identity_text(model_->train_identities());
    }
    if (plan.stage == 3 && fresh && contains(plan.trainable, "classifier")) {
        // Classifier rows start at the normalized mean (neck-standardized) feature of each identity.
        torch::NoGradGuard guard;
        const auto& m = loader_->manifest();
        const auto ids = m.tracklets_in(data::Split::Train);
        const auto feats = extract_features(*model_, *loader_, attributes_, ids, options_.frames, context_for(3));
        std::vector<torch::Tensor> rows;
        std::vector<int> labels;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            rows.push_back(torch::tensor(feats[i], torch::kDouble));
            labels.push_back(model_->label_of(m.tracklet(ids[i]).identity));
        }
        model_->init_classifier(torch::stack(rows), labels);
    }
}

std::unique_ptr<torch::optim::Optimizer> Trainer::make_optimizer(const StagePlan& plan) {
    std::vector<torch::Tensor> params;
    for (auto& [group, ps] : model_->parameter_groups())
        if (contains(plan.trainable, group))
            for (auto& p : ps) params.push_back(p);
    if (params.empty()) throw ConfigError("stage " + std::to_string(plan.stage) + " has nothing to train");
    if (plan.optimizer == OptimizerKind::Sgd)
        return std::make_unique<torch::optim::SGD>(
            params, torch::optim::SGDOptions(plan.lr).momentum(plan.momentum).weight_decay(plan.weight_decay));
    return std::make_unique<torch::optim::AdamW>(params,
                                                 torch::optim::AdamWOptions(plan.lr).weight_decay(plan.weight_decay));
}

void Trainer::save_checkpoint(const StagePlan& plan, RunState& state, torch::optim::Optimizer& optimizer) {
    if (options_.checkpoint_root.empty()) return;
    const auto dir = options_.checkpoint_root / ("stage" + std::to_string(plan.stage)) /
                     ("epoch" + std::to_string(state.epoch));
    save_model(dir, *model_, options_.config_json);
    torch::serialize::OutputArchive archive;
    optimizer.save(archive);
    archive.save_to((dir / "optimizer.pt").string());
    state.lineage.push_back(dir.string());
    write_text(dir / "state.json", run_state_to_json(state));

    if (options_.keep_checkpoints <= 0) return;
    const auto keep = static_cast<std::size_t>(options_.keep_checkpoints);
    for (std::size_t i = 0; i + keep < state.lineage.size(); ++i) {
        const fs::path old = state.lineage[i];
        // lineage inherited from another run directory is left alone
        if (old.parent_path().parent_path().lexically_normal() != options_.checkpoint_root.lexically_normal()) continue;
        if (!fs::exists(old)) continue;
        fs::remove_all(old);
        if (fs::is_empty(old.parent_path())) fs::remove(old.parent_path());
    }
}

void Trainer::run_stage(const StagePlan& plan, RunState& state, const fs::path& resume_dir) {
    plan.validate();
    const auto& prompts = model_->config().prompts;
    for (const auto& g : plan.trainable) {
        // a disabled module simply has nothing to train
        if ((g == "pnap" && !prompts.use_pnap) || (g == "cmp" && !prompts.use_cmp)) continue;
        if (model_->parameter_groups().at(g).empty())
            throw ConfigError("parameter group '" + g + "' is empty under this configuration");
    }
    const bool fresh = !(state.stage == plan.stage && state.epoch > 0);
    if (!fresh && resume_dir.empty()) throw ConfigError("resuming a stage needs its checkpoint directory");
    if (!fresh) load_model(resume_dir, *model_);
    prepare_stage(plan, fresh);
    auto optimizer = make_optimizer(plan);

    Rng rng(state.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(plan.stage));
    if (!fresh) {
        torch::serialize::InputArchive archive;
        archive.load_from((resume_dir / "optimizer.pt").string());
        optimizer->load(archive);
        rng.restore(state.rng_state);
    } else {
        state.stage = plan.stage;
        state.epoch = 0;
    }

    const auto& manifest = loader_->manifest();
    const auto train_count = manifest.tracklets_in(data::Split::Train).size();
    const int steps = std::max<int>(1, static_cast<int>((train_count + static_cast<std::size_t>(plan.batch_size) - 1) /
                                                        static_cast<std::size_t>(plan.batch_size)));
    const data::BatchSpec spec{plan.batch_size / plan.tracklets_per_id, plan.tracklets_per_id, options_.frames};
    const auto frozen = plan.frozen();

    for (int epoch = state.epoch + 1; epoch <= plan.epochs; ++epoch) {
        const double lr = plan.warmup_epochs > 0 && epoch <= plan.warmup_epochs
                              ? plan.lr * epoch / static_cast<double>(plan.warmup_epochs)
                              : plan.lr;
        for (auto& group : optimizer->param_groups()) group.options().set_lr(lr);
        const auto before = options_.verify_freeze ? group_checksums(*model_) : Checksums{};

        EpochRecord record;
        record.stage = plan.stage;
        record.epoch = epoch;
        record.steps = steps;
        record.lr = lr;
        for (int s = 0; s < steps; ++s) {
            const auto batch = make_batch(data::sample_batch(manifest, spec, rng));
            const auto terms = compute_losses(plan, batch);
            torch::Tensor total;
            for (const auto& [name, value] : terms) {
                total = total.defined() ? total + value : value;
                record.losses[name] += value.item<double>() / steps;
            }
            record.losses["total"] += total.item<double>() / steps;
            optimizer->zero_grad();
            if (total.requires_grad()) {
                total.backward();
                if (plan.clip_norm > 0.0) {
                    std::vector<torch::Tensor> params;
                    for (auto& group : optimizer->param_groups())
                        for (auto& p : group.params()) params.push_back(p);
                    torch::nn::utils::clip_grad_norm_(params, plan.clip_norm);
                }
                optimizer->step();
            }
            ++state.step;
        }

        if (options_.verify_freeze) {
            const auto after = group_checksums(*model_);
            for (const auto& g : frozen)
                if (before.at(g) != after.at(g))
                    throw FreezeViolation("frozen group '" + g + "' changed during stage " +
                                          std::to_string(plan.stage) + " epoch " + std::to_string(epoch));
        }
        if (plan.stage == 3 && options_.evaluate) {
            torch::NoGradGuard guard;
            record.metrics = options_.evaluate(*model_);
        }
        state.epoch = epoch;
        state.rng_state = rng.state();
        state.history.push_back(record);
        save_checkpoint(plan, state, *optimizer);
        if (options_.on_epoch) options_.on_epoch(record);
    }
}

void Trainer::run_all(const std::vector<StagePlan>& plans, RunState& state) {
    for (const auto& plan : plans) {
        if (plan.stage == 2 && !model_->config().prompts.use_cmp) continue;
        if (state.stage > plan.stage) continue;
        if (state.stage == plan.stage && state.epoch >= plan.epochs && state.epoch > 0) continue;
        fs::path resume;
        if (state.stage == plan.stage && state.epoch > 0 && !state.lineage.empty()) resume = state.lineage.back();
        run_stage(plan, state, resume);
    }
}

std::vector<std::vector<double>> extract_features(model::TriProModelImpl& model, TrackletLoader& loader,
                                                  model::AttributePredictor* attributes,
                                                  const std::vector<int>& tracklet_ids, int frames,
                                                  const model::StageContext& context) {
    torch::NoGradGuard guard;
    std::map<int, model::AttributeReport> cache;
    std::vector<std::vector<double>> out;
    constexpr std::size_t kChunk = 8;
    for (std::size_t i = 0; i < tracklet_ids.size(); i += kChunk) {
        std::vector<data::TrackletSample> samples;
        for (std::size_t j = i; j < std::min(tracklet_ids.size(), i + kChunk); ++j)
            samples.push_back(data::eval_sample(loader.manifest(), tracklet_ids[j], frames));
        const auto batch = load_batch(loader, attributes, context.pnap, cache, samples);
        const auto fused = model.fused_features(batch, context).to(torch::kDouble).contiguous();
        for (int64_t r = 0; r < fused.size(0); ++r) {
            const auto row = fused[r];
            out.emplace_back(row.data_ptr<double>(), row.data_ptr<double>() + row.numel());
        }
    }
    return out;
}

} // namespace tripro::train
