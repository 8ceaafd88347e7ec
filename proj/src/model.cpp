#include "tripro/model.hpp"

#include "tripro/errors.hpp"

#include <cmath>

namespace F = torch::nn::functional;

namespace tripro::model {

TriProModelImpl::TriProModelImpl(const ModelConfig& config, std::vector<int> train_identities,
                                 std::shared_ptr<const BpeTokenizer> tokenizer)
    : config_(config), tokenizer_(std::move(tokenizer)) {
    config_.encoder.vocab_size = tokenizer_->vocab_size();
    const auto& enc = config_.encoder;
    const auto& pr = config_.prompts;
    enc.validate();
    if (pr.use_cmp && !(enc.rgb_branch && enc.event_branch))
        throw ConfigError("cross-modal prompts (" + to_string(pr.direction) + ") need both the RGB and Event branch");
    if (pr.use_cmp && pr.cmp_depth > enc.depth)
        throw ConfigError("cmp_depth " + std::to_string(pr.cmp_depth) + " exceeds encoder depth " +
                          std::to_string(enc.depth));
    if (pr.use_pnap && (pr.pnap_layer < 0 || pr.pnap_layer >= enc.depth))
        throw ConfigError("pnap_layer outside encoder depth");

    if (enc.rgb_branch) rgb_encoder = register_module("rgb_encoder", VisualEncoder(enc));
    if (enc.event_branch) event_encoder = register_module("event_encoder", VisualEncoder(enc));
    feature_dim_ = enc.width * ((enc.rgb_branch ? 1 : 0) + (enc.event_branch ? 1 : 0));
    visual_projection = register_module(
        "visual_projection", torch::nn::Linear(torch::nn::LinearOptions(feature_dim_, enc.embed_dim).bias(false)));

    text_encoder = register_module("text_encoder", TextEncoder(enc));
    for (auto& p : text_encoder->parameters()) p.set_requires_grad(false);

    const auto identity_count = static_cast<int64_t>(train_identities.size());
    id_prompts =
        register_module("id_prompts", IdPromptBank(std::move(train_identities), pr.id_tokens, text_encoder, *tokenizer_));
    if (pr.use_pnap)
        pnap = register_module("pnap", PnapBundle(pr.pnap_mode, pr.n_ctx, enc.width, text_encoder, *tokenizer_));
    if (pr.use_cmp)
        cmp = register_module("cmp", CmpBank(pr.cmp_length, enc.width, pr.cmp_depth, pr.projector, pr.direction));
    neck = register_module(
        "neck", torch::nn::BatchNorm1d(torch::nn::BatchNorm1dOptions(feature_dim_).track_running_stats(false)));
    classifier = register_module(
        "classifier", torch::nn::Linear(torch::nn::LinearOptions(feature_dim_, identity_count).bias(false)));
    log_tau = register_parameter("log_tau", torch::full({1}, std::log(config_.loss.tau_init)));
}

torch::Tensor TriProModelImpl::frame_features(const torch::Tensor& rgb, const torch::Tensor& event,
                                              const torch::Tensor& pnap_tokens, bool cmp_on, DualTrace* trace) {
    const int depth = config_.encoder.depth;
    const int layer = config_.prompts.pnap_layer;
    if (cmp_on && !cmp) throw ConfigError("cross-modal prompts requested but not configured");

    if (rgb_encoder && event_encoder) {
        auto streams = inject_prompts(rgb_encoder->patchify(rgb), event_encoder->patchify(event), pnap_tokens, layer,
                                      cmp_on ? cmp.get() : nullptr, depth);
        auto [r, e] = encode_dual(*rgb_encoder, *event_encoder, std::move(streams), trace);
        return torch::cat({r, e}, 1);
    }
    auto& encoder = rgb_encoder ? rgb_encoder : event_encoder;
    auto seq = encoder->patchify(rgb_encoder ? rgb : event);
    HookSet hooks;
    if (pnap_tokens.defined()) {
        if (layer == 0)
            seq.append(pnap_tokens, SlotKind::Pnap);
        else
            hooks[layer] = [pnap_tokens](TokenSequence& s) { s.append(pnap_tokens, SlotKind::Pnap); };
    }
    return encoder->encode(std::move(seq), hooks);
}

torch::Tensor TriProModelImpl::fused_features(const FrameBatch& batch, const StageContext& context, DualTrace* trace) {
    const auto& enc = config_.encoder;
    const auto& ref = enc.rgb_branch ? batch.rgb : batch.event;
    if (!ref.defined() || ref.dim() != 5) throw InputError("frame batch must be [B, T, 3, H, W]");
    const auto b = ref.size(0), t = ref.size(1);
    if (t == 0) throw InputError("tracklet with zero frames");
    if (enc.rgb_branch && enc.event_branch && batch.rgb.sizes() != batch.event.sizes())
        throw InputError("RGB and Event frame batches differ in shape");
    auto flat = [&](const torch::Tensor& x) {
        return x.defined() ? x.reshape({b * t, x.size(2), x.size(3), x.size(4)}) : torch::Tensor();
    };

    torch::Tensor pnap_tokens;
    if (context.pnap) {
        if (!pnap) throw ConfigError("attribute prompts requested but not configured");
        if (batch.reports.size() != static_cast<std::size_t>(b)) throw InputError("one attribute report per tracklet");
        pnap_tokens = pnap->encode_batch(batch.reports).repeat_interleave(t, 0);
    }
    auto frames = frame_features(flat(batch.rgb), flat(batch.event), pnap_tokens, context.cmp, trace);
    return frames.view({b, t, feature_dim_}).mean(1);
}

torch::Tensor TriProModelImpl::embed_visual(const torch::Tensor& fused) {
    return F::normalize(visual_projection->forward(fused), F::NormalizeFuncOptions().dim(1));
}

torch::Tensor TriProModelImpl::identity_text(const std::vector<int>& identities) {
    auto features = text_encoder->encode_embedded(id_prompts->build_batch(identities));
    return F::normalize(text_encoder->project(features), F::NormalizeFuncOptions().dim(1));
}

torch::Tensor TriProModelImpl::logits(const torch::Tensor& fused) {
    if (fused.size(0) < 2) throw InputError("identity logits need a batch of at least two tracklets");
    return classifier->forward(neck->forward(fused));
}

void TriProModelImpl::init_classifier(const torch::Tensor& features, const std::vector<int>& labels) {
    const auto classes = classifier->weight.size(0);
    if (features.dim() != 2 || features.size(0) != static_cast<int64_t>(labels.size()) ||
        features.size(1) != classifier->weight.size(1))
        throw InputError("classifier init features do not match the classifier");
    torch::NoGradGuard guard;
    const auto f = features.to(classifier->weight.scalar_type());
    const auto z = neck->forward(f);
    auto means = torch::zeros_like(classifier->weight);
    std::vector<int> counts(static_cast<std::size_t>(classes), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 1 || labels[i] > classes) throw InputError("classifier init label out of range");
        means[labels[i] - 1] += z[static_cast<int64_t>(i)];
        ++counts[static_cast<std::size_t>(labels[i] - 1)];
    }
    for (int64_t c = 0; c < classes; ++c)
        if (counts[static_cast<std::size_t>(c)] == 0) throw InputError("classifier init misses a class");
    classifier->weight.copy_(F::normalize(means, F::NormalizeFuncOptions().dim(1)));
}

std::string TriProModelImpl::group_of(const std::string& name) {
    const auto head = name.substr(0, name.find('.'));
    if (head == "rgb_encoder" || head == "event_encoder" || head == "visual_projection") return "visual";
    if (head == "text_encoder") return "text";
    if (head == "log_tau") return "temperature";
    if (head == "neck") return "classifier";
    return head;
}

std::map<std::string, std::vector<torch::Tensor>> TriProModelImpl::parameter_groups() {
    std::map<std::string, std::vector<torch::Tensor>> groups;
    for (const auto& g : kParameterGroups) groups[g];
    for (const auto& item : named_parameters(true)) groups[group_of(item.key())].push_back(item.value());
    return groups;
}

} // namespace tripro::model
