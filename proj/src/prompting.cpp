#include "tripro/prompting.hpp"

#include "tripro/errors.hpp"

#include <algorithm>
#include <set>

namespace tripro::model {

namespace {

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> table, const char* what) {
    for (const auto& [name, value] : table)
        if (s == name) return value;
    throw ConfigError(std::string("unknown ") + what + ": " + s);
}

std::string join(const std::vector<std::string>& parts, const std::string& prefix) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += ", ";
        out += prefix + parts[i];
    }
    return out;
}

} // namespace

std::string to_string(Projector p) {
    switch (p) {
    case Projector::Fc: return "fc";
    case Projector::Adapter: return "adapter";
    case Projector::None: return "none";
    }
    return "?";
}

std::string to_string(Direction d) {
    switch (d) {
    case Direction::RgbToEvent: return "rgb_to_event";
    case Direction::EventToRgb: return "event_to_rgb";
    case Direction::Bidirectional: return "bidirectional";
    }
    return "?";
}

std::string to_string(PnapMode m) {
    switch (m) {
    case PnapMode::Full: return "full";
    case PnapMode::PositiveOnly: return "positive_only";
    case PnapMode::NoContext: return "no_context";
    }
    return "?";
}

Projector projector_from_string(const std::string& s) {
    return parse_enum<Projector>(s, {{"fc", Projector::Fc}, {"adapter", Projector::Adapter}, {"none", Projector::None}},
                                 "projector");
}

Direction direction_from_string(const std::string& s) {
    return parse_enum<Direction>(s,
                                 {{"rgb_to_event", Direction::RgbToEvent},
                                  {"event_to_rgb", Direction::EventToRgb},
                                  {"bidirectional", Direction::Bidirectional}},
                                 "direction");
}

PnapMode pnap_mode_from_string(const std::string& s) {
    return parse_enum<PnapMode>(
        s, {{"full", PnapMode::Full}, {"positive_only", PnapMode::PositiveOnly}, {"no_context", PnapMode::NoContext}},
        "pnap_mode");
}

// ID prompts ---------------------------------------------------------------

IdPromptBankImpl::IdPromptBankImpl(std::vector<int> identities, int num_tokens, TextEncoder text,
                                   const BpeTokenizer& tokenizer)
    : identities_(std::move(identities)), text_(std::move(text)) {
    if (identities_.empty()) throw ConfigError("id prompt bank needs at least one identity");
    if (num_tokens < 1) throw ConfigError("id_tokens must be >= 1");
    for (std::size_t i = 0; i < identities_.size(); ++i) rows_[identities_[i]] = static_cast<int>(i);
    prefix_ids_.push_back(BpeTokenizer::kStartToken);
    for (int id : tokenizer.encode("a photo of a")) prefix_ids_.push_back(id);
    suffix_ids_ = tokenizer.encode("person");
    suffix_ids_.push_back(BpeTokenizer::kEndToken);
    tokens = register_parameter(
        "tokens", torch::randn({static_cast<int64_t>(identities_.size()), num_tokens, text_->width()}) * 0.02);
}

int IdPromptBankImpl::row(int identity) const {
    const auto it = rows_.find(identity);
    if (it == rows_.end()) throw LookupError("identity " + std::to_string(identity) + " has no ID prompt");
    return it->second;
}

torch::Tensor IdPromptBankImpl::build(int identity) {
    const int r = row(identity);
    return torch::cat({text_->embed(prefix_ids_), tokens[r], text_->embed(suffix_ids_)}, 0);
}

std::vector<torch::Tensor> IdPromptBankImpl::build_batch(const std::vector<int>& identities) {
    std::vector<torch::Tensor> out;
    out.reserve(identities.size());
    for (int id : identities) out.push_back(build(id));
    return out;
}

// PNAP ---------------------------------------------------------------------

AttributeReport AttributeReport::from_flags(const std::vector<std::string>& vocabulary, const std::vector<int>& flags) {
    if (flags.size() != vocabulary.size()) throw InputError("attribute flags do not match the vocabulary");
    AttributeReport r;
    for (std::size_t i = 0; i < vocabulary.size(); ++i) (flags[i] ? r.present : r.absent).push_back(vocabulary[i]);
    return r;
}

void AttributeReport::validate(const std::vector<std::string>& vocabulary) const {
    std::set<std::string> p(present.begin(), present.end());
    std::set<std::string> a(absent.begin(), absent.end());
    if (p.size() != present.size() || a.size() != absent.size()) throw InputError("attribute report has duplicates");
    for (const auto& name : p)
        if (a.contains(name)) throw InputError("attribute '" + name + "' is both present and absent");
    std::set<std::string> all(p);
    all.insert(a.begin(), a.end());
    if (all != std::set<std::string>(vocabulary.begin(), vocabulary.end()))
        throw InputError("attribute report does not cover the vocabulary");
}

std::pair<std::string, std::string> build_pnap_strings(const AttributeReport& report) {
    return {report.present.empty() ? std::string("person") : join(report.present, ""), join(report.absent, "Not ")};
}

PnapBundleImpl::PnapBundleImpl(PnapMode mode, int n_ctx, int visual_width, TextEncoder text,
                               const BpeTokenizer& tokenizer)
    : mode_(mode), text_(std::move(text)), tokenizer_(&tokenizer) {
    if (n_ctx < 0) throw ConfigError("n_ctx must be >= 0");
    const int ctx = mode == PnapMode::NoContext ? 0 : n_ctx;
    ctx_pos = register_parameter("ctx_pos", torch::randn({ctx, text_->width()}) * 0.02);
    ctx_neg = register_parameter("ctx_neg", torch::randn({ctx, text_->width()}) * 0.02);
    fc = register_module("fc", torch::nn::Linear(text_->width(), visual_width));
}

torch::Tensor PnapBundleImpl::embed_prompt(const std::string& text, const torch::Tensor& ctx) {
    std::vector<int> words = tokenizer_->encode(text);
    auto start = text_->embed({BpeTokenizer::kStartToken});
    words.push_back(BpeTokenizer::kEndToken);
    return torch::cat({start, ctx, text_->embed(words)}, 0);
}

torch::Tensor PnapBundleImpl::encode(const AttributeReport& report) { return encode_batch({report})[0]; }

torch::Tensor PnapBundleImpl::encode_batch(const std::vector<AttributeReport>& reports) {
    if (reports.empty()) throw InputError("encode_batch: no reports");
    std::map<std::string, int> unique;
    std::vector<torch::Tensor> sequences;
    std::vector<std::vector<int>> rows(reports.size());
    auto intern = [&](const std::string& text, const torch::Tensor& ctx, char polarity) {
        const auto key = std::string(1, polarity) + text;
        auto [it, inserted] = unique.emplace(key, static_cast<int>(sequences.size()));
        if (inserted) sequences.push_back(embed_prompt(text, ctx));
        return it->second;
    };
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto [pos, neg] = build_pnap_strings(reports[i]);
        rows[i].push_back(intern(pos, ctx_pos, '+'));
        if (mode_ != PnapMode::PositiveOnly) rows[i].push_back(intern(neg, ctx_neg, '-'));
    }
    auto projected = fc->forward(text_->encode_embedded(sequences));
    std::vector<int64_t> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return projected.index_select(0, torch::tensor(flat, torch::kLong))
        .view({static_cast<int64_t>(reports.size()), slot_count(), projected.size(1)});
}

// CMP ----------------------------------------------------------------------

ProjectorModuleImpl::ProjectorModuleImpl(Projector kind, int width) : kind_(kind) {
    if (kind == Projector::Fc) {
        fc = register_module("fc", torch::nn::Linear(width, width));
    } else if (kind == Projector::Adapter) {
        const int bottleneck = std::max(1, width / 4);
        down = register_module("down", torch::nn::Linear(width, bottleneck));
        up = register_module("up", torch::nn::Linear(bottleneck, width));
    }
}

torch::Tensor ProjectorModuleImpl::forward(const torch::Tensor& x) {
    switch (kind_) {
    case Projector::Fc: return fc->forward(x);
    case Projector::Adapter: return x + up->forward(torch::gelu(down->forward(x)));
    case Projector::None: return x;
    }
    return x;
}

CmpBankImpl::CmpBankImpl(int length, int width, int depth, Projector projector, Direction direction)
    : length_(length), depth_(depth), direction_(direction) {
    if (length < 1) throw ConfigError("cmp_length must be >= 1");
    if (depth < 0) throw ConfigError("cmp_depth must be >= 0");
    tokens = register_parameter("tokens", torch::randn({length, width}) * 0.02);
    if (direction != Direction::EventToRgb)
        rgb_to_event = register_module("rgb_to_event", ProjectorModule(projector, width));
    if (direction != Direction::RgbToEvent)
        event_to_rgb = register_module("event_to_rgb", ProjectorModule(projector, width));
}

InjectedStreams inject_prompts(TokenSequence rgb, TokenSequence event, const torch::Tensor& pnap, int pnap_layer,
                               CmpBankImpl* cmp, int encoder_depth) {
    InjectedStreams s{std::move(rgb), std::move(event), {}};
    if (s.rgb.tokens.size(2) != s.event.tokens.size(2)) throw ConfigError("branch widths differ");

    if (pnap.defined()) {
        if (pnap.size(2) != s.rgb.tokens.size(2)) throw ConfigError("PNAP width does not match the encoder width");
        if (pnap_layer < 0 || pnap_layer >= encoder_depth)
            throw ConfigError("pnap_layer " + std::to_string(pnap_layer) + " outside encoder depth");
        if (pnap_layer == 0) {
            s.rgb.append(pnap, SlotKind::Pnap);
            s.event.append(pnap, SlotKind::Pnap);
        } else {
            s.hooks[pnap_layer].push_back([pnap](TokenSequence& r, TokenSequence& e) {
                r.append(pnap, SlotKind::Pnap);
                e.append(pnap, SlotKind::Pnap);
            });
        }
    }

    if (cmp) {
        if (cmp->depth() > encoder_depth)
            throw ConfigError("cmp_depth " + std::to_string(cmp->depth()) + " exceeds encoder depth " +
                              std::to_string(encoder_depth));
        const auto dir = cmp->direction();
        const auto n = s.rgb.tokens.size(0);
        auto source = cmp->tokens.unsqueeze(0).expand({n, cmp->length(), cmp->tokens.size(1)});
        if (dir == Direction::EventToRgb) {
            s.event.append(source, SlotKind::Cmp);
            s.rgb.append(cmp->event_to_rgb->forward(source), SlotKind::Cmp);
        } else {
            s.rgb.append(source, SlotKind::Cmp);
            s.event.append(cmp->rgb_to_event->forward(source), SlotKind::Cmp);
        }
        for (int b = 1; b < cmp->depth(); ++b) {
            s.hooks[b].push_back([cmp, dir](TokenSequence& r, TokenSequence& e) {
                const auto r_state = r.slice(SlotKind::Cmp);
                const auto e_state = e.slice(SlotKind::Cmp);
                if (dir != Direction::EventToRgb) e.replace(SlotKind::Cmp, cmp->rgb_to_event->forward(r_state));
                if (dir != Direction::RgbToEvent) r.replace(SlotKind::Cmp, cmp->event_to_rgb->forward(e_state));
            });
        }
    }
    return s;
}

std::pair<torch::Tensor, torch::Tensor> encode_dual(VisualEncoderImpl& rgb_encoder, VisualEncoderImpl& event_encoder,
                                                    InjectedStreams streams, DualTrace* trace) {
    const int depth = rgb_encoder.depth();
    if (event_encoder.depth() != depth) throw ConfigError("branch depths differ");
    for (const auto& [layer, hooks] : streams.hooks)
        if (layer < 0 || layer >= depth)
            throw ConfigError("hook at layer " + std::to_string(layer) + " outside encoder depth " +
                              std::to_string(depth));
    auto& r = streams.rgb;
    auto& e = streams.event;
    for (int b = 0; b < depth; ++b) {
        if (const auto it = streams.hooks.find(b); it != streams.hooks.end())
            for (const auto& hook : it->second) hook(r, e);
        if (trace) {
            trace->rgb_inputs.push_back(r);
            trace->event_inputs.push_back(e);
        }
        rgb_encoder.run_block(b, r);
        event_encoder.run_block(b, e);
    }
    return {rgb_encoder.cls_output(r), event_encoder.cls_output(e)};
}

AttributeReport GroundTruthAttributes::predict(int tracklet_id, std::span<const Image8>) {
    const auto& t = manifest_->tracklet(tracklet_id);
    const auto it = manifest_->attributes.find(t.identity);
    if (it == manifest_->attributes.end())
        throw LookupError("no attributes for identity " + std::to_string(t.identity));
    return AttributeReport::from_flags(manifest_->attribute_vocabulary, it->second);
}

} // namespace tripro::model
