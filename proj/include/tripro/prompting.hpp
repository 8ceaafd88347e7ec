#pragma once

#include "tripro/dataset.hpp"
#include "tripro/encoders.hpp"
#include "tripro/image.hpp"
#include "tripro/tokenizer.hpp"

#include <torch/torch.h>

#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tripro::model {

enum class Projector { Fc, Adapter, None };
enum class Direction { RgbToEvent, EventToRgb, Bidirectional };
enum class PnapMode { Full, PositiveOnly, NoContext };

std::string to_string(Projector p);
std::string to_string(Direction d);
std::string to_string(PnapMode m);
Projector projector_from_string(const std::string& s);
Direction direction_from_string(const std::string& s);
PnapMode pnap_mode_from_string(const std::string& s);

struct PromptConfig {
    int id_tokens = 4; ///< Num
    int n_ctx = 4;
    bool use_pnap = true;
    PnapMode pnap_mode = PnapMode::Full;
    int pnap_layer = 0; ///< block index before which PNAP slots are appended
    bool use_cmp = true;
    int cmp_length = 20;
    int cmp_depth = 6;
    Projector projector = Projector::Fc;
    Direction direction = Direction::RgbToEvent;
};

/// "a photo of a X1 .. XNum person" with per-identity learnable X tokens.
class IdPromptBankImpl : public torch::nn::Module {
public:
    IdPromptBankImpl(std::vector<int> identities, int num_tokens, TextEncoder text, const BpeTokenizer& tokenizer);

    /// Embedded prompt [L, Dt] for a train identity; LookupError otherwise.
    torch::Tensor build(int identity);
    std::vector<torch::Tensor> build_batch(const std::vector<int>& identities);

    int row(int identity) const;
    int fixed_length() const { return static_cast<int>(prefix_ids_.size() + suffix_ids_.size()); }
    const std::vector<int>& identities() const { return identities_; }

    torch::Tensor tokens; ///< [Y, Num, Dt]

private:
    std::vector<int> identities_;
    std::map<int, int> rows_;
    std::vector<int> prefix_ids_, suffix_ids_;
    TextEncoder text_;
};
TORCH_MODULE(IdPromptBank);

/// Present and absent attribute names, each in vocabulary order.
struct AttributeReport {
    std::vector<std::string> present;
    std::vector<std::string> absent;

    static AttributeReport from_flags(const std::vector<std::string>& vocabulary, const std::vector<int>& flags);
    /// Throws InputError unless present and absent partition the vocabulary.
    void validate(const std::vector<std::string>& vocabulary) const;

    friend bool operator==(const AttributeReport&, const AttributeReport&) = default;
};

/// (positive, negative) strings; an empty present set yields "person".
std::pair<std::string, std::string> build_pnap_strings(const AttributeReport& report);

/// Learnable context vectors per polarity and the FC mapping text width to D.
class PnapBundleImpl : public torch::nn::Module {
public:
    PnapBundleImpl(PnapMode mode, int n_ctx, int visual_width, TextEncoder text, const BpeTokenizer& tokenizer);

    /// [S, D] tokens for one report: S = 2, or 1 under positive_only.
    torch::Tensor encode(const AttributeReport& report);
    /// [B, S, D]; identical reports share one text-encoder pass.
    torch::Tensor encode_batch(const std::vector<AttributeReport>& reports);

    int slot_count() const { return mode_ == PnapMode::PositiveOnly ? 1 : 2; }
    PnapMode mode() const { return mode_; }

    torch::Tensor ctx_pos, ctx_neg; ///< [n_ctx, Dt]
    torch::nn::Linear fc{nullptr};

private:
    torch::Tensor embed_prompt(const std::string& text, const torch::Tensor& ctx);

    PnapMode mode_;
    TextEncoder text_;
    const BpeTokenizer* tokenizer_;
};
TORCH_MODULE(PnapBundle);

class ProjectorModuleImpl : public torch::nn::Module {
public:
    ProjectorModuleImpl(Projector kind, int width);
    torch::Tensor forward(const torch::Tensor& x);
    Projector kind() const { return kind_; }

    torch::nn::Linear fc{nullptr}, down{nullptr}, up{nullptr};

private:
    Projector kind_;
};
TORCH_MODULE(ProjectorModule);

/// Cross-modal prompt tokens. The learnable tokens live in the source branch
/// (RGB for rgb->event and bidirectional, Event for event->rgb); the other
/// branch starts from their projection.
class CmpBankImpl : public torch::nn::Module {
public:
    CmpBankImpl(int length, int width, int depth, Projector projector, Direction direction);

    int length() const { return length_; }
    int depth() const { return depth_; }
    Direction direction() const { return direction_; }

    torch::Tensor tokens;            ///< [length, D]
    ProjectorModule rgb_to_event{nullptr};
    ProjectorModule event_to_rgb{nullptr};

private:
    int length_, depth_;
    Direction direction_;
};
TORCH_MODULE(CmpBank);

/// Hook over both branches, fired before a block index.
using DualHook = std::function<void(TokenSequence& rgb, TokenSequence& event)>;
using DualHookSet = std::map<int, std::vector<DualHook>>;

struct InjectedStreams {
    TokenSequence rgb, event;
    DualHookSet hooks;
};

/// Appends PNAP slots (now or via a hook at pnap_layer) and CMP slots, and
/// registers the layer-wise CMP replacement hooks for blocks 1..cmp_depth-1.
/// `pnap` is [N, S, D] or undefined; `cmp` may be null.
InjectedStreams inject_prompts(TokenSequence rgb, TokenSequence event, const torch::Tensor& pnap, int pnap_layer,
                               CmpBankImpl* cmp, int encoder_depth);

/// Per-block inputs recorded during a dual forward (after hooks ran).
struct DualTrace {
    std::vector<TokenSequence> rgb_inputs, event_inputs;
};

/// Runs both encoders block by block. Returns per-frame (rgb CLS, event CLS).
std::pair<torch::Tensor, torch::Tensor> encode_dual(VisualEncoderImpl& rgb_encoder, VisualEncoderImpl& event_encoder,
                                                    InjectedStreams streams, DualTrace* trace = nullptr);

/// Attribute predictor plug-in: a tracklet's RGB frames -> report over the vocabulary.
class AttributePredictor {
public:
    virtual ~AttributePredictor() = default;
    virtual AttributeReport predict(int tracklet_id, std::span<const Image8> rgb_frames) = 0;
};

/// Reads the identity's attribute flags from the manifest.
class GroundTruthAttributes : public AttributePredictor {
public:
    explicit GroundTruthAttributes(const data::DatasetManifest& manifest) : manifest_(&manifest) {}
    AttributeReport predict(int tracklet_id, std::span<const Image8> rgb_frames) override;

private:
    const data::DatasetManifest* manifest_;
};

/// Returns the same report for every tracklet.
class ConstantAttributes : public AttributePredictor {
public:
    explicit ConstantAttributes(AttributeReport report) : report_(std::move(report)) {}
    AttributeReport predict(int, std::span<const Image8>) override { return report_; }

private:
    AttributeReport report_;
};

} // namespace tripro::model
