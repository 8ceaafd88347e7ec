#pragma once

#include <torch/torch.h>

#include <functional>
#include <map>
#include <utility>
#include <vector>

namespace tripro::model {

struct EncoderConfig {
    int image_height = 128;
    int image_width = 64;
    int patch_size = 16;
    int depth = 6;
    int width = 192;
    int heads = 3;
    /// LayerNorm after the positional embedding (CLIP's ln_pre). Needed for CLIP weights.
    bool pre_norm = false;
    bool rgb_branch = true;
    bool event_branch = true;

    int text_width = 128;
    int text_depth = 3;
    int text_heads = 2;
    int text_context_length = 77;
    int vocab_size = 0; ///< filled from the tokenizer

    int embed_dim = 128; ///< shared image-text space

    int num_patches() const { return (image_height / patch_size) * (image_width / patch_size); }
    void validate() const;
};

enum class SlotKind { Cls, Patch, Pnap, Cmp };

/// Token matrix for a batch of frames plus the role of every position.
struct TokenSequence {
    torch::Tensor tokens; ///< [N, L, D]
    std::vector<SlotKind> slots;

    int length() const { return static_cast<int>(slots.size()); }
    /// (first index, count) of a slot kind; slots of one kind are contiguous.
    std::pair<int, int> span(SlotKind kind) const;
    /// Appends [N, S, D] (or [S, D], broadcast over N) as slots of the given kind.
    void append(const torch::Tensor& extra, SlotKind kind);
    /// Overwrites the slots of a kind with [N, S, D] values.
    void replace(SlotKind kind, const torch::Tensor& values);
    torch::Tensor slice(SlotKind kind) const;
};

/// Pre-LN transformer block: x + attn(ln1(x)), then x + mlp(ln2(x)).
class ResidualBlockImpl : public torch::nn::Module {
public:
    ResidualBlockImpl(int width, int heads, bool causal);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::LayerNorm ln1{nullptr}, ln2{nullptr};
    torch::nn::Linear qkv{nullptr}, out{nullptr}, fc{nullptr}, proj{nullptr};

private:
    int heads_;
    bool causal_;
};
TORCH_MODULE(ResidualBlock);

/// Called with the current tokens immediately before the given block runs.
using LayerHook = std::function<void(TokenSequence&)>;
using HookSet = std::map<int, LayerHook>;

class VisualEncoderImpl : public torch::nn::Module {
public:
    explicit VisualEncoderImpl(const EncoderConfig& config);

    /// frames [N, 3, H, W] in [0, 1] -> [CLS, patches] + positional embedding.
    TokenSequence patchify(const torch::Tensor& frames);

    /// Runs one block in place.
    void run_block(int index, TokenSequence& seq);

    /// ln_post of the CLS slot, [N, D].
    torch::Tensor cls_output(const TokenSequence& seq);

    /// Full forward: hooks fire before their block; returns cls_output.
    torch::Tensor encode(TokenSequence seq, const HookSet& hooks = {});

    int depth() const { return config_.depth; }
    int width() const { return config_.width; }
    const EncoderConfig& config() const { return config_; }

    torch::nn::Linear patch_embed{nullptr};
    torch::Tensor class_embedding, positional_embedding;
    torch::nn::LayerNorm ln_pre{nullptr}, ln_post{nullptr};
    torch::nn::ModuleList blocks;

private:
    EncoderConfig config_;
};
TORCH_MODULE(VisualEncoder);

/// Causal text transformer; the feature of a sequence is ln_final at its last position.
class TextEncoderImpl : public torch::nn::Module {
public:
    explicit TextEncoderImpl(const EncoderConfig& config);

    /// Word embeddings [L, Dt] for token ids.
    torch::Tensor embed(const std::vector<int>& ids);

    /// Encodes embedded sequences of varying length; returns [N, Dt]. Sequences
    /// longer than the context length are rejected.
    torch::Tensor encode_embedded(const std::vector<torch::Tensor>& sequences);

    /// J_t: [N, Dt] -> [N, E].
    torch::Tensor project(const torch::Tensor& features) { return projection->forward(features); }

    int context_length() const { return config_.text_context_length; }
    int width() const { return config_.text_width; }

    torch::nn::Embedding token_embedding{nullptr};
    torch::Tensor positional_embedding;
    torch::nn::ModuleList blocks;
    torch::nn::LayerNorm ln_final{nullptr};
    torch::nn::Linear projection{nullptr};

private:
    EncoderConfig config_;
};
TORCH_MODULE(TextEncoder);

/// Copies tensors from a torch archive into a module. `name_map` maps archive
/// keys to parameter names; a key missing from the map is looked up verbatim.
/// Shapes must match except patch-embedding conv kernels [D,3,P,P], which are
/// flattened. Returns the number of tensors loaded.
int load_external_weights(torch::nn::Module& module, const std::string& archive_path,
                          const std::map<std::string, std::string>& name_map);

/// Key mapping for an OpenAI-CLIP visual tower exported with its state-dict names.
std::map<std::string, std::string> clip_visual_key_map(int depth);

} // namespace tripro::model
