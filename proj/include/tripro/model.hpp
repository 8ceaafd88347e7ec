#pragma once

#include "tripro/encoders.hpp"
#include "tripro/objectives.hpp"
#include "tripro/prompting.hpp"
#include "tripro/tokenizer.hpp"

#include <torch/torch.h>

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace tripro::model {

struct ModelConfig {
    EncoderConfig encoder;
    PromptConfig prompts;
    LossConfig loss;
};

/// Frames of B tracklets, T frames each, values in [0, 1].
struct FrameBatch {
    torch::Tensor rgb;   ///< [B, T, 3, H, W]
    torch::Tensor event; ///< [B, T, 3, H, W]
    std::vector<int> identities;
    std::vector<int> tracklet_ids;
    std::vector<AttributeReport> reports; ///< per tracklet; needed when PNAP is on
};

/// Which prompt families take part in a forward pass.
struct StageContext {
    bool cmp = false;
    bool pnap = false;
};

/// Parameter group names used by stage plans.
inline const std::vector<std::string> kParameterGroups = {"visual", "text",       "id_prompts", "pnap",
                                                          "cmp",    "classifier", "temperature"};

class TriProModelImpl : public torch::nn::Module {
public:
    TriProModelImpl(const ModelConfig& config, std::vector<int> train_identities,
                    std::shared_ptr<const BpeTokenizer> tokenizer);

    /// Per-frame fused features [N, F] for frames [N, 3, H, W] of each branch.
    /// `pnap` is [N, S, D] or undefined.
    torch::Tensor frame_features(const torch::Tensor& rgb, const torch::Tensor& event, const torch::Tensor& pnap,
                                 bool cmp_on, DualTrace* trace = nullptr);

    /// Concatenated branch CLS features mean-pooled over T: [B, F].
    torch::Tensor fused_features(const FrameBatch& batch, const StageContext& context, DualTrace* trace = nullptr);

    /// Fused feature projected into the shared image-text space and normalized.
    torch::Tensor embed_visual(const torch::Tensor& fused);
    /// normalize(J_t(T(ID prompt))) for each identity.
    torch::Tensor identity_text(const std::vector<int>& identities);

    /// Identity logits. The neck standardizes each feature over the batch, which
    /// must hold at least two tracklets.
    torch::Tensor logits(const torch::Tensor& fused);
    /// Rows = L2-normalized per-class means of the neck output over `features`
    /// [N, F]; `labels` are 1-based class numbers.
    void init_classifier(const torch::Tensor& features, const std::vector<int>& labels);
    torch::Tensor tau() { return log_tau.exp(); }

    /// 1-based class number of a train identity.
    int label_of(int identity) const { return id_prompts->row(identity) + 1; }

    std::map<std::string, std::vector<torch::Tensor>> parameter_groups();
    static std::string group_of(const std::string& parameter_name);

    int feature_dim() const { return feature_dim_; }
    const ModelConfig& config() const { return config_; }
    const BpeTokenizer& tokenizer() const { return *tokenizer_; }
    const std::vector<int>& train_identities() const { return id_prompts->identities(); }

    VisualEncoder rgb_encoder{nullptr}, event_encoder{nullptr};
    torch::nn::Linear visual_projection{nullptr};
    TextEncoder text_encoder{nullptr};
    IdPromptBank id_prompts{nullptr};
    PnapBundle pnap{nullptr};
    CmpBank cmp{nullptr};
    torch::nn::BatchNorm1d neck{nullptr}; ///< batch statistics only, no running state
    torch::nn::Linear classifier{nullptr};
    torch::Tensor log_tau;

private:
    ModelConfig config_;
    std::shared_ptr<const BpeTokenizer> tokenizer_;
    int feature_dim_ = 0;
};
TORCH_MODULE(TriProModel);

} // namespace tripro::model
