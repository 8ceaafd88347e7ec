#include "tripro/encoders.hpp"

#include "tripro/errors.hpp"

#include <cmath>

namespace F = torch::nn::functional;

namespace tripro::model {

void EncoderConfig::validate() const {
    if (patch_size < 1 || image_height % patch_size != 0 || image_width % patch_size != 0)
        throw ConfigError("image size must be divisible by the patch size");
    if (depth < 1 || text_depth < 1) throw ConfigError("encoder depth must be >= 1");
    if (heads < 1 || width % heads != 0) throw ConfigError("visual width must be divisible by heads");
    if (text_heads < 1 || text_width % text_heads != 0) throw ConfigError("text width must be divisible by heads");
    if (text_context_length < 2) throw ConfigError("text context must hold start and end tokens");
    if (vocab_size < 2) throw ConfigError("vocabulary size not set");
    if (!rgb_branch && !event_branch) throw ConfigError("at least one visual branch is required");
    if (embed_dim < 1) throw ConfigError("embed_dim must be positive");
}

std::pair<int, int> TokenSequence::span(SlotKind kind) const {
    int first = -1, count = 0;
    for (int i = 0; i < length(); ++i)
        if (slots[static_cast<std::size_t>(i)] == kind) {
            if (first < 0) first = i;
            ++count;
        }
    return {first < 0 ? length() : first, count};
}

void TokenSequence::append(const torch::Tensor& extra, SlotKind kind) {
    auto block = extra;
    if (block.dim() == 2) block = block.unsqueeze(0).expand({tokens.size(0), block.size(0), block.size(1)});
    TORCH_CHECK(block.size(0) == tokens.size(0) && block.size(2) == tokens.size(2), "slot width/batch mismatch");
    tokens = torch::cat({tokens, block}, 1);
    slots.insert(slots.end(), static_cast<std::size_t>(block.size(1)), kind);
}

void TokenSequence::replace(SlotKind kind, const torch::Tensor& values) {
    const auto [first, count] = span(kind);
    TORCH_CHECK(values.size(1) == count, "replacement slot count mismatch");
    tokens = torch::cat({tokens.narrow(1, 0, first), values, tokens.narrow(1, first + count, length() - first - count)}, 1);
}

torch::Tensor TokenSequence::slice(SlotKind kind) const {
    const auto [first, count] = span(kind);
    return tokens.narrow(1, first, count);
}

ResidualBlockImpl::ResidualBlockImpl(int width, int heads, bool causal) : heads_(heads), causal_(causal) {
    ln1 = register_module("ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    ln2 = register_module("ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    qkv = register_module("qkv", torch::nn::Linear(width, 3 * width));
    out = register_module("out", torch::nn::Linear(width, width));
    fc = register_module("fc", torch::nn::Linear(width, 4 * width));
    proj = register_module("proj", torch::nn::Linear(4 * width, width));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
    const auto n = x.size(0), l = x.size(1), d = x.size(2);
    const auto hd = d / heads_;
    auto h = ln1->forward(x);
    auto q_k_v = qkv->forward(h).view({n, l, 3, heads_, hd}).permute({2, 0, 3, 1, 4});
    auto q = q_k_v[0], k = q_k_v[1], v = q_k_v[2];
    auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(hd));
    if (causal_) {
        auto mask = torch::ones({l, l}, torch::TensorOptions().dtype(torch::kBool).device(x.device())).triu(1);
        scores = scores.masked_fill(mask, -std::numeric_limits<float>::infinity());
    }
    auto attn = torch::matmul(scores.softmax(-1), v).permute({0, 2, 1, 3}).reshape({n, l, d});
    auto y = x + out->forward(attn);
    return y + proj->forward(F::gelu(fc->forward(ln2->forward(y))));
}

VisualEncoderImpl::VisualEncoderImpl(const EncoderConfig& config) : config_(config) {
    const int d = config.width;
    const int p = config.patch_size;
    patch_embed = register_module("patch_embed", torch::nn::Linear(3 * p * p, d));
    class_embedding = register_parameter("class_embedding", torch::randn({d}) * 0.02);
    positional_embedding =
        register_parameter("positional_embedding", torch::randn({1 + config.num_patches(), d}) * 0.02);
    ln_pre = register_module("ln_pre", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
    ln_post = register_module("ln_post", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
    blocks = register_module("blocks", torch::nn::ModuleList());
    for (int i = 0; i < config.depth; ++i) blocks->push_back(ResidualBlock(d, config.heads, false));
}

TokenSequence VisualEncoderImpl::patchify(const torch::Tensor& frames) {
    const int h = config_.image_height, w = config_.image_width, p = config_.patch_size;
    if (frames.dim() != 4 || frames.size(1) != 3 || frames.size(2) != h || frames.size(3) != w)
        throw InputError("patchify expects [N, 3, " + std::to_string(h) + ", " + std::to_string(w) + "] frames");
    const auto n = frames.size(0);
    // [N, 3, H/P, P, W/P, P] -> [N, H/P, W/P, 3, P, P]: raster order over patches.
    auto patches = frames.reshape({n, 3, h / p, p, w / p, p})
                       .permute({0, 2, 4, 1, 3, 5})
                       .reshape({n, config_.num_patches(), 3 * p * p});
    auto embedded = patch_embed->forward(patches);
    auto cls = class_embedding.view({1, 1, -1}).expand({n, 1, config_.width});
    auto tokens = torch::cat({cls, embedded}, 1) + positional_embedding.unsqueeze(0);
    if (config_.pre_norm) tokens = ln_pre->forward(tokens);

    TokenSequence seq;
    seq.tokens = tokens;
    seq.slots.push_back(SlotKind::Cls);
    seq.slots.insert(seq.slots.end(), static_cast<std::size_t>(config_.num_patches()), SlotKind::Patch);
    return seq;
}

void VisualEncoderImpl::run_block(int index, TokenSequence& seq) {
    seq.tokens = blocks[static_cast<std::size_t>(index)]->as<ResidualBlockImpl>()->forward(seq.tokens);
}

torch::Tensor VisualEncoderImpl::cls_output(const TokenSequence& seq) {
    return ln_post->forward(seq.tokens.select(1, 0));
}

torch::Tensor VisualEncoderImpl::encode(TokenSequence seq, const HookSet& hooks) {
    for (const auto& [layer, hook] : hooks)
        if (layer < 0 || layer >= config_.depth)
            throw ConfigError("hook at layer " + std::to_string(layer) + " outside encoder depth " +
                              std::to_string(config_.depth));
    for (int i = 0; i < config_.depth; ++i) {
        if (const auto it = hooks.find(i); it != hooks.end()) it->second(seq);
        run_block(i, seq);
    }
    return cls_output(seq);
}

TextEncoderImpl::TextEncoderImpl(const EncoderConfig& config) : config_(config) {
    const int d = config.text_width;
    token_embedding = register_module("token_embedding", torch::nn::Embedding(config.vocab_size, d));
    torch::nn::init::normal_(token_embedding->weight, 0.0, 0.02);
    positional_embedding =
        register_parameter("positional_embedding", torch::randn({config.text_context_length, d}) * 0.01);
    blocks = register_module("blocks", torch::nn::ModuleList());
    for (int i = 0; i < config.text_depth; ++i) blocks->push_back(ResidualBlock(d, config.text_heads, true));
    ln_final = register_module("ln_final", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
    projection = register_module("projection", torch::nn::Linear(torch::nn::LinearOptions(d, config.embed_dim).bias(false)));
}

torch::Tensor TextEncoderImpl::embed(const std::vector<int>& ids) {
    auto idx = torch::tensor(std::vector<int64_t>(ids.begin(), ids.end()), torch::kLong);
    return token_embedding->forward(idx);
}

torch::Tensor TextEncoderImpl::encode_embedded(const std::vector<torch::Tensor>& sequences) {
    if (sequences.empty()) throw InputError("encode_embedded: no sequences");
    int64_t max_len = 0;
    for (const auto& s : sequences) {
        if (s.dim() != 2 || s.size(1) != config_.text_width) throw InputError("text sequence width mismatch");
        if (s.size(0) < 1) throw InputError("empty text sequence");
        if (s.size(0) > config_.text_context_length)
            throw InputError("prompt of " + std::to_string(s.size(0)) + " tokens exceeds the text context of " +
                             std::to_string(config_.text_context_length));
        max_len = std::max(max_len, s.size(0));
    }
    std::vector<torch::Tensor> padded;
    std::vector<int64_t> last;
    for (const auto& s : sequences) {
        last.push_back(s.size(0) - 1);
        padded.push_back(s.size(0) == max_len
                             ? s
                             : torch::cat({s, torch::zeros({max_len - s.size(0), s.size(1)}, s.options())}, 0));
    }
    auto x = torch::stack(padded) + positional_embedding.narrow(0, 0, max_len).unsqueeze(0);
    for (const auto& block : *blocks) x = block->as<ResidualBlockImpl>()->forward(x);
    x = ln_final->forward(x);
    auto index = torch::tensor(last, torch::kLong);
    auto rows = torch::arange(static_cast<int64_t>(sequences.size()), torch::kLong);
    return x.index({rows, index});
}

int load_external_weights(torch::nn::Module& module, const std::string& archive_path,
                          const std::map<std::string, std::string>& name_map) {
    torch::serialize::InputArchive archive;
    archive.load_from(archive_path);
    auto params = module.named_parameters(true);
    int loaded = 0;
    torch::NoGradGuard guard;
    for (const auto& key : archive.keys()) {
        const auto mapped = name_map.contains(key) ? name_map.at(key) : key;
        auto* target = params.find(mapped);
        if (!target) continue;
        torch::Tensor value;
        archive.read(key, value);
        if (value.dim() == 4 && target->dim() == 2) value = value.reshape({value.size(0), -1});
        if (value.sizes() != target->sizes())
            throw FormatError("shape mismatch loading " + key + " into " + mapped);
        target->copy_(value);
        ++loaded;
    }
    return loaded;
}

std::map<std::string, std::string> clip_visual_key_map(int depth) {
    std::map<std::string, std::string> m{
        {"visual.conv1.weight", "patch_embed.weight"},
        {"visual.class_embedding", "class_embedding"},
        {"visual.positional_embedding", "positional_embedding"},
        {"visual.ln_pre.weight", "ln_pre.weight"},
        {"visual.ln_pre.bias", "ln_pre.bias"},
        {"visual.ln_post.weight", "ln_post.weight"},
        {"visual.ln_post.bias", "ln_post.bias"},
    };
    for (int i = 0; i < depth; ++i) {
        const auto src = "visual.transformer.resblocks." + std::to_string(i) + ".";
        const auto dst = "blocks." + std::to_string(i) + ".";
        m[src + "ln_1.weight"] = dst + "ln1.weight";
        m[src + "ln_1.bias"] = dst + "ln1.bias";
        m[src + "ln_2.weight"] = dst + "ln2.weight";
        m[src + "ln_2.bias"] = dst + "ln2.bias";
        m[src + "attn.in_proj_weight"] = dst + "qkv.weight";
        m[src + "attn.in_proj_bias"] = dst + "qkv.bias";
        m[src + "attn.out_proj.weight"] = dst + "out.weight";
        m[src + "attn.out_proj.bias"] = dst + "out.bias";
        m[src + "mlp.c_fc.weight"] = dst + "fc.weight";
        m[src + "mlp.c_fc.bias"] = dst + "fc.bias";
        m[src + "mlp.c_proj.weight"] = dst + "proj.weight";
        m[src + "mlp.c_proj.bias"] = dst + "proj.bias";
    }
    return m;
}

} // namespace tripro::model
