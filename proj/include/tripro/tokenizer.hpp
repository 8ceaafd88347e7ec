#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace tripro {

/// Byte-pair tokenizer over printable ASCII with a CLIP-style end-of-word marker.
/// Ids 0 and 1 are the start and end tokens.
class BpeTokenizer {
public:
    static constexpr int kStartToken = 0;
    static constexpr int kEndToken = 1;

    /// Reads a merge table ("left right" per line, '#' comments).
    static BpeTokenizer from_file(const std::filesystem::path& merges_path);
    explicit BpeTokenizer(std::vector<std::pair<std::string, std::string>> merges);

    /// Word-piece ids without start/end tokens. Lowercases; throws InputError on
    /// characters outside printable ASCII.
    std::vector<int> encode(const std::string& text) const;

    int vocab_size() const { return static_cast<int>(id_to_token_.size()); }
    const std::string& token(int id) const { return id_to_token_.at(static_cast<std::size_t>(id)); }

private:
    std::vector<std::string> bpe(const std::string& word) const;
    int add_token(const std::string& token);

    std::map<std::pair<std::string, std::string>, int> ranks_;
    std::map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
};

} // namespace tripro
