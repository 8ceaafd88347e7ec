#include "tripro/tokenizer.hpp"

#include "tripro/errors.hpp"

#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>

namespace tripro {

BpeTokenizer BpeTokenizer::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open BPE merge table: " + path.string());
    std::vector<std::pair<std::string, std::string>> merges;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string a, b;
        if (!(ls >> a >> b)) throw FormatError("bad merge line: " + line);
        merges.emplace_back(a, b);
    }
    return BpeTokenizer(std::move(merges));
}

BpeTokenizer::BpeTokenizer(std::vector<std::pair<std::string, std::string>> merges) {
    add_token("<|startoftext|>");
    add_token("<|endoftext|>");
    for (int c = 33; c < 127; ++c) {
        const std::string s(1, static_cast<char>(c));
        add_token(s);
        add_token(s + "</w>");
    }
    int rank = 0;
    for (auto& [a, b] : merges) {
        add_token(a + b);
        ranks_.emplace(std::make_pair(std::move(a), std::move(b)), rank++);
    }
}

int BpeTokenizer::add_token(const std::string& token) {
    const auto [it, inserted] = token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
    if (inserted) id_to_token_.push_back(token);
    return it->second;
}

std::vector<std::string> BpeTokenizer::bpe(const std::string& word) const {
    std::vector<std::string> symbols;
    for (std::size_t i = 0; i < word.size(); ++i)
        symbols.push_back(i + 1 == word.size() ? word.substr(i, 1) + "</w>" : word.substr(i, 1));
    while (symbols.size() > 1) {
        int best = std::numeric_limits<int>::max();
        std::size_t at = 0;
        for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
            const auto it = ranks_.find({symbols[i], symbols[i + 1]});
            if (it != ranks_.end() && it->second < best) {
                best = it->second;
                at = i;
            }
        }
        if (best == std::numeric_limits<int>::max()) break;
        const std::string left = symbols[at], right = symbols[at + 1];
        std::vector<std::string> merged;
        for (std::size_t i = 0; i < symbols.size();) {
            if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
                merged.push_back(left + right);
                i += 2;
            } else {
                merged.push_back(symbols[i++]);
            }
        }
        symbols = std::move(merged);
    }
    return symbols;
}

std::vector<int> BpeTokenizer::encode(const std::string& text) const {
    std::vector<std::string> words;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) words.push_back(std::move(current));
        current.clear();
    };
    for (char raw : text) {
        const auto c = static_cast<unsigned char>(raw);
        if (c > 126 || (c < 32 && !std::isspace(c)))
            throw InputError("unsupported character in prompt text");
        if (std::isspace(c)) {
            flush();
        } else if (std::isalpha(c)) {
            if (!current.empty() && !std::isalpha(static_cast<unsigned char>(current.back()))) flush();
            current.push_back(static_cast<char>(std::tolower(c)));
        } else {
            // Digits and punctuation are single-character words.
            flush();
            current.push_back(static_cast<char>(c));
            flush();
        }
    }
    flush();

    std::vector<int> ids;
    for (const auto& w : words)
        for (const auto& piece : bpe(w)) ids.push_back(token_to_id_.at(piece));
    return ids;
}

} // namespace tripro
