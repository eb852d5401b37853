#include "kgfuse/tokenizer.hpp"

#include <algorithm>
#include <cctype>

#include "kgfuse/common.hpp"

namespace kgfuse {

namespace {
const char* kSpecialNames[] = {"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"};

bool is_word_char(unsigned char c) { return std::isalnum(c) || c == '\'' || c >= 0x80; }
}  // namespace

std::vector<std::string> Tokenizer::split(const std::string& text,
                                          const std::string& mask_token) {
    std::vector<std::string> out;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        // Atomic special token, e.g. "[MASK]" must not split into punctuation.
        if (!mask_token.empty() && text.compare(i, mask_token.size(), mask_token) == 0) {
            out.push_back(mask_token);
            i += mask_token.size();
            continue;
        }
        if (is_word_char(c)) {
            size_t j = i;
            while (j < n && is_word_char(static_cast<unsigned char>(text[j]))) ++j;
            out.push_back(lowercase(text.substr(i, j - i)));
            i = j;
        } else {
            out.push_back(std::string(1, text[i]));
            ++i;
        }
    }
    return out;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& corpus, int max_vocab,
                           const std::string& mask_token) {
    if (max_vocab < 6) throw Error("tokenizer: max_vocab must be at least 6");
    std::map<std::string, long> freq;
    for (const auto& text : corpus)
        for (auto& w : split(text, mask_token))
            if (w != mask_token) ++freq[w];

    std::vector<std::pair<std::string, long>> items(freq.begin(), freq.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    std::vector<std::string> toks;
    for (const char* s : kSpecialNames) toks.push_back(s);
    if (mask_token != "[MASK]") toks[kMask] = mask_token;
    for (const auto& [w, f] : items) {
        if (static_cast<int>(toks.size()) >= max_vocab) break;
        toks.push_back(w);
    }
    return from_tokens(std::move(toks), mask_token);
}

Tokenizer Tokenizer::from_tokens(std::vector<std::string> id_to_token,
                                 const std::string& mask_token) {
    if (id_to_token.size() < 5) throw Error("tokenizer: vocabulary too small");
    Tokenizer t;
    t.id_to_token_ = std::move(id_to_token);
    t.mask_token_ = mask_token;
    for (size_t i = 0; i < t.id_to_token_.size(); ++i) {
        auto [it, inserted] = t.token_to_id_.emplace(t.id_to_token_[i], static_cast<int>(i));
        if (!inserted) throw Error("tokenizer: duplicate token '" + t.id_to_token_[i] + "'");
    }
    return t;
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> ids;
    for (auto& w : split(text, mask_token_)) {
        auto it = token_to_id_.find(w);
        ids.push_back(it == token_to_id_.end() ? kUnk : it->second);
    }
    return ids;
}

}  // namespace kgfuse
