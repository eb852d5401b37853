#pragma once

#include <map>
#include <string>
#include <vector>

namespace kgfuse {

// Word-level tokenizer: lowercase, split on whitespace, punctuation characters
// become their own tokens. Special tokens are atomic (a whitespace-delimited
// piece equal to a special token string is never split further). Desk-scale
// KGs have tiny vocabularies, so there is no subword machinery.
class Tokenizer {
  public:
    static constexpr int kPad = 0;
    static constexpr int kCls = 1;
    static constexpr int kSep = 2;
    static constexpr int kMask = 3;
    static constexpr int kUnk = 4;

    // Builds a vocabulary from the corpus: specials first, then words ordered
    // by descending frequency (ties alphabetically), truncated to max_vocab.
    static Tokenizer build(const std::vector<std::string>& corpus, int max_vocab,
                           const std::string& mask_token = "[MASK]");

    static Tokenizer from_tokens(std::vector<std::string> id_to_token,
                                 const std::string& mask_token = "[MASK]");

    std::vector<int> encode(const std::string& text) const;
    // Raw word pieces (before vocabulary lookup), exposed for tests.
    static std::vector<std::string> split(const std::string& text, const std::string& mask_token);

    int vocab_size() const { return static_cast<int>(id_to_token_.size()); }
    const std::vector<std::string>& tokens() const { return id_to_token_; }
    const std::string& mask_token() const { return mask_token_; }
    bool is_special(int id) const { return id == kPad || id == kCls || id == kSep; }

  private:
    std::vector<std::string> id_to_token_;
    std::map<std::string, int> token_to_id_;
    std::string mask_token_;
};

}  // namespace kgfuse
