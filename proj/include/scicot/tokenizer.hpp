#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "scicot/common.hpp"

namespace scicot {

// Whitespace tokenizer with byte fallback: words seen at build time get ids,
// anything else decomposes into byte tokens. Ids 0..2 are pad/bos/eos,
// 3..258 the 256 byte tokens, 259+ the learned words in first-seen order.
class WhitespaceTokenizer {
  public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kByteBase = 3;
    static constexpr int kWordBase = kByteBase + 256;

    static WhitespaceTokenizer build(const std::vector<std::string>& texts);

    std::vector<int> encode(const std::string& text) const;
    // Inverse of encode for texts made of known words separated by single
    // spaces; byte runs re-concatenate without separators.
    std::string decode(const std::vector<int>& ids) const;

    int vocab_size() const { return kWordBase + static_cast<int>(words_.size()); }
    const std::string& id_name() const { return id_name_; }

    json to_json() const;
    static WhitespaceTokenizer from_json(const json& j);
    void save(const std::filesystem::path& path) const;
    static WhitespaceTokenizer load(const std::filesystem::path& path);

  private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> word_to_id_;
    std::string id_name_ = "whitespace";
};

}  // namespace scicot
