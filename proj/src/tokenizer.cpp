#include "scicot/tokenizer.hpp"

namespace scicot {

WhitespaceTokenizer WhitespaceTokenizer::build(const std::vector<std::string>& texts) {
    WhitespaceTokenizer tok;
    for (const auto& text : texts) {
        for (const auto& word : split_whitespace(text)) {
            if (tok.word_to_id_.count(word)) continue;
            int id = kWordBase + static_cast<int>(tok.words_.size());
            tok.words_.push_back(word);
            tok.word_to_id_[word] = id;
        }
    }
    return tok;
}

std::vector<int> WhitespaceTokenizer::encode(const std::string& text) const {
    std::vector<int> ids;
    bool previous_was_bytes = false;
    for (const auto& word : split_whitespace(text)) {
        auto it = word_to_id_.find(word);
        if (it != word_to_id_.end()) {
            ids.push_back(it->second);
            previous_was_bytes = false;
        } else {
            // The gap between two byte-fallback words must itself be encoded,
            // otherwise decode would fuse them.
            if (previous_was_bytes) {
                ids.push_back(kByteBase + ' ');
            }
            for (unsigned char b : word) {
                ids.push_back(kByteBase + static_cast<int>(b));
            }
            previous_was_bytes = true;
        }
    }
    return ids;
}

std::string WhitespaceTokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    bool previous_was_byte = false;
    bool first = true;
    for (int id : ids) {
        if (id == kPad || id == kBos || id == kEos) continue;
        bool is_byte = id >= kByteBase && id < kWordBase;
        if (!first && !(previous_was_byte && is_byte)) {
            out.push_back(' ');
        }
        if (is_byte) {
            out.push_back(static_cast<char>(id - kByteBase));
        } else {
            int word_index = id - kWordBase;
            if (word_index < 0 || word_index >= static_cast<int>(words_.size())) {
                throw DataError("tokenizer: id " + std::to_string(id) + " outside vocabulary");
            }
            out += words_[static_cast<size_t>(word_index)];
        }
        previous_was_byte = is_byte;
        first = false;
    }
    return out;
}

json WhitespaceTokenizer::to_json() const {
    return json{{"id", id_name_}, {"words", words_}};
}

WhitespaceTokenizer WhitespaceTokenizer::from_json(const json& j) {
    WhitespaceTokenizer tok;
    tok.id_name_ = j.at("id").get<std::string>();
    for (const auto& w : j.at("words")) {
        std::string word = w.get<std::string>();
        int id = kWordBase + static_cast<int>(tok.words_.size());
        tok.words_.push_back(word);
        tok.word_to_id_[word] = id;
    }
    return tok;
}

void WhitespaceTokenizer::save(const std::filesystem::path& path) const {
    write_text_file_atomic(path, to_json().dump(2));
}

WhitespaceTokenizer WhitespaceTokenizer::load(const std::filesystem::path& path) {
    return from_json(json::parse(read_text_file(path)));
}

}  // namespace scicot
