#include "sticker/tokenizer.hpp"

#include <algorithm>

#include "sticker/corpus.hpp"
#include "sticker/error.hpp"

namespace sticker {
namespace {

std::size_t utf8_length(unsigned char lead) {
    if (lead < 0x80) {
        return 1;
    }
    if ((lead >> 5) == 0x6) {
        return 2;
    }
    if ((lead >> 4) == 0xE) {
        return 3;
    }
    if ((lead >> 3) == 0x1E) {
        return 4;
    }
    return 1;
}

constexpr std::array<std::string_view, 25> kTemplateWords = {
    "Retrieve", "emoticons", "based",  "following", "text",   "Find",   "stickers",
    "retrieve", "image",     "similar", "combines", "and",    "find",   "The",
    "retrieval", "results",  "are",    "follows",   "Copy",   "Reverse", "What",
    "is",       "the",       "on",     "sticker"};

}  // namespace

Tokenizer::Tokenizer(std::vector<std::string> base_symbols) : base_(std::move(base_symbols)) {
    if (base_.size() < 4 || base_[kPad] != "<pad>" || base_[kBos] != "<bos>" ||
        base_[kEos] != "<eos>") {
        throw InvalidArgument("tokenizer: base vocabulary must start with <pad>, <bos>, <eos>");
    }
    for (auto s : kSpecialTokenText) {
        specials_.emplace_back(s);
    }
    for (std::size_t i = 3; i < base_.size(); ++i) {
        const std::string& s = base_[i];
        if (s.empty()) {
            throw InvalidArgument("tokenizer: empty symbol at id " + std::to_string(i));
        }
        if (std::find(specials_.begin(), specials_.end(), s) != specials_.end()) {
            throw InvalidArgument("tokenizer: base symbol collides with special token " + s);
        }
        if (!lookup_.emplace(s, static_cast<Token>(i)).second) {
            throw InvalidArgument("tokenizer: duplicate symbol '" + s + "'");
        }
        max_symbol_bytes_ = std::max(max_symbol_bytes_, s.size());
    }
}

Tokenizer Tokenizer::build_default() {
    std::vector<std::string> symbols = {"<pad>", "<bos>", "<eos>"};
    for (char c = 'a'; c <= 'z'; ++c) {
        symbols.emplace_back(1, c);
    }
    for (char c = 'A'; c <= 'Z'; ++c) {
        symbols.emplace_back(1, c);
    }
    for (char c = '0'; c <= '9'; ++c) {
        symbols.emplace_back(1, c);
    }
    for (char c : std::string_view(" .,:?!+-='_\n")) {
        symbols.emplace_back(1, c);
    }
    symbols.emplace_back("\xEF\xBC\x8C");  // fullwidth comma

    auto add_word = [&](std::string_view w) {
        if (std::find(symbols.begin(), symbols.end(), w) == symbols.end()) {
            symbols.emplace_back(w);
        }
    };
    for (auto w : color_words()) add_word(w);
    for (auto w : subject_words()) add_word(w);
    for (auto w : action_words()) add_word(w);
    for (auto w : style_names()) add_word(w);
    for (int e = 0; e < kEmotionCount; ++e) add_word(EmotionLabel::from_id(e).name());
    for (auto w : kTemplateWords) add_word(w);
    return Tokenizer(std::move(symbols));
}

std::vector<Token> Tokenizer::encode(std::string_view text, UnknownPolicy policy) const {
    std::vector<Token> out;
    std::size_t pos = 0;
    std::string probe;
    while (pos < text.size()) {
        Token found = -1;
        std::size_t found_len = 0;
        const std::size_t longest = std::min(max_symbol_bytes_, text.size() - pos);
        for (std::size_t len = longest; len >= 1; --len) {
            probe.assign(text.substr(pos, len));
            const auto it = lookup_.find(probe);
            if (it != lookup_.end()) {
                found = it->second;
                found_len = len;
                break;
            }
        }
        if (found < 0) {
            const std::size_t len =
                std::min(utf8_length(static_cast<unsigned char>(text[pos])), text.size() - pos);
            if (policy == UnknownPolicy::reject) {
                throw InvalidArgument("tokenizer: character '" + std::string(text.substr(pos, len)) +
                                      "' at byte " + std::to_string(pos) +
                                      " is outside the alphabet");
            }
            pos += len;
            continue;
        }
        out.push_back(found);
        pos += found_len;
    }
    return out;
}

const std::string& Tokenizer::symbol(Token t) const {
    if (t >= 0 && t < base_size()) {
        return base_[static_cast<std::size_t>(t)];
    }
    if (is_special(t)) {
        return specials_[static_cast<std::size_t>(t - base_size())];
    }
    throw InvalidArgument("tokenizer: token id out of range: " + std::to_string(t));
}

std::string Tokenizer::decode(std::span<const Token> tokens, bool strip_special) const {
    std::string out;
    for (Token t : tokens) {
        if (t == kPad || t == kBos || t == kEos) {
            continue;
        }
        if (is_special(t) && strip_special) {
            continue;
        }
        out += symbol(t);
    }
    return out;
}

std::vector<std::string> Tokenizer::symbols() const {
    std::vector<std::string> all = base_;
    all.insert(all.end(), specials_.begin(), specials_.end());
    return all;
}

}  // namespace sticker
