#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sticker {

using Token = std::int32_t;

// Appended after the base vocabulary, in this order.
enum class SpecialToken : int { ret = 0, ret_end = 1, img = 2, img_end = 3, pret = 4 };
inline constexpr int kSpecialTokenCount = 5;
inline constexpr std::array<std::string_view, kSpecialTokenCount> kSpecialTokenText = {
    "<ret>", "</ret>", "<img>", "</img>", "<pret>"};

enum class UnknownPolicy { reject, skip };

// Greedy longest-match tokenizer over a base symbol list (single characters plus whole
// words). Ids 0..2 are pad/bos/eos and ids V..V+4 the special tokens; neither range is
// reachable by encoding plain text.
class Tokenizer {
public:
    static constexpr Token kPad = 0;
    static constexpr Token kBos = 1;
    static constexpr Token kEos = 2;

    // `base_symbols` must start with the three reserved entries.
    explicit Tokenizer(std::vector<std::string> base_symbols);

    // Default vocabulary: characters of the synthetic corpus alphabet, attribute words,
    // emotion/style names and the instruction-template words.
    static Tokenizer build_default();

    int base_size() const { return static_cast<int>(base_.size()); }
    int vocab_size() const { return base_size() + kSpecialTokenCount; }
    Token special(SpecialToken t) const { return base_size() + static_cast<int>(t); }
    bool is_special(Token t) const { return t >= base_size() && t < vocab_size(); }

    // Throws InvalidArgument on a character outside the alphabet unless policy == skip.
    std::vector<Token> encode(std::string_view text,
                              UnknownPolicy policy = UnknownPolicy::reject) const;
    std::string decode(std::span<const Token> tokens, bool strip_special = false) const;

    // Display string for any id (reserved and special ids included).
    const std::string& symbol(Token t) const;
    // Base symbols followed by the special tokens.
    std::vector<std::string> symbols() const;
    const std::vector<std::string>& base_symbols() const { return base_; }

    friend bool operator==(const Tokenizer& a, const Tokenizer& b) { return a.base_ == b.base_; }

private:
    std::vector<std::string> base_;
    std::vector<std::string> specials_;
    std::unordered_map<std::string, Token> lookup_;
    std::size_t max_symbol_bytes_ = 1;
};

// The separator between prompt and answer in LM sequences.
inline constexpr std::string_view kTurnSeparator = "\n";

}  // namespace sticker
