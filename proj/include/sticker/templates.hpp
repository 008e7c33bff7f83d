#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sticker/corpus.hpp"
#include "sticker/rng.hpp"
#include "sticker/tokenizer.hpp"

namespace sticker {

inline constexpr std::size_t kTextContext = 64;
inline constexpr std::size_t kLmContext = 128;

enum class RetrievalMode { t2i, i2i, it2i };

std::string_view to_string(RetrievalMode mode);
RetrievalMode parse_mode(std::string_view text);

// Instruction templates use the slots "{text}" and "{image}"; every answer template
// contains the adjacent pair "<ret></ret>" exactly once.
struct TemplateSet {
    std::vector<std::string> t2i;
    std::vector<std::string> i2i;
    std::vector<std::string> it2i;
    std::vector<std::string> answers;

    // The instruction/answer examples used for training.
    static TemplateSet defaults();
    // Paraphrased instructions never seen in training (out-of-domain tool-selection prompts).
    static TemplateSet held_out();

    static TemplateSet from_json(std::string_view json_text);
    static TemplateSet load(const std::filesystem::path& path);
    std::string to_json() const;

    const std::vector<std::string>& for_mode(RetrievalMode mode) const;
    // Throws FormatError when a list is empty or a template breaks the slot rules.
    void validate() const;

    friend bool operator==(const TemplateSet&, const TemplateSet&) = default;
};

struct InstructionSample {
    RetrievalMode mode = RetrievalMode::t2i;
    bool prefixed = false;
    std::vector<Token> prompt_tokens;  // starts with <pret> when prefixed
    std::vector<Token> answer_tokens;  // ends with <eos>
    StickerId target_id = 0;
    std::optional<StickerId> input_image_id;
    std::size_t ret_position = 0;  // index of <ret> within answer_tokens
    std::string query_text;        // empty for image-only queries
};

struct RenderedPrompt {
    std::vector<Token> tokens;
    std::optional<std::size_t> image_slot;  // placeholder position between <img> and </img>
};

// description，ocr，emotion names，style name with empty fields skipped, cut to
// `max_tokens` tokens.
std::string build_pair_text(const StickerRecord& record, const Tokenizer& tokenizer,
                            std::size_t max_tokens = kTextContext);

// Expands an instruction template. "{image}" becomes <img> <placeholder> </img>.
std::vector<Token> render_instruction(std::string_view tmpl, std::string_view query_text,
                                      const Tokenizer& tokenizer);
// Encodes an answer template and terminates it with <eos>; reports the <ret> index.
std::vector<Token> render_answer(std::string_view tmpl, const Tokenizer& tokenizer,
                                 std::size_t& ret_position);

InstructionSample make_instruction(RetrievalMode mode, bool prefixed, std::string_view instruction,
                                   std::string_view answer, const StickerRecord& target,
                                   std::optional<StickerId> input_image_id,
                                   const Tokenizer& tokenizer);

// Mode ~ {T2I: 0.5, I2I: 0.25, IT2I: 0.25}, prefix ~ Bernoulli(0.5), uniform template choice.
// The IT2I input image is a uniformly drawn other record of the same split.
InstructionSample sample_instruction(const StickerRecord& record, const Manifest& manifest,
                                     const TemplateSet& templates, const Tokenizer& tokenizer,
                                     Rng& rng);

// Prompt tokens followed by the turn separator. Throws InvalidArgument past `context`.
RenderedPrompt render_prompt(const InstructionSample& sample, const Tokenizer& tokenizer,
                             std::size_t context = kLmContext);

// Finds the image placeholder in an arbitrary token sequence.
std::optional<std::size_t> find_image_slot(std::span<const Token> tokens,
                                           const Tokenizer& tokenizer);

}  // namespace sticker
