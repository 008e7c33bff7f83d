#include "sticker/templates.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sticker/error.hpp"

namespace sticker {
namespace {

constexpr std::string_view kTextSlot = "{text}";
constexpr std::string_view kImageSlot = "{image}";
constexpr std::string_view kRetPair = "<ret></ret>";
constexpr std::string_view kFieldSeparator = "\xEF\xBC\x8C";  // fullwidth comma

std::size_t count_occurrences(std::string_view s, std::string_view needle) {
    std::size_t n = 0;
    for (std::size_t pos = s.find(needle); pos != std::string_view::npos;
         pos = s.find(needle, pos + needle.size())) {
        ++n;
    }
    return n;
}

void append(std::vector<Token>& out, const std::vector<Token>& more) {
    out.insert(out.end(), more.begin(), more.end());
}

}  // namespace

std::string_view to_string(RetrievalMode mode) {
    switch (mode) {
        case RetrievalMode::t2i:
            return "t2i";
        case RetrievalMode::i2i:
            return "i2i";
        case RetrievalMode::it2i:
            return "it2i";
    }
    return "?";
}

RetrievalMode parse_mode(std::string_view text) {
    if (text == "t2i" || text == "T2I") return RetrievalMode::t2i;
    if (text == "i2i" || text == "I2I") return RetrievalMode::i2i;
    if (text == "it2i" || text == "IT2I") return RetrievalMode::it2i;
    throw InvalidArgument("unknown retrieval mode '" + std::string(text) + "'");
}

TemplateSet TemplateSet::defaults() {
    TemplateSet t;
    t.t2i = {"Retrieve emoticons based on the following text: {text}.", "Find stickers: {text}."};
    t.i2i = {"{image} retrieve stickers based on the image.", "{image} retrieve similar stickers."};
    t.it2i = {"{image} combines image and text to find emoticons: {text}.",
              "{image} Find stickers: {text}."};
    t.answers = {"The retrieval results are as follows: <ret></ret>.", "<ret></ret>."};
    return t;
}

TemplateSet TemplateSet::held_out() {
    TemplateSet t;
    t.t2i = {"Show me a sticker of {text}.", "I want an emoticon like {text}.",
             "Can you send me {text} pictures?"};
    t.i2i = {"{image} show me more like this.", "{image} got any pictures like this one?"};
    t.it2i = {"{image} use this picture and {text} to search.",
              "{image} something like this but {text}."};
    t.answers = defaults().answers;
    return t;
}

const std::vector<std::string>& TemplateSet::for_mode(RetrievalMode mode) const {
    switch (mode) {
        case RetrievalMode::t2i:
            return t2i;
        case RetrievalMode::i2i:
            return i2i;
        case RetrievalMode::it2i:
            return it2i;
    }
    return t2i;
}

void TemplateSet::validate() const {
    auto check = [](const std::vector<std::string>& list, std::string_view key, int text_slots,
                    int image_slots) {
        if (list.empty()) {
            throw FormatError("templates: '" + std::string(key) + "' is empty");
        }
        for (const auto& t : list) {
            if (static_cast<int>(count_occurrences(t, kTextSlot)) != text_slots ||
                static_cast<int>(count_occurrences(t, kImageSlot)) != image_slots) {
                throw FormatError("templates: '" + t + "' has the wrong slots for " +
                                  std::string(key));
            }
        }
    };
    check(t2i, "t2i", 1, 0);
    check(i2i, "i2i", 0, 1);
    check(it2i, "it2i", 1, 1);
    if (answers.empty()) {
        throw FormatError("templates: 'answers' is empty");
    }
    for (const auto& a : answers) {
        if (count_occurrences(a, kRetPair) != 1 || count_occurrences(a, "<ret>") != 1 ||
            count_occurrences(a, "</ret>") != 1) {
            throw FormatError("templates: answer '" + a + "' must contain <ret></ret> once");
        }
    }
}

TemplateSet TemplateSet::from_json(std::string_view json_text) {
    TemplateSet t;
    try {
        const auto j = nlohmann::json::parse(json_text);
        t.t2i = j.at("t2i").get<std::vector<std::string>>();
        t.i2i = j.at("i2i").get<std::vector<std::string>>();
        t.it2i = j.at("it2i").get<std::vector<std::string>>();
        t.answers = j.at("answers").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("templates: ") + e.what());
    }
    t.validate();
    return t;
}

TemplateSet TemplateSet::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("missing file: " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

std::string TemplateSet::to_json() const {
    nlohmann::ordered_json j;
    j["t2i"] = t2i;
    j["i2i"] = i2i;
    j["it2i"] = it2i;
    j["answers"] = answers;
    return j.dump(2);
}

std::string build_pair_text(const StickerRecord& record, const Tokenizer& tokenizer,
                            std::size_t max_tokens) {
    std::string emotions;
    for (const auto& e : record.emotions) {
        if (!emotions.empty()) {
            emotions += ' ';
        }
        emotions += e.name();
    }
    std::string text;
    for (const std::string& field : {record.description, record.ocr_text, emotions,
                                     record.style.name}) {
        if (field.empty()) {
            continue;
        }
        if (!text.empty()) {
            text += kFieldSeparator;
        }
        text += field;
    }
    const auto tokens = tokenizer.encode(text, UnknownPolicy::skip);
    if (tokens.size() <= max_tokens) {
        return tokenizer.decode(tokens);
    }
    return tokenizer.decode(std::span<const Token>(tokens).first(max_tokens));
}

std::vector<Token> render_instruction(std::string_view tmpl, std::string_view query_text,
                                      const Tokenizer& tokenizer) {
    std::vector<Token> out;
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        const std::size_t t = tmpl.find(kTextSlot, pos);
        const std::size_t i = tmpl.find(kImageSlot, pos);
        const std::size_t next = std::min(t, i);
        append(out, tokenizer.encode(tmpl.substr(pos, next == std::string_view::npos
                                                          ? std::string_view::npos
                                                          : next - pos)));
        if (next == std::string_view::npos) {
            break;
        }
        if (next == t) {
            append(out, tokenizer.encode(query_text));
            pos = t + kTextSlot.size();
        } else {
            out.push_back(tokenizer.special(SpecialToken::img));
            out.push_back(Tokenizer::kPad);
            out.push_back(tokenizer.special(SpecialToken::img_end));
            pos = i + kImageSlot.size();
        }
    }
    return out;
}

std::vector<Token> render_answer(std::string_view tmpl, const Tokenizer& tokenizer,
                                 std::size_t& ret_position) {
    const std::size_t at = tmpl.find(kRetPair);
    if (at == std::string_view::npos) {
        throw InvalidArgument("answer template lacks <ret></ret>: " + std::string(tmpl));
    }
    std::vector<Token> out = tokenizer.encode(tmpl.substr(0, at));
    ret_position = out.size();
    out.push_back(tokenizer.special(SpecialToken::ret));
    out.push_back(tokenizer.special(SpecialToken::ret_end));
    append(out, tokenizer.encode(tmpl.substr(at + kRetPair.size())));
    out.push_back(Tokenizer::kEos);
    return out;
}

InstructionSample make_instruction(RetrievalMode mode, bool prefixed, std::string_view instruction,
                                   std::string_view answer, const StickerRecord& target,
                                   std::optional<StickerId> input_image_id,
                                   const Tokenizer& tokenizer) {
    const bool has_image = mode != RetrievalMode::t2i;
    if (has_image != input_image_id.has_value()) {
        throw InvalidArgument("make_instruction: input image must be present iff mode uses one");
    }
    InstructionSample s;
    s.mode = mode;
    s.prefixed = prefixed;
    s.target_id = target.id;
    s.input_image_id = input_image_id;
    if (mode != RetrievalMode::i2i) {
        s.query_text = target.description;
    }
    if (prefixed) {
        s.prompt_tokens.push_back(tokenizer.special(SpecialToken::pret));
    }
    append(s.prompt_tokens, render_instruction(instruction, s.query_text, tokenizer));
    s.answer_tokens = render_answer(answer, tokenizer, s.ret_position);
    return s;
}

InstructionSample sample_instruction(const StickerRecord& record, const Manifest& manifest,
                                     const TemplateSet& templates, const Tokenizer& tokenizer,
                                     Rng& rng) {
    if (manifest.records.size() < 2) {
        throw InvalidArgument("sample_instruction: manifest needs at least 2 records");
    }
    const double u = rng.uniform();
    const RetrievalMode mode =
        u < 0.5 ? RetrievalMode::t2i : (u < 0.75 ? RetrievalMode::i2i : RetrievalMode::it2i);
    const bool prefixed = rng.uniform() < 0.5;
    const auto& list = templates.for_mode(mode);
    const std::string& instruction = list[rng.below(list.size())];
    const std::string& answer = templates.answers[rng.below(templates.answers.size())];

    std::optional<StickerId> input;
    if (mode == RetrievalMode::i2i) {
        input = record.id;
    } else if (mode == RetrievalMode::it2i) {
        std::vector<std::size_t> pool;
        for (std::size_t i : manifest.indices(record.split)) {
            if (manifest.records[i].id != record.id) {
                pool.push_back(i);
            }
        }
        if (pool.empty()) {
            for (std::size_t i = 0; i < manifest.records.size(); ++i) {
                if (manifest.records[i].id != record.id) {
                    pool.push_back(i);
                }
            }
        }
        input = manifest.records[pool[rng.below(pool.size())]].id;
    }
    return make_instruction(mode, prefixed, instruction, answer, record, input, tokenizer);
}

std::optional<std::size_t> find_image_slot(std::span<const Token> tokens,
                                           const Tokenizer& tokenizer) {
    const Token img = tokenizer.special(SpecialToken::img);
    const Token img_end = tokenizer.special(SpecialToken::img_end);
    for (std::size_t i = 0; i + 2 < tokens.size(); ++i) {
        if (tokens[i] == img && tokens[i + 2] == img_end) {
            return i + 1;
        }
    }
    return std::nullopt;
}

RenderedPrompt render_prompt(const InstructionSample& sample, const Tokenizer& tokenizer,
                             std::size_t context) {
    RenderedPrompt r;
    r.tokens = sample.prompt_tokens;
    append(r.tokens, tokenizer.encode(kTurnSeparator));
    if (r.tokens.size() > context) {
        throw InvalidArgument("render_prompt: " + std::to_string(r.tokens.size()) +
                              " tokens exceed the LM context of " + std::to_string(context));
    }
    r.image_slot = find_image_slot(r.tokens, tokenizer);
    return r;
}

}  // namespace sticker
