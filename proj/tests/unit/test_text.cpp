#include <doctest.h>

#include <algorithm>

#include "sticker/corpus.hpp"
#include "sticker/error.hpp"
#include "sticker/rng.hpp"
#include "sticker/templates.hpp"
#include "sticker/tokenizer.hpp"

using namespace sticker;

namespace {

const Tokenizer& tok() {
    static const Tokenizer t = Tokenizer::build_default();
    return t;
}

std::size_t count(const std::vector<Token>& v, Token t) {
    return static_cast<std::size_t>(std::count(v.begin(), v.end(), t));
}

bool contains(const std::vector<Token>& hay, const std::vector<Token>& needle) {
    return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

}  // namespace

TEST_CASE("tokenizer layout") {
    const auto& t = tok();
    CHECK(t.symbol(Tokenizer::kPad) == "<pad>");
    CHECK(t.symbol(Tokenizer::kBos) == "<bos>");
    CHECK(t.symbol(Tokenizer::kEos) == "<eos>");
    CHECK(t.vocab_size() == t.base_size() + 5);
    for (int k = 0; k < kSpecialTokenCount; ++k) {
        const Token id = t.special(static_cast<SpecialToken>(k));
        CHECK(id == t.base_size() + k);
        CHECK(t.symbol(id) == kSpecialTokenText[static_cast<std::size_t>(k)]);
        CHECK(t.is_special(id));
    }
    CHECK_FALSE(t.is_special(t.base_size() - 1));
}

TEST_CASE("encoding round-trips and prefers whole words") {
    const auto& t = tok();
    const std::string text = "red fox running, love you: 3 + 4 = 7.";
    const auto ids = t.encode(text);
    CHECK(t.decode(ids) == text);
    // A word in the vocabulary is one token.
    CHECK(t.encode("fox").size() == 1);
    CHECK(t.encode("zq").size() == 2);
    for (Token id : t.encode("The retrieval results are as follows:")) {
        CHECK(id > Tokenizer::kEos);
        CHECK(id < t.base_size());
    }
}

TEST_CASE("special token text is never produced by encoding") {
    const auto& t = tok();
    const auto ids = t.encode("<ret></ret>", UnknownPolicy::skip);
    for (Token id : ids) {
        CHECK_FALSE(t.is_special(id));
        CHECK(id > Tokenizer::kEos);
    }
}

TEST_CASE("unknown characters") {
    const auto& t = tok();
    CHECK_THROWS_AS(t.encode("caf\xC3\xA9"), InvalidArgument);
    const auto skipped = t.encode("caf\xC3\xA9", UnknownPolicy::skip);
    CHECK(t.decode(skipped) == "caf");
}

TEST_CASE("decode can strip special and reserved tokens") {
    const auto& t = tok();
    std::vector<Token> ids = t.encode("hi");
    ids.insert(ids.begin(), t.special(SpecialToken::pret));
    ids.push_back(t.special(SpecialToken::ret));
    ids.push_back(t.special(SpecialToken::ret_end));
    ids.push_back(Tokenizer::kEos);
    CHECK(t.decode(ids, true) == "hi");
    CHECK(t.decode(ids).find("<ret>") != std::string::npos);
}

TEST_CASE("pair text ordering and truncation") {
    const auto& t = tok();
    const auto m = generate_synthetic_corpus(7, 200, 0.25);
    bool saw_empty_ocr = false;
    for (const auto& r : m.records) {
        const auto text = build_pair_text(r, t);
        CHECK(text.rfind(r.description, 0) == 0);
        CHECK(t.encode(text).size() <= kTextContext);
        CHECK(text.find("\xEF\xBC\x8C\xEF\xBC\x8C") == std::string::npos);
        if (r.ocr_text.empty()) {
            saw_empty_ocr = true;
            CHECK(text.find(r.emotions.front().name()) ==
                  r.description.size() + std::string("\xEF\xBC\x8C").size());
        }
        CHECK(text.find(r.style.name) != std::string::npos);
    }
    CHECK(saw_empty_ocr);
    const auto cut = build_pair_text(m.records[0], t, 3);
    CHECK(t.encode(cut).size() == 3);
}

TEST_CASE("template set defaults and json") {
    const auto d = TemplateSet::defaults();
    CHECK_NOTHROW(d.validate());
    CHECK_NOTHROW(TemplateSet::held_out().validate());
    CHECK(d.answers.front() == "The retrieval results are as follows: <ret></ret>.");
    CHECK(TemplateSet::from_json(d.to_json()) == d);

    auto bad = d;
    bad.i2i.push_back("no image here");
    CHECK_THROWS_AS(bad.validate(), FormatError);
    bad = d;
    bad.answers = {"<ret> then </ret>"};
    CHECK_THROWS_AS(bad.validate(), FormatError);
    bad = d;
    bad.t2i.clear();
    CHECK_THROWS_AS(bad.validate(), FormatError);
    CHECK_THROWS_AS(TemplateSet::from_json("{\"t2i\": []}"), FormatError);
    CHECK_THROWS_AS(TemplateSet::from_json("not json"), FormatError);
}

TEST_CASE("answers carry one adjacent retrieval pair") {
    const auto& t = tok();
    for (const auto& a : TemplateSet::defaults().answers) {
        std::size_t ret = 0;
        const auto ids = render_answer(a, t, ret);
        CHECK(count(ids, t.special(SpecialToken::ret)) == 1);
        CHECK(count(ids, t.special(SpecialToken::ret_end)) == 1);
        REQUIRE(ret + 1 < ids.size());
        CHECK(ids[ret] == t.special(SpecialToken::ret));
        CHECK(ids[ret + 1] == t.special(SpecialToken::ret_end));
        CHECK(ids.back() == Tokenizer::kEos);
    }
    std::size_t ret = 0;
    CHECK_THROWS_AS(render_answer("nothing", t, ret), InvalidArgument);
}

TEST_CASE("instruction rendering per mode") {
    const auto& t = tok();
    const auto m = generate_synthetic_corpus(7, 40, 0.25);
    const auto d = TemplateSet::defaults();
    const auto& rec = m.records[3];
    const auto& other = m.records[5];
    const Token img = t.special(SpecialToken::img);
    const Token img_end = t.special(SpecialToken::img_end);
    const Token pret = t.special(SpecialToken::pret);

    SUBCASE("t2i") {
        const auto s = make_instruction(RetrievalMode::t2i, false, d.t2i[0], d.answers[0], rec,
                                        std::nullopt, t);
        CHECK(contains(s.prompt_tokens, t.encode(rec.description)));
        CHECK(count(s.prompt_tokens, img) == 0);
        CHECK_FALSE(s.input_image_id.has_value());
        CHECK(s.query_text == rec.description);
        const auto p = render_prompt(s, t);
        CHECK_FALSE(p.image_slot.has_value());
        CHECK(p.tokens.back() == t.encode("\n").back());
    }
    SUBCASE("prefixed t2i starts with the prefix token") {
        const auto s = make_instruction(RetrievalMode::t2i, true, d.t2i[1], d.answers[1], rec,
                                        std::nullopt, t);
        CHECK(s.prompt_tokens.front() == pret);
        CHECK(count(s.prompt_tokens, pret) == 1);
    }
    SUBCASE("i2i") {
        const auto s = make_instruction(RetrievalMode::i2i, false, d.i2i[0], d.answers[0], rec,
                                        rec.id, t);
        CHECK(count(s.prompt_tokens, img) == 1);
        CHECK(count(s.prompt_tokens, img_end) == 1);
        CHECK(s.query_text.empty());
        CHECK_FALSE(contains(s.prompt_tokens, t.encode(rec.description)));
        const auto p = render_prompt(s, t);
        REQUIRE(p.image_slot.has_value());
        CHECK(p.tokens[*p.image_slot - 1] == img);
        CHECK(p.tokens[*p.image_slot + 1] == img_end);
        CHECK(find_image_slot(p.tokens, t) == p.image_slot);
    }
    SUBCASE("prefixed i2i shifts the slot by one") {
        const auto a = make_instruction(RetrievalMode::i2i, false, d.i2i[1], d.answers[0], rec,
                                        rec.id, t);
        const auto b = make_instruction(RetrievalMode::i2i, true, d.i2i[1], d.answers[0], rec,
                                        rec.id, t);
        CHECK(*render_prompt(b, t).image_slot == *render_prompt(a, t).image_slot + 1);
    }
    SUBCASE("it2i") {
        const auto s = make_instruction(RetrievalMode::it2i, false, d.it2i[0], d.answers[0], rec,
                                        other.id, t);
        CHECK(count(s.prompt_tokens, img) == 1);
        CHECK(contains(s.prompt_tokens, t.encode(rec.description)));
        CHECK(s.input_image_id == other.id);
        CHECK(s.target_id == rec.id);
    }
    SUBCASE("mode and image presence must agree") {
        CHECK_THROWS_AS(make_instruction(RetrievalMode::t2i, false, d.t2i[0], d.answers[0], rec,
                                         rec.id, t),
                        InvalidArgument);
        CHECK_THROWS_AS(make_instruction(RetrievalMode::i2i, false, d.i2i[0], d.answers[0], rec,
                                         std::nullopt, t),
                        InvalidArgument);
    }
    SUBCASE("context overflow") {
        const auto s = make_instruction(RetrievalMode::t2i, false, d.t2i[0], d.answers[0], rec,
                                        std::nullopt, t);
        CHECK_THROWS_AS(render_prompt(s, t, 5), InvalidArgument);
    }
}

TEST_CASE("sampled instruction mix") {
    const auto& t = tok();
    const auto m = generate_synthetic_corpus(7, 40, 0.25);
    const auto d = TemplateSet::defaults();
    Rng rng(123);
    const std::size_t n = 100000;
    std::size_t t2i = 0, i2i = 0, it2i = 0, prefixed = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& rec = m.records[i % m.records.size()];
        const auto s = sample_instruction(rec, m, d, t, rng);
        prefixed += s.prefixed ? 1 : 0;
        switch (s.mode) {
            case RetrievalMode::t2i:
                ++t2i;
                break;
            case RetrievalMode::i2i:
                ++i2i;
                break;
            case RetrievalMode::it2i:
                ++it2i;
                break;
        }
        if (i % 997 == 0) {
            CHECK(s.target_id == rec.id);
            CHECK(count(s.answer_tokens, t.special(SpecialToken::ret)) == 1);
            CHECK(s.answer_tokens[s.ret_position + 1] == t.special(SpecialToken::ret_end));
            CHECK((s.prompt_tokens.front() == t.special(SpecialToken::pret)) == s.prefixed);
            if (s.mode == RetrievalMode::i2i) {
                CHECK(s.input_image_id == rec.id);
            }
            if (s.mode == RetrievalMode::it2i) {
                REQUIRE(s.input_image_id.has_value());
                CHECK(*s.input_image_id != rec.id);
                CHECK(m.by_id(*s.input_image_id).split == rec.split);
            }
        }
    }
    const double dn = static_cast<double>(n);
    CHECK(std::abs(t2i / dn - 0.5) <= 0.02);
    CHECK(std::abs(i2i / dn - 0.25) <= 0.02);
    CHECK(std::abs(it2i / dn - 0.25) <= 0.02);
    CHECK(std::abs(prefixed / dn - 0.5) <= 0.02);
}

TEST_CASE("sampling replays under a fixed seed") {
    const auto& t = tok();
    const auto m = generate_synthetic_corpus(7, 40, 0.25);
    const auto d = TemplateSet::defaults();
    Rng a(5), b(5);
    for (int i = 0; i < 50; ++i) {
        const auto& rec = m.records[static_cast<std::size_t>(i) % m.records.size()];
        const auto x = sample_instruction(rec, m, d, t, a);
        const auto y = sample_instruction(rec, m, d, t, b);
        CHECK(x.prompt_tokens == y.prompt_tokens);
        CHECK(x.answer_tokens == y.answer_tokens);
        CHECK(x.input_image_id == y.input_image_id);
    }
}
