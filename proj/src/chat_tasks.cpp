#include "sticker/chat_tasks.hpp"

#include <algorithm>

#include "sticker/corpus.hpp"

namespace sticker {
namespace {

std::string random_letters(Rng& rng, std::size_t min_len, std::size_t max_len) {
    const std::size_t len = min_len + rng.below(max_len - min_len + 1);
    std::string s;
    for (std::size_t i = 0; i < len; ++i) {
        s += static_cast<char>('a' + rng.below(26));
    }
    return s;
}

std::string random_phrase(Rng& rng) {
    if (rng.uniform() < 0.5) {
        const auto colors = color_words();
        const auto subjects = subject_words();
        const auto actions = action_words();
        return std::string(colors[rng.below(colors.size())]) + " " +
               std::string(subjects[rng.below(subjects.size())]) + " " +
               std::string(actions[rng.below(actions.size())]);
    }
    std::string s = random_letters(rng, 2, 5);
    const std::size_t extra = rng.below(2);
    for (std::size_t i = 0; i < extra; ++i) {
        s += " " + random_letters(rng, 2, 5);
    }
    return s;
}

}  // namespace

ChatTask sample_chat_task(Rng& rng) {
    switch (rng.below(3)) {
        case 0: {
            const auto a = rng.below(10);
            const auto b = rng.below(10);
            const std::string lhs = std::to_string(a) + " + " + std::to_string(b);
            return {"What is " + lhs + "?", lhs + " = " + std::to_string(a + b) + "."};
        }
        case 1: {
            const std::string phrase = random_phrase(rng);
            return {"Copy: " + phrase, phrase};
        }
        default: {
            const std::string word = random_letters(rng, 3, 6);
            std::string reversed(word.rbegin(), word.rend());
            return {"Reverse: " + word, reversed};
        }
    }
}

std::vector<ChatTask> chat_task_pool(std::uint64_t seed, std::size_t n) {
    Rng rng(hash_combine(seed, 0xC4A7ULL));
    std::vector<ChatTask> pool;
    pool.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        pool.push_back(sample_chat_task(rng));
    }
    return pool;
}

std::vector<Token> render_chat_prompt(const ChatTask& task, const Tokenizer& tokenizer,
                                      bool prefixed) {
    std::vector<Token> tokens;
    if (prefixed) {
        tokens.push_back(tokenizer.special(SpecialToken::pret));
    }
    const auto body = tokenizer.encode(task.prompt);
    tokens.insert(tokens.end(), body.begin(), body.end());
    const auto sep = tokenizer.encode(kTurnSeparator);
    tokens.insert(tokens.end(), sep.begin(), sep.end());
    return tokens;
}

LmSequence render_chat_sequence(const ChatTask& task, const Tokenizer& tokenizer) {
    LmSequence seq;
    seq.tokens = render_chat_prompt(task, tokenizer);
    seq.answer_start = seq.tokens.size();
    const auto answer = tokenizer.encode(task.answer);
    seq.tokens.insert(seq.tokens.end(), answer.begin(), answer.end());
    seq.tokens.push_back(Tokenizer::kEos);
    return seq;
}

}  // namespace sticker
