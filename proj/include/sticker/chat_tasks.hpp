#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sticker/rng.hpp"
#include "sticker/tokenizer.hpp"

namespace sticker {

// Non-retrieval instructions: single-digit addition, copying and reversal. The base LM is
// pretrained on these, and held-out draws form the "no tool expected" evaluation pool.
struct ChatTask {
    std::string prompt;
    std::string answer;
};

ChatTask sample_chat_task(Rng& rng);
std::vector<ChatTask> chat_task_pool(std::uint64_t seed, std::size_t n);

// A full teacher-forcing sequence: prompt, turn separator, answer, <eos>.
struct LmSequence {
    std::vector<Token> tokens;
    std::size_t answer_start = 0;  // first answer token
};

std::vector<Token> render_chat_prompt(const ChatTask& task, const Tokenizer& tokenizer,
                                      bool prefixed = false);
LmSequence render_chat_sequence(const ChatTask& task, const Tokenizer& tokenizer);

}  // namespace sticker
