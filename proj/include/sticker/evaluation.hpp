#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sticker/bundle.hpp"
#include "sticker/corpus.hpp"
#include "sticker/retrieval.hpp"
#include "sticker/templates.hpp"

namespace sticker {

struct RetrievalReport {
    std::string mode;
    double r1 = 0.0;
    double r5 = 0.0;
    double r10 = 0.0;
    double mr = 0.0;
    std::size_t n_queries = 0;
    std::string index_fingerprint;

    nlohmann::ordered_json to_json() const;
};

struct ToolReport {
    std::string scenario;
    double accuracy = 0.0;
    std::size_t n_prompts = 0;

    nlohmann::ordered_json to_json() const;
};

RetrievalReport make_report(std::string mode, std::span<const QueryResult> results,
                            std::span<const StickerId> golds, std::string fingerprint);

// Dual-encoder text-to-image retrieval: every record of `query_split` queries the
// embeddings of the same split (or `gallery`, when given) with its pair text.
template <typename T>
RetrievalReport eval_clip_t2i(const ModelBundle<T>& bundle, const Manifest& manifest,
                              Split query_split, const RetrievalIndex* gallery = nullptr);

// <ret> query embedding: [<pret>] instruction "\n" answer-prefix-through-<ret>, with `visual`
// substituted at the image slot when the instruction has one.
template <typename T>
std::vector<T> ret_query_embedding(const ModelBundle<T>& bundle, std::string_view instruction,
                                   std::string_view answer, std::string_view text,
                                   std::span<const T> visual, bool prefixed = false);

// For each record of the index's split: render the mode's first template unprefixed,
// teacher-force the first answer up to <ret>, and search the index.
// IT2I pairs each query text with the next gallery record's image.
template <typename T>
RetrievalReport eval_retrieval(const ModelBundle<T>& bundle, const Manifest& manifest,
                               const RetrievalIndex& index, RetrievalMode mode,
                               const TemplateSet& templates);

// A prompt for free decoding; `visual` is used iff `slot` is set.
struct ToolPrompt {
    std::vector<Token> tokens;
    std::optional<std::size_t> slot;
    std::vector<float> visual;
};

// Fraction of prompts whose greedy reply (max_new 32) contains <ret> == expect_ret.
template <typename T>
double eval_tool_selection(const ModelBundle<T>& bundle, std::span<const ToolPrompt> prompts,
                           bool expect_ret, std::size_t max_new = 32);

// Scenario prompt pools: (a) held-out chat tasks; retrieval prompts over the test split with
// the training templates (in-domain) or paraphrases (out-of-domain), with or without <pret>.
std::vector<ToolPrompt> chat_prompts(const Tokenizer& tokenizer, std::uint64_t seed,
                                     std::size_t n = 200);
std::vector<ToolPrompt> retrieval_prompts(const ModelBundle<float>& bundle,
                                          const Manifest& manifest, const TemplateSet& templates,
                                          bool prefixed);

// The five scenarios (a)-(e) in order.
std::vector<ToolReport> eval_tool_scenarios(const ModelBundle<float>& bundle,
                                            const Manifest& manifest,
                                            std::uint64_t chat_seed = 2024);

}  // namespace sticker
