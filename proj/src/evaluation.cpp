#include "sticker/evaluation.hpp"

#include <algorithm>

#include "sticker/chat_tasks.hpp"
#include "sticker/error.hpp"

namespace sticker {

nlohmann::ordered_json RetrievalReport::to_json() const {
    nlohmann::ordered_json j;
    j["mode"] = mode;
    j["r1"] = r1;
    j["r5"] = r5;
    j["r10"] = r10;
    j["mr"] = mr;
    j["n_queries"] = n_queries;
    j["index_fingerprint"] = index_fingerprint;
    return j;
}

nlohmann::ordered_json ToolReport::to_json() const {
    nlohmann::ordered_json j;
    j["scenario"] = scenario;
    j["accuracy"] = accuracy;
    j["n_prompts"] = n_prompts;
    return j;
}

RetrievalReport make_report(std::string mode, std::span<const QueryResult> results,
                            std::span<const StickerId> golds, std::string fingerprint) {
    RetrievalReport r;
    r.mode = std::move(mode);
    r.r1 = recall_at_k(results, golds, 1);
    r.r5 = recall_at_k(results, golds, 5);
    r.r10 = recall_at_k(results, golds, 10);
    r.mr = mean_recall(r.r1, r.r5, r.r10);
    r.n_queries = results.size();
    r.index_fingerprint = std::move(fingerprint);
    return r;
}

namespace {

template <typename T>
std::vector<float> to_float(const std::vector<T>& v) {
    return {v.begin(), v.end()};
}

}  // namespace

template <typename T>
RetrievalReport eval_clip_t2i(const ModelBundle<T>& bundle, const Manifest& manifest,
                              Split query_split, const RetrievalIndex* gallery) {
    const auto idx = manifest.indices(query_split);
    if (idx.empty()) {
        throw InvalidArgument("eval: the query split has no records");
    }
    std::optional<RetrievalIndex> own;
    if (gallery == nullptr) {
        std::vector<StickerId> ids;
        std::vector<std::vector<float>> rows;
        for (std::size_t i : idx) {
            ids.push_back(manifest.records[i].id);
            rows.push_back(to_float(encode_record_image(bundle.vision, manifest.records[i])));
        }
        own.emplace(std::move(ids), std::move(rows), "");
        gallery = &*own;
    }
    std::vector<QueryResult> results;
    std::vector<StickerId> golds;
    for (std::size_t i : idx) {
        const auto& rec = manifest.records[i];
        const auto tokens = bundle.tokenizer.encode(build_pair_text(rec, bundle.tokenizer));
        const auto q = to_float(encode_text(bundle.text, tokens));
        results.push_back(gallery->search(q, 10, QueryKind::text));
        golds.push_back(rec.id);
    }
    return make_report("t2i", results, golds, gallery->fingerprint());
}

template <typename T>
std::vector<T> ret_query_embedding(const ModelBundle<T>& bundle, std::string_view instruction,
                                   std::string_view answer, std::string_view text,
                                   std::span<const T> visual, bool prefixed) {
    const auto& tok = bundle.tokenizer;
    if (!bundle.lm.extended) {
        throw InvalidState("the language model has no retrieval tokens; run train-llm first");
    }
    std::vector<Token> tokens;
    if (prefixed) {
        tokens.push_back(tok.special(SpecialToken::pret));
    }
    const auto body = render_instruction(instruction, text, tok);
    tokens.insert(tokens.end(), body.begin(), body.end());
    const auto sep = tok.encode(kTurnSeparator);
    tokens.insert(tokens.end(), sep.begin(), sep.end());
    std::size_t ret_pos = 0;
    const auto ans = render_answer(answer, tok, ret_pos);
    tokens.insert(tokens.end(), ans.begin(), ans.begin() + static_cast<std::ptrdiff_t>(ret_pos + 1));

    const auto slot = find_image_slot(tokens, tok);
    if (slot && visual.empty()) {
        throw InvalidArgument("the instruction has an image slot but no image was given");
    }
    typename LanguageModel<T>::Output out;
    std::optional<std::span<const T>> v;
    if (slot) {
        v = visual;
    }
    lm_forward(bundle, tokens, v, slot, tokens.size(), out);
    return extract_ret_embedding<T>(out.hiddens.row_span(tokens.size() - 1), bundle.w_t);
}

template <typename T>
RetrievalReport eval_retrieval(const ModelBundle<T>& bundle, const Manifest& manifest,
                               const RetrievalIndex& index, RetrievalMode mode,
                               const TemplateSet& templates) {
    const auto fp = bundle.vision_fingerprint();
    if (index.fingerprint() != fp) {
        throw InvalidArgument("index fingerprint does not match the checkpoint's vision encoder");
    }
    const auto& instruction = templates.for_mode(mode).front();
    const auto& answer = templates.answers.front();
    std::vector<QueryResult> results;
    std::vector<StickerId> golds;
    const auto& ids = index.ids();
    for (std::size_t g = 0; g < ids.size(); ++g) {
        const auto& rec = manifest.by_id(ids[g]);
        std::vector<T> visual;
        std::string text;
        if (mode != RetrievalMode::i2i) {
            text = rec.description;
        }
        if (mode != RetrievalMode::t2i) {
            const auto& input =
                mode == RetrievalMode::i2i ? rec : manifest.by_id(ids[(g + 1) % ids.size()]);
            visual = encode_record_image(bundle.vision, input);
        }
        const auto q = to_float(ret_query_embedding<T>(bundle, instruction, answer, text, visual));
        const QueryKind kind = mode == RetrievalMode::t2i   ? QueryKind::text
                               : mode == RetrievalMode::i2i ? QueryKind::image
                                                            : QueryKind::image_text;
        results.push_back(index.search(q, 10, kind));
        golds.push_back(rec.id);
    }
    return make_report(std::string(to_string(mode)), results, golds, index.fingerprint());
}

template <typename T>
double eval_tool_selection(const ModelBundle<T>& bundle, std::span<const ToolPrompt> prompts,
                           bool expect_ret, std::size_t max_new) {
    if (prompts.empty()) {
        throw InvalidArgument("eval_tool_selection: empty prompt list");
    }
    const Token ret = bundle.tokenizer.special(SpecialToken::ret);
    const std::array<Token, 1> stop = {ret};
    std::size_t correct = 0;
    for (const auto& p : prompts) {
        std::vector<T> row;
        if (p.slot) {
            const std::vector<T> v(p.visual.begin(), p.visual.end());
            row = project_visual(bundle, std::span<const T>(v));
        }
        const auto reply = greedy_decode<T>(bundle.lm, p.tokens, max_new, stop, p.slot, row);
        const bool used = std::find(reply.begin(), reply.end(), ret) != reply.end();
        if (used == expect_ret) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(prompts.size());
}

std::vector<ToolPrompt> chat_prompts(const Tokenizer& tokenizer, std::uint64_t seed,
                                     std::size_t n) {
    std::vector<ToolPrompt> out;
    for (const auto& task : chat_task_pool(seed, n)) {
        out.push_back({render_chat_prompt(task, tokenizer), std::nullopt, {}});
    }
    return out;
}

std::vector<ToolPrompt> retrieval_prompts(const ModelBundle<float>& bundle,
                                          const Manifest& manifest, const TemplateSet& templates,
                                          bool prefixed) {
    const auto idx = manifest.indices(Split::test);
    if (idx.empty()) {
        throw InvalidArgument("retrieval prompts need a non-empty test split");
    }
    std::vector<ToolPrompt> out;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto& rec = manifest.records[idx[k]];
        const auto mode = static_cast<RetrievalMode>(k % 3);
        const auto& list = templates.for_mode(mode);
        const auto& instruction = list[(k / 3) % list.size()];
        std::optional<StickerId> input;
        if (mode == RetrievalMode::i2i) {
            input = rec.id;
        } else if (mode == RetrievalMode::it2i) {
            input = manifest.records[idx[(k + 1) % idx.size()]].id;
        }
        const auto sample = make_instruction(mode, prefixed, instruction, templates.answers.front(),
                                             rec, input, bundle.tokenizer);
        const auto rendered = render_prompt(sample, bundle.tokenizer);
        ToolPrompt p{rendered.tokens, rendered.image_slot, {}};
        if (input) {
            p.visual = encode_record_image(bundle.vision, manifest.by_id(*input));
        }
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<ToolReport> eval_tool_scenarios(const ModelBundle<float>& bundle,
                                            const Manifest& manifest, std::uint64_t chat_seed) {
    const auto in_domain = TemplateSet::defaults();
    const auto out_domain = TemplateSet::held_out();
    std::vector<ToolReport> reports;
    auto add = [&](std::string name, const std::vector<ToolPrompt>& prompts, bool expect) {
        reports.push_back({std::move(name), eval_tool_selection<float>(bundle, prompts, expect),
                           prompts.size()});
    };
    add("a_non_retrieval", chat_prompts(bundle.tokenizer, chat_seed), false);
    add("b_in_domain", retrieval_prompts(bundle, manifest, in_domain, false), true);
    add("c_out_of_domain", retrieval_prompts(bundle, manifest, out_domain, false), true);
    add("d_in_domain_prefixed", retrieval_prompts(bundle, manifest, in_domain, true), true);
    add("e_out_of_domain_prefixed", retrieval_prompts(bundle, manifest, out_domain, true), true);
    return reports;
}

#define STICKER_EVAL(T)                                                                          \
    template RetrievalReport eval_clip_t2i(const ModelBundle<T>&, const Manifest&, Split,       \
                                           const RetrievalIndex*);                               \
    template std::vector<T> ret_query_embedding(const ModelBundle<T>&, std::string_view,         \
                                                std::string_view, std::string_view,              \
                                                std::span<const T>, bool);                       \
    template RetrievalReport eval_retrieval(const ModelBundle<T>&, const Manifest&,              \
                                            const RetrievalIndex&, RetrievalMode,                \
                                            const TemplateSet&);                                 \
    template double eval_tool_selection(const ModelBundle<T>&, std::span<const ToolPrompt>,     \
                                        bool, std::size_t);

STICKER_EVAL(float)
STICKER_EVAL(double)

#undef STICKER_EVAL

}  // namespace sticker
