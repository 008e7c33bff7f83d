#include <cmath>

#include "sticker/chat_tasks.hpp"
#include "sticker/error.hpp"
#include "sticker/grad_check.hpp"
#include "sticker/losses.hpp"
#include "sticker/trainer.hpp"

namespace sticker {

namespace {

void fill_normal(Param<double>& p, Rng& rng, double std) {
    for (auto& v : p.value) {
        v = std * rng.normal();
    }
}

using ContrastiveFn = ContrastiveGrad<double> (*)(const ContrastiveBatch<double>&);

ContrastiveGrad<double> total_grad(const ContrastiveBatch<double>& b) { return clip_total_grad(b); }

// Raw rows -> normalize -> loss; gradients flow back through the normalization.
NamedGradCheck contrastive_check(const std::string& name, ContrastiveFn fn, std::size_t n,
                                 std::size_t d, Rng& rng, const GradCheckOptions& opts) {
    Param<double> text("raw_text", {n, d});
    Param<double> image("raw_image", {n, d});
    Param<double> log_tau("log_tau", {1});
    fill_normal(text, rng, 1.0);
    fill_normal(image, rng, 1.0);
    log_tau.value[0] = std::log(0.05 + 0.5 * rng.uniform());
    ParamList<double> params = {&text, &image, &log_tau};

    auto loss = [&](bool with_grads) {
        ContrastiveBatch<double> b;
        b.text = Mat<double>(n, d);
        b.image = Mat<double>(n, d);
        b.tau = std::exp(log_tau.value[0]);
        std::vector<double> tn(n);
        std::vector<double> in(n);
        for (std::size_t i = 0; i < n; ++i) {
            tn[i] = l2_normalize<double>(std::span<const double>(text.value).subspan(i * d, d),
                                         b.text.row_span(i));
            in[i] = l2_normalize<double>(std::span<const double>(image.value).subspan(i * d, d),
                                         b.image.row_span(i));
        }
        const auto g = fn(b);
        if (with_grads) {
            for (std::size_t i = 0; i < n; ++i) {
                l2_normalize_backward<double>(b.text.row_span(i), tn[i], g.d_text.row_span(i),
                                              std::span<double>(text.grad).subspan(i * d, d));
                l2_normalize_backward<double>(b.image.row_span(i), in[i], g.d_image.row_span(i),
                                              std::span<double>(image.grad).subspan(i * d, d));
            }
            log_tau.grad[0] += g.d_tau * b.tau;
        }
        return g.loss;
    };
    return {name, grad_check(loss, params, opts)};
}

NamedGradCheck lm_nll_check(std::size_t rows, std::size_t vocab, Rng& rng,
                            const GradCheckOptions& opts) {
    Param<double> logits("logits", {rows, vocab});
    fill_normal(logits, rng, 2.0);
    std::vector<Token> targets(rows);
    std::vector<std::uint8_t> mask(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        targets[r] = static_cast<Token>(rng.below(vocab));
        mask[r] = rng.uniform() < 0.7 ? 1 : 0;
    }
    mask[0] = 1;
    ParamList<double> params = {&logits};
    auto loss = [&](bool with_grads) {
        Mat<double> m(rows, vocab);
        m.data = logits.value;
        if (!with_grads) {
            return lm_nll(m, targets, mask);
        }
        Mat<double> d(rows, vocab);
        const double l = lm_nll_grad(m, targets, mask, d);
        for (std::size_t i = 0; i < d.data.size(); ++i) {
            logits.grad[i] += d.data[i];
        }
        return l;
    };
    return {"lm_nll/logits", grad_check(loss, params, opts)};
}

BundleConfig tiny_config(std::size_t base_vocab) {
    auto c = BundleConfig::for_vocab(base_vocab);
    c.embed_dim = 8;
    c.vision.width = 16;
    c.vision.layers = 1;
    c.vision.heads = 2;
    c.vision.ff = 32;
    c.vision.embed_dim = 8;
    c.text.width = 16;
    c.text.layers = 1;
    c.text.heads = 2;
    c.text.ff = 32;
    c.text.embed_dim = 8;
    c.lm.width = 16;
    c.lm.layers = 2;
    c.lm.heads = 2;
    c.lm.ff = 32;
    return c;
}

// Random init is too close to zero for a meaningful check of LN/attention curvature; widen
// the weights so every path carries signal.
void spread(ParamList<double>& params, Rng& rng) {
    for (auto* p : params) {
        for (auto& v : p->value) {
            v += 0.1 * rng.normal();
        }
    }
}

std::vector<NamedGradCheck> clip_suite(std::uint64_t seed, const GradCheckOptions& opts) {
    const auto tok = Tokenizer::build_default();
    ModelBundle<double> bundle(tiny_config(static_cast<std::size_t>(tok.base_size())), tok);
    bundle.init(seed);
    Rng rng(hash_combine(seed, 0xC11Bu));
    {
        auto all = bundle.params();
        spread(all, rng);
    }
    bundle.log_tau.value[0] = std::log(0.1);
    const auto manifest = generate_synthetic_corpus(seed, 12, 0.5);
    std::vector<ClipExample> batch;
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& rec = manifest.records[i];
        batch.push_back({tok.encode(build_pair_text(rec, tok, 12)), select_frames(rec)});
    }
    ParamList<double> params;
    bundle.vision.collect(params);
    bundle.text.collect(params);
    params.push_back(&bundle.log_tau);
    auto loss = [&](bool with_grads) { return clip_objective<double>(bundle, batch, with_grads).total; };
    return {{"clip_total/encoders", grad_check(loss, params, opts)}};
}

std::vector<NamedGradCheck> llm_suite(std::uint64_t seed, const GradCheckOptions& opts) {
    const auto tok = Tokenizer::build_default();
    ModelBundle<double> bundle(tiny_config(static_cast<std::size_t>(tok.base_size())), tok);
    bundle.init(seed);
    Rng rng(hash_combine(seed, 0x11Bu));
    {
        auto all = bundle.params();
        spread(all, rng);
    }
    std::vector<NamedGradCheck> out;

    // Next-token loss through every LM parameter.
    {
        std::vector<std::vector<Token>> seqs;
        for (int i = 0; i < 2; ++i) {
            seqs.push_back(render_chat_sequence(sample_chat_task(rng), tok).tokens);
        }
        ParamList<double> params;
        bundle.lm.collect(params);
        auto loss = [&](bool with_grads) {
            return lm_sequence_objective<double>(bundle.lm, seqs, with_grads);
        };
        out.push_back({"lm_nll/full_lm", grad_check(loss, params, opts)});
    }

    // Combined objective through the retrieval rows, W_t and W_c.
    bundle.extend(rng, 0.1);
    const auto manifest = generate_synthetic_corpus(seed, 12, 0.25);
    const auto templates = TemplateSet::defaults();
    std::vector<std::vector<double>> emb;
    for (const auto& rec : manifest.records) {
        emb.push_back(encode_record_image(bundle.vision, rec));
    }
    std::vector<LlmExample<double>> batch;
    const RetrievalMode modes[] = {RetrievalMode::t2i, RetrievalMode::i2i, RetrievalMode::it2i,
                                   RetrievalMode::it2i};
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& rec = manifest.records[i];
        const auto mode = modes[i];
        std::optional<StickerId> input;
        const std::vector<double>* input_emb = nullptr;
        if (mode != RetrievalMode::t2i) {
            const std::size_t j = mode == RetrievalMode::i2i ? i : i + 4;
            input = manifest.records[j].id;
            input_emb = &emb[j];
        }
        const auto sample = make_instruction(mode, i % 2 == 1, templates.for_mode(mode).front(),
                                             templates.answers.front(), rec, input, tok);
        batch.push_back(make_llm_example<double>(bundle, sample, emb[i], input_emb));
    }
    ParamList<double> params = {&bundle.lm.tok_emb, &bundle.lm.head, &bundle.w_t.weight,
                                &bundle.w_c.weight};
    auto loss = [&](bool with_grads) {
        return llm_objective<double>(bundle, batch, 1.0, with_grads, false).total;
    };
    out.push_back({"combined/w_t_w_c", grad_check(loss, params, opts)});
    return out;
}

}  // namespace

std::vector<NamedGradCheck> run_grad_checks(std::string_view component, std::uint64_t seed,
                                            const GradCheckOptions& options) {
    Rng rng(hash_combine(seed, 0x105Eu));
    if (component == "losses") {
        std::vector<NamedGradCheck> out;
        const std::size_t n = 2 + rng.below(7);
        out.push_back(contrastive_check("info_nce_t2i/raw", &info_nce_t2i_grad<double>, n, 8, rng, options));
        out.push_back(contrastive_check("info_nce_i2t/raw", &info_nce_i2t_grad<double>, n, 8, rng, options));
        out.push_back(contrastive_check("clip_total/raw", &total_grad, n, 8, rng, options));
        out.push_back(lm_nll_check(6, 11, rng, options));
        return out;
    }
    if (component == "clip") {
        return clip_suite(seed, options);
    }
    if (component == "llm") {
        return llm_suite(seed, options);
    }
    throw InvalidArgument("unknown grad-check component '" + std::string(component) +
                          "' (expected losses, clip or llm)");
}

}  // namespace sticker
