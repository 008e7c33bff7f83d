#include <doctest.h>

#include <cmath>

#include "sticker/bundle.hpp"
#include "sticker/error.hpp"
#include "sticker/optimizer.hpp"
#include "sticker/trainer.hpp"

using namespace sticker;

namespace {

const Tokenizer& tok() {
    static const Tokenizer t = Tokenizer::build_default();
    return t;
}

ModelBundle<float> small_bundle(std::uint64_t seed) {
    auto cfg = BundleConfig::for_vocab(static_cast<std::size_t>(tok().base_size()));
    cfg.vision.width = 32;
    cfg.vision.layers = 1;
    cfg.vision.ff = 64;
    cfg.text.width = 32;
    cfg.text.layers = 1;
    cfg.text.ff = 64;
    cfg.lm.width = 32;
    cfg.lm.layers = 2;
    cfg.lm.heads = 2;
    cfg.lm.ff = 64;
    ModelBundle<float> b(cfg, tok());
    b.init(seed);
    return b;
}

TrainConfig short_config(std::size_t steps, std::size_t batch) {
    TrainConfig c;
    c.total_steps = steps;
    c.warmup_steps = 1;
    c.batch_size = batch;
    c.lr = 1e-3;
    c.seed = 3;
    return c;
}

std::vector<double> losses(const TrainResult& r) {
    std::vector<double> out;
    for (const auto& s : r.steps) out.push_back(s.loss);
    return out;
}

}  // namespace

TEST_CASE("cosine schedule") {
    TrainConfig c;
    c.lr = 0.1;
    c.total_steps = 100;
    c.warmup_steps = 10;
    CHECK(cosine_lr(0, c) == 0.0);
    CHECK(cosine_lr(5, c) == doctest::Approx(0.05));
    CHECK(cosine_lr(10, c) == doctest::Approx(0.1));
    CHECK(cosine_lr(55, c) == doctest::Approx(0.05));
    CHECK(cosine_lr(100, c) == 0.0);
    CHECK(cosine_lr(150, c) == 0.0);
    double prev = cosine_lr(10, c);
    for (std::size_t s = 11; s <= 100; ++s) {
        const double lr = cosine_lr(s, c);
        CHECK(lr >= 0.0);
        CHECK(lr <= prev);
        prev = lr;
    }
    c.warmup_steps = 0;
    CHECK(cosine_lr(0, c) == doctest::Approx(0.1));
}

TEST_CASE("masked step contracts") {
    Param<double> p("p", {4}, true);
    p.value = {1.0, -2.0, 0.5, 3.0};
    ParamList<double> list{&p};

    SUBCASE("all-false mask never moves") {
        p.set_trainable(false);
        OptimizerState<double> st(list);
        const auto before = p.value;
        for (int i = 0; i < 20; ++i) {
            p.grad = {1.0, -1.0, 2.0, 0.3};
            masked_step(list, st, 0.1, 0.5);
        }
        CHECK(p.value == before);
        CHECK(st.m[0] == std::vector<double>(4, 0.0));
    }
    SUBCASE("zero gradient without decay is a fixed point") {
        OptimizerState<double> st(list);
        const auto before = p.value;
        for (int i = 0; i < 5; ++i) {
            p.zero_grad();
            masked_step(list, st, 0.1, 0.0);
        }
        CHECK(p.value == before);
    }
    SUBCASE("partial mask") {
        p.trainable = {1, 0, 1, 0};
        OptimizerState<double> st(list);
        p.grad = {1.0, 1.0, 1.0, 1.0};
        masked_step(list, st, 0.1, 0.0);
        CHECK(p.value[1] == -2.0);
        CHECK(p.value[3] == 3.0);
        CHECK(p.value[0] != 1.0);
    }
}

TEST_CASE("first bias-corrected step moves by lr") {
    Param<double> x("x", {1});
    x.value = {0.7};
    ParamList<double> list{&x};
    OptimizerState<double> st(list);
    x.grad = {1.0};
    masked_step(list, st, 0.1, 0.0);
    // m_hat = 1, v_hat = 1, so the update is lr / (1 + eps).
    CHECK(x.value[0] - 0.7 == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-12));
    x.grad = {1.0};
    masked_step(list, st, 0.1, 0.0);
    CHECK(x.value[0] - 0.6 == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("decoupled decay applies only to flagged params") {
    Param<double> w("w", {1}, true);
    Param<double> b("b", {1}, false);
    w.value = {2.0};
    b.value = {2.0};
    ParamList<double> list{&w, &b};
    OptimizerState<double> st(list);
    masked_step(list, st, 0.1, 0.5);
    CHECK(w.value[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
    CHECK(b.value[0] == 2.0);
}

TEST_CASE("gradient clipping") {
    Param<double> a("a", {2});
    Param<double> f("f", {1});
    a.grad = {3.0, 4.0};
    f.grad = {100.0};
    f.set_trainable(false);
    ParamList<double> list{&a, &f};
    CHECK(grad_norm(list) == doctest::Approx(5.0));
    CHECK(clip_grad_norm(list, 1.0) == doctest::Approx(5.0));
    CHECK(a.grad[0] == doctest::Approx(0.6));
    CHECK(a.grad[1] == doctest::Approx(0.8));
    CHECK(f.grad[0] == 100.0);
    CHECK(clip_grad_norm(list, 10.0) == doctest::Approx(1.0));
    CHECK(a.grad[0] == doctest::Approx(0.6));
}

TEST_CASE("training config parsing") {
    const auto base = TrainConfig::llm_defaults();
    CHECK(base.lambda == 1.0);
    CHECK(base.weight_decay == 0.0);
    CHECK(base.batch_size == 32);
    const auto c = TrainConfig::from_json(nlohmann::json::parse(R"({"total_steps": 200})"), base);
    CHECK(c.total_steps == 200);
    CHECK(c.warmup_steps == 10);
    CHECK(c.lr == base.lr);
    const auto d = TrainConfig::from_json(c.to_json(), TrainConfig{});
    CHECK(d.to_json() == c.to_json());
    CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json::parse(R"({"bogus": 1})"), base),
                    InvalidArgument);
    CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json::parse(R"({"lr": -1})"), base),
                    InvalidArgument);
    CHECK_THROWS_AS(
        TrainConfig::from_json(nlohmann::json::parse(R"({"total_steps": 5, "warmup_steps": 6})"), base),
        InvalidArgument);
    CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json::parse("[1]"), base), InvalidArgument);
    CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json::parse(R"({"precision": "half"})"), base),
                    InvalidArgument);
}

TEST_CASE("dual-encoder training: start loss, determinism, frozen LM") {
    const auto m = generate_synthetic_corpus(7, 60, 0.25);
    const auto cfg = short_config(4, 16);
    TrainHooks hooks;
    hooks.evaluate = false;

    auto a = small_bundle(1);
    const auto lm_before = a.lm.tok_emb.value;
    const auto ra = train_sticker_clip(cfg, m, a, hooks);
    auto b = small_bundle(1);
    const auto rb = train_sticker_clip(cfg, m, b, hooks);

    REQUIRE(ra.steps.size() == 4);
    CHECK(losses(ra) == losses(rb));
    const double uniform = 2.0 * std::log(16.0);
    CHECK(std::abs(ra.steps[0].loss - uniform) <= 0.2 * uniform);
    CHECK(a.lm.tok_emb.value == lm_before);
    CHECK(a.log_tau.value == b.log_tau.value);
    for (const auto& s : ra.steps) {
        CHECK(std::isfinite(s.loss));
        CHECK(s.loss == doctest::Approx(s.loss_t2i + s.loss_i2t));
    }

    auto c = small_bundle(1);
    auto too_big = cfg;
    too_big.batch_size = 1000;
    CHECK_THROWS_AS(train_sticker_clip(too_big, m, c, hooks), InvalidArgument);
}

TEST_CASE("retrieval-token training keeps the frozen subset bit-identical") {
    const auto m = generate_synthetic_corpus(7, 40, 0.25);
    auto cfg = short_config(3, 6);
    cfg.weight_decay = 0.0;
    TrainHooks hooks;
    hooks.evaluate = false;

    auto plain = small_bundle(2);
    CHECK_THROWS_AS(train_sticker_llm(cfg, m, plain, TemplateSet::defaults(), hooks), InvalidState);

    auto a = small_bundle(2);
    Rng ra(4);
    a.extend(ra);
    const auto frozen = masked_digest(a, false);
    const auto live = masked_digest(a, true);
    const auto res_a = train_sticker_llm(cfg, m, a, TemplateSet::defaults(), hooks);
    CHECK(masked_digest(a, false) == frozen);
    CHECK(masked_digest(a, true) != live);

    auto b = small_bundle(2);
    Rng rb(4);
    b.extend(rb);
    const auto res_b = train_sticker_llm(cfg, m, b, TemplateSet::defaults(), hooks);
    CHECK(losses(res_a) == losses(res_b));
    for (const auto& s : res_a.steps) {
        CHECK(std::isfinite(s.loss));
        CHECK(s.loss == doctest::Approx(s.loss_c + cfg.lambda * (s.loss_t2i + s.loss_i2t)));
    }
}

TEST_CASE("base LM pretraining is deterministic and reduces the loss") {
    auto cfg = short_config(30, 8);
    cfg.lr = 3e-3;
    TrainHooks hooks;
    hooks.evaluate = false;
    auto a = small_bundle(5);
    auto b = small_bundle(5);
    const auto ra = pretrain_base_lm(cfg, a, hooks);
    const auto rb = pretrain_base_lm(cfg, b, hooks);
    CHECK(losses(ra) == losses(rb));
    CHECK(a.lm_pretrained);
    double head = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
        head += ra.steps[i].loss;
        tail += ra.steps[ra.steps.size() - 1 - i].loss;
    }
    CHECK(tail < head);
}
