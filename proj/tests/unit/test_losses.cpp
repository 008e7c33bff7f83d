#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sticker/error.hpp"
#include "sticker/grad_check.hpp"
#include "sticker/losses.hpp"
#include "sticker/rng.hpp"

using namespace sticker;

namespace {

ContrastiveBatch<double> from_sims(const oracle::Matrix& s, double tau) {
    // Text rows are the identity basis, so image row j has sims s[.][j] as coordinates.
    const std::size_t n = s.size();
    ContrastiveBatch<double> b;
    b.text = Mat<double>(n, n);
    b.image = Mat<double>(n, n);
    b.tau = tau;
    for (std::size_t i = 0; i < n; ++i) {
        b.text(i, i) = 1.0;
        for (std::size_t j = 0; j < n; ++j) {
            b.image(j, i) = s[i][j];
        }
    }
    return b;
}

oracle::Matrix to_rows(const Mat<double>& m) {
    oracle::Matrix out(m.rows, std::vector<double>(m.cols));
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) out[i][j] = m(i, j);
    }
    return out;
}

ContrastiveBatch<double> random_batch(Rng& rng, std::size_t n, std::size_t d, double tau) {
    ContrastiveBatch<double> b;
    b.text = Mat<double>(n, d);
    b.image = Mat<double>(n, d);
    b.tau = tau;
    for (auto* m : {&b.text, &b.image}) {
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> raw(d);
            for (auto& v : raw) v = rng.normal();
            l2_normalize<double>(raw, m->row_span(i));
        }
    }
    return b;
}

}  // namespace

TEST_CASE("two-pair hand case equals log(1 + e^-1)") {
    const auto b = from_sims({{1, 0}, {0, 1}}, 1.0);
    CHECK(info_nce_t2i(b) == doctest::Approx(std::log(1 + std::exp(-1.0))).epsilon(1e-12));
    CHECK(info_nce_t2i(b) == doctest::Approx(0.31326).epsilon(1e-5));
    CHECK(info_nce_i2t(b) == doctest::Approx(0.31326).epsilon(1e-5));
}

TEST_CASE("single pair has zero loss") {
    Rng rng(3);
    const auto b = random_batch(rng, 1, 6, 0.07);
    CHECK(info_nce_t2i(b) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(info_nce_i2t(b) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(clip_total(b) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("equal similarities give log N") {
    for (std::size_t n : {2u, 5u, 8u}) {
        for (double tau : {0.01, 0.5, 3.0}) {
            const oracle::Matrix s(n, std::vector<double>(n, 0.3));
            const auto b = from_sims(s, tau);
            CHECK(info_nce_t2i(b) == doctest::Approx(std::log(static_cast<double>(n))).epsilon(1e-12));
            CHECK(info_nce_i2t(b) == doctest::Approx(std::log(static_cast<double>(n))).epsilon(1e-12));
        }
    }
}

TEST_CASE("asymmetric two-pair case matches the oracle") {
    const oracle::Matrix s = {{0.9, 0.1}, {0.8, 0.7}};
    const auto b = from_sims(s, 1.0);
    CHECK(info_nce_t2i(b) == doctest::Approx(oracle::row_ce(s, 1.0)).epsilon(1e-12));
    CHECK(info_nce_i2t(b) == doctest::Approx(oracle::row_ce(oracle::transpose(s), 1.0)).epsilon(1e-12));
    CHECK(info_nce_t2i(b) != doctest::Approx(info_nce_i2t(b)));
}

TEST_CASE("symmetric similarity makes both directions equal") {
    const oracle::Matrix s = {{0.9, 0.2, -0.1}, {0.2, 0.5, 0.4}, {-0.1, 0.4, 0.7}};
    const auto b = from_sims(s, 0.3);
    CHECK(std::abs(info_nce_t2i(b) - info_nce_i2t(b)) < 1e-12);
    CHECK(clip_total(b) == doctest::Approx(2 * info_nce_t2i(b)).epsilon(1e-12));
}

TEST_CASE("losses match brute-force oracles on random batches") {
    Rng rng(2024);
    for (int trial = 0; trial < 120; ++trial) {
        const std::size_t n = 1 + rng.below(8);
        const std::size_t d = 2 + rng.below(10);
        const double tau = 0.05 + rng.uniform();
        const auto b = random_batch(rng, n, d, tau);
        const auto t = to_rows(b.text);
        const auto im = to_rows(b.image);
        const double ot = oracle::t2i(t, im, tau);
        const double oi = oracle::i2t(t, im, tau);
        CHECK(std::abs(info_nce_t2i(b) - ot) < 1e-9);
        CHECK(std::abs(info_nce_i2t(b) - oi) < 1e-9);
        CHECK(std::abs(clip_total(b) - (ot + oi)) < 1e-9);
        double lt = 0, li = 0;
        const auto g = clip_total_grad(b, &lt, &li);
        CHECK(std::abs(g.loss - (ot + oi)) < 1e-9);
        CHECK(std::abs(lt - ot) < 1e-9);
        CHECK(std::abs(li - oi) < 1e-9);
    }
}

TEST_CASE("InfoNCE is invariant under a joint permutation") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + rng.below(7);
        const auto b = random_batch(rng, n, 8, 0.1);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(perm.begin(), perm.end());
        ContrastiveBatch<double> p = b;
        for (std::size_t i = 0; i < n; ++i) {
            std::copy(b.text.row(perm[i]), b.text.row(perm[i]) + 8, p.text.row(i));
            std::copy(b.image.row(perm[i]), b.image.row(perm[i]) + 8, p.image.row(i));
        }
        CHECK(info_nce_t2i(p) == doctest::Approx(info_nce_t2i(b)).epsilon(1e-12));
        CHECK(info_nce_i2t(p) == doctest::Approx(info_nce_i2t(b)).epsilon(1e-12));
    }
}

TEST_CASE("InfoNCE falls as the positive similarity rises") {
    oracle::Matrix s = {{0.1, 0.3, 0.2}, {0.0, 0.4, 0.1}, {0.2, 0.2, 0.3}};
    double prev_t = 1e9, prev_i = 1e9;
    for (double pos = -0.5; pos <= 1.0; pos += 0.25) {
        s[0][0] = pos;
        const auto b = from_sims(s, 0.2);
        CHECK(info_nce_t2i(b) < prev_t);
        CHECK(info_nce_i2t(b) < prev_i);
        prev_t = info_nce_t2i(b);
        prev_i = info_nce_i2t(b);
    }
}

TEST_CASE("losses stay finite at the temperature floor") {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const auto b = random_batch(rng, 8, 4, 1e-3);
        CHECK(std::isfinite(clip_total(b)));
        CHECK(std::isfinite(clip_total_grad(b).d_tau));
    }
}

TEST_CASE("contrastive losses reject bad input") {
    Rng rng(1);
    auto b = random_batch(rng, 3, 4, 0.0);
    CHECK_THROWS_AS(info_nce_t2i(b), InvalidArgument);
    b.tau = 0.1;
    b.image = Mat<double>(2, 4);
    CHECK_THROWS_AS(clip_total(b), InvalidArgument);
}

TEST_CASE("lm_nll: uniform logits give log(vocab)") {
    const std::size_t vocab = 155;
    Mat<double> logits(4, vocab);
    const std::vector<Token> targets = {3, 7, 100, 154};
    const std::vector<std::uint8_t> mask = {1, 1, 1, 1};
    CHECK(lm_nll(logits, targets, mask) == doctest::Approx(std::log(155.0)).epsilon(1e-12));
    CHECK(std::log(155.0) == doctest::Approx(5.0434).epsilon(1e-4));
}

TEST_CASE("lm_nll: one masked-in position gives -log p") {
    Mat<double> logits(3, 4);
    logits(1, 0) = std::log(0.5);
    logits(1, 1) = std::log(0.25);
    logits(1, 2) = std::log(0.125);
    logits(1, 3) = std::log(0.125);
    logits(0, 2) = 9.0;  // masked out
    const std::vector<Token> targets = {0, 1, 3};
    const std::vector<std::uint8_t> mask = {0, 1, 0};
    CHECK(lm_nll(logits, targets, mask) == doctest::Approx(-std::log(0.25)).epsilon(1e-12));
}

TEST_CASE("lm_nll matches the oracle and is shift invariant") {
    Rng rng(77);
    for (int trial = 0; trial < 120; ++trial) {
        const std::size_t rows = 1 + rng.below(8);
        const std::size_t vocab = 2 + rng.below(20);
        Mat<double> logits(rows, vocab);
        oracle::Matrix ol(rows, std::vector<double>(vocab));
        std::vector<Token> targets(rows);
        std::vector<int> ot(rows);
        std::vector<std::uint8_t> mask(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < vocab; ++c) {
                logits(r, c) = ol[r][c] = 3.0 * rng.normal();
            }
            targets[r] = ot[r] = static_cast<int>(rng.below(vocab));
            mask[r] = rng.uniform() < 0.6;
        }
        mask[rng.below(rows)] = 1;
        const double expected = oracle::nll(ol, ot, mask);
        CHECK(std::abs(lm_nll(logits, targets, mask) - expected) < 1e-9);

        Mat<double> shifted = logits;
        for (auto& v : shifted.data) v += 17.25;
        CHECK(std::abs(lm_nll(shifted, targets, mask) - expected) < 1e-9);

        Mat<double> d(rows, vocab);
        CHECK(std::abs(lm_nll_grad(logits, targets, mask, d) - expected) < 1e-9);
    }
}

TEST_CASE("lm_nll rejects an all-false mask") {
    Mat<double> logits(2, 3);
    const std::vector<Token> targets = {0, 1};
    const std::vector<std::uint8_t> mask = {0, 0};
    CHECK_THROWS_AS(lm_nll(logits, targets, mask), InvalidArgument);
}

TEST_CASE("combined loss") {
    CHECK(combined_loss(0.5, 0.3, 0.3, 1.0) == doctest::Approx(1.1).epsilon(1e-12));
    CHECK(combined_loss(0.5, 0.3, 0.3) == doctest::Approx(1.1).epsilon(1e-12));
    CHECK(combined_loss(0.7, 4.0, 9.0, 0.0) == 0.7);
    CHECK_THROWS_AS(combined_loss(0.7, 4.0, 9.0, -1.0), InvalidArgument);
}

TEST_CASE("grad_check on a quadratic is exact") {
    Param<double> x("x", {5});
    x.value = {0.5, -1.0, 2.0, 0.25, -3.0};
    ParamList<double> params = {&x};
    auto loss = [&](bool with_grads) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            s += 0.5 * x.value[i] * x.value[i];
            if (with_grads) x.grad[i] += x.value[i];
        }
        return s;
    };
    const auto r = grad_check(loss, params);
    CHECK(r.ok);
    CHECK(r.checked == 5);
    CHECK(r.max_rel_error < 1e-9);
}

TEST_CASE("grad_check catches a wrong gradient") {
    Param<double> x("x", {3});
    x.value = {1.0, 2.0, 3.0};
    ParamList<double> params = {&x};
    auto loss = [&](bool with_grads) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            s += x.value[i] * x.value[i];
            if (with_grads) x.grad[i] += x.value[i];  // missing factor 2
        }
        return s;
    };
    CHECK(grad_check(loss, params).max_rel_error > 0.3);
}

TEST_CASE("loss gradients wrt pre-normalization embeddings") {
    GradCheckOptions opts;
    opts.eps = 1e-5;
    for (const auto& c : run_grad_checks("losses", 11, opts)) {
        INFO(c.name);
        CHECK(c.report.ok);
        CHECK(c.report.max_rel_error <= 1e-5);
    }
}
