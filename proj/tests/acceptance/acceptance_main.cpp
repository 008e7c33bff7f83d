// End-to-end acceptance run. Prints one PASS/FAIL line per criterion; criteria passed with
// --known-gaps are still run and reported but do not affect the exit code.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "sticker/checkpoint.hpp"
#include "sticker/evaluation.hpp"
#include "sticker/grad_check.hpp"
#include "sticker/losses.hpp"
#include "sticker/manifest_io.hpp"
#include "sticker/service.hpp"
#include "sticker/trainer.hpp"

using namespace sticker;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    int id;
    bool pass;
    std::string detail;
};

std::vector<Outcome> outcomes;

void report(int id, bool pass, const std::string& detail) {
    outcomes.push_back({id, pass, detail});
    std::cerr << "[acceptance] criterion " << id << " done" << std::endl;
}

std::string fmt(double x, int prec = 4) {
    std::ostringstream ss;
    ss.precision(prec);
    ss << x;
    return ss.str();
}

void note(const std::string& s) { std::cerr << "[acceptance] " << s << std::endl; }

// ---------------------------------------------------------------------------

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

oracle::Matrix rows_of(const Mat<double>& m) {
    oracle::Matrix out(m.rows, std::vector<double>(m.cols));
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) out[i][j] = m(i, j);
    }
    return out;
}

void criterion_losses() {
    const auto t0 = Clock::now();
    Rng rng(101);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.below(8);
        const double tau = 0.05 + rng.uniform();
        const auto b = random_batch(rng, n, 6, tau);
        const auto t = rows_of(b.text), im = rows_of(b.image);
        const double want_t2i = oracle::t2i(t, im, tau);
        const double want_i2t = oracle::i2t(t, im, tau);
        worst = std::max(worst, std::abs(info_nce_t2i(b) - want_t2i));
        worst = std::max(worst, std::abs(info_nce_i2t(b) - want_i2t));
        worst = std::max(worst, std::abs(clip_total(b) - (want_t2i + want_i2t)));

        const std::size_t vocab = 3 + rng.below(10);
        Mat<double> logits(n, vocab);
        oracle::Matrix lrows(n, std::vector<double>(vocab));
        std::vector<Token> targets(n);
        std::vector<int> itargets(n);
        std::vector<std::uint8_t> mask(n);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < vocab; ++c) {
                lrows[r][c] = logits(r, c) = 3.0 * rng.normal();
            }
            itargets[r] = static_cast<int>(rng.below(vocab));
            targets[r] = itargets[r];
            mask[r] = rng.uniform() < 0.7 ? 1 : 0;
        }
        mask[rng.below(n)] = 1;
        worst = std::max(worst, std::abs(lm_nll<double>(logits, targets, mask) -
                                         oracle::nll(lrows, itargets, mask)));
    }
    ContrastiveBatch<double> hand;
    hand.text = Mat<double>(2, 2);
    hand.image = Mat<double>(2, 2);
    hand.tau = 1.0;
    hand.text(0, 0) = hand.text(1, 1) = hand.image(0, 0) = hand.image(1, 1) = 1.0;
    const double h = info_nce_t2i(hand);
    const double secs = seconds_since(t0);
    const bool pass = worst <= 1e-9 && std::abs(h - 0.31326) <= 1e-5 && secs < 5.0;
    report(1, pass,
           "max |lib - oracle| " + fmt(worst) + ", N=2 case " + fmt(h, 8) + ", " + fmt(secs, 3) + " s");
}

void criterion_grad_checks() {
    const auto t0 = Clock::now();
    GradCheckOptions opt;
    opt.eps = 1e-3;
    double worst = 0.0;
    std::string worst_name;
    bool ok = true;
    for (const char* component : {"losses", "llm"}) {
        for (const auto& r : run_grad_checks(component, 1, opt)) {
            ok = ok && r.report.ok;
            if (r.report.max_rel_error > worst) {
                worst = r.report.max_rel_error;
                worst_name = r.name + "/" + r.report.worst_param;
            }
        }
    }
    const double secs = seconds_since(t0);
    report(2, ok && worst <= 1e-4 && secs < 120.0,
           "max rel error " + fmt(worst) + " (" + worst_name + "), " + fmt(secs, 3) + " s");
}

void criterion_mean_recall() {
    struct Row {
        double r1, r5, r10, mr;
    };
    const Row rows[] = {
        {5.8, 12.8, 17.0, 11.9},  {3.4, 7.6, 10.3, 7.1},   {43.3, 61.0, 66.5, 56.9},
        {33.0, 52.3, 59.3, 48.2}, {59.0, 76.0, 80.3, 71.8}, {57.9, 75.4, 79.8, 71.0},
        {13.3, 25.8, 32.1, 23.8}, {8.8, 18.1, 23.0, 16.7},  {58.8, 77.1, 81.9, 72.6},
        {52.4, 72.9, 78.5, 67.9}, {71.4, 87.7, 91.2, 83.4}, {71.3, 86.9, 90.0, 82.7},
        {96.9, 99.9, 99.9, 99.0}, {61.5, 82.4, 87.5, 77.1},
    };
    bool pass = true;
    double worst = 0.0;
    for (const auto& r : rows) {
        const double d = std::abs(mean_recall(r.r1, r.r5, r.r10) - r.mr);
        worst = std::max(worst, d);
        pass = pass && d <= 0.1 + 1e-9;
    }
    auto one_decimal = [](double x) { return std::round(x * 10.0) / 10.0; };
    pass = pass && one_decimal(mean_recall(5.8, 12.8, 17.0)) == 11.9 &&
           one_decimal(mean_recall(71.4, 87.7, 91.2)) == 83.4;
    report(3, pass, std::to_string(std::size(rows)) + " cells, max deviation " + fmt(worst, 3));
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> read_tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::ifstream in(e.path(), std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        out[fs::relative(e.path(), dir).string()] = ss.str();
    }
    return out;
}

std::vector<double> trace(const TrainResult& r) {
    std::vector<double> out;
    for (const auto& s : r.steps) out.push_back(s.loss);
    return out;
}

// Base-vocabulary logits of the LM for each prompt.
std::vector<std::vector<float>> base_logits(const ModelBundle<float>& b,
                                            const std::vector<ToolPrompt>& prompts,
                                            std::size_t base_vocab) {
    std::vector<std::vector<float>> out;
    LanguageModel<float>::Output o;
    for (const auto& p : prompts) {
        lm_forward<float>(b, p.tokens, std::nullopt, std::nullopt, 0, o);
        for (std::size_t r = 0; r < o.logits.rows; ++r) {
            const auto row = o.logits.row_span(r);
            out.emplace_back(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(base_vocab));
        }
    }
    return out;
}

bool within_chance(const RetrievalReport& r, std::size_t gallery) {
    const double n = static_cast<double>(gallery);
    return r.r1 <= 3.0 * 1.0 / n && r.r5 <= 3.0 * 5.0 / n && r.r10 <= 3.0 * 10.0 / n;
}

std::string recalls(const RetrievalReport& r) {
    return r.mode + " R@1/5/10 " + fmt(r.r1, 3) + "/" + fmt(r.r5, 3) + "/" + fmt(r.r10, 3) +
           " MR " + fmt(r.mr, 3);
}

void criterion_search_oracle(const ModelBundle<float>& bundle, const Manifest& manifest) {
    // Gallery: the test split plus train records that duplicate test rows, so exact score
    // ties occur and must resolve toward the lower id.
    const auto base = build_index(manifest, Split::test, bundle.vision, bundle.vision_fingerprint());
    std::vector<StickerId> ids = base.ids();
    std::vector<std::vector<float>> rows;
    for (std::size_t i = 0; i < base.size(); ++i) {
        rows.emplace_back(base.row(i).begin(), base.row(i).end());
    }
    const auto train = manifest.indices(Split::train);
    for (std::size_t j = 0; j < 24; ++j) {
        ids.push_back(manifest.records[train[j * 7]].id);
        rows.push_back(rows[j % base.size()]);
    }
    RetrievalIndex index(ids, rows, bundle.vision_fingerprint());
    ServiceConfig cfg;
    cfg.max_k = index.size();
    auto state = std::make_shared<const ServiceState>(ServiceState{
        bundle, index, manifest, cfg, TemplateSet::defaults(), "acceptance"});
    const Service svc(state);

    Rng rng(909);
    std::size_t agree = 0, ties = 0;
    const std::size_t queries = 100;
    for (std::size_t q = 0; q < queries; ++q) {
        json body;
        std::string text;
        std::vector<float> image;
        const auto pick = rng.below(3);
        if (pick != 1) {
            text = manifest.records[rng.below(manifest.records.size())].description;
            body["text"] = text;
        }
        if (pick != 0) {
            const auto id = index.ids()[rng.below(index.size())];
            body["image_id"] = id;
            image = encode_record_image(bundle.vision, manifest.by_id(id));
        }
        const std::size_t k = 1 + rng.below(index.size());
        body["k"] = k;
        const auto resp = svc.handle("POST", "/search", body.dump());
        const auto want = oracle::full_sort(index, service_query_embedding(*state, text, image), k);
        bool same = resp.status == 200;
        if (same) {
            const auto got = json::parse(resp.body)["results"];
            same = got.size() == want.size();
            for (std::size_t i = 0; same && i < want.size(); ++i) {
                same = got[i]["id"].get<StickerId>() == want[i].id &&
                       std::abs(got[i]["score"].get<double>() - want[i].score) <= 1e-6;
                if (i > 0 && want[i].score == want[i - 1].score) ++ties;
            }
        }
        agree += same ? 1 : 0;
    }
    report(9, agree == queries && ties > 0,
           std::to_string(agree) + "/" + std::to_string(queries) + " queries match, " +
               std::to_string(ties) + " tied pairs checked");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string work = "acceptance_work";
    std::vector<int> known_gaps;
    std::size_t llm_steps = 0;
    app.add_option("--work", work, "scratch directory");
    app.add_option("--known-gaps", known_gaps, "criteria reported but not gating the exit code")
        ->delimiter(',');
    app.add_option("--llm-steps", llm_steps, "override the retrieval-token stage length");
    CLI11_PARSE(app, argc, argv);
    const std::set<int> gaps(known_gaps.begin(), known_gaps.end());
    fs::create_directories(work);

    try {
        criterion_losses();
        criterion_grad_checks();
        criterion_mean_recall();

        // Corpus, twice, for the determinism check.
        const auto manifest = generate_synthetic_corpus(7, 640, 0.25);
        const auto manifest_again = generate_synthetic_corpus(7, 640, 0.25);
        fs::remove_all(fs::path(work) / "data_a");
        fs::remove_all(fs::path(work) / "data_b");
        save_manifest(manifest, fs::path(work) / "data_a");
        save_manifest(manifest_again, fs::path(work) / "data_b");
        const bool same_manifest = read_tree(fs::path(work) / "data_a") ==
                                   read_tree(fs::path(work) / "data_b");
        note("corpus: " + std::to_string(manifest.indices(Split::train).size()) + " train / " +
             std::to_string(manifest.indices(Split::test).size()) + " test");

        // Dual encoder.
        const auto tok = Tokenizer::build_default();
        const auto bcfg = BundleConfig::for_vocab(static_cast<std::size_t>(tok.base_size()));
        ModelBundle<float> bundle(bcfg, tok);
        bundle.init(1);
        TrainHooks quiet;
        quiet.evaluate = false;
        auto clip_cfg = TrainConfig::clip_defaults();
        auto t0 = Clock::now();
        const auto clip_run = train_sticker_clip(clip_cfg, manifest, bundle, quiet);
        const double clip_secs = seconds_since(t0);
        const auto train_t2i = eval_clip_t2i(bundle, manifest, Split::train);
        const auto test_t2i = eval_clip_t2i(bundle, manifest, Split::test);
        report(5, train_t2i.r1 >= 0.90 && test_t2i.r10 >= 0.50 && clip_secs <= 600.0,
               "train R@1 " + fmt(train_t2i.r1, 3) + ", test R@10 " + fmt(test_t2i.r10, 3) +
                   " (chance " + fmt(10.0 / 64.0, 3) + "), " + fmt(clip_secs, 4) + " s, final loss " +
                   fmt(clip_run.steps.back().loss));
        save_checkpoint(bundle, fs::path(work) / "clip.ckpt");

        // Determinism: a shorter dual-encoder run twice, and every report twice.
        auto short_cfg = clip_cfg;
        short_cfg.total_steps = 60;
        short_cfg.warmup_steps = 3;
        ModelBundle<float> da(bcfg, tok), db(bcfg, tok);
        da.init(1);
        db.init(1);
        const bool same_trace = trace(train_sticker_clip(short_cfg, manifest, da, quiet)) ==
                                trace(train_sticker_clip(short_cfg, manifest_again, db, quiet));
        const bool same_eval =
            eval_clip_t2i(bundle, manifest, Split::test).to_json() == test_t2i.to_json();

        // Base LM, then the retrieval-token stage.
        t0 = Clock::now();
        pretrain_base_lm(TrainConfig::pretrain_defaults(), bundle, quiet);
        note("base LM pretraining " + fmt(seconds_since(t0), 4) + " s");
        const auto chat = chat_prompts(tok, 2024);
        const double base_a = eval_tool_selection<float>(bundle, chat, false);
        const ModelBundle<float> base = bundle;

        Rng ext_rng(5);
        bundle.extend(ext_rng);
        const auto gallery = build_index(manifest, Split::test, bundle.vision, bundle.vision_fingerprint());
        const auto templates = TemplateSet::defaults();
        const auto untrained_i2i = eval_retrieval(bundle, manifest, gallery, RetrievalMode::i2i, templates);
        const auto untrained_t2i = eval_retrieval(bundle, manifest, gallery, RetrievalMode::t2i, templates);
        const auto frozen_before = masked_digest(bundle, false);

        auto llm_cfg = TrainConfig::llm_defaults();
        if (llm_steps > 0) {
            llm_cfg.total_steps = llm_steps;
            llm_cfg.warmup_steps = std::max<std::size_t>(1, llm_steps / 20);
        }
        t0 = Clock::now();
        const auto llm_run = train_sticker_llm(llm_cfg, manifest, bundle, templates, quiet);
        const auto tools = eval_tool_scenarios(bundle, manifest);
        const double llm_secs = seconds_since(t0);
        save_checkpoint(bundle, fs::path(work) / "llm.ckpt");
        std::map<std::string, double> acc;
        for (const auto& r : tools) {
            acc[r.scenario] = r.accuracy;
            note(r.to_json().dump());
        }

        // Freeze soundness.
        const bool frozen_same = masked_digest(bundle, false) == frozen_before;
        const auto V = static_cast<std::size_t>(tok.base_size());
        const std::vector<ToolPrompt> probe(chat.begin(), chat.begin() + 50);
        const bool logits_same = base_logits(base, probe, V) == base_logits(bundle, probe, V);
        report(4, llm_run.steps.size() >= 200 && frozen_same && logits_same,
               std::to_string(llm_run.steps.size()) + " steps, frozen digest " +
                   (frozen_same ? "unchanged" : "CHANGED") + ", base-vocab logits on 50 prompts " +
                   (logits_same ? "identical" : "DIFFER"));

        const double a = acc["a_non_retrieval"];
        const double d = acc["d_in_domain_prefixed"];
        const double e = acc["e_out_of_domain_prefixed"];
        report(6, d == 1.0 && e == 1.0 && a >= 0.90 && base_a == 1.0 && llm_secs <= 600.0,
               "(a) " + fmt(a, 3) + " (b) " + fmt(acc["b_in_domain"], 3) + " (c) " +
                   fmt(acc["c_out_of_domain"], 3) + " (d) " + fmt(d, 3) + " (e) " + fmt(e, 3) +
                   ", unextended (a) " + fmt(base_a, 3) + ", " + fmt(llm_secs, 4) + " s");

        const auto i2i = eval_retrieval(bundle, manifest, gallery, RetrievalMode::i2i, templates);
        const auto t2i = eval_retrieval(bundle, manifest, gallery, RetrievalMode::t2i, templates);
        const auto it2i = eval_retrieval(bundle, manifest, gallery, RetrievalMode::it2i, templates);
        note(recalls(it2i));
        const bool baseline_ok = within_chance(untrained_i2i, gallery.size()) &&
                                 within_chance(untrained_t2i, gallery.size());
        report(7, i2i.r1 >= 0.90 && i2i.mr >= t2i.mr && baseline_ok,
               recalls(i2i) + "; " + recalls(t2i) + "; untrained " + recalls(untrained_i2i) +
                   (baseline_ok ? " (within 3x chance)" : " (ABOVE 3x chance)"));

        const bool same_llm_eval =
            eval_retrieval(bundle, manifest, gallery, RetrievalMode::i2i, templates).to_json() ==
            i2i.to_json();
        report(8, same_manifest && same_trace && same_eval && same_llm_eval,
               std::string("manifest bytes ") + (same_manifest ? "equal" : "DIFFER") +
                   ", loss trace " + (same_trace ? "equal" : "DIFFERS") + ", eval reports " +
                   (same_eval && same_llm_eval ? "equal" : "DIFFER"));

        criterion_search_oracle(bundle, manifest);
    } catch (const std::exception& ex) {
        for (const auto& o : outcomes) {
            std::cout << "criterion " << o.id << ": " << (o.pass ? "PASS" : "FAIL") << "  "
                      << o.detail << '\n';
        }
        std::cout << "acceptance aborted: " << ex.what() << std::endl;
        return 1;
    }

    std::sort(outcomes.begin(), outcomes.end(),
              [](const Outcome& x, const Outcome& y) { return x.id < y.id; });
    std::size_t passed = 0;
    bool gate = true;
    for (const auto& o : outcomes) {
        std::cout << "criterion " << o.id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail
                  << '\n';
        passed += o.pass ? 1 : 0;
        if (!o.pass && !gaps.contains(o.id)) gate = false;
    }
    std::cout << passed << "/" << outcomes.size() << " criteria pass";
    if (!gaps.empty()) {
        std::cout << " (known gaps:";
        for (int g : gaps) std::cout << ' ' << g;
        std::cout << ")";
    }
    std::cout << std::endl;
    return gate && outcomes.size() == 9 ? 0 : 1;
}
