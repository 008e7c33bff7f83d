#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sticker/checkpoint.hpp"
#include "sticker/error.hpp"
#include "sticker/evaluation.hpp"
#include "sticker/grad_check.hpp"
#include "sticker/manifest_io.hpp"
#include "sticker/service.hpp"
#include "sticker/trainer.hpp"

namespace fs = std::filesystem;
using namespace sticker;
using nlohmann::ordered_json;

namespace {

enum ExitCode {
    kOk = 0,
    kFailure = 1,
    kUsage = 2,
    kMissingFile = 3,
    kBadData = 4,
    kMismatch = 5,
    kNumeric = 6,
};

// Raised for a mismatched index/checkpoint pair so it gets its own exit code.
struct FingerprintMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MissingFile : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(const fs::path& p) {
    if (!fs::exists(p)) {
        throw MissingFile("missing file: " + p.string());
    }
}

std::string read_text(const fs::path& p) {
    require(p);
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json read_json_object(const fs::path& p) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(p));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("config " + p.string() + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) {
        throw FormatError("config " + p.string() + " must hold a JSON object");
    }
    return j;
}

// Appends JSON lines next to the output artifact.
class MetricsLog {
public:
    explicit MetricsLog(const fs::path& out) : path_(out.string() + ".log.jsonl"), file_(path_) {
        if (!file_) {
            throw FormatError("cannot write " + path_.string());
        }
    }
    void operator()(const ordered_json& j) { file_ << j.dump() << '\n' << std::flush; }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
    std::ofstream file_;
};

TemplateSet templates_from(const std::string& path) {
    if (path.empty()) {
        return TemplateSet::defaults();
    }
    require(path);
    return TemplateSet::load(path);
}

// Runs a training stage at the configured precision on a float bundle.
template <typename Fn>
void at_precision(Precision p, ModelBundle<float>& bundle, Fn&& fn) {
    if (p == Precision::f64) {
        auto wide = cast_bundle<double>(bundle);
        fn(wide);
        bundle = cast_bundle<float>(wide);
    } else {
        fn(bundle);
    }
}

ModelBundle<float> load_ckpt(const fs::path& p) {
    require(p);
    return load_checkpoint(p);
}

RetrievalIndex load_idx(const fs::path& p) {
    require(p);
    return RetrievalIndex::load(p);
}

Manifest load_data(const fs::path& p) {
    require(p / "manifest.json");
    return load_manifest(p);
}

void check_fingerprint(const RetrievalIndex& index, const ModelBundle<float>& bundle,
                       const fs::path& index_path) {
    if (index.fingerprint() != bundle.vision_fingerprint()) {
        throw FingerprintMismatch("fingerprint mismatch: index " + index_path.string() +
                                  " was built with a different vision encoder");
    }
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::uint64_t seed = 7;
    std::size_t n = 640;
    double animated_fraction = 0.25;
    std::string out = "data";
};

int gen_data(const GenDataArgs& a) {
    const auto m = generate_synthetic_corpus(a.seed, a.n, a.animated_fraction);
    save_manifest(m, a.out);
    ordered_json j;
    j["records"] = m.records.size();
    j["train"] = m.indices(Split::train).size();
    j["test"] = m.indices(Split::test).size();
    j["digest"] = manifest_digest(m);
    std::cout << j.dump() << '\n';
    return kOk;
}

struct TrainClipArgs {
    std::string data = "data";
    std::string config;
    std::string out = "clip.ckpt";
    std::uint64_t init_seed = 1;
};

int train_clip(const TrainClipArgs& a) {
    const auto manifest = load_data(a.data);
    auto cfg = TrainConfig::clip_defaults();
    if (!a.config.empty()) {
        cfg = TrainConfig::from_json(read_json_object(a.config), cfg);
    }
    cfg.validate();
    const auto tok = Tokenizer::build_default();
    ModelBundle<float> bundle(BundleConfig::for_vocab(static_cast<std::size_t>(tok.base_size())), tok);
    bundle.init(a.init_seed);

    MetricsLog log(a.out);
    ordered_json header;
    header["stage"] = "train-clip";
    header["config"] = cfg.to_json();
    log(header);
    TrainHooks hooks;
    hooks.log = [&](const ordered_json& j) { log(j); };
    hooks.checkpoint = [&](std::size_t step) {
        save_checkpoint(bundle, a.out + ".step" + std::to_string(step));
    };
    TrainResult result;
    at_precision(cfg.precision, bundle, [&](auto& b) {
        result = train_sticker_clip(cfg, manifest, b, hooks);
    });
    save_checkpoint(bundle, a.out);
    ordered_json done;
    done["checkpoint"] = a.out;
    done["log"] = log.path().string();
    if (!result.evals.empty()) {
        done["final"] = result.evals.back();
    }
    std::cout << done.dump() << '\n';
    return kOk;
}

struct TrainLlmArgs {
    std::string data = "data";
    std::string clip_checkpoint = "clip.ckpt";
    std::string config;
    std::string templates;
    std::string out = "llm.ckpt";
    std::uint64_t extend_seed = 5;
};

// Config keys apply to the retrieval-token stage; an optional "pretrain" object configures
// the base-LM stage that runs first when the checkpoint's LM is untrained.
int train_llm(const TrainLlmArgs& a) {
    const auto manifest = load_data(a.data);
    auto bundle = load_ckpt(a.clip_checkpoint);
    const auto templates = templates_from(a.templates);
    auto cfg = TrainConfig::llm_defaults();
    auto pre = TrainConfig::pretrain_defaults();
    if (!a.config.empty()) {
        auto j = read_json_object(a.config);
        if (j.contains("pretrain")) {
            pre = TrainConfig::from_json(j["pretrain"], pre);
            j.erase("pretrain");
        }
        cfg = TrainConfig::from_json(j, cfg);
    }
    cfg.validate();
    pre.validate();
    if (bundle.lm.extended) {
        throw InvalidState("checkpoint " + a.clip_checkpoint +
                           " already has retrieval tokens; start from a train-clip checkpoint");
    }

    MetricsLog log(a.out);
    TrainHooks hooks;
    hooks.log = [&](const ordered_json& j) { log(j); };
    if (!bundle.lm_pretrained) {
        ordered_json header;
        header["stage"] = "pretrain-lm";
        header["config"] = pre.to_json();
        log(header);
        at_precision(pre.precision, bundle, [&](auto& b) { pretrain_base_lm(pre, b, hooks); });
    }
    Rng rng(a.extend_seed);
    bundle.extend(rng);
    ordered_json header;
    header["stage"] = "train-llm";
    header["config"] = cfg.to_json();
    log(header);
    hooks.checkpoint = [&](std::size_t step) {
        save_checkpoint(bundle, a.out + ".step" + std::to_string(step));
    };
    TrainResult result;
    at_precision(cfg.precision, bundle, [&](auto& b) {
        result = train_sticker_llm(cfg, manifest, b, templates, hooks);
    });
    save_checkpoint(bundle, a.out);
    ordered_json done;
    done["checkpoint"] = a.out;
    done["log"] = log.path().string();
    if (!result.evals.empty()) {
        done["final"] = result.evals.back();
    }
    std::cout << done.dump() << '\n';
    return kOk;
}

struct BuildIndexArgs {
    std::string data = "data";
    std::string checkpoint = "llm.ckpt";
    std::string split = "test";
    std::string out = "index.bin";
};

int build_index_cmd(const BuildIndexArgs& a) {
    const auto manifest = load_data(a.data);
    const auto bundle = load_ckpt(a.checkpoint);
    const auto index = build_index(manifest, parse_split(a.split), bundle.vision,
                                   bundle.vision_fingerprint());
    index.save(a.out);
    ordered_json j;
    j["index"] = a.out;
    j["size"] = index.size();
    j["dim"] = index.dim();
    j["encoder_fingerprint"] = index.fingerprint();
    std::cout << j.dump() << '\n';
    return kOk;
}

struct EvalArgs {
    std::string data = "data";
    std::string checkpoint = "llm.ckpt";
    std::string index;
    std::string mode = "t2i";
    std::string templates;
    std::uint64_t chat_seed = 2024;
};

int eval_cmd(const EvalArgs& a) {
    const auto manifest = load_data(a.data);
    const auto bundle = load_ckpt(a.checkpoint);
    if (a.mode == "tools") {
        if (!bundle.lm.extended) {
            throw InvalidState("checkpoint " + a.checkpoint + " has no retrieval tokens; run train-llm first");
        }
        for (const auto& r : eval_tool_scenarios(bundle, manifest, a.chat_seed)) {
            std::cout << r.to_json().dump() << '\n';
        }
        return kOk;
    }
    const auto mode = parse_mode(a.mode);
    RetrievalIndex index = a.index.empty()
                               ? build_index(manifest, Split::test, bundle.vision, bundle.vision_fingerprint())
                               : load_idx(a.index);
    check_fingerprint(index, bundle, a.index.empty() ? fs::path("<test split>") : fs::path(a.index));
    RetrievalReport report;
    if (bundle.lm.extended) {
        report = eval_retrieval(bundle, manifest, index, mode, templates_from(a.templates));
    } else if (mode == RetrievalMode::t2i) {
        // Dual-encoder checkpoint: text encoder queries against the gallery's split.
        const auto split = manifest.by_id(index.ids().front()).split;
        for (auto id : index.ids()) {
            if (manifest.by_id(id).split != split) {
                throw InvalidArgument("t2i on a dual-encoder checkpoint needs a single-split index");
            }
        }
        report = eval_clip_t2i(bundle, manifest, split, &index);
    } else {
        throw InvalidState("mode " + a.mode + " needs a checkpoint with retrieval tokens; run train-llm first");
    }
    std::cout << report.to_json().dump() << '\n';
    return kOk;
}

struct GradCheckArgs {
    std::string component = "losses";
    std::uint64_t seed = 1;
    double tolerance = 1e-4;
};

int grad_check_cmd(const GradCheckArgs& a) {
    bool ok = true;
    for (const auto& c : run_grad_checks(a.component, a.seed)) {
        ordered_json j;
        j["check"] = c.name;
        j["max_rel_error"] = c.report.max_rel_error;
        j["checked"] = c.report.checked;
        j["worst_param"] = c.report.worst_param;
        j["finite"] = c.report.ok;
        std::cout << j.dump() << '\n';
        ok = ok && c.report.ok && c.report.max_rel_error <= a.tolerance;
    }
    if (!ok) {
        std::cerr << "error: gradient check exceeded tolerance " << a.tolerance << '\n';
        return kNumeric;
    }
    return kOk;
}

struct ServeArgs {
    std::string checkpoint = "llm.ckpt";
    std::string index = "index.bin";
    std::string data;
    std::string config;
    std::string bind;
    int port = -1;
};

int serve_cmd(const ServeArgs& a) {
    ServiceConfig cfg = a.config.empty() ? ServiceConfig{} : ServiceConfig::load(a.config);
    cfg.apply_env();
    if (a.port >= 0) cfg.port = a.port;
    if (!a.bind.empty()) cfg.bind = a.bind;
    std::string data = a.data;
    if (data.empty()) {
        const char* env = std::getenv("STICKER_DATA");
        data = env != nullptr ? env : "data";
    }
    require(a.checkpoint);
    require(a.index);
    require(fs::path(data) / "manifest.json");
    run_server(
        cfg,
        [&] {
            try {
                return load_service_state(a.checkpoint, a.index, data, cfg);
            } catch (const InvalidState& e) {
                if (std::string(e.what()).starts_with("fingerprint mismatch")) {
                    throw FingerprintMismatch(e.what());
                }
                throw;
            }
        },
        [&] { std::cerr << "listening on " << cfg.bind << ':' << cfg.port << '\n'; });
    return kOk;
}

int fail(int code, const std::string& message) {
    std::cerr << "error: " << message << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sticker retrieval: data generation, training, evaluation and serving"};
    app.require_subcommand(1);

    GenDataArgs gd;
    auto* c_gen = app.add_subcommand("gen-data", "Generate the synthetic sticker corpus");
    c_gen->add_option("--seed", gd.seed);
    c_gen->add_option("--n", gd.n);
    c_gen->add_option("--animated-fraction", gd.animated_fraction);
    c_gen->add_option("--out", gd.out);

    TrainClipArgs tc;
    auto* c_clip = app.add_subcommand("train-clip", "Train the dual encoder");
    c_clip->add_option("--data", tc.data);
    c_clip->add_option("--config", tc.config, "JSON training config");
    c_clip->add_option("--out", tc.out);
    c_clip->add_option("--init-seed", tc.init_seed);

    TrainLlmArgs tl;
    auto* c_llm = app.add_subcommand("train-llm", "Extend the LM with retrieval tokens and train them");
    c_llm->add_option("--data", tl.data);
    c_llm->add_option("--clip-checkpoint", tl.clip_checkpoint);
    c_llm->add_option("--config", tl.config, "JSON training config");
    c_llm->add_option("--templates", tl.templates, "instruction/answer templates (JSON)");
    c_llm->add_option("--out", tl.out);
    c_llm->add_option("--extend-seed", tl.extend_seed);

    BuildIndexArgs bi;
    auto* c_index = app.add_subcommand("build-index", "Embed a split into a retrieval index");
    c_index->add_option("--data", bi.data);
    c_index->add_option("--checkpoint", bi.checkpoint);
    c_index->add_option("--split", bi.split)->check(CLI::IsMember({"train", "test"}));
    c_index->add_option("--out", bi.out);

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "Print evaluation reports as JSON");
    c_eval->add_option("--data", ev.data);
    c_eval->add_option("--checkpoint", ev.checkpoint);
    c_eval->add_option("--index", ev.index, "defaults to an in-memory index of the test split");
    c_eval->add_option("--mode", ev.mode)->check(CLI::IsMember({"t2i", "i2i", "it2i", "tools"}));
    c_eval->add_option("--templates", ev.templates);
    c_eval->add_option("--chat-seed", ev.chat_seed);

    GradCheckArgs gc;
    auto* c_grad = app.add_subcommand("grad-check", "Finite-difference gradient checks");
    c_grad->add_option("--component", gc.component)->check(CLI::IsMember({"losses", "clip", "llm"}));
    c_grad->add_option("--seed", gc.seed);
    c_grad->add_option("--tolerance", gc.tolerance);

    ServeArgs sv;
    auto* c_serve = app.add_subcommand("serve", "Run the HTTP search/chat service");
    c_serve->add_option("--checkpoint", sv.checkpoint);
    c_serve->add_option("--index", sv.index);
    c_serve->add_option("--data", sv.data, "defaults to $STICKER_DATA or ./data");
    c_serve->add_option("--port", sv.port);
    c_serve->add_option("--bind", sv.bind);
    c_serve->add_option("--config", sv.config, "key=value or JSON service config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ExtrasError& e) {
        return fail(kUsage, std::string("unknown flag: ") + e.what());
    } catch (const CLI::ParseError& e) {
        return fail(kUsage, std::string("bad arguments: ") + e.what());
    }

    try {
        if (*c_gen) return gen_data(gd);
        if (*c_clip) return train_clip(tc);
        if (*c_llm) return train_llm(tl);
        if (*c_index) return build_index_cmd(bi);
        if (*c_eval) return eval_cmd(ev);
        if (*c_grad) return grad_check_cmd(gc);
        if (*c_serve) return serve_cmd(sv);
    } catch (const MissingFile& e) {
        return fail(kMissingFile, e.what());
    } catch (const FingerprintMismatch& e) {
        return fail(kMismatch, e.what());
    } catch (const FormatError& e) {
        const std::string what = e.what();
        return fail(what.starts_with("missing file") ? kMissingFile : kBadData, what);
    } catch (const NumericError& e) {
        return fail(kNumeric, e.what());
    } catch (const std::exception& e) {
        return fail(kFailure, e.what());
    }
    return kUsage;
}
