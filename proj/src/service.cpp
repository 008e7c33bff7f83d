#include "sticker/service.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "sticker/checkpoint.hpp"
#include "sticker/digest.hpp"
#include "sticker/error.hpp"
#include "sticker/evaluation.hpp"
#include "sticker/image_io.hpp"
#include "sticker/manifest_io.hpp"

namespace sticker {

using nlohmann::ordered_json;

namespace {

constexpr std::size_t kDefaultK = 10;
constexpr std::size_t kChatMaxNew = 32;

HttpResponse json_response(int status, const ordered_json& j) {
    return {status, j.dump(), "application/json"};
}

HttpResponse error_response(int status, const std::string& message) {
    ordered_json j;
    j["error"] = message;
    return json_response(status, j);
}

// Six decimals, stable across runs.
double round6(double x) { return std::round(x * 1e6) / 1e6; }

std::optional<StickerId> parse_id(std::string_view text) {
    StickerId id = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, id);
    if (ec != std::errc() || ptr != end || text.empty() || id < 0) {
        return std::nullopt;
    }
    return id;
}

// Thrown inside handlers and mapped to an HTTP status.
struct HttpError {
    int status;
    std::string message;
};

ordered_json results_json(const ServiceState& s, const QueryResult& result) {
    ordered_json hits = ordered_json::array();
    for (const auto& h : result.hits) {
        const auto& rec = s.manifest.by_id(h.id);
        ordered_json item;
        item["id"] = h.id;
        item["score"] = round6(h.score);
        item["frame_urls"] = frame_urls(rec);
        item["description"] = rec.description;
        hits.push_back(std::move(item));
    }
    return hits;
}

std::vector<float> upload_embedding(const ServiceState& s, std::string_view b64) {
    Raster img;
    try {
        img = decode_png(base64_decode(b64));
    } catch (const FormatError& e) {
        throw HttpError{422, std::string("could not decode image: ") + e.what()};
    }
    if (img.width != kRasterSize || img.height != kRasterSize) {
        img = resize_bilinear(img, kRasterSize, kRasterSize);
    }
    return encode_image(s.bundle.vision, {&img, &img, &img});
}

ordered_json parse_body(std::string_view body) {
    ordered_json j;
    try {
        j = ordered_json::parse(body);
    } catch (const nlohmann::json::exception&) {
        throw HttpError{400, "request body is not valid JSON"};
    }
    if (!j.is_object()) {
        throw HttpError{400, "request body must be a JSON object"};
    }
    return j;
}

std::optional<StickerId> optional_image_id(const ServiceState& s, const ordered_json& j) {
    if (!j.contains("image_id") || j["image_id"].is_null()) {
        return std::nullopt;
    }
    if (!j["image_id"].is_number_integer()) {
        throw HttpError{400, "image_id must be an integer"};
    }
    const auto id = j["image_id"].get<StickerId>();
    if (s.manifest.find(id) == nullptr) {
        throw HttpError{404, "unknown sticker id " + std::to_string(id)};
    }
    return id;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

ServiceConfig ServiceConfig::parse(std::string_view text) {
    ServiceConfig c;
    auto set = [&](const std::string& key, const std::string& value) {
        try {
            if (key == "bind") c.bind = value;
            else if (key == "port") c.port = std::stoi(value);
            else if (key == "max_k") c.max_k = std::stoul(value);
            else if (key == "cors_origin") c.cors_origin = value;
            else if (key == "threads") c.threads = std::stoul(value);
            else throw InvalidArgument("unknown service config key '" + key + "'");
        } catch (const std::logic_error& e) {
            if (dynamic_cast<const InvalidArgument*>(&e) != nullptr) throw;
            throw InvalidArgument("bad value for service config key '" + key + "'");
        }
    };
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string_view::npos && text[first] == '{') {
        try {
            const auto doc = nlohmann::json::parse(text);
            if (!doc.is_object()) throw InvalidArgument("service config: expected a JSON object");
            for (const auto& [key, value] : doc.items()) {
                set(key, value.is_string() ? value.get<std::string>() : value.dump());
            }
        } catch (const nlohmann::json::exception& e) {
            throw InvalidArgument(std::string("service config: ") + e.what());
        }
    } else {
        std::istringstream in{std::string(text)};
        std::string line;
        while (std::getline(in, line)) {
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto eq = line.find('=');
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            if (trim(line).empty()) continue;
            if (eq == std::string::npos) {
                throw InvalidArgument("service config: expected key=value, got '" + trim(line) + "'");
            }
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }
    if (c.max_k == 0) throw InvalidArgument("service config: max_k must be positive");
    if (c.port < 0 || c.port > 65535) throw InvalidArgument("service config: port out of range");
    return c;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("missing file: " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void ServiceConfig::apply_env() {
    if (const char* p = std::getenv("STICKER_PORT")) {
        port = std::stoi(p);
    }
    if (const char* b = std::getenv("STICKER_BIND")) {
        bind = b;
    }
}

std::shared_ptr<const ServiceState> load_service_state(const std::filesystem::path& checkpoint,
                                                       const std::filesystem::path& index,
                                                       const std::filesystem::path& data,
                                                       const ServiceConfig& config) {
    auto bundle = load_checkpoint(checkpoint);
    auto idx = RetrievalIndex::load(index);
    if (idx.fingerprint() != bundle.vision_fingerprint()) {
        throw InvalidState("fingerprint mismatch: index " + index.string() +
                           " was not built with the vision encoder of " + checkpoint.string());
    }
    auto manifest = load_manifest(data);
    for (auto id : idx.ids()) {
        if (manifest.find(id) == nullptr) {
            throw InvalidState("index row " + std::to_string(id) + " is not in the manifest");
        }
    }
    const auto digest = file_digest(checkpoint);
    return std::make_shared<const ServiceState>(ServiceState{std::move(bundle), std::move(idx),
                                                             std::move(manifest), config,
                                                             TemplateSet::defaults(), digest});
}

std::vector<std::string> frame_urls(const StickerRecord& record) {
    std::vector<std::string> urls;
    for (std::size_t k = 0; k < record.frames.size(); ++k) {
        urls.push_back("/frames/" + std::to_string(record.id) + "_" + std::to_string(k) + ".png");
    }
    return urls;
}

std::vector<float> service_query_embedding(const ServiceState& s, std::string_view text,
                                           std::span<const float> image) {
    const bool has_text = !text.empty();
    const bool has_image = !image.empty();
    const auto& b = s.bundle;
    if (b.lm.extended) {
        const auto mode = has_text && has_image ? RetrievalMode::it2i
                          : has_image           ? RetrievalMode::i2i
                                                : RetrievalMode::t2i;
        return ret_query_embedding<float>(b, s.templates.for_mode(mode).front(),
                                          s.templates.answers.front(), text, image);
    }
    std::vector<float> q(b.config.embed_dim, 0.0f);
    if (has_text) {
        const auto t = encode_text(b.text, b.tokenizer.encode(text, UnknownPolicy::skip));
        for (std::size_t k = 0; k < q.size(); ++k) q[k] += t[k];
    }
    if (has_image) {
        for (std::size_t k = 0; k < q.size(); ++k) q[k] += image[k];
    }
    return l2_normalized<float>(q);
}

// ---------------------------------------------------------------------------
// Handlers

HttpResponse Service::search(const ServiceState& s, std::string_view body) const {
    const auto j = parse_body(body);
    std::size_t k = kDefaultK;
    if (j.contains("k")) {
        if (!j["k"].is_number_integer() || j["k"].get<long long>() < 1 ||
            j["k"].get<long long>() > static_cast<long long>(s.config.max_k)) {
            throw HttpError{400, "k must be an integer in [1, " + std::to_string(s.config.max_k) + "]"};
        }
        k = j["k"].get<std::size_t>();
    }
    std::string text;
    if (j.contains("text") && !j["text"].is_null()) {
        if (!j["text"].is_string()) {
            throw HttpError{400, "text must be a string"};
        }
        text = j["text"].get<std::string>();
    }
    const auto image_id = optional_image_id(s, j);
    const bool has_upload = j.contains("image_b64") && !j["image_b64"].is_null();
    if (has_upload && !j["image_b64"].is_string()) {
        throw HttpError{400, "image_b64 must be a string"};
    }
    if (image_id && has_upload) {
        throw HttpError{400, "give either image_id or image_b64, not both"};
    }
    if (text.empty() && !image_id && !has_upload) {
        throw HttpError{400, "a search needs text, image_id or image_b64"};
    }

    std::vector<float> image;
    if (image_id) {
        image = encode_record_image(s.bundle.vision, s.manifest.by_id(*image_id));
    } else if (has_upload) {
        image = upload_embedding(s, j["image_b64"].get<std::string>());
    }
    std::vector<float> q;
    try {
        q = service_query_embedding(s, text, image);
    } catch (const InvalidArgument& e) {
        throw HttpError{400, e.what()};
    }
    const QueryKind kind = text.empty()   ? QueryKind::image
                           : image.empty() ? QueryKind::text
                                           : QueryKind::image_text;
    const auto result = s.index.search(q, k, kind);
    ordered_json out;
    out["results"] = results_json(s, result);
    out["query_kind"] = std::string(to_string(kind));
    return json_response(200, out);
}

HttpResponse Service::chat(const ServiceState& s, std::string_view body) const {
    const auto j = parse_body(body);
    if (!j.contains("message") || !j["message"].is_string()) {
        throw HttpError{400, "message must be a string"};
    }
    const auto message = j["message"].get<std::string>();
    const auto image_id = optional_image_id(s, j);
    const auto& b = s.bundle;
    const auto& tok = b.tokenizer;

    std::vector<Token> prompt;
    std::vector<float> visual;
    std::vector<float> slot_row;
    std::optional<std::size_t> slot;
    try {
        const auto text_tokens = tok.encode(message, UnknownPolicy::skip);
        if (image_id) {
            prompt = render_instruction("{image} ", "", tok);
            slot = find_image_slot(prompt, tok);
            visual = encode_record_image(b.vision, s.manifest.by_id(*image_id));
            slot_row = project_visual<float>(b, visual);
        }
        prompt.insert(prompt.end(), text_tokens.begin(), text_tokens.end());
        const auto sep = tok.encode(kTurnSeparator);
        prompt.insert(prompt.end(), sep.begin(), sep.end());
        if (prompt.empty() || prompt.size() > b.config.lm.context) {
            throw InvalidArgument("message is empty or longer than the model context");
        }
    } catch (const InvalidArgument& e) {
        throw HttpError{400, e.what()};
    }

    const std::size_t room = b.config.lm.context - prompt.size();
    const auto reply = greedy_decode<float>(b.lm, prompt, std::min(kChatMaxNew, room), {}, slot,
                                            slot_row);
    const Token ret = tok.special(SpecialToken::ret);
    const auto ret_it = std::find(reply.begin(), reply.end(), ret);
    const bool used = b.lm.extended && ret_it != reply.end();

    ordered_json out;
    out["reply"] = tok.decode(reply, true);
    out["used_tool"] = used;
    if (used) {
        std::vector<Token> seq = prompt;
        seq.insert(seq.end(), reply.begin(), ret_it + 1);
        LanguageModel<float>::Output o;
        std::optional<std::span<const float>> v;
        if (slot) v = std::span<const float>(visual);
        lm_forward<float>(b, seq, v, slot, seq.size(), o);
        const auto q = extract_ret_embedding<float>(o.hiddens.row_span(seq.size() - 1), b.w_t);
        const QueryKind kind = slot ? QueryKind::image_text : QueryKind::text;
        out["results"] = results_json(s, s.index.search(q, kDefaultK, kind));
    }
    return json_response(200, out);
}

HttpResponse Service::sticker(const ServiceState& s, std::string_view id_text) const {
    const auto id = parse_id(id_text);
    if (!id) {
        throw HttpError{400, "sticker id must be a non-negative integer"};
    }
    const auto* rec = s.manifest.find(*id);
    if (rec == nullptr) {
        throw HttpError{404, "unknown sticker id " + std::to_string(*id)};
    }
    ordered_json out;
    out["id"] = rec->id;
    out["description"] = rec->description;
    out["ocr_text"] = rec->ocr_text;
    ordered_json emotions = ordered_json::array();
    for (const auto& e : rec->emotions) {
        emotions.push_back({{"id", e.category_id}, {"name", e.name()}});
    }
    out["emotions"] = std::move(emotions);
    out["style"] = {{"id", rec->style.style_id}, {"name", rec->style.name}};
    out["split"] = std::string(to_string(rec->split));
    out["frame_urls"] = frame_urls(*rec);
    out["indexed"] = s.index.position(rec->id).has_value();
    return json_response(200, out);
}

HttpResponse Service::frame(const ServiceState& s, std::string_view name) const {
    // <id>_<k>.png
    const auto us = name.find('_');
    const auto dot = name.rfind(".png");
    if (us == std::string_view::npos || dot == std::string_view::npos || dot + 4 != name.size() ||
        dot <= us) {
        throw HttpError{404, "no such frame"};
    }
    const auto id = parse_id(name.substr(0, us));
    const auto k = parse_id(name.substr(us + 1, dot - us - 1));
    const auto* rec = id ? s.manifest.find(*id) : nullptr;
    if (rec == nullptr || !k || static_cast<std::size_t>(*k) >= rec->frames.size()) {
        throw HttpError{404, "no such frame"};
    }
    const auto png = encode_png(rec->frames[static_cast<std::size_t>(*k)]);
    return {200, std::string(png.begin(), png.end()), "image/png"};
}

HttpResponse Service::health(const ServiceState& s) const {
    ordered_json out;
    out["status"] = "ok";
    out["checkpoint_digest"] = s.checkpoint_digest;
    out["index_size"] = s.index.size();
    return json_response(200, out);
}

HttpResponse Service::handle(std::string_view method, std::string_view path,
                             std::string_view body) const {
    const auto state = std::atomic_load(&state_);
    if (state == nullptr) {
        return error_response(503, "service is loading");
    }
    const ServiceState& s = *state;
    try {
        if (method == "GET" && path == "/health") return health(s);
        if (method == "POST" && path == "/search") return search(s, body);
        if (method == "POST" && path == "/chat") return chat(s, body);
        if (method == "GET" && path.starts_with("/sticker/")) {
            return sticker(s, path.substr(std::string_view("/sticker/").size()));
        }
        if (method == "GET" && path.starts_with("/frames/")) {
            return frame(s, path.substr(std::string_view("/frames/").size()));
        }
        return error_response(404, "no route for " + std::string(method) + " " + std::string(path));
    } catch (const HttpError& e) {
        return error_response(e.status, e.message);
    } catch (const std::exception& e) {
        return error_response(500, e.what());
    }
}

// ---------------------------------------------------------------------------
// HTTP adapter

void run_server(const ServiceConfig& config,
                const std::function<std::shared_ptr<const ServiceState>()>& load,
                const std::function<void()>& on_listen) {
    auto service = std::make_shared<Service>();
    httplib::Server server;
    const std::size_t threads = std::max<std::size_t>(1, config.threads);
    server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };

    auto adapt = [service, &config](const httplib::Request& req, httplib::Response& res) {
        const auto r = service->handle(req.method, req.path, req.body);
        res.status = r.status;
        res.set_content(r.body, r.content_type);
        res.set_header("Access-Control-Allow-Origin", config.cors_origin);
    };
    server.Get(".*", adapt);
    server.Post(".*", adapt);
    server.Options(".*", [&config](const httplib::Request&, httplib::Response& res) {
        res.status = 204;
        res.set_header("Access-Control-Allow-Origin", config.cors_origin);
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
    });

    if (!server.bind_to_port(config.bind, config.port)) {
        throw InvalidState("cannot bind " + config.bind + ":" + std::to_string(config.port));
    }
    std::thread listener([&server] { server.listen_after_bind(); });
    server.wait_until_ready();
    if (on_listen) {
        on_listen();
    }
    try {
        service->set_state(load());
    } catch (...) {
        server.stop();
        listener.join();
        throw;
    }
    listener.join();
}

}  // namespace sticker
