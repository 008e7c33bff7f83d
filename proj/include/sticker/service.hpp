#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
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

struct ServiceConfig {
    std::string bind = "127.0.0.1";
    int port = 8080;
    std::size_t max_k = 50;
    std::string cors_origin = "*";
    std::size_t threads = 4;

    // JSON object or key=value lines; unknown keys are rejected.
    static ServiceConfig parse(std::string_view text);
    static ServiceConfig load(const std::filesystem::path& path);
    // STICKER_PORT and STICKER_BIND override the corresponding fields.
    void apply_env();
};

// Immutable after construction.
struct ServiceState {
    ModelBundle<float> bundle;
    RetrievalIndex index;
    Manifest manifest;
    ServiceConfig config;
    TemplateSet templates;
    std::string checkpoint_digest;
};

// Loads everything and checks the index fingerprint against the checkpoint's vision encoder;
// a mismatch throws InvalidState.
std::shared_ptr<const ServiceState> load_service_state(const std::filesystem::path& checkpoint,
                                                       const std::filesystem::path& index,
                                                       const std::filesystem::path& data,
                                                       const ServiceConfig& config);

struct HttpResponse {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
};

// Transport-independent request handling; the HTTP server is a thin adapter over this.
class Service {
public:
    Service() = default;
    explicit Service(std::shared_ptr<const ServiceState> state) { set_state(std::move(state)); }

    void set_state(std::shared_ptr<const ServiceState> state) {
        std::atomic_store(&state_, std::move(state));
    }
    bool ready() const { return std::atomic_load(&state_) != nullptr; }

    HttpResponse handle(std::string_view method, std::string_view path, std::string_view body) const;

    HttpResponse search(const ServiceState& s, std::string_view body) const;
    HttpResponse chat(const ServiceState& s, std::string_view body) const;
    HttpResponse sticker(const ServiceState& s, std::string_view id_text) const;
    HttpResponse frame(const ServiceState& s, std::string_view name) const;
    HttpResponse health(const ServiceState& s) const;

private:
    std::shared_ptr<const ServiceState> state_;
};

// Query embedding used by /search: the <ret> pipeline on an extended checkpoint, otherwise
// the dual-encoder fallback (text encoder, image embedding, or their normalized sum).
std::vector<float> service_query_embedding(const ServiceState& s, std::string_view text,
                                           std::span<const float> image);

// Runs the HTTP server until stopped. Requests get 503 until `load` returns; if `load`
// throws, the server stops and the exception propagates.
void run_server(const ServiceConfig& config,
                const std::function<std::shared_ptr<const ServiceState>()>& load,
                const std::function<void()>& on_listen = {});

std::vector<std::string> frame_urls(const StickerRecord& record);

}  // namespace sticker
