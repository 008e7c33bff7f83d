#include "sticker/checkpoint.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "sticker/digest.hpp"
#include "sticker/error.hpp"

namespace sticker {
namespace {

constexpr std::array<char, 8> kMagic = {'S', 'T', 'K', 'R', 'C', 'K', 'P', 'T'};

using nlohmann::ordered_json;

ordered_json config_to_json(const BundleConfig& c) {
    ordered_json j;
    j["embed_dim"] = c.embed_dim;
    j["init_tau"] = c.init_tau;
    j["min_tau"] = c.min_tau;
    j["vision"] = {{"image_size", c.vision.image_size}, {"patch", c.vision.patch},
                   {"width", c.vision.width},           {"layers", c.vision.layers},
                   {"heads", c.vision.heads},           {"ff", c.vision.ff},
                   {"embed_dim", c.vision.embed_dim}};
    j["text"] = {{"vocab", c.text.vocab},   {"context", c.text.context},
                 {"width", c.text.width},   {"layers", c.text.layers},
                 {"heads", c.text.heads},   {"ff", c.text.ff},
                 {"embed_dim", c.text.embed_dim}};
    j["lm"] = {{"base_vocab", c.lm.base_vocab}, {"context", c.lm.context},
               {"width", c.lm.width},           {"layers", c.lm.layers},
               {"heads", c.lm.heads},           {"ff", c.lm.ff}};
    return j;
}

BundleConfig config_from_json(const ordered_json& j) {
    BundleConfig c;
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.init_tau = j.at("init_tau").get<double>();
    c.min_tau = j.at("min_tau").get<double>();
    const auto& v = j.at("vision");
    c.vision.image_size = v.at("image_size").get<std::size_t>();
    c.vision.patch = v.at("patch").get<std::size_t>();
    c.vision.width = v.at("width").get<std::size_t>();
    c.vision.layers = v.at("layers").get<std::size_t>();
    c.vision.heads = v.at("heads").get<std::size_t>();
    c.vision.ff = v.at("ff").get<std::size_t>();
    c.vision.embed_dim = v.at("embed_dim").get<std::size_t>();
    const auto& t = j.at("text");
    c.text.vocab = t.at("vocab").get<std::size_t>();
    c.text.context = t.at("context").get<std::size_t>();
    c.text.width = t.at("width").get<std::size_t>();
    c.text.layers = t.at("layers").get<std::size_t>();
    c.text.heads = t.at("heads").get<std::size_t>();
    c.text.ff = t.at("ff").get<std::size_t>();
    c.text.embed_dim = t.at("embed_dim").get<std::size_t>();
    const auto& l = j.at("lm");
    c.lm.base_vocab = l.at("base_vocab").get<std::size_t>();
    c.lm.context = l.at("context").get<std::size_t>();
    c.lm.width = l.at("width").get<std::size_t>();
    c.lm.layers = l.at("layers").get<std::size_t>();
    c.lm.heads = l.at("heads").get<std::size_t>();
    c.lm.ff = l.at("ff").get<std::size_t>();
    return c;
}

template <typename V>
void write_pod(std::ostream& os, const V& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
V read_pod(std::istream& is, const std::string& what) {
    V v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
        throw FormatError("checkpoint: truncated " + what);
    }
    return v;
}

}  // namespace

void save_checkpoint(const ModelBundle<float>& bundle, const std::filesystem::path& path) {
    ordered_json header;
    header["schema_version"] = kCheckpointSchemaVersion;
    header["config"] = config_to_json(bundle.config);
    header["vocab"] = bundle.tokenizer.base_symbols();
    header["extended"] = bundle.lm.extended;
    header["lm_pretrained"] = bundle.lm_pretrained;
    ordered_json tensors = ordered_json::array();
    const auto params = bundle.params();
    for (const auto* p : params) {
        tensors.push_back({{"name", p->name}, {"shape", p->shape}});
    }
    header["tensors"] = std::move(tensors);
    const std::string text = header.dump();

    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw FormatError("cannot write checkpoint " + path.string());
    }
    os.write(kMagic.data(), kMagic.size());
    write_pod(os, static_cast<std::uint32_t>(kCheckpointSchemaVersion));
    write_pod(os, static_cast<std::uint64_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* p : params) {
        os.write(reinterpret_cast<const char*>(p->value.data()),
                 static_cast<std::streamsize>(p->value.size() * sizeof(float)));
        os.write(reinterpret_cast<const char*>(p->trainable.data()),
                 static_cast<std::streamsize>(p->trainable.size()));
    }
    if (!os) {
        throw FormatError("failed writing checkpoint " + path.string());
    }
}

ModelBundle<float> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw FormatError("missing file: " + path.string());
    }
    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
        throw FormatError("checkpoint: " + path.string() + " is not a checkpoint file");
    }
    const auto version = read_pod<std::uint32_t>(is, "schema version");
    if (version != static_cast<std::uint32_t>(kCheckpointSchemaVersion)) {
        throw FormatError("checkpoint: schema_version mismatch (file " + std::to_string(version) +
                          ", expected " + std::to_string(kCheckpointSchemaVersion) + ")");
    }
    const auto header_size = read_pod<std::uint64_t>(is, "header size");
    if (header_size > (std::uint64_t{1} << 30)) {
        throw FormatError("checkpoint: implausible header size");
    }
    std::string text(header_size, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(header_size))) {
        throw FormatError("checkpoint: truncated header");
    }

    ordered_json header;
    try {
        header = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
    }
    try {
        const auto config = config_from_json(header.at("config"));
        Tokenizer tokenizer(header.at("vocab").get<std::vector<std::string>>());
        ModelBundle<float> bundle(config, std::move(tokenizer));
        if (header.at("extended").get<bool>()) {
            bundle.lm = LanguageModel<float>(config.lm, true);
        }
        bundle.lm_pretrained = header.at("lm_pretrained").get<bool>();

        const auto& tensors = header.at("tensors");
        auto params = bundle.params();
        if (tensors.size() != params.size()) {
            throw FormatError("checkpoint: expected " + std::to_string(params.size()) +
                              " tensors, found " + std::to_string(tensors.size()));
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto* p = params[i];
            const auto name = tensors[i].at("name").get<std::string>();
            const auto shape = tensors[i].at("shape").get<std::vector<std::size_t>>();
            if (name != p->name) {
                throw FormatError("checkpoint: tensor " + std::to_string(i) + " is '" + name +
                                  "', expected '" + p->name + "'");
            }
            if (shape != p->shape) {
                throw FormatError("checkpoint: shape mismatch for '" + name + "'");
            }
            if (!is.read(reinterpret_cast<char*>(p->value.data()),
                         static_cast<std::streamsize>(p->value.size() * sizeof(float))) ||
                !is.read(reinterpret_cast<char*>(p->trainable.data()),
                         static_cast<std::streamsize>(p->trainable.size()))) {
                throw FormatError("checkpoint: truncated data for '" + name + "'");
            }
        }
        if (is.peek() != std::char_traits<char>::eof()) {
            throw FormatError("checkpoint: trailing bytes after the last tensor");
        }
        return bundle;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: bad header field: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("checkpoint: inconsistent header: ") + e.what());
    }
}

std::string file_digest(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw FormatError("missing file: " + path.string());
    }
    Sha256 h;
    std::array<char, 1 << 16> buf{};
    while (is.read(buf.data(), buf.size()) || is.gcount() > 0) {
        h.update(std::string_view(buf.data(), static_cast<std::size_t>(is.gcount())));
    }
    return h.hex();
}

}  // namespace sticker
