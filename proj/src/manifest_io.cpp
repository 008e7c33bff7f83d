#include "sticker/manifest_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sticker/error.hpp"
#include "sticker/image_io.hpp"

namespace sticker {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

void save_manifest(const Manifest& manifest, const fs::path& dir) {
    validate_manifest(manifest);
    fs::create_directories(dir / "frames");

    ordered_json meta;
    meta["schema_version"] = manifest.schema_version;
    meta["seed"] = manifest.seed;
    std::ofstream(dir / "manifest.json") << meta.dump(2) << '\n';

    std::ofstream index(dir / "index.jsonl");
    if (!index) {
        throw FormatError("cannot write " + (dir / "index.jsonl").string());
    }
    for (const auto& r : manifest.records) {
        ordered_json line;
        line["id"] = r.id;
        std::vector<std::string> names;
        for (std::size_t k = 0; k < r.frames.size(); ++k) {
            const std::string name =
                "frames/" + std::to_string(r.id) + "_" + std::to_string(k) + ".png";
            write_png(dir / name, r.frames[k]);
            names.push_back(name);
        }
        line["frames"] = names;
        line["description"] = r.description;
        line["ocr_text"] = r.ocr_text;
        std::vector<int> emotions;
        for (const auto& e : r.emotions) {
            emotions.push_back(e.category_id);
        }
        line["emotions"] = emotions;
        line["style"] = r.style.style_id;
        line["split"] = to_string(r.split);
        index << line.dump() << '\n';
    }
}

Manifest load_manifest(const fs::path& dir) {
    const fs::path meta_path = dir / "manifest.json";
    const fs::path index_path = dir / "index.jsonl";
    if (!fs::exists(meta_path)) {
        throw FormatError("missing file: " + meta_path.string());
    }
    if (!fs::exists(index_path)) {
        throw FormatError("missing file: " + index_path.string());
    }

    Manifest manifest;
    try {
        std::ifstream in(meta_path);
        const auto meta = nlohmann::json::parse(in);
        manifest.schema_version = meta.at("schema_version").get<int>();
        manifest.seed = meta.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(meta_path.string() + ": " + e.what());
    }
    if (manifest.schema_version != kManifestSchemaVersion) {
        throw FormatError("schema_version mismatch: file has " +
                          std::to_string(manifest.schema_version) + ", expected " +
                          std::to_string(kManifestSchemaVersion));
    }

    std::ifstream index(index_path);
    std::string text;
    std::size_t line_no = 0;
    std::set<StickerId> seen;
    while (std::getline(index, text)) {
        ++line_no;
        if (text.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const std::string where = index_path.string() + ":" + std::to_string(line_no) + ": ";
        StickerRecord r;
        try {
            const auto j = nlohmann::json::parse(text);
            r.id = j.at("id").get<StickerId>();
            r.description = j.at("description").get<std::string>();
            r.ocr_text = j.at("ocr_text").get<std::string>();
            for (int e : j.at("emotions").get<std::vector<int>>()) {
                r.emotions.push_back(EmotionLabel::from_id(e));
            }
            r.style = StyleLabel::from_id(j.at("style").get<int>());
            r.split = parse_split(j.at("split").get<std::string>());
            for (const auto& name : j.at("frames").get<std::vector<std::string>>()) {
                r.frames.push_back(read_png(dir / name));
            }
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(where + "malformed record: " + e.what());
        } catch (const std::exception& e) {
            throw FormatError(where + e.what());
        }
        if (!seen.insert(r.id).second) {
            throw FormatError(where + "duplicate sticker id " + std::to_string(r.id));
        }
        try {
            validate_record(r);
        } catch (const FormatError& e) {
            throw FormatError(where + e.what());
        }
        manifest.records.push_back(std::move(r));
    }
    if (manifest.records.empty()) {
        throw FormatError(index_path.string() + ": no records");
    }
    return manifest;
}

}  // namespace sticker
