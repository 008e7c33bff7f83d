#pragma once

#include <filesystem>

#include "sticker/corpus.hpp"

namespace sticker {

// On-disk manifest: a directory holding
//   manifest.json   {"schema_version", "seed"}
//   index.jsonl     one record per line: id, frames, description, ocr_text, emotions, style, split
//   frames/<id>_<k>.png
void save_manifest(const Manifest& manifest, const std::filesystem::path& dir);

// Throws FormatError on a missing file, a malformed line (message carries the line number),
// duplicate ids, an empty index ("no records") or a schema_version mismatch.
Manifest load_manifest(const std::filesystem::path& dir);

}  // namespace sticker
