#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sticker {

// Incremental SHA-256; hex() finalizes.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(std::span<const std::byte> bytes);
    void update(std::string_view text);

    template <typename T>
    void update_values(std::span<const T> values) {
        update(std::as_bytes(values));
    }

    std::string hex();

private:
    void* ctx_;
};

std::string sha256_hex(std::string_view data);

std::string base64_encode(std::span<const std::uint8_t> data);
// Throws FormatError on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace sticker
