#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include <openssl/evp.h>
#include <zlib.h>

#include "ssounds/error.hpp"

namespace ssounds {

inline std::uint32_t crc32(std::span<const std::byte> bytes, std::uint32_t crc = 0) {
    uLong c = crc;
    const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
    std::size_t remaining = bytes.size();
    while (remaining > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(remaining, 1u << 30));
        c = ::crc32(c, p, chunk);
        p += chunk;
        remaining -= chunk;
    }
    return static_cast<std::uint32_t>(c);
}

// Incremental SHA-256 over arbitrary byte ranges.
class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
            throw Error("sha256: digest initialisation failed");
        }
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    Sha256& update(std::span<const std::byte> bytes) {
        EVP_DigestUpdate(ctx_, bytes.data(), bytes.size());
        return *this;
    }

    template <typename T>
    Sha256& update_values(std::span<const T> values) {
        return update(std::as_bytes(values));
    }

    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_, digest.data(), &len);
        static constexpr char kHex[] = "0123456789abcdef";
        std::string out;
        out.reserve(len * 2);
        for (unsigned int i = 0; i < len; ++i) {
            out.push_back(kHex[digest[i] >> 4]);
            out.push_back(kHex[digest[i] & 0xf]);
        }
        return out;
    }

private:
    EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(std::span<const std::byte> bytes) {
    Sha256 h;
    h.update(bytes);
    return h.hex();
}

} // namespace ssounds
