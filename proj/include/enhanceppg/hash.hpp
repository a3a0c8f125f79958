#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "binary_io.hpp"
#include "error.hpp"

namespace enhanceppg {

/// Incremental SHA-256, hex output.
class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    Sha256& update(std::span<const std::uint8_t> bytes) {
        EVP_DigestUpdate(ctx_, bytes.data(), bytes.size());
        return *this;
    }
    Sha256& update(std::string_view s) {
        EVP_DigestUpdate(ctx_, s.data(), s.size());
        return *this;
    }

    std::string hex() {
        unsigned char md[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_, md, &len);
        static constexpr char digits[] = "0123456789abcdef";
        std::string out;
        out.reserve(2 * len);
        for (unsigned i = 0; i < len; ++i) {
            out.push_back(digits[md[i] >> 4]);
            out.push_back(digits[md[i] & 15]);
        }
        return out;
    }

private:
    EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(std::string_view s) { return Sha256().update(s).hex(); }

inline std::string sha256_file(const std::filesystem::path& p) {
    const auto bytes = io::read_file(p);
    return Sha256().update(std::string_view(bytes.data(), bytes.size())).hex();
}

} // namespace enhanceppg
