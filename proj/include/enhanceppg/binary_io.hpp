#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace enhanceppg::io {

// All multi-byte values are little-endian; the host is assumed to be too.
static_assert(std::endian::native == std::endian::little);

class ByteWriter {
public:
    template <class T>
    void put(const T& v) {
        static_assert(std::is_trivially_copyable_v<T>);
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }
    template <class T>
    void put_span(std::span<const T> v) {
        const auto* p = reinterpret_cast<const char*>(v.data());
        buf_.insert(buf_.end(), p, p + v.size_bytes());
    }
    void put_bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    const std::vector<char>& bytes() const { return buf_; }

private:
    std::vector<char> buf_;
};

class ByteReader {
public:
    ByteReader(std::span<const char> data, std::string what)
        : data_(data), what_(std::move(what)) {}

    template <class T>
    T get() {
        T v;
        std::memcpy(&v, take(sizeof(T)), sizeof(T));
        return v;
    }
    template <class T>
    void get_into(std::span<T> out) {
        std::memcpy(out.data(), take(out.size_bytes()), out.size_bytes());
    }
    std::string get_string(std::size_t n) {
        const char* p = take(n);
        return {p, n};
    }
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    const char* take(std::size_t n) {
        if (n > remaining()) throw FormatError(what_ + ": truncated file");
        const char* p = data_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::span<const char> data_;
    std::size_t pos_ = 0;
    std::string what_;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<char> data(size);
    in.read(data.data(), static_cast<std::streamsize>(size));
    if (!in) throw LoadError("failed reading " + path.string());
    return data;
}

/// Writes to a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
    write_file_atomic(path, std::span<const char>(text.data(), text.size()));
}

} // namespace enhanceppg::io
