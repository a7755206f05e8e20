#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ssounds/error.hpp"

namespace ssounds {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

// Append-only little-endian encoder.
class ByteWriter {
public:
    template <typename T>
        requires std::is_arithmetic_v<T>
    void put(T value) {
        const auto* p = reinterpret_cast<const std::byte*>(&value);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }

    void put_magic(std::string_view magic) {
        for (char c : magic) bytes_.push_back(static_cast<std::byte>(c));
    }

    // u16 length prefix + UTF-8 bytes.
    void put_key(std::string_view key) {
        if (key.size() > 0xffff) throw InputError("key longer than 65535 bytes: " + std::string(key.substr(0, 32)));
        put<std::uint16_t>(static_cast<std::uint16_t>(key.size()));
        for (char c : key) bytes_.push_back(static_cast<std::byte>(c));
    }

    template <typename T>
    void put_array(std::span<const T> values) {
        const auto raw = std::as_bytes(values);
        bytes_.insert(bytes_.end(), raw.begin(), raw.end());
    }

    const std::vector<std::byte>& bytes() const noexcept { return bytes_; }
    std::vector<std::byte>& bytes() noexcept { return bytes_; }

private:
    std::vector<std::byte> bytes_;
};

// Bounds-checked little-endian decoder; every failure reports its offset.
class ByteReader {
public:
    ByteReader(std::span<const std::byte> bytes, std::string context)
        : bytes_(bytes), context_(std::move(context)) {}

    template <typename T>
        requires std::is_arithmetic_v<T>
    T get(std::string_view what) {
        require(sizeof(T), what);
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    void expect_magic(std::string_view magic) {
        require(magic.size(), "magic");
        for (std::size_t i = 0; i < magic.size(); ++i) {
            if (static_cast<char>(bytes_[pos_ + i]) != magic[i]) {
                throw FormatError(context_ + ": bad magic, expected \"" + std::string(magic) + "\"", pos_ + i);
            }
        }
        pos_ += magic.size();
    }

    std::string get_key(std::string_view what) {
        const auto len = get<std::uint16_t>(what);
        require(len, what);
        std::string key(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
        pos_ += len;
        return key;
    }

    template <typename T>
    std::vector<T> get_array(std::size_t count, std::string_view what) {
        if (count > (bytes_.size() - pos_) / sizeof(T)) {
            throw FormatError(context_ + ": truncated " + std::string(what), pos_);
        }
        std::vector<T> values(count);
        std::memcpy(values.data(), bytes_.data() + pos_, count * sizeof(T));
        pos_ += count * sizeof(T);
        return values;
    }

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
    const std::string& context() const noexcept { return context_; }

    [[noreturn]] void fail(const std::string& message, std::size_t at) const {
        throw FormatError(context_ + ": " + message, at);
    }

private:
    void require(std::size_t n, std::string_view what) const {
        if (n > bytes_.size() - pos_) {
            throw FormatError(context_ + ": truncated " + std::string(what), pos_);
        }
    }

    std::span<const std::byte> bytes_;
    std::string context_;
    std::size_t pos_ = 0;
};

inline std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<std::byte> bytes(size);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!in) throw InputError("failed reading " + path.string());
    return bytes;
}

// Writes to a sibling temp file, then renames over the target.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw InputError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw InputError("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
    write_file_atomic(path, std::as_bytes(std::span(text.data(), text.size())));
}

inline std::string read_text_file(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

} // namespace ssounds
