#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ssounds/binary_io.hpp"
#include "ssounds/error.hpp"
#include "ssounds/model.hpp"

namespace ssounds {

// Exported (z_hat_T, z_hat_V) per input clip, for a downstream generator.
//
// File layout (little-endian):
//   "SSCP" u32 version=1 u32 d_text u32 d_vision u64 count
//   count x { u16 key_len, key, u32 l, float32 z_hat_T[l x d_text], float32 z_hat_V[d_vision] }
struct ConditioningRecord {
    std::string key;
    std::uint32_t length = 0;
    std::vector<float> text;
    std::vector<float> vision;

    bool operator==(const ConditioningRecord&) const = default;
};

struct ConditioningFile {
    static constexpr std::uint32_t kVersion = 1;

    std::uint32_t d_text = 0;
    std::uint32_t d_vision = 0;
    std::vector<ConditioningRecord> records;

    bool operator==(const ConditioningFile&) const = default;

    void add(const std::string& key, const ConditioningPair& pair) {
        if (pair.z_hat_text.rank() != 2 || pair.z_hat_text.cols() != d_text || pair.z_hat_vision.size() != d_vision) {
            throw DimensionError("conditioning: pair for '" + key + "' does not match d_T=" + std::to_string(d_text) +
                                 ", d_V=" + std::to_string(d_vision));
        }
        ConditioningRecord rec;
        rec.key = key;
        rec.length = static_cast<std::uint32_t>(pair.z_hat_text.rows());
        for (double v : pair.z_hat_text.data()) rec.text.push_back(static_cast<float>(v));
        for (double v : pair.z_hat_vision.data()) rec.vision.push_back(static_cast<float>(v));
        records.push_back(std::move(rec));
    }

    std::vector<std::byte> encode() const {
        ByteWriter w;
        w.put_magic("SSCP");
        w.put<std::uint32_t>(kVersion);
        w.put<std::uint32_t>(d_text);
        w.put<std::uint32_t>(d_vision);
        w.put<std::uint64_t>(records.size());
        for (const auto& r : records) {
            w.put_key(r.key);
            w.put<std::uint32_t>(r.length);
            w.put_array<float>(r.text);
            w.put_array<float>(r.vision);
        }
        return std::move(w.bytes());
    }

    static ConditioningFile decode(std::span<const std::byte> bytes, const std::string& context) {
        ByteReader r(bytes, context);
        r.expect_magic("SSCP");
        const std::size_t version_at = r.offset();
        const auto version = r.get<std::uint32_t>("version");
        if (version != kVersion) r.fail("unsupported version " + std::to_string(version), version_at);
        ConditioningFile f;
        f.d_text = r.get<std::uint32_t>("d_text");
        f.d_vision = r.get<std::uint32_t>("d_vision");
        if (f.d_text == 0 || f.d_vision == 0) r.fail("zero embedding width", version_at + 4);
        const auto count = r.get<std::uint64_t>("record count");
        for (std::uint64_t i = 0; i < count; ++i) {
            const std::size_t at = r.offset();
            ConditioningRecord rec;
            rec.key = r.get_key("record key");
            rec.length = r.get<std::uint32_t>("text length");
            if (rec.length == 0) r.fail("record '" + rec.key + "' has zero text length", at);
            rec.text = r.get_array<float>(static_cast<std::size_t>(rec.length) * f.d_text, "text payload");
            rec.vision = r.get_array<float>(f.d_vision, "vision payload");
            f.records.push_back(std::move(rec));
        }
        if (r.remaining() != 0) r.fail("trailing bytes after last record", r.offset());
        return f;
    }
};

inline void write_conditioning(const ConditioningFile& f, const std::filesystem::path& path) {
    write_file_atomic(path, f.encode());
}

inline ConditioningFile read_conditioning(const std::filesystem::path& path) {
    return ConditioningFile::decode(read_file_bytes(path), path.string());
}

} // namespace ssounds
