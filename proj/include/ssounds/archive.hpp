#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssounds/binary_io.hpp"
#include "ssounds/encoders.hpp"
#include "ssounds/error.hpp"
#include "ssounds/tensor.hpp"

namespace ssounds {

// Precomputed encoder outputs. Keys carry their space as a prefix:
//   audio/<source_id>   tokens x d_audio
//   text/<class_id>     tokens x d_text
//   vision/<class_id>   1 x d_vision
//
// File layout (little-endian):
//   "SSEA" u32 version=1 u32 d_audio u32 d_text u32 d_vision u64 count
//   count x { u16 key_len, key bytes, u32 token_count, float32 payload }
struct ArchiveDims {
    std::uint32_t audio = 0;
    std::uint32_t text = 0;
    std::uint32_t vision = 0;

    bool operator==(const ArchiveDims&) const = default;
};

struct ArchiveRecord {
    std::string key;
    std::uint32_t tokens = 0;
    std::vector<float> payload;

    bool operator==(const ArchiveRecord&) const = default;
};

class EmbeddingArchive {
public:
    static constexpr std::uint32_t kVersion = 1;

    EmbeddingArchive() = default;
    explicit EmbeddingArchive(ArchiveDims dims) : dims_(dims) {}

    const ArchiveDims& dims() const noexcept { return dims_; }
    const std::vector<ArchiveRecord>& records() const noexcept { return records_; }
    std::size_t size() const noexcept { return records_.size(); }

    bool operator==(const EmbeddingArchive& other) const {
        return dims_ == other.dims_ && records_ == other.records_;
    }

    std::uint32_t width_for(const std::string& key) const {
        if (key.starts_with("audio/")) return dims_.audio;
        if (key.starts_with("text/")) return dims_.text;
        if (key.starts_with("vision/")) return dims_.vision;
        throw InputError("archive: key '" + key + "' has no audio/, text/ or vision/ prefix");
    }

    void put(const std::string& key, const Tensor& value) {
        const std::uint32_t width = width_for(key);
        if (value.size() % width != 0 || value.size() == 0) {
            throw DimensionError("archive: record '" + key + "' of shape " + shape_str(value.shape()) +
                                 " does not match width " + std::to_string(width));
        }
        ArchiveRecord rec{key, static_cast<std::uint32_t>(value.size() / width), {}};
        rec.payload.reserve(value.size());
        for (double v : value.data()) rec.payload.push_back(static_cast<float>(v));
        insert(std::move(rec));
    }

    void put_audio(const std::string& source_id, const AudioTokens& t) { put("audio/" + source_id, t.tokens); }
    void put_caption(const CaptionRecord& c) {
        put("text/" + std::to_string(c.class_id), c.text_embedding);
        put("vision/" + std::to_string(c.class_id), c.vision_embedding);
    }

    void insert(ArchiveRecord rec) {
        if (auto it = index_.find(rec.key); it != index_.end()) {
            records_[it->second] = std::move(rec);
            return;
        }
        index_[rec.key] = records_.size();
        records_.push_back(std::move(rec));
    }

    bool contains(const std::string& key) const { return index_.contains(key); }

    // Tensor view of a record: [tokens x width], or [width] for vision keys.
    std::optional<Tensor> get(const std::string& key) const {
        auto it = index_.find(key);
        if (it == index_.end()) return std::nullopt;
        const auto& rec = records_[it->second];
        const std::uint32_t width = width_for(key);
        std::vector<double> values(rec.payload.begin(), rec.payload.end());
        if (key.starts_with("vision/")) return Tensor::from({width}, std::move(values));
        return Tensor::from({rec.tokens, width}, std::move(values));
    }

    Tensor require(const std::string& key) const {
        auto t = get(key);
        if (!t) throw InputError("archive: missing record '" + key + "'");
        return *t;
    }

    std::vector<std::byte> encode() const {
        ByteWriter w;
        w.put_magic("SSEA");
        w.put<std::uint32_t>(kVersion);
        w.put<std::uint32_t>(dims_.audio);
        w.put<std::uint32_t>(dims_.text);
        w.put<std::uint32_t>(dims_.vision);
        w.put<std::uint64_t>(records_.size());
        for (const auto& rec : records_) {
            w.put_key(rec.key);
            w.put<std::uint32_t>(rec.tokens);
            w.put_array<float>(rec.payload);
        }
        return std::move(w.bytes());
    }

    static EmbeddingArchive decode(std::span<const std::byte> bytes, const std::string& context) {
        ByteReader r(bytes, context);
        r.expect_magic("SSEA");
        const std::size_t version_at = r.offset();
        const auto version = r.get<std::uint32_t>("version");
        if (version != kVersion) r.fail("unsupported version " + std::to_string(version), version_at);
        ArchiveDims dims;
        dims.audio = r.get<std::uint32_t>("d_audio");
        dims.text = r.get<std::uint32_t>("d_text");
        dims.vision = r.get<std::uint32_t>("d_vision");
        if (dims.audio == 0 || dims.text == 0 || dims.vision == 0) r.fail("zero embedding width", version_at + 4);
        const auto count = r.get<std::uint64_t>("record count");
        EmbeddingArchive archive(dims);
        for (std::uint64_t i = 0; i < count; ++i) {
            const std::size_t rec_at = r.offset();
            ArchiveRecord rec;
            rec.key = r.get_key("record key");
            std::uint32_t width = 0;
            try {
                width = archive.width_for(rec.key);
            } catch (const InputError&) {
                r.fail("record key '" + rec.key + "' has an unknown prefix", rec_at);
            }
            rec.tokens = r.get<std::uint32_t>("token count");
            if (rec.key.starts_with("vision/") && rec.tokens != 1) {
                r.fail("vision record '" + rec.key + "' must hold exactly one vector", rec_at);
            }
            rec.payload = r.get_array<float>(static_cast<std::size_t>(rec.tokens) * width, "record payload");
            if (archive.contains(rec.key)) r.fail("duplicate key '" + rec.key + "'", rec_at);
            archive.insert(std::move(rec));
        }
        if (r.remaining() != 0) r.fail("trailing bytes after last record", r.offset());
        return archive;
    }

private:
    ArchiveDims dims_;
    std::vector<ArchiveRecord> records_;
    std::map<std::string, std::size_t> index_;
};

inline void write_embedding_archive(const EmbeddingArchive& archive, const std::filesystem::path& path) {
    write_file_atomic(path, archive.encode());
}

inline EmbeddingArchive read_embedding_archive(const std::filesystem::path& path) {
    return EmbeddingArchive::decode(read_file_bytes(path), path.string());
}

// Loads an archive and checks its declared widths against a configuration.
inline EmbeddingArchive read_embedding_archive(const std::filesystem::path& path, const ArchiveDims& expected) {
    auto archive = read_embedding_archive(path);
    const auto& d = archive.dims();
    auto check = [&](const char* name, std::uint32_t got, std::uint32_t want) {
        if (got != want) {
            throw DimensionError(path.string() + ": archive " + name + "=" + std::to_string(got) +
                                 " but configuration expects " + std::to_string(want));
        }
    };
    check("d_A", d.audio, expected.audio);
    check("d_T", d.text, expected.text);
    check("d_V", d.vision, expected.vision);
    return archive;
}

inline ArchiveDims archive_dims(const EncoderConfig& cfg) {
    return {static_cast<std::uint32_t>(cfg.d_audio), static_cast<std::uint32_t>(cfg.d_text),
            static_cast<std::uint32_t>(cfg.d_vision)};
}

} // namespace ssounds
