#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ssounds/binary_io.hpp"
#include "ssounds/encoders.hpp"
#include "ssounds/error.hpp"
#include "ssounds/hashing.hpp"
#include "ssounds/model.hpp"
#include "ssounds/optim.hpp"

namespace ssounds {

// Training state sufficient to resume bit-exactly, plus the best model seen
// so far (the one evaluation and export use).
struct Checkpoint {
    std::uint64_t config_hash = 0;
    EncoderConfig encoder;
    ModelConfig model_config;
    std::uint64_t epoch = 0;
    std::uint64_t best_epoch = 0;
    std::uint64_t epochs_since_best = 0;
    double best_val_loss = 0.0;
    AlignmentModel model;
    AlignmentModel best_model;
    AdamWState text_state;
    AdamWState vision_state;
};

// File layout (little-endian):
//   "SSCK" u32 version u64 config_hash
//   u32 n_meta   { u16 key_len, key, u64 value }
//   u32 n_blobs  { u16 key_len, key, u32 rank, u64 dims[rank], f64 payload }
//   u32 crc32 of every preceding byte
namespace checkpoint_format {

inline constexpr std::uint32_t kVersion = 1;

struct Blob {
    Shape shape;
    std::vector<double> values;
};

struct Container {
    std::uint64_t config_hash = 0;
    std::map<std::string, std::uint64_t> meta;
    std::vector<std::pair<std::string, Blob>> blobs;
};

inline std::vector<std::byte> encode(const Container& c) {
    ByteWriter w;
    w.put_magic("SSCK");
    w.put<std::uint32_t>(kVersion);
    w.put<std::uint64_t>(c.config_hash);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(c.meta.size()));
    for (const auto& [k, v] : c.meta) {
        w.put_key(k);
        w.put<std::uint64_t>(v);
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(c.blobs.size()));
    for (const auto& [k, b] : c.blobs) {
        w.put_key(k);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(b.shape.size()));
        for (auto d : b.shape) w.put<std::uint64_t>(d);
        w.put_array<double>(b.values);
    }
    w.put<std::uint32_t>(crc32(w.bytes()));
    return std::move(w.bytes());
}

inline Container decode(std::span<const std::byte> bytes, const std::string& context) {
    if (bytes.size() < 4) throw FormatError(context + ": file too short for a checkpoint", 0);
    const auto body = bytes.first(bytes.size() - 4);
    ByteReader r(bytes, context);
    r.expect_magic("SSCK");
    const std::size_t version_at = r.offset();
    const auto version = r.get<std::uint32_t>("version");
    if (version != kVersion) r.fail("unsupported version " + std::to_string(version), version_at);
    // The footer is checked before structure so truncations and bit flips
    // surface as checksum errors at the footer offset.
    {
        std::uint32_t stored;
        std::memcpy(&stored, bytes.data() + body.size(), 4);
        if (stored != crc32(body)) throw FormatError(context + ": CRC32 mismatch", body.size());
    }
    Container c;
    c.config_hash = r.get<std::uint64_t>("config hash");
    const auto n_meta = r.get<std::uint32_t>("meta count");
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        auto key = r.get_key("meta key");
        c.meta[key] = r.get<std::uint64_t>("meta value");
    }
    const auto n_blobs = r.get<std::uint32_t>("blob count");
    for (std::uint32_t i = 0; i < n_blobs; ++i) {
        auto key = r.get_key("blob key");
        const auto rank = r.get<std::uint32_t>("blob rank");
        if (rank > 8) r.fail("blob '" + key + "' has implausible rank " + std::to_string(rank), r.offset() - 4);
        Blob b;
        for (std::uint32_t d = 0; d < rank; ++d) b.shape.push_back(r.get<std::uint64_t>("blob dim"));
        b.values = r.get_array<double>(shape_size(b.shape), "blob payload");
        c.blobs.emplace_back(std::move(key), std::move(b));
    }
    if (r.offset() != body.size()) r.fail("unexpected bytes before checksum footer", r.offset());
    return c;
}

inline std::uint64_t as_bits(double v) { return std::bit_cast<std::uint64_t>(v); }
inline double from_bits(std::uint64_t v) { return std::bit_cast<double>(v); }

} // namespace checkpoint_format

namespace detail {

inline void put_model(checkpoint_format::Container& c, const std::string& prefix, const AlignmentModel& m) {
    for (const auto& p : m.parameters()) {
        c.blobs.push_back({prefix + p.name, {p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}}});
    }
}

inline void put_state(checkpoint_format::Container& c, const std::string& prefix, const AdamWState& s,
                      const std::vector<NamedParameter>& params) {
    c.meta[prefix + "step"] = s.step;
    for (std::size_t i = 0; i < params.size(); ++i) {
        c.blobs.push_back({prefix + "m/" + params[i].name, {params[i].tensor.shape(), s.m[i]}});
        c.blobs.push_back({prefix + "v/" + params[i].name, {params[i].tensor.shape(), s.v[i]}});
    }
}

} // namespace detail

inline std::vector<std::byte> encode_checkpoint(const Checkpoint& ck) {
    checkpoint_format::Container c;
    c.config_hash = ck.config_hash;
    using checkpoint_format::as_bits;
    auto& m = c.meta;
    const auto& e = ck.encoder;
    m["encoder.d_audio"] = e.d_audio;
    m["encoder.d_text"] = e.d_text;
    m["encoder.d_vision"] = e.d_vision;
    m["encoder.audio_seed"] = e.audio_seed;
    m["encoder.text_seed"] = e.text_seed;
    m["encoder.vision_seed"] = e.vision_seed;
    m["encoder.sample_rate"] = static_cast<std::uint64_t>(e.mel.sample_rate);
    m["encoder.window"] = e.mel.window;
    m["encoder.hop"] = e.mel.hop;
    m["encoder.n_fft"] = e.mel.n_fft;
    m["encoder.n_mels"] = e.mel.n_mels;
    m["encoder.frames_per_token"] = e.frames_per_token;
    m["encoder.f_min"] = as_bits(e.mel.f_min);
    m["encoder.f_max"] = as_bits(e.mel.f_max);
    m["encoder.log_floor"] = as_bits(e.log_floor);
    m["encoder.feature_offset"] = as_bits(e.feature_offset);
    m["encoder.feature_scale"] = as_bits(e.feature_scale);
    m["encoder.audio_position_scale"] = as_bits(e.audio_position_scale);
    const auto& mc = ck.model_config;
    m["model.d_audio"] = mc.d_audio;
    m["model.d_text"] = mc.d_text;
    m["model.d_vision"] = mc.d_vision;
    m["model.d_hidden"] = mc.hidden();
    m["model.heads"] = mc.heads;
    m["model.query_capacity"] = mc.query_capacity;
    m["model.init_seed"] = mc.init_seed;
    m["model.pooling"] = mc.pooling == PoolingMode::attention ? 0 : 1;
    m["model.query_init_std"] = as_bits(mc.query_init_std);
    m["model.projection_init_std"] = as_bits(mc.projection_init_std);
    m["train.epoch"] = ck.epoch;
    m["train.best_epoch"] = ck.best_epoch;
    m["train.epochs_since_best"] = ck.epochs_since_best;
    m["train.best_val_loss"] = as_bits(ck.best_val_loss);
    detail::put_model(c, "model/", ck.model);
    detail::put_model(c, "best/", ck.best_model);
    detail::put_state(c, "opt_text/", ck.text_state, ck.model.parameters(Branch::text));
    detail::put_state(c, "opt_vision/", ck.vision_state, ck.model.parameters(Branch::vision));
    return checkpoint_format::encode(c);
}

inline Checkpoint decode_checkpoint(std::span<const std::byte> bytes, const std::string& context) {
    const auto c = checkpoint_format::decode(bytes, context);
    using checkpoint_format::from_bits;
    auto meta = [&](const std::string& key) {
        auto it = c.meta.find(key);
        if (it == c.meta.end()) throw FormatError(context + ": missing meta field '" + key + "'", 0);
        return it->second;
    };
    std::map<std::string, const checkpoint_format::Blob*> blobs;
    for (const auto& [k, b] : c.blobs) blobs[k] = &b;
    auto blob = [&](const std::string& key, const Shape& shape) -> const std::vector<double>& {
        auto it = blobs.find(key);
        if (it == blobs.end()) throw FormatError(context + ": missing blob '" + key + "'", 0);
        if (it->second->shape != shape) {
            throw DimensionError(context + ": blob '" + key + "' has shape " + shape_str(it->second->shape) +
                                 ", model expects " + shape_str(shape));
        }
        return it->second->values;
    };

    Checkpoint ck;
    ck.config_hash = c.config_hash;
    auto& e = ck.encoder;
    e.d_audio = meta("encoder.d_audio");
    e.d_text = meta("encoder.d_text");
    e.d_vision = meta("encoder.d_vision");
    e.audio_seed = meta("encoder.audio_seed");
    e.text_seed = meta("encoder.text_seed");
    e.vision_seed = meta("encoder.vision_seed");
    e.mel.sample_rate = static_cast<int>(meta("encoder.sample_rate"));
    e.mel.window = meta("encoder.window");
    e.mel.hop = meta("encoder.hop");
    e.mel.n_fft = meta("encoder.n_fft");
    e.mel.n_mels = meta("encoder.n_mels");
    e.frames_per_token = meta("encoder.frames_per_token");
    e.mel.f_min = from_bits(meta("encoder.f_min"));
    e.mel.f_max = from_bits(meta("encoder.f_max"));
    e.log_floor = from_bits(meta("encoder.log_floor"));
    e.feature_offset = from_bits(meta("encoder.feature_offset"));
    e.feature_scale = from_bits(meta("encoder.feature_scale"));
    e.audio_position_scale = from_bits(meta("encoder.audio_position_scale"));
    auto& mc = ck.model_config;
    mc.d_audio = meta("model.d_audio");
    mc.d_text = meta("model.d_text");
    mc.d_vision = meta("model.d_vision");
    mc.d_hidden = meta("model.d_hidden");
    mc.heads = meta("model.heads");
    mc.query_capacity = meta("model.query_capacity");
    mc.init_seed = meta("model.init_seed");
    mc.pooling = meta("model.pooling") == 0 ? PoolingMode::attention : PoolingMode::mean;
    mc.query_init_std = from_bits(meta("model.query_init_std"));
    mc.projection_init_std = from_bits(meta("model.projection_init_std"));
    ck.epoch = meta("train.epoch");
    ck.best_epoch = meta("train.best_epoch");
    ck.epochs_since_best = meta("train.epochs_since_best");
    ck.best_val_loss = from_bits(meta("train.best_val_loss"));

    ck.model = AlignmentModel(mc);
    ck.best_model = AlignmentModel(mc);
    for (const auto& p : ck.model.parameters()) {
        ck.model.assign(p.name, blob("model/" + p.name, p.tensor.shape()));
        ck.best_model.assign(p.name, blob("best/" + p.name, p.tensor.shape()));
    }
    auto load_state = [&](const std::string& prefix, Branch branch) {
        AdamWState s;
        s.step = meta(prefix + "step");
        for (const auto& p : ck.model.parameters(branch)) {
            s.m.push_back(blob(prefix + "m/" + p.name, p.tensor.shape()));
            s.v.push_back(blob(prefix + "v/" + p.name, p.tensor.shape()));
        }
        return s;
    };
    ck.text_state = load_state("opt_text/", Branch::text);
    ck.vision_state = load_state("opt_vision/", Branch::vision);
    return ck;
}

inline void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file_bytes(path), path.string());
}

} // namespace ssounds
