#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ssounds/binary_io.hpp"
#include "ssounds/error.hpp"

namespace ssounds {

using ClassId = std::uint32_t;

struct AudioClip {
    std::vector<float> samples;
    int sample_rate = 16000;
    ClassId label = 0;
    std::string source_id;
    // Set on mixtures built from two classes.
    std::optional<ClassId> second_label;

    std::size_t size() const noexcept { return samples.size(); }
    double duration_seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

inline void validate_clip(const AudioClip& clip, std::optional<std::size_t> class_count = std::nullopt) {
    if (clip.sample_rate <= 0) throw InputError("clip " + clip.source_id + ": sample rate must be positive");
    if (clip.samples.empty()) throw InputError("clip " + clip.source_id + ": no samples");
    if (class_count && clip.label >= *class_count) {
        throw InputError("clip " + clip.source_id + ": label " + std::to_string(clip.label) +
                         " outside class count " + std::to_string(*class_count));
    }
}

inline float clip_unit(double v) noexcept { return static_cast<float>(std::clamp(v, -1.0, 1.0)); }

inline double peak_abs(std::span<const float> samples) noexcept {
    double peak = 0.0;
    for (float s : samples) peak = std::max(peak, static_cast<double>(std::fabs(s)));
    return peak;
}

// Linear-interpolation resampler.
inline std::vector<float> resample_linear(std::span<const float> in, int from_rate, int to_rate) {
    if (from_rate <= 0 || to_rate <= 0) throw InputError("resample: rates must be positive");
    if (from_rate == to_rate || in.empty()) return {in.begin(), in.end()};
    const double ratio = static_cast<double>(from_rate) / to_rate;
    const auto out_len = static_cast<std::size_t>(std::floor((in.size() - 1) / ratio)) + 1;
    std::vector<float> out(out_len);
    for (std::size_t i = 0; i < out_len; ++i) {
        const double pos = i * ratio;
        const auto i0 = static_cast<std::size_t>(pos);
        const double frac = pos - i0;
        const double a = in[i0];
        const double b = i0 + 1 < in.size() ? in[i0 + 1] : in[i0];
        out[i] = static_cast<float>(a + (b - a) * frac);
    }
    return out;
}

// 16-bit PCM WAV. Multi-channel input is downmixed by averaging channels.
inline AudioClip read_wav(const std::filesystem::path& path, ClassId label = 0) {
    const auto bytes = read_file_bytes(path);
    ByteReader r(bytes, path.string());
    r.expect_magic("RIFF");
    r.get<std::uint32_t>("riff size");
    r.expect_magic("WAVE");
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    while (r.remaining() >= 8) {
        const std::size_t chunk_at = r.offset();
        std::string id(4, '\0');
        for (auto& c : id) c = static_cast<char>(r.get<std::uint8_t>("chunk id"));
        const auto size = r.get<std::uint32_t>("chunk size");
        if (id == "fmt ") {
            format = r.get<std::uint16_t>("format");
            channels = r.get<std::uint16_t>("channels");
            rate = r.get<std::uint32_t>("sample rate");
            r.get<std::uint32_t>("byte rate");
            r.get<std::uint16_t>("block align");
            bits = r.get<std::uint16_t>("bits per sample");
            if (size > 16) r.get_array<std::byte>(size - 16, "fmt extension");
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) r.fail("data chunk before fmt chunk", chunk_at);
            if (format != 1 || bits != 16) r.fail("only 16-bit PCM is supported", chunk_at);
            if (channels == 0) r.fail("zero channels", chunk_at);
            const auto frames = size / (2u * channels);
            const auto raw = r.get_array<std::int16_t>(static_cast<std::size_t>(frames) * channels, "pcm data");
            AudioClip clip;
            clip.sample_rate = static_cast<int>(rate);
            clip.label = label;
            clip.source_id = path.stem().string();
            clip.samples.resize(frames);
            for (std::size_t f = 0; f < frames; ++f) {
                double acc = 0.0;
                for (std::size_t c = 0; c < channels; ++c) acc += raw[f * channels + c] / 32768.0;
                clip.samples[f] = static_cast<float>(acc / channels);
            }
            validate_clip(clip);
            return clip;
        } else {
            r.get_array<std::byte>(size + (size & 1u), "chunk body");
        }
    }
    r.fail("no data chunk", r.offset());
}

inline std::vector<std::byte> encode_wav(const AudioClip& clip) {
    ByteWriter w;
    const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
    w.put_magic("RIFF");
    w.put<std::uint32_t>(36 + data_bytes);
    w.put_magic("WAVE");
    w.put_magic("fmt ");
    w.put<std::uint32_t>(16);
    w.put<std::uint16_t>(1);
    w.put<std::uint16_t>(1);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(clip.sample_rate));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(clip.sample_rate) * 2);
    w.put<std::uint16_t>(2);
    w.put<std::uint16_t>(16);
    w.put_magic("data");
    w.put<std::uint32_t>(data_bytes);
    for (float s : clip.samples) {
        const double scaled = std::round(std::clamp(static_cast<double>(s), -1.0, 1.0) * 32767.0);
        w.put<std::int16_t>(static_cast<std::int16_t>(scaled));
    }
    return std::move(w.bytes());
}

inline void write_wav(const AudioClip& clip, const std::filesystem::path& path) {
    write_file_atomic(path, encode_wav(clip));
}

// Raw little-endian float32 samples, no header. The sample rate lives in the
// corpus manifest.
inline AudioClip read_raw_f32(const std::filesystem::path& path, int sample_rate, ClassId label = 0) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() % sizeof(float) != 0) {
        throw FormatError(path.string() + ": size is not a multiple of 4", bytes.size() - bytes.size() % 4);
    }
    AudioClip clip;
    clip.samples.resize(bytes.size() / sizeof(float));
    std::memcpy(clip.samples.data(), bytes.data(), bytes.size());
    clip.sample_rate = sample_rate;
    clip.label = label;
    clip.source_id = path.stem().string();
    validate_clip(clip);
    return clip;
}

inline void write_raw_f32(const AudioClip& clip, const std::filesystem::path& path) {
    write_file_atomic(path, std::as_bytes(std::span(clip.samples)));
}

} // namespace ssounds
