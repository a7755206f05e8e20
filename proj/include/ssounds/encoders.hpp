#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ssounds/audio.hpp"
#include "ssounds/dsp.hpp"
#include "ssounds/error.hpp"
#include "ssounds/rng.hpp"
#include "ssounds/tensor.hpp"

namespace ssounds {

struct EncoderConfig {
    std::size_t d_audio = 64;
    std::size_t d_text = 32;
    std::size_t d_vision = 32;
    std::uint64_t audio_seed = 0xa0d10001;
    std::uint64_t text_seed = 0x7e470002;
    std::uint64_t vision_seed = 0x15100003;
    MelConfig mel;
    std::size_t frames_per_token = 4;
    // Log-mel features are (ln(mel + log_floor) - feature_offset) / feature_scale.
    double log_floor = 1e-6;
    double feature_offset = -2.0;
    double feature_scale = 4.0;
    // Amplitude of the sinusoidal position code added to every audio token.
    double audio_position_scale = 1.0;
};

struct AudioTokens {
    Tensor tokens; // [m x d_audio]

    std::size_t count() const { return tokens.rows(); }
};

struct CaptionRecord {
    ClassId class_id = 0;
    std::string text;
    Tensor text_embedding;   // [l x d_text]
    Tensor vision_embedding; // [d_vision], unit L2 norm

    std::size_t length() const { return text_embedding.rows(); }
};

// Lower-cased alphanumeric runs; every other ASCII byte separates tokens.
// Bytes >= 0x80 are kept so UTF-8 words survive intact.
inline std::vector<std::string> tokenize_caption(std::string_view caption) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : caption) {
        const auto c = static_cast<unsigned char>(ch);
        if (c >= 0x80 || std::isalnum(c)) {
            current.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

// Standard sinusoidal code: even dims sin(pos / 10000^(2i/d)), odd dims cos.
inline std::vector<double> sinusoidal_position(std::size_t pos, std::size_t d) {
    std::vector<double> pe(d);
    for (std::size_t i = 0; i < d; ++i) {
        const double pair = static_cast<double>(i / 2 * 2);
        const double angle = static_cast<double>(pos) / std::pow(10000.0, pair / static_cast<double>(d));
        pe[i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
    return pe;
}

// Standard-normal vector drawn from the stream derive_seed(seed, tag).
inline std::vector<double> seeded_normal_vector(std::uint64_t seed, std::string_view tag, std::size_t n) {
    Rng rng(derive_seed(seed, tag));
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

inline std::vector<double> hashed_token_embedding(std::uint64_t seed, std::string_view space,
                                                  std::string_view token, std::size_t d) {
    std::string tag(space);
    tag += ".token/";
    tag += token;
    return seeded_normal_vector(seed, tag, d);
}

// Row-orthonormal [d x d] matrix from modified Gram-Schmidt over a seeded
// Gaussian draw.
inline std::vector<double> seeded_orthogonal(std::uint64_t seed, std::string_view tag, std::size_t d) {
    auto m = seeded_normal_vector(seed, tag, d * d);
    for (std::size_t i = 0; i < d; ++i) {
        double* row = &m[i * d];
        for (std::size_t j = 0; j < i; ++j) {
            const double* prev = &m[j * d];
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += row[k] * prev[k];
            for (std::size_t k = 0; k < d; ++k) row[k] -= dot * prev[k];
        }
        double norm = 0.0;
        for (std::size_t k = 0; k < d; ++k) norm += row[k] * row[k];
        norm = std::sqrt(norm);
        for (std::size_t k = 0; k < d; ++k) row[k] /= norm;
    }
    return m;
}

// Seeded stand-ins for the frozen audio, text and vision-text encoders. No
// member is trainable; outputs are pure functions of (input, config).
class FrozenEncoders {
public:
    explicit FrozenEncoders(EncoderConfig cfg)
        : cfg_(std::move(cfg)),
          mel_(cfg_.mel),
          projection_(seeded_normal_vector(cfg_.audio_seed, "audio.projection",
                                           cfg_.frames_per_token * cfg_.mel.n_mels * cfg_.d_audio)),
          orthogonal_(seeded_orthogonal(cfg_.vision_seed, "vision.orthogonal", cfg_.d_vision)) {
        if (cfg_.d_audio == 0 || cfg_.d_text == 0 || cfg_.d_vision == 0) {
            throw ConfigError("encoders: embedding widths must be positive");
        }
        if (cfg_.frames_per_token == 0) throw ConfigError("encoders: frames_per_token must be positive");
        const double inv = 1.0 / std::sqrt(static_cast<double>(cfg_.frames_per_token * cfg_.mel.n_mels));
        for (auto& w : projection_) w *= inv;
    }

    const EncoderConfig& config() const noexcept { return cfg_; }
    const MelSpectrogram& mel() const noexcept { return mel_; }

    std::size_t token_count(std::size_t samples) const {
        return mel_.frames_for(samples) / cfg_.frames_per_token;
    }

    // Normalised log-mel features [frames x n_mels] of a clip at the
    // configured rate (resampling first when needed).
    std::vector<double> log_mel(const AudioClip& clip) const {
        validate_clip(clip);
        std::vector<float> resampled;
        std::span<const float> samples = clip.samples;
        if (clip.sample_rate != cfg_.mel.sample_rate) {
            resampled = resample_linear(clip.samples, clip.sample_rate, cfg_.mel.sample_rate);
            samples = resampled;
        }
        if (samples.size() < cfg_.mel.window) {
            throw InputError("encode_audio: clip " + clip.source_id + " is shorter than one analysis window (" +
                             std::to_string(samples.size()) + " < " + std::to_string(cfg_.mel.window) + " samples)");
        }
        auto feats = mel_.compute(samples);
        for (auto& v : feats) v = (std::log(v + cfg_.log_floor) - cfg_.feature_offset) / cfg_.feature_scale;
        return feats;
    }

    // Groups of frames_per_token frames, flattened frame-major, projected to
    // d_audio, plus a sinusoidal code for the token index.
    AudioTokens encode_audio(const AudioClip& clip) const {
        const auto feats = log_mel(clip);
        const std::size_t n_mels = cfg_.mel.n_mels;
        const std::size_t frames = feats.size() / n_mels;
        const std::size_t m = frames / cfg_.frames_per_token;
        if (m == 0) {
            throw InputError("encode_audio: clip " + clip.source_id + " yields " + std::to_string(frames) +
                             " frames, fewer than one token (" + std::to_string(cfg_.frames_per_token) + ")");
        }
        const std::size_t in_width = cfg_.frames_per_token * n_mels;
        const std::size_t d = cfg_.d_audio;
        std::vector<double> out(m * d, 0.0);
        for (std::size_t t = 0; t < m; ++t) {
            const double* group = &feats[t * in_width];
            double* row = &out[t * d];
            for (std::size_t i = 0; i < in_width; ++i) {
                const double x = group[i];
                const double* w = &projection_[i * d];
                for (std::size_t j = 0; j < d; ++j) row[j] += x * w[j];
            }
            if (cfg_.audio_position_scale != 0.0) {
                const auto pe = sinusoidal_position(t, d);
                for (std::size_t j = 0; j < d; ++j) row[j] += cfg_.audio_position_scale * pe[j];
            }
        }
        return AudioTokens{Tensor::from({m, d}, std::move(out))};
    }

    // Row j = (hash_embedding(token_j) + position(j)) / sqrt(d_text).
    Tensor encode_text(std::string_view caption) const {
        const auto tokens = tokenize_caption(caption);
        if (tokens.empty()) throw InputError("encode_text: caption has no tokens");
        const std::size_t d = cfg_.d_text;
        const double inv = 1.0 / std::sqrt(static_cast<double>(d));
        std::vector<double> out;
        out.reserve(tokens.size() * d);
        for (std::size_t j = 0; j < tokens.size(); ++j) {
            const auto e = hashed_token_embedding(cfg_.text_seed, "text", tokens[j], d);
            const auto pe = sinusoidal_position(j, d);
            for (std::size_t k = 0; k < d; ++k) out.push_back((e[k] + pe[k]) * inv);
        }
        return Tensor::from({tokens.size(), d}, std::move(out));
    }

    // normalize(R * mean_j hash_embedding(token_j)) with R orthogonal.
    Tensor encode_vision_text(std::string_view caption) const {
        const auto tokens = tokenize_caption(caption);
        if (tokens.empty()) throw InputError("encode_vision_text: caption has no tokens");
        const std::size_t d = cfg_.d_vision;
        std::vector<double> mean(d, 0.0);
        for (const auto& tok : tokens) {
            const auto e = hashed_token_embedding(cfg_.vision_seed, "vision", tok, d);
            for (std::size_t k = 0; k < d; ++k) mean[k] += e[k];
        }
        for (auto& v : mean) v /= static_cast<double>(tokens.size());
        std::vector<double> out(d, 0.0);
        double norm = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t k = 0; k < d; ++k) out[i] += orthogonal_[i * d + k] * mean[k];
            norm += out[i] * out[i];
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) throw NumericError("encode_vision_text: degenerate embedding");
        for (auto& v : out) v /= norm;
        return Tensor::from({d}, std::move(out));
    }

    CaptionRecord encode_caption(ClassId class_id, std::string text) const {
        CaptionRecord rec;
        rec.class_id = class_id;
        rec.text_embedding = encode_text(text);
        rec.vision_embedding = encode_vision_text(text);
        rec.text = std::move(text);
        return rec;
    }

private:
    EncoderConfig cfg_;
    MelSpectrogram mel_;
    std::vector<double> projection_; // [frames_per_token * n_mels x d_audio]
    std::vector<double> orthogonal_; // [d_vision x d_vision]
};

} // namespace ssounds
