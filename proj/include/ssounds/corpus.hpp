#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssounds/audio.hpp"
#include "ssounds/binary_io.hpp"
#include "ssounds/error.hpp"
#include "ssounds/rng.hpp"

namespace ssounds {

struct Corpus {
    int sample_rate = 16000;
    std::vector<AudioClip> clips;
    // Class-level caption text, indexed by class id.
    std::vector<std::string> captions;
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;

    std::size_t class_count() const noexcept { return captions.size(); }

    void validate() const {
        if (captions.empty()) throw InputError("corpus: no class captions");
        if (clips.empty()) throw InputError("corpus: no clips");
        for (const auto& c : clips) {
            validate_clip(c, captions.size());
            if (c.sample_rate != sample_rate) {
                throw InputError("corpus: clip " + c.source_id + " has rate " + std::to_string(c.sample_rate) +
                                 ", corpus rate is " + std::to_string(sample_rate));
            }
        }
        std::set<std::size_t> seen;
        for (auto idx : train) {
            if (idx >= clips.size()) throw InputError("corpus: train index out of range");
            seen.insert(idx);
        }
        for (auto idx : validation) {
            if (idx >= clips.size()) throw InputError("corpus: validation index out of range");
            if (seen.contains(idx)) throw InputError("corpus: clip " + clips[idx].source_id + " is in both splits");
        }
    }
};

// Stratified seeded split: each class contributes round(fraction * count)
// of its shuffled clips to validation (at least one when it has two or more).
inline void split_corpus(Corpus& corpus, std::uint64_t seed, double validation_fraction = 0.1) {
    corpus.train.clear();
    corpus.validation.clear();
    Rng rng(derive_seed(seed, "corpus.split"));
    for (ClassId c = 0; c < corpus.class_count(); ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < corpus.clips.size(); ++i)
            if (corpus.clips[i].label == c) members.push_back(i);
        rng.shuffle(members.begin(), members.end());
        auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(members.size())));
        if (n_val == 0 && members.size() >= 2 && validation_fraction > 0.0) n_val = 1;
        corpus.validation.insert(corpus.validation.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
        corpus.train.insert(corpus.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
    }
    std::sort(corpus.train.begin(), corpus.train.end());
    std::sort(corpus.validation.begin(), corpus.validation.end());
}

inline const std::vector<std::string>& caption_phrase_bank() {
    static const std::vector<std::string> bank = {
        "a train is passing by",
        "a helicopter is hovering overhead",
        "a dog is barking in the yard",
        "a bird is singing in a tree",
        "an engine is idling",
        "a bell is ringing",
        "rain is falling on a roof",
        "a siren is wailing down the street",
        "a drum is pounding",
        "a crowd is cheering",
        "a kettle is boiling",
        "a violin is playing a melody",
    };
    return bank;
}

struct SynthOptions {
    double duration_s = 1.0;
    int sample_rate = 16000;
    // Fraction of the clip covered by the class event.
    double event_min = 0.2;
    double event_max = 0.45;
    double event_level = 0.4;
    double level_jitter = 0.25;
    double pitch_jitter = 0.03;
    double noise_level = 0.01;
    // Quieter, longer events of other classes at a random fraction of the
    // class event's level; the label follows the loudest event.
    std::size_t background_events = 1;
    double background_ratio_min = 0.3;
    double background_ratio_max = 0.65;
    double background_min = 0.5;
    double background_max = 0.9;
    // Class-independent tones at random pitch spanning the whole clip.
    std::size_t distractors = 0;
    double distractor_level = 0.2;
    double validation_fraction = 0.1;
    // Class count the background classes are drawn from (0: no background).
    std::size_t classes = 0;
};

namespace detail {

struct ClassVoice {
    double f0;
    std::size_t harmonics;
    double rolloff;
    double am_rate;
    double am_depth;
};

inline ClassVoice class_voice(ClassId c) {
    return ClassVoice{
        150.0 * std::pow(1.35, static_cast<double>(c)),
        2 + c % 3,
        0.35 + 0.15 * static_cast<double>(c % 4),
        3.0 + 2.0 * static_cast<double>(c % 5),
        0.2 + 0.15 * static_cast<double>(c % 3),
    };
}

// Adds one amplitude-modulated harmonic event of class c covering a random
// fraction in [span_min, span_max] of the buffer.
inline void render_event(std::vector<double>& x, ClassId c, double amp, double span_min, double span_max, Rng& rng,
                         const SynthOptions& opt) {
    const auto n = x.size();
    const double sr = opt.sample_rate;
    const auto voice = class_voice(c);
    const double span = rng.uniform(span_min, span_max);
    const auto ev_len = static_cast<std::size_t>(span * static_cast<double>(n));
    const auto ev_start = static_cast<std::size_t>(rng.uniform() * static_cast<double>(n - ev_len));
    const double f0 = voice.f0 * (1.0 + rng.uniform(-opt.pitch_jitter, opt.pitch_jitter));
    const double am_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    std::vector<double> phases(voice.harmonics);
    for (auto& p : phases) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double norm = 0.0;
    for (std::size_t h = 0; h < voice.harmonics; ++h) norm += std::pow(voice.rolloff, static_cast<double>(h));
    const auto fade = static_cast<std::size_t>(0.01 * sr);
    for (std::size_t i = 0; i < ev_len; ++i) {
        const double t = static_cast<double>(i) / sr;
        double s = 0.0;
        for (std::size_t h = 0; h < voice.harmonics; ++h) {
            s += std::pow(voice.rolloff, static_cast<double>(h)) *
                 std::sin(2.0 * std::numbers::pi * f0 * static_cast<double>(h + 1) * t + phases[h]);
        }
        const double am =
            1.0 - voice.am_depth * 0.5 * (1.0 + std::sin(2.0 * std::numbers::pi * voice.am_rate * t + am_phase));
        double env = 1.0;
        if (i < fade) env = static_cast<double>(i) / fade;
        if (ev_len - i < fade) env = std::min(env, static_cast<double>(ev_len - i) / fade);
        x[ev_start + i] += amp * env * am * s / norm;
    }
}

} // namespace detail

// One clip: a class-specific harmonic event over a random sub-interval, on
// top of quieter events from other classes, white noise and optional
// class-independent tones.
inline AudioClip synthesize_clip(ClassId c, std::uint64_t seed, const SynthOptions& opt) {
    Rng rng(seed);
    const auto n = static_cast<std::size_t>(opt.duration_s * opt.sample_rate);
    const double sr = opt.sample_rate;
    std::vector<double> x(n, 0.0);
    const double level = opt.event_level * (1.0 + rng.uniform(-opt.level_jitter, opt.level_jitter));
    detail::render_event(x, c, level, opt.event_min, opt.event_max, rng, opt);
    if (opt.classes > 1) {
        for (std::size_t b = 0; b < opt.background_events; ++b) {
            auto other = static_cast<ClassId>(rng.below(opt.classes - 1));
            if (other >= c) ++other;
            const double ratio = rng.uniform(opt.background_ratio_min, opt.background_ratio_max);
            detail::render_event(x, other, level * ratio, opt.background_min, opt.background_max, rng, opt);
        }
    }
    for (std::size_t d = 0; d < opt.distractors; ++d) {
        const double f = std::exp(rng.uniform(std::log(100.0), std::log(4000.0)));
        const double a = opt.distractor_level * rng.uniform(0.5, 1.0);
        const double ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < n; ++i) x[i] += a * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / sr + ph);
    }
    for (auto& v : x) v += opt.noise_level * rng.uniform(-1.0, 1.0) * std::sqrt(3.0);

    AudioClip clip;
    clip.sample_rate = opt.sample_rate;
    clip.label = c;
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) clip.samples[i] = clip_unit(x[i]);
    return clip;
}

inline Corpus generate_synthetic_corpus(std::size_t classes, std::size_t per_class, std::uint64_t seed,
                                        const SynthOptions& opt = {}) {
    if (classes < 2) throw InputError("synthetic corpus: need at least 2 classes");
    if (per_class == 0) throw InputError("synthetic corpus: per_class must be positive");
    Corpus corpus;
    corpus.sample_rate = opt.sample_rate;
    const auto& bank = caption_phrase_bank();
    for (std::size_t c = 0; c < classes; ++c) {
        corpus.captions.push_back(c < bank.size() ? bank[c] : "a source" + std::to_string(c) + " is humming");
    }
    SynthOptions clip_opt = opt;
    if (clip_opt.classes == 0) clip_opt.classes = classes;
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t i = 0; i < per_class; ++i) {
            const std::uint64_t clip_seed = derive_seed(derive_seed(seed, "synth.clip"), c * per_class + i);
            AudioClip clip = synthesize_clip(static_cast<ClassId>(c), clip_seed, clip_opt);
            clip.source_id = "c" + std::to_string(c) + "_" + std::to_string(i);
            corpus.clips.push_back(std::move(clip));
        }
    }
    split_corpus(corpus, seed, opt.validation_fraction);
    return corpus;
}

// ---------------------------------------------------------------------------
// On-disk corpus: manifest.json plus one raw float32 file per clip.

inline void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
    corpus.validate();
    std::filesystem::create_directories(dir / "clips");
    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["sample_rate"] = corpus.sample_rate;
    manifest["captions"] = corpus.captions;
    manifest["clips"] = nlohmann::json::array();
    for (const auto& c : corpus.clips) {
        const std::string file = "clips/" + c.source_id + ".f32";
        write_raw_f32(c, dir / file);
        manifest["clips"].push_back({{"source_id", c.source_id}, {"file", file}, {"label", c.label}});
    }
    manifest["train"] = corpus.train;
    manifest["validation"] = corpus.validation;
    write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline Corpus read_corpus(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw InputError(path.string() + ": " + e.what());
    }
    Corpus corpus;
    try {
        corpus.sample_rate = manifest.at("sample_rate").get<int>();
        corpus.captions = manifest.at("captions").get<std::vector<std::string>>();
        for (const auto& entry : manifest.at("clips")) {
            const auto file = dir / entry.at("file").get<std::string>();
            const auto label = entry.at("label").get<ClassId>();
            AudioClip clip = file.extension() == ".wav" ? read_wav(file, label)
                                                        : read_raw_f32(file, corpus.sample_rate, label);
            clip.source_id = entry.at("source_id").get<std::string>();
            corpus.clips.push_back(std::move(clip));
        }
        corpus.train = manifest.at("train").get<std::vector<std::size_t>>();
        corpus.validation = manifest.at("validation").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw InputError(path.string() + ": " + e.what());
    }
    corpus.validate();
    return corpus;
}

} // namespace ssounds
