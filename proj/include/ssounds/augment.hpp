#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <spdlog/spdlog.h>

#include "ssounds/audio.hpp"
#include "ssounds/dsp.hpp"
#include "ssounds/error.hpp"
#include "ssounds/rng.hpp"

namespace ssounds {

enum class TransformKind { gain, reverb, pitch_shift };

inline const char* transform_name(TransformKind kind) {
    switch (kind) {
    case TransformKind::gain: return "gain";
    case TransformKind::reverb: return "reverb";
    case TransformKind::pitch_shift: return "pitch_shift";
    }
    return "unknown";
}

inline TransformKind parse_transform_kind(std::string_view name) {
    if (name == "gain") return TransformKind::gain;
    if (name == "reverb") return TransformKind::reverb;
    if (name == "pitch_shift" || name == "pitch") return TransformKind::pitch_shift;
    throw ConfigError("unknown transform kind '" + std::string(name) + "'");
}

inline constexpr TransformKind kAllTransforms[] = {TransformKind::gain, TransformKind::reverb,
                                                   TransformKind::pitch_shift};

struct AudioTransformSpec {
    TransformKind kind = TransformKind::gain;
    double gain = 1.0;
    std::uint64_t impulse_id = 0;
    double wet = 0.5;
    double semitones = 0.0;
    std::string description;

    // The value rewrite-rule triggers are matched against.
    double trigger_value() const {
        switch (kind) {
        case TransformKind::gain: return gain;
        case TransformKind::reverb: return wet;
        case TransformKind::pitch_shift: return semitones;
        }
        return 0.0;
    }

    void validate() const {
        if (kind == TransformKind::gain && !(gain > 0.0)) throw ParameterError("gain factor must be positive");
        if (kind == TransformKind::reverb && !(wet >= 0.0 && wet <= 1.0)) {
            throw ParameterError("reverb wet level must lie in [0, 1]");
        }
        if (description.empty()) throw ParameterError(std::string(transform_name(kind)) + ": missing description");
    }
};

enum class VolumeLabel { low, medium, high };

inline const char* volume_label_name(VolumeLabel v) {
    switch (v) {
    case VolumeLabel::low: return "low";
    case VolumeLabel::medium: return "medium";
    case VolumeLabel::high: return "high";
    }
    return "unknown";
}

// low: alpha < 0.2, medium: 0.2 <= alpha < 0.5, high: alpha >= 0.5.
inline VolumeLabel volume_label(double alpha) {
    if (!(alpha > 0.0)) throw ParameterError("volume_label: gain factor must be positive");
    if (alpha < 0.2) return VolumeLabel::low;
    if (alpha < 0.5) return VolumeLabel::medium;
    return VolumeLabel::high;
}

// ---------------------------------------------------------------------------
// Signal transforms. All preserve rate and length and stay within [-1, 1].

inline AudioClip apply_gain(const AudioClip& clip, double alpha) {
    if (!(alpha > 0.0)) throw ParameterError("apply_gain: gain factor must be positive, got " + std::to_string(alpha));
    AudioClip out = clip;
    for (auto& s : out.samples) s = clip_unit(static_cast<double>(s) * alpha);
    return out;
}

// Exponentially decaying noise tail after a unit direct path; the id selects
// both the noise stream and the decay time.
inline std::vector<float> impulse_response(std::uint64_t id, int sample_rate, double seconds = 0.25) {
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(seconds * sample_rate));
    const double decay_s = 0.04 + 0.03 * static_cast<double>(id % 4);
    Rng rng(derive_seed(id, "reverb.impulse"));
    std::vector<float> h(n);
    h[0] = 1.0f;
    for (std::size_t i = 1; i < n; ++i) {
        const double env = std::exp(-static_cast<double>(i) / (decay_s * sample_rate));
        h[i] = static_cast<float>(0.6 * env * rng.uniform(-1.0, 1.0));
    }
    return h;
}

// (1 - wet) * dry + wet * conv(dry, impulse), the wet path truncated to the
// dry length and rescaled to the dry peak; the sum is peak-limited to 1.
inline AudioClip apply_reverb(const AudioClip& clip, std::span<const float> impulse, double wet) {
    if (impulse.empty()) throw ParameterError("apply_reverb: empty impulse response");
    if (!(wet >= 0.0 && wet <= 1.0)) throw ParameterError("apply_reverb: wet level must lie in [0, 1]");
    AudioClip out = clip;
    if (wet == 0.0 || clip.samples.empty()) return out;
    const std::vector<double> dry(clip.samples.begin(), clip.samples.end());
    const std::vector<double> ir(impulse.begin(), impulse.end());
    auto wet_path = fft_convolve(dry, ir);
    wet_path.resize(dry.size());
    double dry_peak = 0.0, wet_peak = 0.0;
    for (std::size_t i = 0; i < dry.size(); ++i) {
        dry_peak = std::max(dry_peak, std::fabs(dry[i]));
        wet_peak = std::max(wet_peak, std::fabs(wet_path[i]));
    }
    const double gain = wet_peak > 0.0 ? dry_peak / wet_peak : 0.0;
    std::vector<double> mixed(dry.size());
    double peak = 0.0;
    for (std::size_t i = 0; i < dry.size(); ++i) {
        mixed[i] = (1.0 - wet) * dry[i] + wet * gain * wet_path[i];
        peak = std::max(peak, std::fabs(mixed[i]));
    }
    const double limit = peak > 1.0 ? 1.0 / peak : 1.0;
    for (std::size_t i = 0; i < dry.size(); ++i) out.samples[i] = clip_unit(mixed[i] * limit);
    return out;
}

// Resampling pitch shift by 2^(semitones/12); the result is cut or
// zero-padded back to the input length.
inline AudioClip apply_pitch_shift(const AudioClip& clip, double semitones) {
    AudioClip out = clip;
    if (semitones == 0.0) return out;
    const double ratio = std::pow(2.0, semitones / 12.0);
    const std::size_t n = clip.samples.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double pos = static_cast<double>(i) * ratio;
        const auto i0 = static_cast<std::size_t>(pos);
        if (i0 >= n) {
            out.samples[i] = 0.0f;
            continue;
        }
        const double frac = pos - static_cast<double>(i0);
        const double a = clip.samples[i0];
        const double b = i0 + 1 < n ? clip.samples[i0 + 1] : 0.0;
        out.samples[i] = clip_unit(a + (b - a) * frac);
    }
    return out;
}

inline AudioClip apply_transform(const AudioClip& clip, const AudioTransformSpec& spec) {
    spec.validate();
    switch (spec.kind) {
    case TransformKind::gain: return apply_gain(clip, spec.gain);
    case TransformKind::reverb: return apply_reverb(clip, impulse_response(spec.impulse_id, clip.sample_rate), spec.wet);
    case TransformKind::pitch_shift: return apply_pitch_shift(clip, spec.semitones);
    }
    throw ParameterError("apply_transform: unknown kind");
}

// 0.5 * (a + b), the shorter clip zero-padded; carries both labels.
inline AudioClip mix(const AudioClip& a, const AudioClip& b) {
    if (a.sample_rate != b.sample_rate) {
        throw InputError("mix: sample rates differ (" + std::to_string(a.sample_rate) + " vs " +
                         std::to_string(b.sample_rate) + ")");
    }
    AudioClip out;
    out.sample_rate = a.sample_rate;
    out.label = a.label;
    out.second_label = b.label;
    out.source_id = a.source_id + "+" + b.source_id;
    const std::size_t n = std::max(a.samples.size(), b.samples.size());
    out.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = i < a.samples.size() ? a.samples[i] : 0.0;
        const double y = i < b.samples.size() ? b.samples[i] : 0.0;
        out.samples[i] = clip_unit(0.5 * (x + y));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Caption rewriting.

// "<det> <subject> <predicate...>", split on whitespace.
struct CaptionParts {
    std::string det;
    std::string subject;
    std::string predicate;
};

inline CaptionParts parse_caption(std::string_view caption) {
    std::istringstream in{std::string(caption)};
    std::vector<std::string> words;
    for (std::string w; in >> w;) words.push_back(w);
    if (words.empty()) throw InputError("caption is empty");
    CaptionParts parts;
    std::size_t i = 0;
    std::string first = words[0];
    std::transform(first.begin(), first.end(), first.begin(), [](unsigned char c) { return std::tolower(c); });
    if ((first == "a" || first == "an" || first == "the") && words.size() > 1) {
        parts.det = first;
        i = 1;
    }
    parts.subject = words[i++];
    for (; i < words.size(); ++i) {
        if (!parts.predicate.empty()) parts.predicate += ' ';
        parts.predicate += words[i];
    }
    return parts;
}

namespace detail {

inline void replace_all(std::string& s, std::string_view from, std::string_view to) {
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
        s.replace(pos, from.size(), to);
    }
}

inline std::string squeeze_spaces(const std::string& s) {
    std::istringstream in(s);
    std::string out;
    for (std::string w; in >> w;) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

// Resolves "{a}" markers into an article agreeing with the following word.
// "the" captions keep "the"; captions without a determiner drop the marker.
inline std::string resolve_articles(std::string s, const std::string& det) {
    for (std::size_t pos = s.find("{a}"); pos != std::string::npos; pos = s.find("{a}")) {
        std::size_t next = pos + 3;
        while (next < s.size() && s[next] == ' ') ++next;
        std::string article;
        if (det == "the") {
            article = "the";
        } else if (!det.empty()) {
            const char c = next < s.size() ? static_cast<char>(std::tolower(static_cast<unsigned char>(s[next]))) : 'x';
            article = std::string_view("aeiou").find(c) != std::string_view::npos ? "an" : "a";
        }
        s.replace(pos, 3, article);
    }
    return squeeze_spaces(s);
}

} // namespace detail

// Maps a transform kind plus a parameter interval [min, max) to rewrite
// templates. Placeholders: {a} {subject} {predicate} {caption}.
struct CaptionRewriteRule {
    std::string name;
    TransformKind kind = TransformKind::gain;
    double min = -std::numeric_limits<double>::infinity();
    double max = std::numeric_limits<double>::infinity();
    std::vector<std::string> templates;

    bool matches(const AudioTransformSpec& spec) const {
        const double v = spec.trigger_value();
        return spec.kind == kind && v >= min && v < max;
    }

    void validate() const {
        if (templates.empty()) throw ConfigError("rewrite rule '" + name + "' has no templates");
        for (const auto& t : templates) {
            if (t.find("{subject}") == std::string::npos && t.find("{caption}") == std::string::npos) {
                throw ConfigError("rewrite rule '" + name + "': template '" + t + "' drops the class subject");
            }
        }
        if (!(min < max)) throw ConfigError("rewrite rule '" + name + "' has an empty trigger range");
    }
};

inline std::string render_caption_template(const std::string& tmpl, const CaptionParts& parts,
                                           std::string_view caption) {
    std::string s = tmpl;
    detail::replace_all(s, "{caption}", caption);
    detail::replace_all(s, "{subject}", parts.subject);
    detail::replace_all(s, "{predicate}", parts.predicate);
    return detail::resolve_articles(std::move(s), parts.det);
}

// Optional remote rewriter. Returns nullopt on any failure.
class CaptionService {
public:
    virtual ~CaptionService() = default;
    virtual std::optional<std::string> transform(const std::string& caption, const std::string& description) = 0;
    virtual std::optional<std::string> compose(const std::string& first, const std::string& second) = 0;
};

inline std::vector<CaptionRewriteRule> default_rewrite_rules() {
    constexpr double inf = std::numeric_limits<double>::infinity();
    return {
        {"gain_low", TransformKind::gain, 0.0, 0.2, {"{a} distant {subject} {predicate}"}},
        {"gain_medium", TransformKind::gain, 0.2, 0.5,
         {"{a} faint {subject} {predicate}", "{a} quiet {subject} {predicate}"}},
        {"gain_high", TransformKind::gain, 0.5, inf, {"{caption}"}},
        {"reverb", TransformKind::reverb, 0.0, inf, {"{a} {subject} echoing in a tunnel"}},
        {"pitch_up", TransformKind::pitch_shift, 0.0, inf,
         {"{a} high-pitched {subject} {predicate}", "{a} small {subject} {predicate}"}},
        {"pitch_down", TransformKind::pitch_shift, -inf, 0.0,
         {"{a} deep {subject} {predicate}", "{a} huge {subject} {predicate}"}},
    };
}

inline std::map<TransformKind, std::string> default_transform_descriptions() {
    return {
        {TransformKind::gain, "the volume is lowered so the source sounds far away"},
        {TransformKind::reverb, "strong reverberation is added, as inside an enclosed echoing space"},
        {TransformKind::pitch_shift, "the pitch is shifted, changing the apparent size of the source"},
    };
}

// Placeholders: {u} {v}, each expanded to "{a} <epithet> <subject>".
inline std::vector<std::string> default_compose_templates() {
    return {"{u} and {v}", "{u} and {v} in the same scene", "{u} next to {v}"};
}

inline std::map<std::string, std::string> default_epithets() {
    return {
        {"train", "distant"}, {"helicopter", "hovering"}, {"dog", "barking"},   {"bird", "singing"},
        {"engine", "idling"}, {"bell", "ringing"},        {"rain", "falling"},  {"siren", "wailing"},
        {"drum", "pounding"}, {"crowd", "cheering"},      {"kettle", "boiling"}, {"violin", "playing"},
    };
}

// Template-based caption transforms with an optional remote service. Given
// the same inputs and seed, the template path is deterministic.
class CaptionRewriter {
public:
    CaptionRewriter()
        : CaptionRewriter(default_rewrite_rules(), default_compose_templates(), default_epithets(),
                          default_transform_descriptions()) {}

    CaptionRewriter(std::vector<CaptionRewriteRule> rules, std::vector<std::string> compose_templates,
                    std::map<std::string, std::string> epithets,
                    std::map<TransformKind, std::string> descriptions)
        : rules_(std::move(rules)), compose_templates_(std::move(compose_templates)), epithets_(std::move(epithets)),
          descriptions_(std::move(descriptions)) {
        for (const auto& r : rules_) r.validate();
        for (const auto& t : compose_templates_) {
            if (t.find("{u}") == std::string::npos || t.find("{v}") == std::string::npos) {
                throw ConfigError("compose template '" + t + "' must contain {u} and {v}");
            }
        }
    }

    void set_service(std::shared_ptr<CaptionService> service) { service_ = std::move(service); }

    const std::vector<CaptionRewriteRule>& rules() const noexcept { return rules_; }
    const std::vector<std::string>& compose_templates() const noexcept { return compose_templates_; }

    // Every registered transform needs a description and at least one rule.
    void check_transforms(std::span<const TransformKind> kinds) const {
        for (auto kind : kinds) {
            if (description(kind).empty()) {
                throw ConfigError(std::string("transform '") + transform_name(kind) + "' has no description");
            }
            const bool has_rule = std::any_of(rules_.begin(), rules_.end(), [&](const auto& r) { return r.kind == kind; });
            if (!has_rule) throw ConfigError(std::string("transform '") + transform_name(kind) + "' has no rewrite rule");
        }
    }

    std::string description(TransformKind kind) const {
        auto it = descriptions_.find(kind);
        return it == descriptions_.end() ? std::string{} : it->second;
    }

    AudioTransformSpec make_spec(TransformKind kind) const {
        AudioTransformSpec spec;
        spec.kind = kind;
        spec.description = description(kind);
        return spec;
    }

    std::string transform_caption(const std::string& caption, const AudioTransformSpec& spec,
                                  std::uint64_t seed) const {
        if (service_) {
            if (auto remote = service_->transform(caption, spec.description)) return *remote;
            spdlog::warn("caption service failed for transform '{}'; using templates", transform_name(spec.kind));
        }
        std::vector<const CaptionRewriteRule*> matching;
        for (const auto& r : rules_)
            if (r.matches(spec)) matching.push_back(&r);
        if (matching.empty()) {
            throw ConfigError(std::string("no rewrite rule for transform '") + transform_name(spec.kind) +
                              "' at value " + std::to_string(spec.trigger_value()));
        }
        std::vector<const std::string*> choices;
        for (const auto* r : matching)
            for (const auto& t : r->templates) choices.push_back(&t);
        Rng rng(derive_seed(seed, "transform_caption"));
        const auto& chosen = *choices[rng.below(choices.size())];
        return render_caption_template(chosen, parse_caption(caption), caption);
    }

    // "{a} <epithet> <subject>"; the epithet comes from the lexicon, else the
    // first -ing word of the predicate, else nothing.
    std::string noun_phrase(const std::string& caption) const {
        const auto parts = parse_caption(caption);
        std::string epithet;
        if (auto it = epithets_.find(parts.subject); it != epithets_.end()) {
            epithet = it->second;
        } else {
            std::istringstream in(parts.predicate);
            for (std::string w; in >> w;) {
                if (w.size() > 4 && w.ends_with("ing")) {
                    epithet = w;
                    break;
                }
            }
        }
        const std::string det = parts.det.empty() ? "a" : parts.det;
        return detail::resolve_articles("{a} " + epithet + " " + parts.subject, det);
    }

    std::string compose_captions(const std::string& first, const std::string& second, std::uint64_t seed) const {
        if (first == second) {
            throw ContractError("compose_captions: both captions are identical; same-class mixing is plain augmentation");
        }
        if (service_) {
            if (auto remote = service_->compose(first, second)) return *remote;
            spdlog::warn("caption service failed for compose; using templates");
        }
        if (compose_templates_.empty()) throw ConfigError("compose_captions: no compose templates configured");
        Rng rng(derive_seed(seed, "compose_captions"));
        std::string s = compose_templates_[rng.below(compose_templates_.size())];
        detail::replace_all(s, "{u}", noun_phrase(first));
        detail::replace_all(s, "{v}", noun_phrase(second));
        return detail::squeeze_spaces(s);
    }

    // Every caption the templates can produce for these base captions; used
    // to size the text pooler's query capacity.
    std::vector<std::string> enumerate_outputs(std::span<const std::string> captions, bool include_compose) const {
        std::vector<std::string> out(captions.begin(), captions.end());
        for (const auto& c : captions) {
            const auto parts = parse_caption(c);
            for (const auto& r : rules_)
                for (const auto& t : r.templates) out.push_back(render_caption_template(t, parts, c));
        }
        if (include_compose) {
            for (std::size_t i = 0; i < captions.size(); ++i) {
                for (std::size_t j = 0; j < captions.size(); ++j) {
                    if (i == j) continue;
                    for (auto t : compose_templates_) {
                        detail::replace_all(t, "{u}", noun_phrase(captions[i]));
                        detail::replace_all(t, "{v}", noun_phrase(captions[j]));
                        out.push_back(detail::squeeze_spaces(t));
                    }
                }
            }
        }
        return out;
    }

private:
    std::vector<CaptionRewriteRule> rules_;
    std::vector<std::string> compose_templates_;
    std::map<std::string, std::string> epithets_;
    std::map<TransformKind, std::string> descriptions_;
    std::shared_ptr<CaptionService> service_;
};

} // namespace ssounds
