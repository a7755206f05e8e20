#pragma once

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "ssounds/augment.hpp"
#include "ssounds/caption_service.hpp"
#include "ssounds/corpus.hpp"
#include "ssounds/encoders.hpp"
#include "ssounds/error.hpp"
#include "ssounds/model.hpp"
#include "ssounds/training.hpp"

namespace ssounds {

struct EvalConfig {
    std::vector<std::size_t> k_list{1, 5};
    std::vector<double> alphas{0.1, 0.15, 0.3, 1.0};
    double mix_margin = 0.0;
    std::uint64_t probe_seed = 11;
};

struct AppConfig {
    EncoderConfig encoder;
    ModelConfig model;
    TrainingConfig training;
    EvalConfig eval;
    std::size_t classes = 5;
    std::size_t per_class = 40;
    std::uint64_t corpus_seed = 1;
    SynthOptions synth;
    std::vector<CaptionRewriteRule> rules = default_rewrite_rules();
    std::vector<std::string> compose_templates = default_compose_templates();
    std::map<std::string, std::string> epithets = default_epithets();
    std::map<TransformKind, std::string> descriptions = default_transform_descriptions();
    std::optional<CaptionServiceConfig> caption_service;

    // Model widths always follow the encoder.
    void sync_dimensions() {
        model.d_audio = encoder.d_audio;
        model.d_text = encoder.d_text;
        model.d_vision = encoder.d_vision;
    }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b == std::string::npos) continue;
        out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
    std::istringstream in(text);
    T value{};
    if constexpr (std::is_same_v<T, bool>) {
        if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
        if (text == "false" || text == "0" || text == "no" || text == "off") return false;
        throw ConfigError("config key '" + key + "': expected a boolean, got '" + text + "'");
    } else if constexpr (std::is_same_v<T, std::string>) {
        return text;
    } else {
        if (!(in >> value) || !in.eof()) {
            // Allow hex seeds.
            if constexpr (std::is_integral_v<T>) {
                try {
                    std::size_t used = 0;
                    const auto v = std::stoull(text, &used, 0);
                    if (used == text.size()) return static_cast<T>(v);
                } catch (const std::exception&) {
                }
            }
            throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
        }
        if constexpr (std::is_unsigned_v<T>) {
            if (text.find('-') != std::string::npos) throw ConfigError("config key '" + key + "' must be non-negative");
        }
        return value;
    }
}

// Binds the keys of one section to setters; anything else is rejected.
class SectionReader {
public:
    explicit SectionReader(std::string section) : section_(std::move(section)) {}

    template <typename T>
    SectionReader& bind(const std::string& key, T& target) {
        setters_[key] = [this, key, &target](const std::string& text) {
            target = parse_value<T>(section_ + "." + key, text);
        };
        return *this;
    }

    SectionReader& bind_fn(const std::string& key, std::function<void(const std::string&)> fn) {
        setters_[key] = std::move(fn);
        return *this;
    }

    void apply(const boost::property_tree::ptree& tree) const {
        for (const auto& [key, node] : tree) {
            auto it = setters_.find(key);
            if (it == setters_.end()) throw ConfigError("unknown config key '" + section_ + "." + key + "'");
            it->second(node.data());
        }
    }

private:
    std::string section_;
    std::map<std::string, std::function<void(const std::string&)>> setters_;
};

} // namespace detail

inline AppConfig parse_config(const boost::property_tree::ptree& tree, const std::string& origin) {
    using detail::SectionReader;
    AppConfig cfg;
    bool rules_replaced = false;
    for (const auto& [section, body] : tree) {
        if (!body.data().empty() && body.empty()) {
            throw ConfigError(origin + ": key '" + section + "' appears outside any section");
        }
        if (section == "encoder") {
            auto& e = cfg.encoder;
            SectionReader r("encoder");
            r.bind("d_audio", e.d_audio).bind("d_text", e.d_text).bind("d_vision", e.d_vision);
            r.bind("audio_seed", e.audio_seed).bind("text_seed", e.text_seed).bind("vision_seed", e.vision_seed);
            r.bind("sample_rate", e.mel.sample_rate).bind("window", e.mel.window).bind("hop", e.mel.hop);
            r.bind("n_fft", e.mel.n_fft).bind("n_mels", e.mel.n_mels).bind("f_min", e.mel.f_min).bind("f_max", e.mel.f_max);
            r.bind("frames_per_token", e.frames_per_token).bind("log_floor", e.log_floor);
            r.bind("feature_offset", e.feature_offset).bind("feature_scale", e.feature_scale);
            r.bind("audio_position_scale", e.audio_position_scale);
            r.apply(body);
        } else if (section == "model") {
            auto& m = cfg.model;
            SectionReader r("model");
            r.bind("d_hidden", m.d_hidden).bind("heads", m.heads).bind("query_capacity", m.query_capacity);
            r.bind("init_seed", m.init_seed).bind("query_init_std", m.query_init_std);
            r.bind("projection_init_std", m.projection_init_std);
            r.bind_fn("pooling", [&](const std::string& v) {
                if (v == "attention") m.pooling = PoolingMode::attention;
                else if (v == "mean") m.pooling = PoolingMode::mean;
                else throw ConfigError("config key 'model.pooling': expected attention or mean, got '" + v + "'");
            });
            r.apply(body);
        } else if (section == "training") {
            auto& t = cfg.training;
            SectionReader r("training");
            r.bind("lr_text", t.lr_text).bind("lr_vision", t.lr_vision).bind("weight_decay", t.weight_decay);
            r.bind("beta1", t.beta1).bind("beta2", t.beta2).bind("eps", t.eps).bind("batch_size", t.batch_size);
            r.bind("max_epochs", t.max_epochs).bind("patience", t.patience).bind("seed", t.seed);
            r.bind("ext_loss_enabled", t.ext_loss_enabled).bind("mix_pair_budget", t.mix_pair_budget);
            r.bind("transform_budget", t.transform_budget);
            // The profile applies first so explicit rates override it.
            if (auto p = body.get_child_optional("lr_profile")) {
                const auto v = p->data();
                if (v == "full") apply_lr_profile(t, LrProfile::full);
                else if (v == "desk") apply_lr_profile(t, LrProfile::desk);
                else throw ConfigError("config key 'training.lr_profile': expected desk or full, got '" + v + "'");
            }
            boost::property_tree::ptree rest;
            for (const auto& [k, v] : body)
                if (k != "lr_profile") rest.push_back({k, v});
            r.apply(rest);
        } else if (section == "augmentation") {
            auto& a = cfg.training.augmentation;
            SectionReader r("augmentation");
            r.bind_fn("transforms", [&](const std::string& v) {
                a.transforms.clear();
                for (const auto& name : detail::split_list(v, ',')) a.transforms.push_back(parse_transform_kind(name));
            });
            r.bind("gain_min", a.gain_min).bind("gain_max", a.gain_max).bind("wet_min", a.wet_min);
            r.bind("wet_max", a.wet_max).bind("semitone_max", a.semitone_max).bind("impulse_count", a.impulse_count);
            r.apply(body);
        } else if (section.starts_with("rule.")) {
            if (!rules_replaced) {
                cfg.rules.clear();
                rules_replaced = true;
            }
            CaptionRewriteRule rule;
            rule.name = section.substr(5);
            SectionReader r(section);
            r.bind_fn("kind", [&](const std::string& v) { rule.kind = parse_transform_kind(v); });
            r.bind("min", rule.min).bind("max", rule.max);
            r.bind_fn("templates", [&](const std::string& v) { rule.templates = detail::split_list(v, '|'); });
            r.apply(body);
            rule.validate();
            cfg.rules.push_back(std::move(rule));
        } else if (section == "epithets") {
            for (const auto& [subject, node] : body) cfg.epithets[subject] = node.data();
        } else if (section == "compose") {
            SectionReader r("compose");
            r.bind_fn("templates", [&](const std::string& v) { cfg.compose_templates = detail::split_list(v, '|'); });
            r.apply(body);
        } else if (section == "descriptions") {
            for (const auto& [kind, node] : body) {
                try {
                    cfg.descriptions[parse_transform_kind(kind)] = node.data();
                } catch (const ConfigError&) {
                    throw ConfigError("unknown config key 'descriptions." + kind + "'");
                }
            }
        } else if (section == "caption_service") {
            CaptionServiceConfig svc;
            SectionReader r("caption_service");
            r.bind("url", svc.base_url).bind("path", svc.path).bind("timeout_ms", svc.timeout_ms);
            r.bind("retries", svc.retries);
            r.apply(body);
            if (svc.base_url.empty()) throw ConfigError("config key 'caption_service.url' must be set");
            cfg.caption_service = svc;
        } else if (section == "corpus") {
            SectionReader r("corpus");
            r.bind("classes", cfg.classes).bind("per_class", cfg.per_class).bind("seed", cfg.corpus_seed);
            r.bind("validation_fraction", cfg.synth.validation_fraction).bind("duration_s", cfg.synth.duration_s);
            r.bind("distractors", cfg.synth.distractors).bind("distractor_level", cfg.synth.distractor_level);
            r.bind("noise_level", cfg.synth.noise_level);
            r.apply(body);
        } else if (section == "eval") {
            SectionReader r("eval");
            r.bind_fn("k_list", [&](const std::string& v) {
                cfg.eval.k_list.clear();
                for (const auto& s : detail::split_list(v, ',')) {
                    cfg.eval.k_list.push_back(detail::parse_value<std::size_t>("eval.k_list", s));
                }
            });
            r.bind_fn("alphas", [&](const std::string& v) {
                cfg.eval.alphas.clear();
                for (const auto& s : detail::split_list(v, ',')) {
                    cfg.eval.alphas.push_back(detail::parse_value<double>("eval.alphas", s));
                }
            });
            r.bind("mix_margin", cfg.eval.mix_margin).bind("probe_seed", cfg.eval.probe_seed);
            r.apply(body);
        } else {
            throw ConfigError(origin + ": unknown config section '[" + section + "]'");
        }
    }
    cfg.sync_dimensions();
    cfg.training.validate();
    return cfg;
}

inline AppConfig parse_config_text(const std::string& text, const std::string& origin = "<config>") {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
        boost::property_tree::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    return parse_config(tree, origin);
}

inline AppConfig load_config(const std::filesystem::path& path) {
    return parse_config_text(read_text_file(path), path.string());
}

// Explicit path, else $SSOUNDS_CONFIG, else built-in defaults.
inline AppConfig resolve_config(const std::optional<std::filesystem::path>& path) {
    if (path) return load_config(*path);
    if (const char* env = std::getenv("SSOUNDS_CONFIG"); env && *env) return load_config(env);
    AppConfig cfg;
    cfg.sync_dimensions();
    return cfg;
}

inline CaptionRewriter make_rewriter(const AppConfig& cfg) {
    CaptionRewriter rewriter(cfg.rules, cfg.compose_templates, cfg.epithets, cfg.descriptions);
    rewriter.check_transforms(cfg.training.augmentation.transforms);
    if (cfg.caption_service) rewriter.set_service(std::make_shared<HttpCaptionService>(*cfg.caption_service));
    return rewriter;
}

} // namespace ssounds
