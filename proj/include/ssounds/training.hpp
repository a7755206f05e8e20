#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <tuple>
#include <string>
#include <vector>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "ssounds/archive.hpp"
#include "ssounds/augment.hpp"
#include "ssounds/checkpoint.hpp"
#include "ssounds/corpus.hpp"
#include "ssounds/encoders.hpp"
#include "ssounds/error.hpp"
#include "ssounds/model.hpp"
#include "ssounds/optim.hpp"
#include "ssounds/rng.hpp"

namespace ssounds {

struct AugmentationOptions {
    std::vector<TransformKind> transforms{kAllTransforms, kAllTransforms + 3};
    double gain_min = 0.1;
    double gain_max = 0.5;
    double wet_min = 0.4;
    double wet_max = 0.9;
    double semitone_max = 4.0;
    std::uint64_t impulse_count = 4;
};

struct TrainingConfig {
    double lr_text = 1e-3;
    double lr_vision = 1e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t batch_size = 16;
    std::size_t max_epochs = 200;
    std::size_t patience = 10;
    std::uint64_t seed = 7;
    bool ext_loss_enabled = false;
    // Cross-class mixtures drawn per epoch.
    std::size_t mix_pair_budget = 40;
    // Transformed variants per base sample (h).
    std::size_t transform_budget = 2;
    AugmentationOptions augmentation;

    void validate() const {
        if (!(lr_text >= 0.0) || !(lr_vision >= 0.0)) throw ConfigError("training.lr_text/lr_vision must be >= 0");
        if (patience < 1) throw ConfigError("training.patience must be >= 1");
        if (batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
        if (!(augmentation.gain_min > 0.0) || augmentation.gain_max < augmentation.gain_min) {
            throw ConfigError("augmentation.gain_min/gain_max must satisfy 0 < min <= max");
        }
        if (augmentation.wet_min < 0.0 || augmentation.wet_max > 1.0 || augmentation.wet_max < augmentation.wet_min) {
            throw ConfigError("augmentation.wet_min/wet_max must lie in [0, 1] with min <= max");
        }
        if (ext_loss_enabled && transform_budget > augmentation.transforms.size()) {
            throw ConfigError("training.transform_budget exceeds the number of enabled transforms");
        }
    }
};

// desk suits the stub encoders; full is meant for real pretrained embedding spaces.
enum class LrProfile { desk, full };

inline void apply_lr_profile(TrainingConfig& cfg, LrProfile profile) {
    if (profile == LrProfile::full) {
        cfg.lr_text = 1e-5;
        cfg.lr_vision = 1e-7;
    } else {
        cfg.lr_text = 1e-3;
        cfg.lr_vision = 1e-4;
    }
}

// Hash of everything that shapes the optimisation trajectory; max_epochs
// is excluded so a run can be resumed with a later stopping bound.
inline std::uint64_t config_hash(const EncoderConfig& e, const ModelConfig& m, const TrainingConfig& t) {
    nlohmann::json j;
    j["encoder"] = {e.d_audio, e.d_text, e.d_vision, e.audio_seed, e.text_seed, e.vision_seed,
                    e.mel.sample_rate, e.mel.window, e.mel.hop, e.mel.n_fft, e.mel.n_mels, e.mel.f_min,
                    e.mel.f_max, e.frames_per_token, e.log_floor, e.feature_offset, e.feature_scale,
                    e.audio_position_scale};
    j["model"] = {m.d_audio, m.d_text, m.d_vision, m.hidden(), m.heads, m.query_capacity, m.init_seed,
                  m.query_init_std, m.projection_init_std, static_cast<int>(m.pooling)};
    std::vector<std::string> kinds;
    for (auto k : t.augmentation.transforms) kinds.emplace_back(transform_name(k));
    const auto& a = t.augmentation;
    j["training"] = {t.lr_text, t.lr_vision, t.weight_decay, t.beta1, t.beta2, t.eps, t.batch_size, t.patience,
                     t.seed, t.ext_loss_enabled, t.mix_pair_budget, t.transform_budget, kinds, a.gain_min,
                     a.gain_max, a.wet_min, a.wet_max, a.semitone_max, a.impulse_count};
    return fnv1a64(j.dump());
}

enum class ItemKind { base, transformed, mixed };

struct TrainingItem {
    ItemKind kind = ItemKind::base;
    // Base items refer to the corpus clip; the others own their audio.
    std::size_t corpus_index = 0;
    std::optional<AudioClip> audio;
    std::string caption;
    std::optional<ClassId> caption_class;
    std::optional<AudioTransformSpec> transform;
};

// One epoch of supervision: every training clip with its class caption;
// with the extended objective, also transform_budget transformed variants
// per clip and mix_pair_budget cross-class mixtures drawn uniformly over
// ordered pairs of training clips with different labels.
inline std::vector<TrainingItem> build_extended_batch(const Corpus& corpus, const TrainingConfig& cfg,
                                                      const CaptionRewriter& rewriter, std::uint64_t epoch_seed) {
    if (corpus.train.empty()) throw InputError("build_extended_batch: empty training split");
    std::vector<TrainingItem> items;
    for (auto idx : corpus.train) {
        TrainingItem item;
        item.corpus_index = idx;
        item.caption_class = corpus.clips[idx].label;
        item.caption = corpus.captions.at(corpus.clips[idx].label);
        items.push_back(std::move(item));
    }
    if (!cfg.ext_loss_enabled) return items;
#ifdef SSOUNDS_NO_AUGMENTATION
    (void)rewriter;
    (void)epoch_seed;
    throw ConfigError("this build was compiled without augmentation support");
#else
    const auto& aug = cfg.augmentation;
    if (cfg.transform_budget > aug.transforms.size()) {
        throw ConfigError("training.transform_budget exceeds the number of enabled transforms");
    }
    Rng rng(derive_seed(epoch_seed, "augment"));
    for (auto idx : corpus.train) {
        const auto& clip = corpus.clips[idx];
        const auto& base_caption = corpus.captions.at(clip.label);
        auto kinds = aug.transforms;
        rng.shuffle(kinds.begin(), kinds.end());
        for (std::size_t j = 0; j < cfg.transform_budget; ++j) {
            AudioTransformSpec spec = rewriter.make_spec(kinds[j]);
            switch (spec.kind) {
            case TransformKind::gain: spec.gain = rng.uniform(aug.gain_min, aug.gain_max); break;
            case TransformKind::reverb:
                spec.wet = rng.uniform(aug.wet_min, aug.wet_max);
                spec.impulse_id = rng.below(std::max<std::uint64_t>(1, aug.impulse_count));
                break;
            case TransformKind::pitch_shift:
                spec.semitones = rng.uniform(-aug.semitone_max, aug.semitone_max);
                break;
            }
            TrainingItem item;
            item.kind = ItemKind::transformed;
            item.corpus_index = idx;
            item.audio = apply_transform(clip, spec);
            item.caption = rewriter.transform_caption(base_caption, spec, rng.next());
            item.transform = spec;
            items.push_back(std::move(item));
        }
    }
    if (cfg.mix_pair_budget > 0) {
        std::set<ClassId> labels;
        for (auto idx : corpus.train) labels.insert(corpus.clips[idx].label);
        if (labels.size() < 2) throw ConfigError("mixing needs at least two classes in the training split");
        Rng mix_rng(derive_seed(epoch_seed, "mix"));
        const auto n = static_cast<std::uint64_t>(corpus.train.size());
        for (std::size_t b = 0; b < cfg.mix_pair_budget; ++b) {
            std::size_t i = 0, j = 0;
            do {
                i = corpus.train[mix_rng.below(n)];
                j = corpus.train[mix_rng.below(n)];
            } while (corpus.clips[i].label == corpus.clips[j].label);
            const auto& a = corpus.clips[i];
            const auto& c = corpus.clips[j];
            TrainingItem item;
            item.kind = ItemKind::mixed;
            item.corpus_index = i;
            item.audio = mix(a, c);
            item.caption = rewriter.compose_captions(corpus.captions.at(a.label), corpus.captions.at(c.label),
                                                     mix_rng.next());
            items.push_back(std::move(item));
        }
    }
    return items;
#endif
}

// Encoder outputs for corpus clips and captions, computed once. Records from
// an embedding archive take precedence over the stub encoders.
class FeatureStore {
public:
    FeatureStore(const FrozenEncoders& encoders, const Corpus& corpus, const EmbeddingArchive* archive = nullptr)
        : encoders_(encoders), corpus_(corpus), archive_(archive), tokens_(corpus.clips.size()) {}

    const FrozenEncoders& encoders() const noexcept { return encoders_; }

    const AudioTokens& corpus_tokens(std::size_t index) {
        auto& slot = tokens_.at(index);
        if (!slot) {
            const auto& clip = corpus_.clips[index];
            if (archive_) {
                if (auto t = archive_->get("audio/" + clip.source_id)) {
                    slot = AudioTokens{*t};
                    return *slot;
                }
            }
            slot = encoders_.encode_audio(clip);
        }
        return *slot;
    }

    AudioTokens tokens(const TrainingItem& item) {
        if (item.audio) return encoders_.encode_audio(*item.audio);
        return corpus_tokens(item.corpus_index);
    }

    const CaptionRecord& caption(const std::string& text, std::optional<ClassId> cls = std::nullopt) {
        auto it = captions_.find(text);
        if (it != captions_.end()) return it->second;
        CaptionRecord rec;
        if (archive_ && cls && archive_->contains("text/" + std::to_string(*cls))) {
            rec.class_id = *cls;
            rec.text = text;
            rec.text_embedding = archive_->require("text/" + std::to_string(*cls));
            rec.vision_embedding = archive_->require("vision/" + std::to_string(*cls));
        } else {
            rec = encoders_.encode_caption(cls.value_or(0), text);
        }
        return captions_.emplace(text, std::move(rec)).first->second;
    }

    const CaptionRecord& class_caption(ClassId cls) { return caption(corpus_.captions.at(cls), cls); }

private:
    const FrozenEncoders& encoders_;
    const Corpus& corpus_;
    const EmbeddingArchive* archive_;
    std::vector<std::optional<AudioTokens>> tokens_;
    std::map<std::string, CaptionRecord> captions_;
};

struct EpochMetrics {
    std::uint64_t epoch = 0;
    double train_loss = std::numeric_limits<double>::quiet_NaN();
    double val_loss = 0.0;
    double val_text = 0.0;
    double val_vision = 0.0;
    double lr_text = 0.0;
    double lr_vision = 0.0;
    double wall_ms = 0.0;
    std::size_t items = 0;
};

inline nlohmann::json to_json(const EpochMetrics& m) {
    nlohmann::json j;
    j["epoch"] = m.epoch;
    j["train_loss"] = std::isfinite(m.train_loss) ? nlohmann::json(m.train_loss) : nlohmann::json(nullptr);
    j["val_loss"] = m.val_loss;
    j["val_loss_text"] = m.val_text;
    j["val_loss_vision"] = m.val_vision;
    j["lr_text"] = m.lr_text;
    j["lr_vision"] = m.lr_vision;
    j["wall_ms"] = m.wall_ms;
    return j;
}

struct TrainingResult {
    Checkpoint checkpoint;
    std::vector<EpochMetrics> metrics;
    bool early_stopped = false;
};

// Raised when the loss or a gradient stops being finite; carries the state
// after the last completed epoch.
class TrainingDiverged : public NumericError {
public:
    TrainingDiverged(const std::string& what, Checkpoint last_good)
        : NumericError(what), last_good_(std::move(last_good)) {}
    const Checkpoint& last_good() const noexcept { return last_good_; }

private:
    Checkpoint last_good_;
};

struct ValidationLoss {
    double total = 0.0;
    double text = 0.0;
    double vision = 0.0;
};

// Mean base-pair loss over a set of corpus clips.
inline ValidationLoss validation_loss(const AlignmentModel& model, FeatureStore& features, const Corpus& corpus,
                                      std::span<const std::size_t> indices) {
    NoGradGuard no_grad;
    ValidationLoss out;
    if (indices.empty()) return out;
    for (auto idx : indices) {
        const auto& target = features.class_caption(corpus.clips[idx].label);
        const auto pair = forward(model, features.corpus_tokens(idx), target.length());
        const auto loss = alignment_loss(pair, target);
        out.text += loss.text.item();
        out.vision += loss.vision.item();
    }
    const auto n = static_cast<double>(indices.size());
    out.text /= n;
    out.vision /= n;
    out.total = out.text + out.vision;
    return out;
}

// Epoch loop with separate AdamW optimizers for the text branch (adapter_T,
// pooler_T) and the vision branch (adapter_V, pooler_V), best-model tracking
// on base validation loss, and patience-based early stopping.
class Trainer {
public:
    using EpochCallback = std::function<void(const EpochMetrics&, const Checkpoint&)>;

    Trainer(const Corpus& corpus, const FrozenEncoders& encoders, const CaptionRewriter& rewriter,
            ModelConfig model_cfg, TrainingConfig cfg, const EmbeddingArchive* archive = nullptr)
        : corpus_(corpus), rewriter_(rewriter), cfg_(std::move(cfg)), features_(encoders, corpus, archive),
          model_(model_cfg),
          text_opt_(model_.parameters(Branch::text), options(cfg_.lr_text)),
          vision_opt_(model_.parameters(Branch::vision), options(cfg_.lr_vision)) {
        cfg_.validate();
        corpus_.validate();
        const auto& e = encoders.config();
        if (model_cfg.d_audio != e.d_audio || model_cfg.d_text != e.d_text || model_cfg.d_vision != e.d_vision) {
            throw DimensionError("trainer: model widths do not match the encoder configuration");
        }
        if (corpus_.validation.empty()) throw InputError("trainer: validation split is empty");
        hash_ = config_hash(e, model_cfg, cfg_);
        best_model_ = model_.clone();
        spdlog::info("alignment model: {} trainable parameters", model_.parameter_count());
    }

    const AlignmentModel& model() const noexcept { return model_; }
    FeatureStore& features() noexcept { return features_; }

    void resume(const Checkpoint& ck) {
        if (ck.config_hash != hash_) {
            throw ConfigError("resume: checkpoint was written with a different configuration (hash mismatch)");
        }
        model_.copy_values_from(ck.model);
        best_model_ = ck.best_model.clone();
        text_opt_.load_state(ck.text_state);
        vision_opt_.load_state(ck.vision_state);
        epoch_ = ck.epoch;
        best_epoch_ = ck.best_epoch;
        epochs_since_best_ = ck.epochs_since_best;
        best_val_ = ck.best_val_loss;
        initialised_ = true;
    }

    Checkpoint snapshot() const {
        Checkpoint ck;
        ck.config_hash = hash_;
        ck.encoder = features_.encoders().config();
        ck.model_config = model_.config();
        ck.epoch = epoch_;
        ck.best_epoch = best_epoch_;
        ck.epochs_since_best = epochs_since_best_;
        ck.best_val_loss = best_val_;
        ck.model = model_.clone();
        ck.best_model = best_model_.clone();
        ck.text_state = text_opt_.state();
        ck.vision_state = vision_opt_.state();
        return ck;
    }

    TrainingResult run(const EpochCallback& on_epoch = {}) {
        TrainingResult result;
        if (!initialised_) {
            const auto start = std::chrono::steady_clock::now();
            const auto val = validation_loss(model_, features_, corpus_, corpus_.validation);
            EpochMetrics m = metrics_for(0, std::numeric_limits<double>::quiet_NaN(), val, 0, start);
            best_val_ = val.total;
            initialised_ = true;
            result.metrics.push_back(m);
            if (on_epoch) on_epoch(m, snapshot());
        }
        while (epoch_ < cfg_.max_epochs && epochs_since_best_ < cfg_.patience) {
            const Checkpoint last_good = snapshot();
            const auto start = std::chrono::steady_clock::now();
            const std::uint64_t epoch = epoch_ + 1;
            double train_loss = 0.0;
            std::size_t item_count = 0;
            try {
                std::tie(train_loss, item_count) = run_epoch(epoch);
            } catch (const NumericError& e) {
                throw TrainingDiverged(std::string("training diverged in epoch ") + std::to_string(epoch) + ": " +
                                           e.what(),
                                       last_good);
            }
            if (!std::isfinite(train_loss)) {
                throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch) + ": loss is not finite",
                                       last_good);
            }
            const auto val = validation_loss(model_, features_, corpus_, corpus_.validation);
            if (!std::isfinite(val.total)) {
                throw TrainingDiverged("validation loss is not finite after epoch " + std::to_string(epoch), last_good);
            }
            epoch_ = epoch;
            if (val.total < best_val_) {
                best_val_ = val.total;
                best_epoch_ = epoch;
                epochs_since_best_ = 0;
                best_model_ = model_.clone();
            } else {
                ++epochs_since_best_;
            }
            EpochMetrics m = metrics_for(epoch, train_loss, val, item_count, start);
            result.metrics.push_back(m);
            spdlog::debug("epoch {} train {:.6f} val {:.6f} (text {:.6f}, vision {:.6f})", epoch, train_loss,
                          val.total, val.text, val.vision);
            if (on_epoch) on_epoch(m, snapshot());
        }
        result.early_stopped = epochs_since_best_ >= cfg_.patience;
        result.checkpoint = snapshot();
        return result;
    }

private:
    AdamWOptions options(double lr) const {
        return AdamWOptions{lr, cfg_.beta1, cfg_.beta2, cfg_.eps, cfg_.weight_decay};
    }

    EpochMetrics metrics_for(std::uint64_t epoch, double train_loss, const ValidationLoss& val, std::size_t items,
                             std::chrono::steady_clock::time_point start) const {
        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = train_loss;
        m.val_loss = val.total;
        m.val_text = val.text;
        m.val_vision = val.vision;
        m.lr_text = cfg_.lr_text;
        m.lr_vision = cfg_.lr_vision;
        m.items = items;
        m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        return m;
    }

    std::pair<double, std::size_t> run_epoch(std::uint64_t epoch) {
        const std::uint64_t epoch_seed = derive_seed(cfg_.seed, epoch);
        auto items = build_extended_batch(corpus_, cfg_, rewriter_, epoch_seed);
        Rng order(derive_seed(epoch_seed, "order"));
        order.shuffle(items.begin(), items.end());
        double total = 0.0;
        for (std::size_t begin = 0; begin < items.size(); begin += cfg_.batch_size) {
            const std::size_t end = std::min(items.size(), begin + cfg_.batch_size);
            model_.zero_grad();
            std::optional<Tensor> batch_loss;
            for (std::size_t i = begin; i < end; ++i) {
                const auto& item = items[i];
                const auto tokens = features_.tokens(item);
                const auto& target = features_.caption(item.caption, item.caption_class);
                const auto loss = alignment_loss(forward(model_, tokens, target.length()), target);
                total += loss.total.item();
                batch_loss = batch_loss ? add(*batch_loss, loss.total) : loss.total;
            }
            const Tensor mean_loss = scale(*batch_loss, 1.0 / static_cast<double>(end - begin));
            backward(mean_loss);
            text_opt_.step();
            vision_opt_.step();
        }
        return {total / static_cast<double>(items.size()), items.size()};
    }

    const Corpus& corpus_;
    const CaptionRewriter& rewriter_;
    TrainingConfig cfg_;
    FeatureStore features_;
    AlignmentModel model_;
    AlignmentModel best_model_;
    AdamW text_opt_;
    AdamW vision_opt_;
    std::uint64_t hash_ = 0;
    std::uint64_t epoch_ = 0;
    std::uint64_t best_epoch_ = 0;
    std::uint64_t epochs_since_best_ = 0;
    double best_val_ = std::numeric_limits<double>::infinity();
    bool initialised_ = false;
};

// Token count of the longest caption training can target, including every
// template rewrite and (with mixing) every composed caption.
inline std::size_t required_query_capacity(const Corpus& corpus, const CaptionRewriter& rewriter,
                                           const TrainingConfig& cfg) {
    std::vector<std::string> outputs = corpus.captions;
    if (cfg.ext_loss_enabled) outputs = rewriter.enumerate_outputs(corpus.captions, cfg.mix_pair_budget > 0);
    std::size_t longest = 1;
    for (const auto& c : outputs) longest = std::max(longest, tokenize_caption(c).size());
    return longest;
}

} // namespace ssounds
