#include <gtest/gtest.h>

#include <map>

#include <boost/math/distributions/chi_squared.hpp>

#include "ssounds/training.hpp"
#include "support/temp_dir.hpp"

using namespace ssounds;

namespace {

// Tiny widths so a full epoch takes milliseconds.
struct SmallSetup {
    EncoderConfig enc;
    ModelConfig model;
    TrainingConfig train;
    Corpus corpus;
    CaptionRewriter rewriter;

    explicit SmallSetup(std::size_t classes = 3, std::size_t per_class = 10) {
        enc.d_audio = 16;
        enc.d_text = 8;
        enc.d_vision = 8;
        model.d_audio = 16;
        model.d_text = 8;
        model.d_vision = 8;
        model.heads = 2;
        SynthOptions opt;
        opt.duration_s = 0.5;
        opt.validation_fraction = 0.2;
        corpus = generate_synthetic_corpus(classes, per_class, 3, opt);
        train.batch_size = 4;
        train.max_epochs = 3;
        model.query_capacity = required_query_capacity(corpus, rewriter, train);
    }

    void enable_ext() {
        train.ext_loss_enabled = true;
        model.query_capacity = required_query_capacity(corpus, rewriter, train);
    }
};

std::vector<std::byte> bytes_of(const Checkpoint& ck) { return encode_checkpoint(ck); }

} // namespace

TEST(Corpus, CountsSplitAndDeterminism) {
    const auto a = generate_synthetic_corpus(5, 40, 1);
    EXPECT_EQ(a.clips.size(), 200u);
    EXPECT_EQ(a.train.size(), 180u);
    EXPECT_EQ(a.validation.size(), 20u);
    EXPECT_NO_THROW(a.validate());
    std::map<ClassId, int> per_class;
    for (auto i : a.validation) ++per_class[a.clips[i].label];
    for (const auto& [c, n] : per_class) EXPECT_EQ(n, 4) << c;
    const auto b = generate_synthetic_corpus(5, 40, 1);
    EXPECT_EQ(a.train, b.train);
    for (std::size_t i = 0; i < a.clips.size(); ++i) ASSERT_EQ(a.clips[i].samples, b.clips[i].samples);
    const auto c = generate_synthetic_corpus(5, 40, 2);
    EXPECT_NE(a.clips[0].samples, c.clips[0].samples);
    EXPECT_THROW(generate_synthetic_corpus(1, 10, 1), InputError);
}

TEST(Corpus, ClassVoicesAreNearestCentroidSeparable) {
    // Foreground only: the default background event belongs to another class
    // and is meant to defeat time-averaged features.
    SynthOptions opt;
    opt.background_events = 0;
    const auto corpus = generate_synthetic_corpus(5, 40, 1, opt);
    const FrozenEncoders enc{EncoderConfig{}};
    const std::size_t n_mels = enc.config().mel.n_mels;
    std::vector<std::vector<double>> feats;
    for (const auto& clip : corpus.clips) {
        const auto lm = enc.log_mel(clip);
        std::vector<double> f(n_mels, 0.0);
        const std::size_t frames = lm.size() / n_mels;
        for (std::size_t t = 0; t < frames; ++t)
            for (std::size_t m = 0; m < n_mels; ++m) f[m] += lm[t * n_mels + m] / frames;
        feats.push_back(f);
    }
    std::vector<std::vector<double>> centroid(5, std::vector<double>(n_mels, 0.0));
    std::vector<int> count(5, 0);
    for (auto i : corpus.train) {
        const auto c = corpus.clips[i].label;
        ++count[c];
        for (std::size_t m = 0; m < n_mels; ++m) centroid[c][m] += feats[i][m];
    }
    for (std::size_t c = 0; c < 5; ++c)
        for (auto& v : centroid[c]) v /= count[c];
    int correct = 0;
    for (auto i : corpus.validation) {
        std::size_t best = 0;
        double best_d = 1e300;
        for (std::size_t c = 0; c < 5; ++c) {
            double d = 0;
            for (std::size_t m = 0; m < n_mels; ++m) d += std::pow(feats[i][m] - centroid[c][m], 2);
            if (d < best_d) best_d = d, best = c;
        }
        correct += best == corpus.clips[i].label;
    }
    EXPECT_EQ(correct, static_cast<int>(corpus.validation.size()));
}

TEST(Corpus, DiskRoundTrip) {
    ssounds::testing::TempDir dir;
    const auto a = generate_synthetic_corpus(3, 4, 9);
    write_corpus(a, dir.path());
    const auto b = read_corpus(dir.path());
    EXPECT_EQ(a.captions, b.captions);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.validation, b.validation);
    ASSERT_EQ(a.clips.size(), b.clips.size());
    for (std::size_t i = 0; i < a.clips.size(); ++i) {
        EXPECT_EQ(a.clips[i].samples, b.clips[i].samples);
        EXPECT_EQ(a.clips[i].label, b.clips[i].label);
        EXPECT_EQ(a.clips[i].source_id, b.clips[i].source_id);
    }
}

TEST(ExtendedBatch, CountsTwoPlusFourPlusOne) {
    auto corpus = generate_synthetic_corpus(2, 1, 4);
    split_corpus(corpus, 4, 0.0);
    ASSERT_EQ(corpus.train.size(), 2u);
    TrainingConfig cfg;
    cfg.ext_loss_enabled = true;
    cfg.transform_budget = 2;
    cfg.mix_pair_budget = 1;
    const CaptionRewriter rw;
    const auto items = build_extended_batch(corpus, cfg, rw, 11);
    ASSERT_EQ(items.size(), 7u);
    std::map<ItemKind, int> kinds;
    for (const auto& it : items) ++kinds[it.kind];
    EXPECT_EQ(kinds[ItemKind::base], 2);
    EXPECT_EQ(kinds[ItemKind::transformed], 4);
    EXPECT_EQ(kinds[ItemKind::mixed], 1);
    // h distinct transforms per clip.
    EXPECT_NE(items[2].transform->kind, items[3].transform->kind);
    const auto& m = items.back();
    EXPECT_NE(m.audio->label, *m.audio->second_label);
}

TEST(ExtendedBatch, DisabledGivesBasePairsOnly) {
    const auto corpus = generate_synthetic_corpus(3, 5, 4);
    TrainingConfig cfg;
    const CaptionRewriter rw;
    const auto items = build_extended_batch(corpus, cfg, rw, 1);
    ASSERT_EQ(items.size(), corpus.train.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        EXPECT_EQ(items[i].kind, ItemKind::base);
        EXPECT_EQ(items[i].corpus_index, corpus.train[i]);
        EXPECT_EQ(items[i].caption, corpus.captions[corpus.clips[corpus.train[i]].label]);
    }
}

TEST(ExtendedBatch, DeterministicPerSeed) {
    const auto corpus = generate_synthetic_corpus(3, 4, 4);
    TrainingConfig cfg;
    cfg.ext_loss_enabled = true;
    cfg.mix_pair_budget = 5;
    const CaptionRewriter rw;
    const auto a = build_extended_batch(corpus, cfg, rw, 21);
    const auto b = build_extended_batch(corpus, cfg, rw, 21);
    const auto c = build_extended_batch(corpus, cfg, rw, 22);
    ASSERT_EQ(a.size(), b.size());
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].caption, b[i].caption);
        if (a[i].audio) EXPECT_EQ(a[i].audio->samples, b[i].audio->samples);
        differs |= a[i].caption != c[i].caption;
    }
    EXPECT_TRUE(differs);
}

TEST(ExtendedBatch, SingleClassWithMixingIsAConfigError) {
    auto corpus = generate_synthetic_corpus(2, 3, 4);
    corpus.train.clear();
    for (std::size_t i = 0; i < corpus.clips.size(); ++i)
        if (corpus.clips[i].label == 0) corpus.train.push_back(i);
    TrainingConfig cfg;
    cfg.ext_loss_enabled = true;
    const CaptionRewriter rw;
    EXPECT_THROW(build_extended_batch(corpus, cfg, rw, 1), ConfigError);
    cfg.mix_pair_budget = 0;
    EXPECT_NO_THROW(build_extended_batch(corpus, cfg, rw, 1));
}

TEST(ExtendedBatch, MixPairsUniformOverOrderedClassPairs) {
    // Equal per-class training counts make every ordered class pair equally
    // likely; 10k draws, chi-square goodness of fit at p > 0.01.
    auto corpus = generate_synthetic_corpus(4, 3, 8);
    for (auto& c : corpus.clips) c.samples.resize(400);
    split_corpus(corpus, 8, 0.0);
    TrainingConfig cfg;
    cfg.ext_loss_enabled = true;
    cfg.transform_budget = 0;
    cfg.mix_pair_budget = 10000;
    const CaptionRewriter rw;
    const auto items = build_extended_batch(corpus, cfg, rw, 5);
    std::map<std::pair<ClassId, ClassId>, int> counts;
    for (const auto& it : items) {
        if (it.kind != ItemKind::mixed) continue;
        ++counts[{it.audio->label, *it.audio->second_label}];
    }
    ASSERT_EQ(counts.size(), 12u);
    const double expected = 10000.0 / 12.0;
    double chi2 = 0;
    for (const auto& [pair, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
    const boost::math::chi_squared dist(11);
    EXPECT_GT(boost::math::cdf(boost::math::complement(dist, chi2)), 0.01) << "chi2 = " << chi2;
}

TEST(AdamW, HandComputedFirstStep) {
    auto p = Tensor::from({1}, {1.0}, true);
    AdamW opt({{"p", p, Branch::text}}, AdamWOptions{0.1, 0.9, 0.999, 1e-8, 0.01});
    backward(scale(p, 1.0)); // gradient 1
    opt.step();
    // m_hat = 1, v_hat = 1: p = 1 * (1 - 0.1 * 0.01) - 0.1 * 1 / (1 + 1e-8)
    EXPECT_DOUBLE_EQ(p.data()[0], 0.999 - 0.1 / (1.0 + 1e-8));
    EXPECT_EQ(opt.state().step, 1u);
}

TEST(AdamW, ZeroGradientCases) {
    auto p = Tensor::from({2}, {0.5, -2.0}, true);
    AdamW plain({{"p", p, Branch::text}}, AdamWOptions{0.1, 0.9, 0.999, 1e-8, 0.0});
    plain.step();
    EXPECT_EQ(p.data()[0], 0.5);
    EXPECT_EQ(p.data()[1], -2.0);
    AdamW decayed({{"p", p, Branch::text}}, AdamWOptions{0.1, 0.9, 0.999, 1e-8, 0.2});
    decayed.step();
    EXPECT_DOUBLE_EQ(p.data()[0], 0.5 * (1 - 0.1 * 0.2));
    EXPECT_DOUBLE_EQ(p.data()[1], -2.0 * (1 - 0.1 * 0.2));
}

TEST(AdamW, NonFiniteGradientAbortsBeforeUpdating) {
    auto p = Tensor::from({2}, {1.0, 2.0}, true);
    auto q = Tensor::from({1}, {3.0}, true);
    AdamW opt({{"p", p, Branch::text}, {"q", q, Branch::text}}, AdamWOptions{});
    backward(add(reshape(slice_cols(reshape(p, {1, 2}), 0, 1), {1}), scale(q, std::nan(""))));
    EXPECT_THROW(opt.step(), NumericError);
    EXPECT_EQ(p.data()[0], 1.0);
    EXPECT_EQ(opt.state().step, 0u);
}

TEST(Trainer, ZeroLearningRatesKeepValidationLossConstant) {
    SmallSetup s;
    s.train.lr_text = 0;
    s.train.lr_vision = 0;
    s.train.max_epochs = 3;
    const FrozenEncoders enc(s.enc);
    Trainer t(s.corpus, enc, s.rewriter, s.model, s.train);
    const auto r = t.run();
    ASSERT_EQ(r.metrics.size(), 4u);
    for (const auto& m : r.metrics) EXPECT_EQ(m.val_loss, r.metrics[0].val_loss);
    EXPECT_TRUE(std::isnan(r.metrics[0].train_loss));
}

TEST(Trainer, ResumeIsBitExact) {
    for (bool ext : {false, true}) {
        SmallSetup s;
        if (ext) s.enable_ext();
        s.train.mix_pair_budget = 4;
        const FrozenEncoders enc(s.enc);
        s.train.max_epochs = 4;
        Trainer straight(s.corpus, enc, s.rewriter, s.model, s.train);
        const auto full = straight.run();

        s.train.max_epochs = 2;
        Trainer first(s.corpus, enc, s.rewriter, s.model, s.train);
        const auto half = first.run();
        ssounds::testing::TempDir dir;
        write_checkpoint(half.checkpoint, dir / "ck.ssck");
        s.train.max_epochs = 4;
        Trainer second(s.corpus, enc, s.rewriter, s.model, s.train);
        second.resume(read_checkpoint(dir / "ck.ssck"));
        const auto rest = second.run();
        EXPECT_EQ(bytes_of(full.checkpoint), bytes_of(rest.checkpoint)) << "ext=" << ext;
        ASSERT_EQ(rest.metrics.size(), 2u);
        EXPECT_EQ(rest.metrics.back().val_loss, full.metrics.back().val_loss);
    }
}

TEST(Trainer, ResumeRejectsDifferentConfiguration) {
    SmallSetup s;
    const FrozenEncoders enc(s.enc);
    Trainer a(s.corpus, enc, s.rewriter, s.model, s.train);
    const auto ck = a.run().checkpoint;
    s.train.lr_text *= 2;
    Trainer b(s.corpus, enc, s.rewriter, s.model, s.train);
    EXPECT_THROW(b.resume(ck), ConfigError);
}

TEST(Trainer, IdenticalSeedsGiveIdenticalCheckpoints) {
    SmallSetup s;
    s.enable_ext();
    const FrozenEncoders enc(s.enc);
    Trainer a(s.corpus, enc, s.rewriter, s.model, s.train);
    Trainer b(s.corpus, enc, s.rewriter, s.model, s.train);
    EXPECT_EQ(bytes_of(a.run().checkpoint), bytes_of(b.run().checkpoint));
    s.train.seed += 1;
    Trainer c(s.corpus, enc, s.rewriter, s.model, s.train);
    Trainer d(s.corpus, enc, s.rewriter, s.model, s.train);
    EXPECT_NE(bytes_of(c.run().checkpoint), bytes_of(a.snapshot()));
}

TEST(Trainer, VisionLearningRateZeroFreezesVisionBranch) {
    SmallSetup s;
    s.train.lr_vision = 0;
    s.train.max_epochs = 3;
    const FrozenEncoders enc(s.enc);
    Trainer t(s.corpus, enc, s.rewriter, s.model, s.train);
    const AlignmentModel before = t.model().clone();
    t.run();
    const auto after = t.model().parameters();
    const auto init = before.parameters();
    for (std::size_t i = 0; i < init.size(); ++i) {
        const bool same = std::equal(init[i].tensor.data().begin(), init[i].tensor.data().end(),
                                     after[i].tensor.data().begin());
        EXPECT_EQ(same, init[i].branch == Branch::vision) << init[i].name;
    }
}

TEST(Trainer, DivergenceKeepsLastGoodCheckpoint) {
    SmallSetup s;
    s.train.lr_text = 1e200;
    s.train.max_epochs = 5;
    const FrozenEncoders enc(s.enc);
    Trainer t(s.corpus, enc, s.rewriter, s.model, s.train);
    try {
        t.run();
        FAIL() << "training with lr 1e200 did not diverge";
    } catch (const TrainingDiverged& e) {
        const auto& ck = e.last_good();
        for (const auto& p : ck.model.parameters())
            for (double v : p.tensor.data()) ASSERT_TRUE(std::isfinite(v)) << p.name;
        EXPECT_LT(ck.epoch, 5u);
    }
}

TEST(Trainer, EarlyStoppingHonoursPatience) {
    SmallSetup s;
    s.train.lr_text = 0;
    s.train.lr_vision = 0;
    s.train.patience = 2;
    s.train.max_epochs = 50;
    const FrozenEncoders enc(s.enc);
    Trainer t(s.corpus, enc, s.rewriter, s.model, s.train);
    const auto r = t.run();
    // No epoch can improve on epoch 0, so training stops after `patience`.
    EXPECT_TRUE(r.early_stopped);
    EXPECT_EQ(r.checkpoint.epoch, 2u);
    EXPECT_EQ(r.checkpoint.best_epoch, 0u);
}

TEST(Trainer, ValidationLossHalvesWithinTwentyEpochs) {
    // Default 5-class corpus, default model and desk learning rates.
    const auto corpus = generate_synthetic_corpus(5, 40, 1);
    const CaptionRewriter rw;
    EncoderConfig enc_cfg;
    ModelConfig mc;
    TrainingConfig tc;
    tc.max_epochs = 20;
    tc.patience = 20;
    mc.query_capacity = required_query_capacity(corpus, rw, tc);
    const FrozenEncoders enc(enc_cfg);
    Trainer t(corpus, enc, rw, mc, tc);
    const auto r = t.run();
    ASSERT_EQ(r.metrics.size(), 21u);
    EXPECT_LT(r.metrics[20].val_loss, 0.5 * r.metrics[0].val_loss)
        << r.metrics[0].val_loss << " -> " << r.metrics[20].val_loss;
}

TEST(Trainer, RejectsMismatchedWidthsAndBadConfig) {
    SmallSetup s;
    const FrozenEncoders enc(s.enc);
    auto bad_model = s.model;
    bad_model.d_text = 4;
    EXPECT_THROW(Trainer(s.corpus, enc, s.rewriter, bad_model, s.train), DimensionError);
    auto bad = s.train;
    bad.patience = 0;
    EXPECT_THROW(Trainer(s.corpus, enc, s.rewriter, s.model, bad), ConfigError);
}

TEST(ConfigHash, IgnoresMaxEpochsOnly) {
    const EncoderConfig e;
    const ModelConfig m;
    TrainingConfig t;
    const auto h = config_hash(e, m, t);
    t.max_epochs = 999;
    EXPECT_EQ(config_hash(e, m, t), h);
    t.seed = 8;
    EXPECT_NE(config_hash(e, m, t), h);
}

TEST(Capacity, CoversLongestTemplateOutput) {
    const auto corpus = generate_synthetic_corpus(5, 2, 1);
    const CaptionRewriter rw;
    TrainingConfig cfg;
    EXPECT_EQ(required_query_capacity(corpus, rw, cfg), 7u); // "a bird is singing in a tree"
    cfg.ext_loss_enabled = true;
    std::size_t longest = 0;
    for (const auto& c : rw.enumerate_outputs(corpus.captions, true)) longest = std::max(longest, tokenize_caption(c).size());
    EXPECT_EQ(required_query_capacity(corpus, rw, cfg), longest);
}
