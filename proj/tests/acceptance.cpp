// Acceptance suite: one PASS/FAIL line per headline criterion.
//
// Usage: ssounds_acceptance [criterion ...]
// With no arguments every criterion runs (about 8 minutes on one core).
// Criterion names: gradients, frozen, learnability, ablation,
// controllability, separation, determinism, degeneracy.
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "ssounds/ssounds.hpp"
#include "support/gradient_suite.hpp"
#include "support/temp_dir.hpp"

#ifndef SSOUNDS_TRAJECTORY_BIN
#error "SSOUNDS_TRAJECTORY_BIN must name the trajectory helper"
#endif

using namespace ssounds;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// Shared fixture: the default 5-class corpus and the stub encoders.
struct World {
    Corpus corpus = generate_synthetic_corpus(5, 40, 1);
    FrozenEncoders encoders{EncoderConfig{}};
    CaptionRewriter rewriter;
    std::vector<AudioTokens> val_tokens;
    std::vector<ClassId> val_labels;
    std::vector<CaptionRecord> captions;

    World() {
        for (auto i : corpus.validation) {
            val_tokens.push_back(encoders.encode_audio(corpus.clips[i]));
            val_labels.push_back(corpus.clips[i].label);
        }
        for (ClassId c = 0; c < corpus.class_count(); ++c) captions.push_back(encoders.encode_caption(c, corpus.captions[c]));
    }

    // Batch 8 and the desk learning rates throughout.
    std::pair<ModelConfig, TrainingConfig> configs(std::uint64_t seed, PoolingMode pooling, bool ext) const {
        TrainingConfig tc;
        apply_lr_profile(tc, LrProfile::desk);
        tc.batch_size = 8;
        tc.seed = seed;
        tc.ext_loss_enabled = ext;
        if (ext) {
            tc.mix_pair_budget = 180;
            tc.transform_budget = 1;
            tc.patience = 25;
            tc.max_epochs = 300;
        }
        ModelConfig mc;
        mc.pooling = pooling;
        mc.init_seed = seed;
        mc.query_capacity = required_query_capacity(corpus, rewriter, tc);
        return {mc, tc};
    }

    TrainingResult train(const ModelConfig& mc, const TrainingConfig& tc) const {
        Trainer trainer(corpus, encoders, rewriter, mc, tc);
        return trainer.run();
    }

    RetrievalReport retrieval(const AlignmentModel& model) const {
        const std::size_t ks[] = {1, 5};
        return evaluate_retrieval(model, val_tokens, val_labels, captions, ks);
    }

    // SHA-256 over encoder outputs for every clip and caption.
    std::string backbone_digest() const {
        Sha256 h;
        auto feed = [&](const Tensor& t) { h.update(std::as_bytes(std::span(t.data()))); };
        for (const auto& clip : corpus.clips) feed(encoders.encode_audio(clip).tokens);
        for (ClassId c = 0; c < corpus.class_count(); ++c) {
            const auto rec = encoders.encode_caption(c, corpus.captions[c]);
            feed(rec.text_embedding);
            feed(rec.vision_embedding);
        }
        return h.hex();
    }
};

World& world() {
    static World w;
    return w;
}

// The attention-pooling seed-1 run feeds three criteria; train it once.
struct LearnabilityRun {
    std::string digest_before, digest_after;
    TrainingResult result;
    double seconds = 0.0;
};

const LearnabilityRun& learnability_run() {
    static const LearnabilityRun run = [] {
        auto& w = world();
        LearnabilityRun r;
        r.digest_before = w.backbone_digest();
        const auto [mc, tc] = w.configs(1, PoolingMode::attention, false);
        const auto t0 = Clock::now();
        r.result = w.train(mc, tc);
        r.seconds = seconds_since(t0);
        r.digest_after = w.backbone_digest();
        return r;
    }();
    return run;
}

Outcome gradients() {
    const auto t0 = Clock::now();
    const auto outcomes = ssounds::testing::run_gradient_suite(2024, 20);
    const double secs = seconds_since(t0);
    double worst = 0.0;
    std::string worst_name;
    for (const auto& o : outcomes) {
        if (o.worst >= worst) worst = o.worst, worst_name = o.name;
    }
    return {worst < 1e-4 && secs < 60.0,
            fmt("%zu checks x 20 instances, worst relative error %.2e (%s), %.1f s", outcomes.size(), worst,
                worst_name.c_str(), secs)};
}

Outcome frozen() {
    const auto& r = learnability_run();
    return {r.digest_before == r.digest_after,
            "encoder output SHA-256 " + r.digest_before.substr(0, 16) + "... before, " +
                r.digest_after.substr(0, 16) + "... after " + std::to_string(r.result.checkpoint.epoch) + " epochs"};
}

Outcome learnability() {
    const auto& r = learnability_run();
    const auto rep = world().retrieval(r.result.checkpoint.best_model);
    const double r5 = rep.recall_at_k.at(5);
    return {rep.top1 >= 90.0 && r5 == 100.0 && r.seconds < 600.0,
            fmt("top1 %.1f%%, R@5 %.1f%% (best epoch %llu of %llu), %.0f s", rep.top1, r5,
                static_cast<unsigned long long>(r.result.checkpoint.best_epoch),
                static_cast<unsigned long long>(r.result.checkpoint.epoch), r.seconds)};
}

Outcome ablation() {
    auto& w = world();
    bool pass = true;
    std::string detail;
    for (std::uint64_t seed : {1, 2, 3}) {
        double att;
        if (seed == 1) {
            att = w.retrieval(learnability_run().result.checkpoint.best_model).top1;
        } else {
            const auto [mc, tc] = w.configs(seed, PoolingMode::attention, false);
            att = w.retrieval(w.train(mc, tc).checkpoint.best_model).top1;
        }
        const auto [mc, tc] = w.configs(seed, PoolingMode::mean, false);
        const double mean = w.retrieval(w.train(mc, tc).checkpoint.best_model).top1;
        pass = pass && mean < att;
        detail += fmt("%sseed %llu: attention %.0f vs mean %.0f", detail.empty() ? "" : "; ",
                      static_cast<unsigned long long>(seed), att, mean);
    }
    return {pass, detail};
}

Outcome controllability() {
    auto& w = world();
    const auto [mc, tc] = w.configs(1, PoolingMode::attention, true);
    const auto result = w.train(mc, tc);
    const auto& model = result.checkpoint.best_model;
    std::vector<VolumeProbeCase> cases;
    std::vector<AudioClip> held_out;
    for (auto i : w.corpus.validation) {
        const auto& clip = w.corpus.clips[i];
        const auto& caption = w.corpus.captions[clip.label];
        cases.push_back({&clip, caption, distant_variant(w.rewriter, caption)});
        held_out.push_back(clip);
    }
    const std::vector<double> alphas{0.1, 0.15};
    const auto volume = volume_probe(model, w.encoders, cases, alphas);
    const auto mixes = mix_probe(model, w.encoders, w.rewriter, held_out, w.corpus.captions, EvalConfig{}.probe_seed);
    bool pass = mixes.pass_rate() >= 80.0;
    std::string detail;
    for (const auto& row : volume.rows) {
        pass = pass && row.distant_rate() >= 80.0;
        detail += fmt("distant at alpha %.2f: %.1f%%; ", row.alpha, row.distant_rate());
    }
    detail += fmt("mix pass %.1f%% of %zu pairs (best epoch %llu)", mixes.pass_rate(), mixes.results.size(),
                  static_cast<unsigned long long>(result.checkpoint.best_epoch));
    return {pass, detail};
}

bool branch_unchanged(const AlignmentModel& a, const AlignmentModel& b, Branch branch) {
    const auto pa = a.parameters(branch), pb = b.parameters(branch);
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const auto& x = pa[i].tensor.data();
        const auto& y = pb[i].tensor.data();
        if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0) return false;
    }
    return true;
}

Outcome separation() {
    auto& w = world();
    bool pass = true;
    std::string detail;
    for (Branch frozen_branch : {Branch::vision, Branch::text}) {
        auto [mc, tc] = w.configs(1, PoolingMode::attention, false);
        tc.max_epochs = 40;
        tc.patience = 41;
        (frozen_branch == Branch::vision ? tc.lr_vision : tc.lr_text) = 0.0;
        Trainer trainer(w.corpus, w.encoders, w.rewriter, mc, tc);
        const AlignmentModel initial = trainer.model().clone();
        const auto result = trainer.run();
        const auto& first = result.metrics.front();
        const auto& last = result.metrics.back();
        const bool vision_learns = frozen_branch == Branch::text;
        const double before = vision_learns ? first.val_vision : first.val_text;
        const double after = vision_learns ? last.val_vision : last.val_text;
        const double drop = 100.0 * (1.0 - after / before);
        const bool frozen_ok = branch_unchanged(initial, trainer.model(), frozen_branch);
        pass = pass && frozen_ok && drop >= 30.0;
        detail += fmt("%s%s frozen: %s, %s MSE -%.1f%%", detail.empty() ? "" : "; ",
                      vision_learns ? "text" : "vision", frozen_ok ? "bit-identical" : "CHANGED",
                      vision_learns ? "vision" : "text", drop);
    }
    return {pass, detail};
}

template <typename F>
bool rejects(F&& f) {
    try {
        f();
    } catch (const FormatError&) {
        return true;
    } catch (...) {
        return false;
    }
    return false;
}

Outcome determinism() {
    auto& w = world();
    std::vector<std::string> failures;
    auto check = [&](bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    };

    auto [mc, tc] = w.configs(5, PoolingMode::attention, true);
    tc.max_epochs = 3;
    tc.mix_pair_budget = 20;
    const auto a = w.train(mc, tc);
    const auto b = w.train(mc, tc);
    const auto bytes = encode_checkpoint(a.checkpoint);
    check(bytes == encode_checkpoint(b.checkpoint), "checkpoints differ between identical runs");
    check(to_json(w.retrieval(a.checkpoint.best_model)).dump() == to_json(w.retrieval(b.checkpoint.best_model)).dump(),
          "retrieval reports differ");

    ssounds::testing::TempDir dir;
    write_checkpoint(a.checkpoint, dir / "run.ssck");
    check(encode_checkpoint(read_checkpoint(dir / "run.ssck")) == bytes, "checkpoint round trip");

    EmbeddingArchive archive(archive_dims(w.encoders.config()));
    for (std::size_t i = 0; i < 10; ++i) archive.put_audio(w.corpus.clips[i].source_id, w.encoders.encode_audio(w.corpus.clips[i]));
    for (const auto& c : w.captions) archive.put_caption(c);
    write_embedding_archive(archive, dir / "emb.ssea");
    check(read_embedding_archive(dir / "emb.ssea") == archive, "archive round trip");

    ConditioningFile cond;
    cond.d_text = static_cast<std::uint32_t>(mc.d_text);
    cond.d_vision = static_cast<std::uint32_t>(mc.d_vision);
    for (std::size_t i = 0; i < w.val_tokens.size(); ++i) {
        const auto len = w.captions[w.val_labels[i]].length();
        cond.add(std::to_string(i), forward(a.checkpoint.best_model, w.val_tokens[i], len));
    }
    write_conditioning(cond, dir / "cond.sscp");
    check(read_conditioning(dir / "cond.sscp") == cond, "conditioning round trip");

    auto corrupt = [](std::vector<std::byte> v, std::size_t at) {
        v[at] ^= std::byte{0x5a};
        return v;
    };
    const auto emb_bytes = archive.encode();
    const auto cond_bytes = cond.encode();
    check(rejects([&] { decode_checkpoint(corrupt(bytes, bytes.size() / 2), "ck"); }), "corrupt checkpoint accepted");
    check(rejects([&] { decode_checkpoint(std::span(bytes).first(bytes.size() - 9), "ck"); }), "truncated checkpoint accepted");
    check(rejects([&] { EmbeddingArchive::decode(corrupt(emb_bytes, 0), "emb"); }), "corrupt archive accepted");
    check(rejects([&] { EmbeddingArchive::decode(std::span(emb_bytes).first(emb_bytes.size() - 3), "emb"); }),
          "truncated archive accepted");
    check(rejects([&] { ConditioningFile::decode(corrupt(cond_bytes, 1), "cond"); }), "corrupt conditioning accepted");
    check(rejects([&] { ConditioningFile::decode(std::span(cond_bytes).first(cond_bytes.size() - 3), "cond"); }),
          "truncated conditioning accepted");

    std::string detail = "identical checkpoints and reports, 3 formats round-trip, corruptions rejected";
    if (!failures.empty()) {
        detail.clear();
        for (const auto& f : failures) detail += (detail.empty() ? "" : "; ") + f;
    }
    return {failures.empty(), detail};
}

struct Captured {
    int status = -1;
    std::string out;
};

Captured run_command(const std::string& cmd) {
    Captured c;
    FILE* pipe = ::popen((cmd + " 2>/dev/null").c_str(), "r");
    if (!pipe) return c;
    char buf[256];
    while (std::fgets(buf, sizeof buf, pipe)) c.out += buf;
    c.status = ::pclose(pipe);
    return c;
}

Outcome degeneracy() {
    const std::string full = SSOUNDS_TRAJECTORY_BIN;
    const std::string stripped = SSOUNDS_TRAJECTORY_NOAUG_BIN;
    const auto a = run_command(full + " 5");
    const auto b = run_command(stripped + " 5");
    // The stripped build must genuinely lack the extended objective.
    const auto probe = run_command(stripped + " 1 ext");
    const bool same = a.status == 0 && b.status == 0 && !a.out.empty() && a.out == b.out;
    std::size_t lines = 0;
    for (char ch : a.out) lines += ch == '\n';
    return {same && probe.status != 0,
            fmt("%zu epoch losses and final checkpoint hash %s; stripped build %s ext",
                lines ? lines - 1 : 0, same ? "bit-identical" : "DIFFER",
                probe.status != 0 ? "rejects" : "ACCEPTS")};
}

} // namespace

int main(int argc, char** argv) {
    spdlog::set_level(spdlog::level::warn);
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradients", gradients},       {"frozen", frozen},         {"learnability", learnability},
        {"ablation", ablation},         {"controllability", controllability},
        {"separation", separation},     {"determinism", determinism}, {"degeneracy", degeneracy},
    };
    std::set<std::string> wanted(argv + 1, argv + argc);
    for (const auto& name : wanted) {
        if (std::none_of(criteria.begin(), criteria.end(), [&](const auto& c) { return c.first == name; })) {
            std::cerr << "unknown criterion '" << name << "'\n";
            return 2;
        }
    }
    int failed = 0, ran = 0;
    for (const auto& [name, fn] : criteria) {
        if (!wanted.empty() && !wanted.contains(name)) continue;
        ++ran;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    }
    std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
