#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "ssounds/ssounds.hpp"

namespace fs = std::filesystem;
using namespace ssounds;

namespace {

struct GlobalOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool quiet = false;
};

AppConfig load(const GlobalOptions& g) {
    return resolve_config(g.config.empty() ? std::nullopt : std::optional<fs::path>(g.config));
}

fs::path require_out(const GlobalOptions& g) {
    if (g.out.empty()) throw InputError("--out is required");
    return g.out;
}

void say(const GlobalOptions& g, const std::string& text) {
    if (!g.quiet) std::cout << text;
}

std::string ndjson(const std::vector<EpochMetrics>& metrics) {
    std::string out;
    for (const auto& m : metrics) out += to_json(m).dump() + "\n";
    return out;
}

// -- synth-data --------------------------------------------------------------

struct SynthArgs {
    std::optional<std::size_t> classes;
    std::optional<std::size_t> per_class;
};

void cmd_synth_data(const GlobalOptions& g, const SynthArgs& a) {
    auto cfg = load(g);
    const auto out = require_out(g);
    const std::size_t classes = a.classes.value_or(cfg.classes);
    const std::size_t per_class = a.per_class.value_or(cfg.per_class);
    const std::uint64_t seed = g.seed.value_or(cfg.corpus_seed);
    const auto corpus = generate_synthetic_corpus(classes, per_class, seed, cfg.synth);
    write_corpus(corpus, out);
    say(g, "wrote " + std::to_string(corpus.clips.size()) + " clips (" + std::to_string(corpus.train.size()) +
               " train / " + std::to_string(corpus.validation.size()) + " validation) to " + out.string() + "\n");
}

// -- train ------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string resume;
    std::string archive;
    std::optional<double> lr_text;
    std::optional<double> lr_vision;
    std::string lr_profile;
    std::optional<std::size_t> max_epochs;
    std::optional<std::size_t> patience;
    std::optional<std::size_t> batch_size;
    std::string pooling;
    bool ext = false;
    bool no_ext = false;
};

void apply_overrides(AppConfig& cfg, const GlobalOptions& g, const TrainArgs& a) {
    auto& t = cfg.training;
    if (!a.lr_profile.empty()) {
        if (a.lr_profile == "desk") apply_lr_profile(t, LrProfile::desk);
        else if (a.lr_profile == "full") apply_lr_profile(t, LrProfile::full);
        else throw ConfigError("--lr-profile must be desk or full");
    }
    if (a.lr_text) t.lr_text = *a.lr_text;
    if (a.lr_vision) t.lr_vision = *a.lr_vision;
    if (a.max_epochs) t.max_epochs = *a.max_epochs;
    if (a.patience) t.patience = *a.patience;
    if (a.batch_size) t.batch_size = *a.batch_size;
    if (a.ext) t.ext_loss_enabled = true;
    if (a.no_ext) t.ext_loss_enabled = false;
    if (g.seed) t.seed = *g.seed;
    if (a.pooling == "mean") cfg.model.pooling = PoolingMode::mean;
    else if (a.pooling == "attention") cfg.model.pooling = PoolingMode::attention;
    else if (!a.pooling.empty()) throw ConfigError("--pooling must be attention or mean");
    t.validate();
}

int cmd_train(const GlobalOptions& g, const TrainArgs& a) {
    auto cfg = load(g);
    apply_overrides(cfg, g, a);
    const auto out = require_out(g);
    fs::create_directories(out);
    const auto corpus = read_corpus(a.data);
    const auto rewriter = make_rewriter(cfg);
    const std::size_t needed = required_query_capacity(corpus, rewriter, cfg.training);
    if (needed > cfg.model.query_capacity) {
        throw ConfigError("model.query_capacity is " + std::to_string(cfg.model.query_capacity) +
                          " but captions need " + std::to_string(needed) + " query tokens");
    }
    std::optional<EmbeddingArchive> archive;
    if (!a.archive.empty()) archive = read_embedding_archive(a.archive, archive_dims(cfg.encoder));
    const FrozenEncoders encoders(cfg.encoder);
    Trainer trainer(corpus, encoders, rewriter, cfg.model, cfg.training, archive ? &*archive : nullptr);
    std::vector<EpochMetrics> history;
    const auto metrics_path = out / "metrics.ndjson";
    if (!a.resume.empty()) {
        const auto resumed = read_checkpoint(a.resume);
        trainer.resume(resumed);
        // Keep the earlier log so the file covers the whole run.
        if (fs::exists(metrics_path)) {
            std::istringstream in(read_text_file(metrics_path));
            for (std::string line; std::getline(in, line);) {
                if (line.empty()) continue;
                const auto j = nlohmann::json::parse(line);
                EpochMetrics m;
                m.epoch = j.at("epoch").get<std::uint64_t>();
                m.train_loss = j.at("train_loss").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                            : j.at("train_loss").get<double>();
                m.val_loss = j.at("val_loss").get<double>();
                m.val_text = j.value("val_loss_text", 0.0);
                m.val_vision = j.value("val_loss_vision", 0.0);
                m.lr_text = j.at("lr_text").get<double>();
                m.lr_vision = j.at("lr_vision").get<double>();
                m.wall_ms = j.at("wall_ms").get<double>();
                if (m.epoch <= resumed.epoch) history.push_back(m);
            }
        }
    }
    const auto ck_path = out / "checkpoint.ssck";
    try {
        const auto result = trainer.run([&](const EpochMetrics& m, const Checkpoint& ck) {
            history.push_back(m);
            write_checkpoint(ck, ck_path);
            write_text_atomic(metrics_path, ndjson(history));
            if (!g.quiet) spdlog::info("epoch {:>3}  train {:.6f}  val {:.6f}", m.epoch, m.train_loss, m.val_loss);
        });
        const auto& ck = result.checkpoint;
        say(g, "stopped after epoch " + std::to_string(ck.epoch) + (result.early_stopped ? " (early stop)" : "") +
                   "; best epoch " + std::to_string(ck.best_epoch) + ", validation loss " +
                   std::to_string(ck.best_val_loss) + "\n");
    } catch (const TrainingDiverged& e) {
        write_checkpoint(e.last_good(), ck_path);
        write_text_atomic(metrics_path, ndjson(history));
        throw;
    }
    return 0;
}

// -- eval -------------------------------------------------------------------

struct EvalArgs {
    std::string data;
    std::string checkpoint;
    std::string split = "validation";
    bool probes = false;
};

std::vector<std::size_t> split_indices(const Corpus& corpus, const std::string& split) {
    if (split == "validation") return corpus.validation;
    if (split == "train") return corpus.train;
    if (split == "all") {
        std::vector<std::size_t> all(corpus.clips.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        return all;
    }
    throw InputError("--split must be validation, train or all");
}

void cmd_eval(const GlobalOptions& g, const EvalArgs& a) {
    auto cfg = load(g);
    const auto out = require_out(g);
    fs::create_directories(out);
    const auto corpus = read_corpus(a.data);
    const auto ck = read_checkpoint(a.checkpoint);
    const FrozenEncoders encoders(ck.encoder);
    const auto& model = ck.best_model;
    const auto indices = split_indices(corpus, a.split);

    std::vector<AudioTokens> tokens;
    std::vector<ClassId> labels;
    for (auto i : indices) {
        tokens.push_back(encoders.encode_audio(corpus.clips[i]));
        labels.push_back(corpus.clips[i].label);
    }
    std::vector<CaptionRecord> captions;
    for (ClassId c = 0; c < corpus.class_count(); ++c) captions.push_back(encoders.encode_caption(c, corpus.captions[c]));
    const auto report = evaluate_retrieval(model, tokens, labels, captions, cfg.eval.k_list);
    nlohmann::json j = to_json(report);
    j["split"] = a.split;
    j["checkpoint_epoch"] = ck.best_epoch;
    write_text_atomic(out / "report.json", j.dump(2) + "\n");
    write_text_atomic(out / "report.txt", format_table(report));
    write_text_atomic(out / "confusion.csv", confusion_csv(report));
    say(g, format_table(report));

    if (!a.probes) return;
    const auto rewriter = make_rewriter(cfg);
    std::vector<VolumeProbeCase> cases;
    std::vector<AudioClip> probe_clips;
    for (auto i : indices) {
        const auto& clip = corpus.clips[i];
        const auto& caption = corpus.captions[clip.label];
        cases.push_back({&clip, caption, distant_variant(rewriter, caption)});
        probe_clips.push_back(clip);
    }
    const auto volume = volume_probe(model, encoders, cases, cfg.eval.alphas);
    write_text_atomic(out / "volume_probe.json", to_json(volume).dump(2) + "\n");
    write_text_atomic(out / "volume_probe.txt", format_table(volume));
    const auto mixes = mix_probe(model, encoders, rewriter, probe_clips, corpus.captions, cfg.eval.probe_seed,
                                 cfg.eval.mix_margin);
    write_text_atomic(out / "mix_probe.json", to_json(mixes).dump(2) + "\n");
    write_text_atomic(out / "mix_probe.txt", format_table(mixes));
    say(g, "\nvolume probe\n" + format_table(volume) + "\nmix probe\n" + format_table(mixes));
}

// -- embed ------------------------------------------------------------------

struct EmbedArgs {
    std::string data;
};

void cmd_embed(const GlobalOptions& g, const EmbedArgs& a) {
    auto cfg = load(g);
    const auto out = require_out(g);
    const auto corpus = read_corpus(a.data);
    const FrozenEncoders encoders(cfg.encoder);
    EmbeddingArchive archive(archive_dims(cfg.encoder));
    for (const auto& clip : corpus.clips) archive.put_audio(clip.source_id, encoders.encode_audio(clip));
    for (ClassId c = 0; c < corpus.class_count(); ++c) archive.put_caption(encoders.encode_caption(c, corpus.captions[c]));
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_embedding_archive(archive, out);
    say(g, "wrote " + std::to_string(archive.size()) + " records to " + out.string() + "\n");
}

// -- export-conditioning ----------------------------------------------------

struct ExportArgs {
    std::string data;
    std::string checkpoint;
    std::string split = "all";
};

void cmd_export(const GlobalOptions& g, const ExportArgs& a) {
    const auto out = require_out(g);
    const auto corpus = read_corpus(a.data);
    const auto ck = read_checkpoint(a.checkpoint);
    const FrozenEncoders encoders(ck.encoder);
    ConditioningFile file;
    file.d_text = static_cast<std::uint32_t>(ck.model_config.d_text);
    file.d_vision = static_cast<std::uint32_t>(ck.model_config.d_vision);
    NoGradGuard no_grad;
    for (auto i : split_indices(corpus, a.split)) {
        const auto& clip = corpus.clips[i];
        const auto l = tokenize_caption(corpus.captions[clip.label]).size();
        file.add(clip.source_id, forward(ck.best_model, encoders.encode_audio(clip), l));
    }
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_conditioning(file, out);
    say(g, "wrote " + std::to_string(file.records.size()) + " conditioning pairs to " + out.string() + "\n");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Audio-to-text/vision embedding alignment toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    GlobalOptions g;
    app.add_option("--config", g.config, "INI configuration file (falls back to $SSOUNDS_CONFIG)");
    app.add_option("--seed", g.seed, "Seed override (corpus seed for synth-data, training seed for train)");
    app.add_option("--out", g.out, "Output directory or file");
    app.add_flag("--quiet", g.quiet, "Only print errors");

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth-data", "Generate a synthetic labelled corpus");
    synth_cmd->add_option("--classes", synth.classes, "Number of classes");
    synth_cmd->add_option("--per-class", synth.per_class, "Clips per class");

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Train the adapters and poolers");
    train_cmd->add_option("--data", train.data, "Corpus directory")->required();
    train_cmd->add_option("--resume", train.resume, "Checkpoint to resume from");
    train_cmd->add_option("--archive", train.archive, "Embedding archive replacing the stub encoders");
    train_cmd->add_option("--lr-text", train.lr_text, "Text-branch learning rate");
    train_cmd->add_option("--lr-vision", train.lr_vision, "Vision-branch learning rate");
    train_cmd->add_option("--lr-profile", train.lr_profile, "desk or full");
    train_cmd->add_option("--max-epochs", train.max_epochs);
    train_cmd->add_option("--patience", train.patience);
    train_cmd->add_option("--batch-size", train.batch_size);
    train_cmd->add_option("--pooling", train.pooling, "attention or mean");
    auto* ext_flag = train_cmd->add_flag("--ext", train.ext, "Enable the augmentation-extended objective");
    train_cmd->add_flag("--no-ext", train.no_ext, "Disable the augmentation-extended objective")->excludes(ext_flag);

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "Retrieval report and controllability probes");
    eval_cmd->add_option("--data", eval.data, "Corpus directory")->required();
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--split", eval.split, "validation, train or all");
    eval_cmd->add_flag("--probes", eval.probes, "Also run the volume and mix probes");

    EmbedArgs embed;
    auto* embed_cmd = app.add_subcommand("embed", "Write encoder outputs to an embedding archive");
    embed_cmd->add_option("--data", embed.data, "Corpus directory")->required();

    ExportArgs exp;
    auto* export_cmd = app.add_subcommand("export-conditioning", "Write (z_T, z_V) predictions per clip");
    export_cmd->add_option("--data", exp.data, "Corpus directory")->required();
    export_cmd->add_option("--checkpoint", exp.checkpoint, "Checkpoint file")->required();
    export_cmd->add_option("--split", exp.split, "validation, train or all");

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(g.quiet ? spdlog::level::err : spdlog::level::info);

    try {
        if (*synth_cmd) cmd_synth_data(g, synth);
        else if (*train_cmd) return cmd_train(g, train);
        else if (*eval_cmd) cmd_eval(g, eval);
        else if (*embed_cmd) cmd_embed(g, embed);
        else if (*export_cmd) cmd_export(g, exp);
    } catch (const ConfigError& e) {
        std::cerr << "ssounds: configuration error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "ssounds: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
