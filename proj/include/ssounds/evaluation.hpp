#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssounds/augment.hpp"
#include "ssounds/encoders.hpp"
#include "ssounds/error.hpp"
#include "ssounds/model.hpp"
#include "ssounds/rng.hpp"

namespace ssounds {

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("cosine_similarity: vectors differ in length");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Class ids ordered by descending cosine similarity to `query`, ties by
// ascending class id.
inline std::vector<ClassId> rank_classes(std::span<const double> query, std::span<const Tensor> class_vectors) {
    std::vector<double> sims(class_vectors.size());
    for (std::size_t c = 0; c < class_vectors.size(); ++c) sims[c] = cosine_similarity(query, class_vectors[c].data());
    std::vector<ClassId> order(class_vectors.size());
    std::iota(order.begin(), order.end(), ClassId{0});
    std::stable_sort(order.begin(), order.end(), [&](ClassId a, ClassId b) { return sims[a] > sims[b]; });
    return order;
}

struct RetrievalReport {
    double top1 = 0.0; // percent
    std::map<std::size_t, double> recall_at_k; // percent
    std::vector<std::vector<std::size_t>> confusion; // [true][predicted]
    std::size_t count = 0;
};

// Ranks every class caption embedding against each predicted vision vector.
inline RetrievalReport evaluate_retrieval(std::span<const Tensor> predictions, std::span<const ClassId> labels,
                                          std::span<const Tensor> class_vectors, std::span<const std::size_t> k_list) {
    if (predictions.empty()) throw InputError("evaluate_retrieval: empty evaluation set");
    if (predictions.size() != labels.size()) throw ShapeError("evaluate_retrieval: predictions and labels differ in count");
    if (class_vectors.size() < 2) throw InputError("evaluate_retrieval: need at least two classes");
    const std::size_t k = class_vectors.size();
    RetrievalReport report;
    report.count = predictions.size();
    report.confusion.assign(k, std::vector<std::size_t>(k, 0));
    std::map<std::size_t, std::size_t> hits;
    for (auto kk : k_list) hits[kk] = 0;
    std::size_t top1 = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (labels[i] >= k) throw InputError("evaluate_retrieval: label out of range");
        const auto order = rank_classes(predictions[i].data(), class_vectors);
        const auto rank = static_cast<std::size_t>(std::find(order.begin(), order.end(), labels[i]) - order.begin());
        ++report.confusion[labels[i]][order.front()];
        if (rank == 0) ++top1;
        for (auto& [kk, h] : hits)
            if (rank < kk) ++h;
    }
    const double n = static_cast<double>(predictions.size());
    report.top1 = 100.0 * static_cast<double>(top1) / n;
    for (const auto& [kk, h] : hits) report.recall_at_k[kk] = 100.0 * static_cast<double>(h) / n;
    return report;
}

inline RetrievalReport evaluate_retrieval(const AlignmentModel& model, std::span<const AudioTokens> tokens,
                                          std::span<const ClassId> labels, std::span<const CaptionRecord> captions,
                                          std::span<const std::size_t> k_list) {
    NoGradGuard no_grad;
    std::vector<Tensor> preds;
    preds.reserve(tokens.size());
    for (const auto& t : tokens) preds.push_back(forward_vision(model, t));
    std::vector<Tensor> classes;
    for (const auto& c : captions) classes.push_back(c.vision_embedding);
    return evaluate_retrieval(preds, labels, classes, k_list);
}

inline nlohmann::json to_json(const RetrievalReport& r) {
    nlohmann::json j;
    j["top1"] = r.top1;
    j["count"] = r.count;
    nlohmann::json recall = nlohmann::json::object();
    for (const auto& [k, v] : r.recall_at_k) recall[std::to_string(k)] = v;
    j["recall_at_k"] = recall;
    j["confusion"] = r.confusion;
    return j;
}

inline std::string format_table(const RetrievalReport& r) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(2);
    out << std::left << std::setw(12) << "metric" << std::right << std::setw(10) << "value" << '\n';
    out << std::left << std::setw(12) << "samples" << std::right << std::setw(10) << r.count << '\n';
    out << std::left << std::setw(12) << "top1" << std::right << std::setw(10) << r.top1 << '\n';
    for (const auto& [k, v] : r.recall_at_k) {
        out << std::left << std::setw(12) << ("R@" + std::to_string(k)) << std::right << std::setw(10) << v << '\n';
    }
    return out.str();
}

inline std::string confusion_csv(const RetrievalReport& r) {
    std::ostringstream out;
    out << "true\\pred";
    for (std::size_t c = 0; c < r.confusion.size(); ++c) out << ',' << c;
    out << '\n';
    for (std::size_t t = 0; t < r.confusion.size(); ++t) {
        out << t;
        for (auto v : r.confusion[t]) out << ',' << v;
        out << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Controllability probes

struct VolumeProbeRow {
    double alpha = 0.0;
    std::size_t clips = 0;
    std::size_t distant_wins = 0;
    double mean_margin = 0.0; // cos(distant) - cos(base)
    double min_margin = 0.0;
    double max_margin = 0.0;

    double distant_rate() const { return clips ? 100.0 * static_cast<double>(distant_wins) / clips : 0.0; }
};

struct VolumeProbeReport {
    std::vector<VolumeProbeRow> rows;
    // Per clip, per alpha margins in row order.
    std::vector<std::vector<double>> margins;
};

struct VolumeProbeCase {
    const AudioClip* clip;
    std::string base_caption;
    std::string distant_caption;
};

// The caption a low-gain rewrite produces for `caption` (template choice
// pinned by seed 0).
inline std::string distant_variant(const CaptionRewriter& rewriter, const std::string& caption) {
    auto spec = rewriter.make_spec(TransformKind::gain);
    spec.gain = 0.15;
    return rewriter.transform_caption(caption, spec, 0);
}

inline VolumeProbeReport volume_probe(const AlignmentModel& model, const FrozenEncoders& encoders,
                                      std::span<const VolumeProbeCase> cases, std::span<const double> alphas) {
    if (cases.empty()) throw InputError("volume_probe: no clips");
    NoGradGuard no_grad;
    VolumeProbeReport report;
    report.rows.resize(alphas.size());
    for (std::size_t a = 0; a < alphas.size(); ++a) {
        if (!(alphas[a] > 0.0)) throw ParameterError("volume_probe: gain factors must be positive");
        report.rows[a].alpha = alphas[a];
        report.rows[a].min_margin = std::numeric_limits<double>::infinity();
        report.rows[a].max_margin = -std::numeric_limits<double>::infinity();
    }
    for (const auto& c : cases) {
        const auto base = encoders.encode_vision_text(c.base_caption);
        const auto distant = encoders.encode_vision_text(c.distant_caption);
        auto& clip_margins = report.margins.emplace_back();
        for (std::size_t a = 0; a < alphas.size(); ++a) {
            const auto z = forward_vision(model, encoders.encode_audio(apply_gain(*c.clip, alphas[a])));
            const double margin = cosine_similarity(z.data(), distant.data()) - cosine_similarity(z.data(), base.data());
            auto& row = report.rows[a];
            ++row.clips;
            if (margin > 0.0) ++row.distant_wins;
            row.mean_margin += margin;
            row.min_margin = std::min(row.min_margin, margin);
            row.max_margin = std::max(row.max_margin, margin);
            clip_margins.push_back(margin);
        }
    }
    for (auto& row : report.rows) row.mean_margin /= static_cast<double>(row.clips);
    return report;
}

inline nlohmann::json to_json(const VolumeProbeReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"alpha", row.alpha},
                        {"volume", volume_label_name(volume_label(row.alpha))},
                        {"clips", row.clips},
                        {"distant_wins", row.distant_wins},
                        {"distant_rate", row.distant_rate()},
                        {"mean_margin", row.mean_margin},
                        {"min_margin", row.min_margin},
                        {"max_margin", row.max_margin}});
    }
    return {{"rows", rows}, {"margins", r.margins}};
}

inline std::string format_table(const VolumeProbeReport& r) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    out << std::right << std::setw(8) << "alpha" << std::setw(8) << "volume" << std::setw(10) << "winner"
        << std::setw(10) << "distant%" << std::setw(12) << "margin" << '\n';
    for (const auto& row : r.rows) {
        const bool distant = 2 * row.distant_wins > row.clips;
        out << std::setw(8) << row.alpha << std::setw(8) << volume_label_name(volume_label(row.alpha))
            << std::setw(10) << (distant ? "distant" : "base") << std::setw(10) << std::setprecision(1)
            << row.distant_rate() << std::setw(12) << std::setprecision(4) << row.mean_margin << '\n';
    }
    return out.str();
}

struct MixProbeResult {
    ClassId u = 0;
    ClassId v = 0;
    std::string composed;
    double composed_score = 0.0;
    double best_single = 0.0; // max over the two single-class captions
    bool pass = false;
};

// Seed for composing (u, v); symmetric so both orders render one template.
inline std::uint64_t mix_compose_seed(std::uint64_t seed, ClassId u, ClassId v) {
    const std::uint64_t lo = std::min(u, v), hi = std::max(u, v);
    return derive_seed(derive_seed(seed, "mix_probe"), (hi << 32) | lo);
}

inline MixProbeResult mix_probe_pair(const AlignmentModel& model, const FrozenEncoders& encoders,
                                     const CaptionRewriter& rewriter, const AudioClip& clip_u, const AudioClip& clip_v,
                                     const std::string& caption_u, const std::string& caption_v, std::uint64_t seed,
                                     double margin = 0.0) {
    if (clip_u.label == clip_v.label) throw ContractError("mix_probe: both clips belong to class " + std::to_string(clip_u.label));
    NoGradGuard no_grad;
    MixProbeResult r;
    r.u = clip_u.label;
    r.v = clip_v.label;
    r.composed = rewriter.compose_captions(caption_u, caption_v, mix_compose_seed(seed, r.u, r.v));
    const auto z = forward_vision(model, encoders.encode_audio(mix(clip_u, clip_v)));
    r.composed_score = cosine_similarity(z.data(), encoders.encode_vision_text(r.composed).data());
    r.best_single = std::max(cosine_similarity(z.data(), encoders.encode_vision_text(caption_u).data()),
                             cosine_similarity(z.data(), encoders.encode_vision_text(caption_v).data()));
    r.pass = r.composed_score > r.best_single - margin;
    return r;
}

struct MixProbeReport {
    std::vector<MixProbeResult> results;
    // [u][v] pass fraction in percent; diagonal unused.
    std::vector<std::vector<double>> grid;

    double pass_rate() const {
        if (results.empty()) return 0.0;
        const auto passed = std::count_if(results.begin(), results.end(), [](const auto& r) { return r.pass; });
        return 100.0 * static_cast<double>(passed) / static_cast<double>(results.size());
    }
};

// Every ordered class pair u != v, pairing the i-th clip of u with the i-th
// clip of v.
inline MixProbeReport mix_probe(const AlignmentModel& model, const FrozenEncoders& encoders,
                                const CaptionRewriter& rewriter, std::span<const AudioClip> clips,
                                std::span<const std::string> captions, std::uint64_t seed, double margin = 0.0) {
    const std::size_t k = captions.size();
    std::vector<std::vector<const AudioClip*>> by_class(k);
    for (const auto& c : clips) {
        if (c.label >= k) throw InputError("mix_probe: clip label out of range");
        by_class[c.label].push_back(&c);
    }
    MixProbeReport report;
    report.grid.assign(k, std::vector<double>(k, 0.0));
    for (ClassId u = 0; u < k; ++u) {
        for (ClassId v = 0; v < k; ++v) {
            if (u == v) continue;
            const std::size_t n = std::min(by_class[u].size(), by_class[v].size());
            std::size_t passed = 0;
            for (std::size_t i = 0; i < n; ++i) {
                auto r = mix_probe_pair(model, encoders, rewriter, *by_class[u][i], *by_class[v][i], captions[u],
                                        captions[v], seed, margin);
                passed += r.pass ? 1 : 0;
                report.results.push_back(std::move(r));
            }
            report.grid[u][v] = n ? 100.0 * static_cast<double>(passed) / static_cast<double>(n) : 0.0;
        }
    }
    if (report.results.empty()) throw InputError("mix_probe: no cross-class clip pairs");
    return report;
}

inline nlohmann::json to_json(const MixProbeReport& r) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : r.results) {
        pairs.push_back({{"u", p.u},
                         {"v", p.v},
                         {"composed", p.composed},
                         {"composed_score", p.composed_score},
                         {"best_single", p.best_single},
                         {"pass", p.pass}});
    }
    return {{"pass_rate", r.pass_rate()}, {"grid", r.grid}, {"pairs", pairs}};
}

inline std::string format_table(const MixProbeReport& r) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(1);
    out << std::setw(6) << "u\\v";
    for (std::size_t v = 0; v < r.grid.size(); ++v) out << std::setw(8) << v;
    out << '\n';
    for (std::size_t u = 0; u < r.grid.size(); ++u) {
        out << std::setw(6) << u;
        for (std::size_t v = 0; v < r.grid.size(); ++v) {
            if (u == v) out << std::setw(8) << "-";
            else out << std::setw(8) << r.grid[u][v];
        }
        out << '\n';
    }
    out << "pass rate " << r.pass_rate() << "%\n";
    return out.str();
}

} // namespace ssounds
