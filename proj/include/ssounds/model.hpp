#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ssounds/encoders.hpp"
#include "ssounds/error.hpp"
#include "ssounds/rng.hpp"
#include "ssounds/tensor.hpp"

namespace ssounds {

enum class PoolingMode {
    attention,
    // Ablation: token average, tiled to the requested length.
    mean,
};

enum class Branch { text, vision };

struct ModelConfig {
    std::size_t d_audio = 64;
    std::size_t d_text = 32;
    std::size_t d_vision = 32;
    // 0 selects 2 * max(d_text, d_vision).
    std::size_t d_hidden = 0;
    std::size_t heads = 4;
    // Learned query tokens in the text pooler; bounds the caption length.
    std::size_t query_capacity = 16;
    std::uint64_t init_seed = 1;
    double query_init_std = 0.02;
    double projection_init_std = 0.02;
    PoolingMode pooling = PoolingMode::attention;

    std::size_t hidden() const { return d_hidden ? d_hidden : 2 * std::max(d_text, d_vision); }
};

namespace detail {

inline Tensor init_uniform(std::uint64_t seed, const std::string& tag, Shape shape, double bound) {
    Rng rng(derive_seed(seed, tag));
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from(std::move(shape), std::move(v), true);
}

inline Tensor init_normal(std::uint64_t seed, const std::string& tag, Shape shape, double stddev) {
    Rng rng(derive_seed(seed, tag));
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = rng.normal(0.0, stddev);
    return Tensor::from(std::move(shape), std::move(v), true);
}

} // namespace detail

// Token-wise two-layer MLP: gelu(x W1 + b1) W2 + b2.
struct Adapter {
    Tensor w1, b1, w2, b2;

    static Adapter init(std::size_t d_in, std::size_t d_hidden, std::size_t d_out, std::uint64_t seed,
                        const std::string& prefix) {
        const double bound1 = 1.0 / std::sqrt(static_cast<double>(d_in));
        const double bound2 = 1.0 / std::sqrt(static_cast<double>(d_hidden));
        return Adapter{
            detail::init_uniform(seed, prefix + ".w1", {d_in, d_hidden}, bound1),
            detail::init_uniform(seed, prefix + ".b1", {d_hidden}, bound1),
            detail::init_uniform(seed, prefix + ".w2", {d_hidden, d_out}, bound2),
            detail::init_uniform(seed, prefix + ".b2", {d_out}, bound2),
        };
    }

    std::size_t in_width() const { return w1.rows(); }
    std::size_t out_width() const { return w2.cols(); }
};

inline Tensor adapt(const Adapter& adapter, const Tensor& tokens) {
    if (tokens.rank() != 2 || tokens.cols() != adapter.in_width()) {
        throw ShapeError("adapt: tokens " + shape_str(tokens.shape()) + " do not have width " +
                         std::to_string(adapter.in_width()));
    }
    const Tensor hidden = gelu(add_bias(matmul(tokens, adapter.w1), adapter.b1));
    return add_bias(matmul(hidden, adapter.w2), adapter.b2);
}

// Multi-head cross-attention from learned queries onto an input sequence.
struct AttentionPooler {
    Tensor queries; // [q_max x d]
    Tensor w_q, w_k, w_v, w_o;
    std::size_t heads = 1;

    static AttentionPooler init(std::size_t d, std::size_t q_max, std::size_t heads, std::uint64_t seed,
                                const std::string& prefix, double query_std, double proj_std) {
        if (heads == 0 || d % heads != 0) {
            throw ConfigError("attention pooler: width " + std::to_string(d) + " not divisible by " +
                              std::to_string(heads) + " heads");
        }
        if (q_max == 0) throw ConfigError("attention pooler: query capacity must be positive");
        return AttentionPooler{
            detail::init_normal(seed, prefix + ".queries", {q_max, d}, query_std),
            detail::init_normal(seed, prefix + ".w_q", {d, d}, proj_std),
            detail::init_normal(seed, prefix + ".w_k", {d, d}, proj_std),
            detail::init_normal(seed, prefix + ".w_v", {d, d}, proj_std),
            detail::init_normal(seed, prefix + ".w_o", {d, d}, proj_std),
            heads,
        };
    }

    std::size_t width() const { return w_q.rows(); }
    std::size_t capacity() const { return queries.rows(); }
};

// The first `out_len` learned queries attend over all rows of `inputs`:
// softmax((Q Wq)(X Wk)^T / sqrt(d_head)) (X Wv), heads concatenated, then Wo.
inline Tensor pool(const AttentionPooler& pooler, const Tensor& inputs, std::size_t out_len) {
    const std::size_t d = pooler.width();
    if (out_len == 0) throw ShapeError("pool: output length must be at least 1");
    if (out_len > pooler.capacity()) {
        throw CapacityError("pool: requested " + std::to_string(out_len) + " outputs but the pooler holds " +
                            std::to_string(pooler.capacity()) + " queries");
    }
    if (inputs.rank() != 2 || inputs.rows() == 0 || inputs.cols() != d) {
        throw ShapeError("pool: inputs " + shape_str(inputs.shape()) + " do not have width " + std::to_string(d));
    }
    const Tensor q = matmul(slice_rows(pooler.queries, 0, out_len), pooler.w_q);
    const Tensor k = matmul(inputs, pooler.w_k);
    const Tensor v = matmul(inputs, pooler.w_v);
    const std::size_t dh = d / pooler.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> heads;
    heads.reserve(pooler.heads);
    for (std::size_t h = 0; h < pooler.heads; ++h) {
        const Tensor qh = pooler.heads == 1 ? q : slice_cols(q, h * dh, dh);
        const Tensor kh = pooler.heads == 1 ? k : slice_cols(k, h * dh, dh);
        const Tensor vh = pooler.heads == 1 ? v : slice_cols(v, h * dh, dh);
        const Tensor weights = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
        heads.push_back(matmul(weights, vh));
    }
    const Tensor merged = pooler.heads == 1 ? heads.front() : concat_cols(heads);
    return matmul(merged, pooler.w_o);
}

inline Tensor mean_pool(const Tensor& inputs, std::size_t out_len) {
    if (out_len == 0) throw ShapeError("mean_pool: output length must be at least 1");
    const Tensor avg = mean_rows(inputs);
    return out_len == 1 ? avg : repeat_rows(avg, out_len);
}

struct NamedParameter {
    std::string name;
    Tensor tensor;
    Branch branch;
};

struct ConditioningPair {
    Tensor z_hat_text;   // [l x d_text]
    Tensor z_hat_vision; // [d_vision]
};

class AlignmentModel {
public:
    AlignmentModel() = default;

    explicit AlignmentModel(const ModelConfig& cfg) : cfg_(cfg) {
        const std::size_t hidden = cfg.hidden();
        adapter_text_ = Adapter::init(cfg.d_audio, hidden, cfg.d_text, cfg.init_seed, "adapter_T");
        adapter_vision_ = Adapter::init(cfg.d_audio, hidden, cfg.d_vision, cfg.init_seed, "adapter_V");
        pooler_text_ = AttentionPooler::init(cfg.d_text, cfg.query_capacity, cfg.heads, cfg.init_seed, "pooler_T",
                                             cfg.query_init_std, cfg.projection_init_std);
        pooler_vision_ = AttentionPooler::init(cfg.d_vision, 1, cfg.heads, cfg.init_seed, "pooler_V",
                                               cfg.query_init_std, cfg.projection_init_std);
    }

    const ModelConfig& config() const noexcept { return cfg_; }
    const Adapter& adapter_text() const noexcept { return adapter_text_; }
    const Adapter& adapter_vision() const noexcept { return adapter_vision_; }
    const AttentionPooler& pooler_text() const noexcept { return pooler_text_; }
    const AttentionPooler& pooler_vision() const noexcept { return pooler_vision_; }

    // Fixed order; checkpoint blobs and optimizer states follow it.
    std::vector<NamedParameter> parameters() const {
        std::vector<NamedParameter> out;
        auto add_adapter = [&](const std::string& p, const Adapter& a, Branch b) {
            out.push_back({p + ".w1", a.w1, b});
            out.push_back({p + ".b1", a.b1, b});
            out.push_back({p + ".w2", a.w2, b});
            out.push_back({p + ".b2", a.b2, b});
        };
        auto add_pooler = [&](const std::string& p, const AttentionPooler& a, Branch b) {
            out.push_back({p + ".queries", a.queries, b});
            out.push_back({p + ".w_q", a.w_q, b});
            out.push_back({p + ".w_k", a.w_k, b});
            out.push_back({p + ".w_v", a.w_v, b});
            out.push_back({p + ".w_o", a.w_o, b});
        };
        add_adapter("adapter_T", adapter_text_, Branch::text);
        add_pooler("pooler_T", pooler_text_, Branch::text);
        add_adapter("adapter_V", adapter_vision_, Branch::vision);
        add_pooler("pooler_V", pooler_vision_, Branch::vision);
        return out;
    }

    std::vector<NamedParameter> parameters(Branch branch) const {
        std::vector<NamedParameter> out;
        for (auto& p : parameters())
            if (p.branch == branch) out.push_back(std::move(p));
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : parameters()) n += p.tensor.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : parameters()) p.tensor.zero_grad();
    }

    // Independent deep copy.
    AlignmentModel clone() const {
        AlignmentModel m;
        m.cfg_ = cfg_;
        auto copy_adapter = [](const Adapter& a) { return Adapter{a.w1.clone(), a.b1.clone(), a.w2.clone(), a.b2.clone()}; };
        auto copy_pooler = [](const AttentionPooler& a) {
            return AttentionPooler{a.queries.clone(), a.w_q.clone(), a.w_k.clone(), a.w_v.clone(), a.w_o.clone(), a.heads};
        };
        m.adapter_text_ = copy_adapter(adapter_text_);
        m.adapter_vision_ = copy_adapter(adapter_vision_);
        m.pooler_text_ = copy_pooler(pooler_text_);
        m.pooler_vision_ = copy_pooler(pooler_vision_);
        return m;
    }

    // Overwrites parameter values in place (shapes must agree).
    void assign(const std::string& name, std::span<const double> values) {
        for (auto& p : parameters()) {
            if (p.name != name) continue;
            if (p.tensor.size() != values.size()) {
                throw DimensionError("model: parameter " + name + " expects " + std::to_string(p.tensor.size()) +
                                     " values, got " + std::to_string(values.size()));
            }
            std::copy(values.begin(), values.end(), p.tensor.mutable_data().begin());
            return;
        }
        throw InputError("model: unknown parameter " + name);
    }

    void copy_values_from(const AlignmentModel& other) {
        for (const auto& p : other.parameters()) assign(p.name, p.tensor.data());
    }

    Tensor pool_text(const Tensor& adapted, std::size_t out_len) const {
        return cfg_.pooling == PoolingMode::attention ? pool(pooler_text_, adapted, out_len)
                                                      : mean_pool(adapted, out_len);
    }

    Tensor pool_vision(const Tensor& adapted) const {
        return cfg_.pooling == PoolingMode::attention ? pool(pooler_vision_, adapted, 1) : mean_pool(adapted, 1);
    }

private:
    ModelConfig cfg_;
    Adapter adapter_text_, adapter_vision_;
    AttentionPooler pooler_text_, pooler_vision_;
};

inline Tensor forward_vision(const AlignmentModel& model, const AudioTokens& audio) {
    const Tensor pooled = model.pool_vision(adapt(model.adapter_vision(), audio.tokens));
    return reshape(pooled, {pooled.size()});
}

inline Tensor forward_text(const AlignmentModel& model, const AudioTokens& audio, std::size_t target_len) {
    if (target_len == 0) throw ShapeError("forward: target length must be at least 1");
    return model.pool_text(adapt(model.adapter_text(), audio.tokens), target_len);
}

inline ConditioningPair forward(const AlignmentModel& model, const AudioTokens& audio, std::size_t target_len) {
    return {forward_text(model, audio, target_len), forward_vision(model, audio)};
}

struct AlignmentLoss {
    Tensor total;
    Tensor text;
    Tensor vision;
};

// mse(z_hat_T, z_T) + mse(z_hat_V, z_V), each averaged over its elements.
inline AlignmentLoss alignment_loss(const ConditioningPair& pair, const CaptionRecord& target) {
    if (pair.z_hat_text.rank() != 2 || pair.z_hat_text.rows() != target.length()) {
        throw ShapeError("alignment_loss: prediction has " + shape_str(pair.z_hat_text.shape()) +
                         " text tokens, caption has " + std::to_string(target.length()));
    }
    AlignmentLoss loss;
    loss.text = mse(pair.z_hat_text, target.text_embedding);
    loss.vision = mse(pair.z_hat_vision, target.vision_embedding);
    loss.total = add(loss.text, loss.vision);
    return loss;
}

} // namespace ssounds
