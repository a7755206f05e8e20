#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

#include <fftw3.h>

#include "ssounds/error.hpp"

namespace ssounds {

struct MelConfig {
    int sample_rate = 16000;
    std::size_t window = 400;
    std::size_t hop = 160;
    std::size_t n_fft = 512;
    std::size_t n_mels = 64;
    double f_min = 0.0;
    double f_max = 8000.0;
};

namespace detail {

// FFTW's planner is not thread-safe; executing a finished plan is.
inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

struct FftwFree {
    void operator()(void* p) const noexcept { fftw_free(p); }
};

} // namespace detail

// Real-input FFT of a fixed size with its own buffers.
class RealFft {
public:
    explicit RealFft(std::size_t n)
        : n_(n),
          time_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
          freq_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
        if (n < 2) throw ParameterError("fft: size must be at least 2");
        std::lock_guard lock(detail::fftw_planner_mutex());
        const int ni = static_cast<int>(n);
        forward_ = fftw_plan_dft_r2c_1d(ni, time_.get(), reinterpret_cast<fftw_complex*>(freq_.get()), FFTW_ESTIMATE);
        inverse_ = fftw_plan_dft_c2r_1d(ni, reinterpret_cast<fftw_complex*>(freq_.get()), time_.get(), FFTW_ESTIMATE);
    }

    ~RealFft() {
        std::lock_guard lock(detail::fftw_planner_mutex());
        fftw_destroy_plan(forward_);
        fftw_destroy_plan(inverse_);
    }

    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;

    std::size_t size() const noexcept { return n_; }
    std::size_t bins() const noexcept { return n_ / 2 + 1; }

    std::span<double> time() noexcept { return {time_.get(), n_}; }
    std::span<std::complex<double>> freq() noexcept {
        return {reinterpret_cast<std::complex<double>*>(freq_.get()), bins()};
    }

    void forward() noexcept { fftw_execute(forward_); }
    // Unnormalised: time() ends up scaled by size().
    void inverse() noexcept { fftw_execute(inverse_); }

private:
    std::size_t n_;
    std::unique_ptr<double, detail::FftwFree> time_;
    std::unique_ptr<fftw_complex, detail::FftwFree> freq_;
    fftw_plan forward_ = nullptr;
    fftw_plan inverse_ = nullptr;
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

inline std::size_t frame_count(std::size_t length, std::size_t window, std::size_t hop) {
    if (length < window) return 0;
    return 1 + (length - window) / hop;
}

// Triangular filters on the HTK mel scale, unnormalised, stored as sparse
// [first_bin, weights...] runs.
class MelFilterbank {
public:
    explicit MelFilterbank(const MelConfig& cfg) : n_mels_(cfg.n_mels), bins_(cfg.n_fft / 2 + 1) {
        if (cfg.f_max <= cfg.f_min || cfg.f_max > cfg.sample_rate / 2.0 + 1e-9) {
            throw ParameterError("mel: need f_min < f_max <= sample_rate / 2");
        }
        const double lo = hz_to_mel(cfg.f_min), hi = hz_to_mel(cfg.f_max);
        std::vector<double> edges(n_mels_ + 2);
        for (std::size_t i = 0; i < edges.size(); ++i) {
            edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels_ + 1));
        }
        const double bin_hz = static_cast<double>(cfg.sample_rate) / static_cast<double>(cfg.n_fft);
        filters_.resize(n_mels_);
        for (std::size_t m = 0; m < n_mels_; ++m) {
            const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
            auto& f = filters_[m];
            for (std::size_t k = 0; k < bins_; ++k) {
                const double hz = static_cast<double>(k) * bin_hz;
                const double up = (hz - left) / (centre - left);
                const double down = (right - hz) / (right - centre);
                const double w = std::max(0.0, std::min(up, down));
                if (w > 0.0) {
                    if (f.weights.empty()) f.first = k;
                    f.weights.resize(k - f.first + 1, 0.0);
                    f.weights[k - f.first] = w;
                }
            }
        }
    }

    std::size_t n_mels() const noexcept { return n_mels_; }
    std::size_t bins() const noexcept { return bins_; }

    double weight(std::size_t mel, std::size_t bin) const {
        const auto& f = filters_[mel];
        if (bin < f.first || bin >= f.first + f.weights.size()) return 0.0;
        return f.weights[bin - f.first];
    }

    void apply(std::span<const double> power, std::span<double> out) const {
        for (std::size_t m = 0; m < n_mels_; ++m) {
            const auto& f = filters_[m];
            double acc = 0.0;
            for (std::size_t i = 0; i < f.weights.size(); ++i) acc += f.weights[i] * power[f.first + i];
            out[m] = acc;
        }
    }

private:
    struct Filter {
        std::size_t first = 0;
        std::vector<double> weights;
    };
    std::size_t n_mels_;
    std::size_t bins_;
    std::vector<Filter> filters_;
};

// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    }
    return w;
}

// Mel power spectrogram, row-major [frames x n_mels]. No centring or padding:
// frame t covers samples [t*hop, t*hop + window). Immutable after
// construction; compute() plans its own FFT so concurrent calls are safe.
class MelSpectrogram {
public:
    explicit MelSpectrogram(MelConfig cfg)
        : cfg_(cfg), window_(hann_window(cfg.window)), bank_(cfg) {
        if (cfg.window > cfg.n_fft) throw ParameterError("mel: window longer than n_fft");
        if (cfg.hop == 0) throw ParameterError("mel: hop must be positive");
    }

    const MelConfig& config() const noexcept { return cfg_; }
    const MelFilterbank& filterbank() const noexcept { return bank_; }

    std::size_t frames_for(std::size_t length) const { return frame_count(length, cfg_.window, cfg_.hop); }

    std::vector<double> compute(std::span<const float> samples) const {
        RealFft fft(cfg_.n_fft);
        const std::size_t frames = frames_for(samples.size());
        std::vector<double> out(frames * cfg_.n_mels);
        std::vector<double> power(fft.bins());
        for (std::size_t t = 0; t < frames; ++t) {
            auto buf = fft.time();
            std::fill(buf.begin(), buf.end(), 0.0);
            for (std::size_t i = 0; i < cfg_.window; ++i) buf[i] = samples[t * cfg_.hop + i] * window_[i];
            fft.forward();
            const auto spec = fft.freq();
            for (std::size_t k = 0; k < power.size(); ++k) power[k] = std::norm(spec[k]);
            bank_.apply(power, std::span(out).subspan(t * cfg_.n_mels, cfg_.n_mels));
        }
        return out;
    }

private:
    MelConfig cfg_;
    std::vector<double> window_;
    MelFilterbank bank_;
};

// Full linear convolution (length a + b - 1) through a zero-padded FFT.
inline std::vector<double> fft_convolve(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw ParameterError("convolve: empty operand");
    const std::size_t out_len = a.size() + b.size() - 1;
    std::size_t n = 2;
    while (n < out_len) n <<= 1;
    RealFft fa(n);
    RealFft fb(n);
    auto ta = fa.time();
    auto tb = fb.time();
    std::fill(ta.begin(), ta.end(), 0.0);
    std::fill(tb.begin(), tb.end(), 0.0);
    std::copy(a.begin(), a.end(), ta.begin());
    std::copy(b.begin(), b.end(), tb.begin());
    fa.forward();
    fb.forward();
    auto sa = fa.freq();
    const auto sb = fb.freq();
    for (std::size_t k = 0; k < sa.size(); ++k) sa[k] *= sb[k];
    fa.inverse();
    std::vector<double> out(out_len);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < out_len; ++i) out[i] = ta[i] * inv;
    return out;
}

} // namespace ssounds
