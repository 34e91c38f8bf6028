#pragma once

#include "uniflow/errors.hpp"
#include "uniflow/flow_core.hpp"
#include "uniflow/neural_toy.hpp"

#include <fftw3.h>

#include <complex>
#include <mutex>
#include <span>
#include <string>
#include <vector>

namespace uniflow {

/// T frames x N tokens x D channels, stored [t][n][d].
struct TokenSequence {
    int frames = 0;
    int tokens = 0;
    int channels = 0;
    std::vector<double> data;

    TokenSequence() = default;
    TokenSequence(int t, int n, int d, double fill = 0.0)
        : frames(t), tokens(n), channels(d),
          data(static_cast<std::size_t>(t) * n * d, fill) {
        if (t < 1 || n < 1 || d < 1) throw DimensionError("token sequence dimensions must be >= 1");
    }

    double& at(int t, int n, int d) { return data[offset(t, n, d)]; }
    double at(int t, int n, int d) const { return data[offset(t, n, d)]; }

    /// Tokens of frame t as an N x D matrix.
    Tensor2D frame(int t) const {
        Tensor2D m(tokens, channels);
        std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(offset(t, 0, 0)),
                    static_cast<std::ptrdiff_t>(tokens) * channels, m.data());
        return m;
    }
    void set_frame(int t, const Tensor2D& m) {
        std::copy_n(m.data(), static_cast<std::ptrdiff_t>(tokens) * channels,
                    data.begin() + static_cast<std::ptrdiff_t>(offset(t, 0, 0)));
    }

private:
    std::size_t offset(int t, int n, int d) const {
        return (static_cast<std::size_t>(t) * tokens + n) * channels + d;
    }
};

/// Real-FFT bins (floor(T/2) + 1) x N x D, stored [k][n][d].
struct TemporalSpectrum {
    int frames = 0;
    int bins = 0;
    int tokens = 0;
    int channels = 0;
    std::vector<std::complex<double>> data;

    std::complex<double> at(int k, int n, int d) const {
        return data[(static_cast<std::size_t>(k) * tokens + n) * channels + d];
    }
};

inline int spectral_bins(int frames) { return frames / 2 + 1; }

/// Non-negative weight per frequency bin, optionally per channel ([bin][channel]).
struct SpectralWeights {
    std::vector<double> w;
    int channels = 0;  ///< 0: shared across channels

    static SpectralWeights identity(int frames) {
        return {std::vector<double>(static_cast<std::size_t>(spectral_bins(frames)), 1.0), 0};
    }
    static SpectralWeights dc_only(int frames) {
        auto s = identity(frames);
        std::fill(s.w.begin() + 1, s.w.end(), 0.0);
        return s;
    }
    /// Keeps bins 0..cutoff, zeroes the rest.
    static SpectralWeights lowpass(int frames, int cutoff) {
        if (cutoff < 0) throw ArgumentError("lowpass cutoff must be >= 0");
        auto s = identity(frames);
        for (std::size_t k = 0; k < s.w.size(); ++k) {
            if (static_cast<int>(k) > cutoff) s.w[k] = 0.0;
        }
        return s;
    }

    /// Trainable form: w = log(1 + exp(theta)), always >= 0.
    static SpectralWeights from_logits(const std::vector<double>& theta, int channels = 0) {
        SpectralWeights s{{}, channels};
        s.w.reserve(theta.size());
        for (double t : theta) s.w.push_back(t > 30.0 ? t : std::log1p(std::exp(t)));
        return s;
    }

    double weight(int bin, int channel) const {
        return channels == 0 ? w[static_cast<std::size_t>(bin)]
                             : w[static_cast<std::size_t>(bin) * channels + channel];
    }

    void validate(int frames, int seq_channels) const {
        const auto bins = static_cast<std::size_t>(spectral_bins(frames));
        const std::size_t expect = channels == 0 ? bins : bins * static_cast<std::size_t>(channels);
        if (channels != 0 && channels != seq_channels) {
            throw DimensionError("spectral weights: channel count mismatch");
        }
        if (w.size() != expect) {
            throw DimensionError("spectral weights: expected " + std::to_string(expect) +
                                 " entries, got " + std::to_string(w.size()));
        }
        for (double v : w) {
            if (!std::isfinite(v) || v < 0.0) throw DataError("spectral weights must be finite and >= 0");
        }
    }
};

/// d softplus / d theta, for training through from_logits.
inline double softplus_grad(double theta) { return 1.0 / (1.0 + std::exp(-theta)); }

/// Parses "identity", "dc-only" or "lowpass:k".
inline SpectralWeights named_filter(const std::string& name, int frames) {
    if (name == "identity") return SpectralWeights::identity(frames);
    if (name == "dc-only") return SpectralWeights::dc_only(frames);
    if (name.rfind("lowpass:", 0) == 0) {
        try {
            std::size_t used = 0;
            const int k = std::stoi(name.substr(8), &used);
            if (used == name.size() - 8) return SpectralWeights::lowpass(frames, k);
        } catch (const std::exception&) {
        }
        throw ArgumentError("bad lowpass filter: " + name);
    }
    throw ArgumentError("unknown filter: " + name);
}

namespace detail {

// FFTW planning is not thread-safe; execution is.
inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

class TemporalPlan {
public:
    TemporalPlan(int frames, int lanes, double* real, fftw_complex* spec, bool forward) {
        std::lock_guard lock(fftw_planner_mutex());
        int n[] = {frames};
        plan_ = forward ? fftw_plan_many_dft_r2c(1, n, lanes, real, nullptr, lanes, 1, spec, nullptr,
                                                 lanes, 1, FFTW_ESTIMATE)
                        : fftw_plan_many_dft_c2r(1, n, lanes, spec, nullptr, lanes, 1, real, nullptr,
                                                 lanes, 1, FFTW_ESTIMATE);
        if (plan_ == nullptr) throw Error("FFTW planning failed");
    }
    ~TemporalPlan() {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(plan_);
    }
    TemporalPlan(const TemporalPlan&) = delete;
    TemporalPlan& operator=(const TemporalPlan&) = delete;

    void execute() const { fftw_execute(plan_); }

private:
    fftw_plan plan_ = nullptr;
};

inline void check_tokens(const TokenSequence& seq) {
    if (seq.frames < 1 || seq.tokens < 1 || seq.channels < 1 ||
        seq.data.size() != static_cast<std::size_t>(seq.frames) * seq.tokens * seq.channels) {
        throw DimensionError("malformed token sequence");
    }
    for (double v : seq.data) {
        if (!std::isfinite(v)) throw DataError("token sequence has non-finite values");
    }
}

} // namespace detail

/// Unnormalized real FFT along the frame axis of every (token, channel) lane.
inline TemporalSpectrum temporal_fft(const TokenSequence& seq) {
    detail::check_tokens(seq);
    const int lanes = seq.tokens * seq.channels;
    TemporalSpectrum spec;
    spec.frames = seq.frames;
    spec.bins = spectral_bins(seq.frames);
    spec.tokens = seq.tokens;
    spec.channels = seq.channels;
    spec.data.resize(static_cast<std::size_t>(spec.bins) * lanes);

    std::vector<double> real = seq.data;
    auto* out = reinterpret_cast<fftw_complex*>(spec.data.data());
    detail::TemporalPlan plan(seq.frames, lanes, real.data(), out, true);
    std::copy(seq.data.begin(), seq.data.end(), real.begin());
    plan.execute();
    return spec;
}

/// Inverse of temporal_fft, including the 1/T factor.
inline TokenSequence inverse_temporal_fft(const TemporalSpectrum& spec) {
    const int lanes = spec.tokens * spec.channels;
    TokenSequence seq(spec.frames, spec.tokens, spec.channels);
    std::vector<std::complex<double>> buf(spec.data.size());
    auto* in = reinterpret_cast<fftw_complex*>(buf.data());
    detail::TemporalPlan plan(spec.frames, lanes, seq.data.data(), in, false);
    std::copy(spec.data.begin(), spec.data.end(), buf.begin());
    plan.execute();
    const double inv = 1.0 / spec.frames;
    for (double& v : seq.data) v *= inv;
    return seq;
}

/// Scales each temporal frequency bin by its weight and transforms back.
inline TokenSequence spectral_reweight(const TokenSequence& seq, const SpectralWeights& weights) {
    weights.validate(seq.frames, seq.channels);
    TemporalSpectrum spec = temporal_fft(seq);
    for (int k = 0; k < spec.bins; ++k) {
        for (int n = 0; n < spec.tokens; ++n) {
            for (int d = 0; d < spec.channels; ++d) {
                spec.data[(static_cast<std::size_t>(k) * spec.tokens + n) * spec.channels + d] *=
                    weights.weight(k, d);
            }
        }
    }
    return inverse_temporal_fft(spec);
}

/// Query/key/value projections shared by all frames. wv must be D x D so the
/// output keeps the input shape.
struct AttentionProjections {
    Tensor2D wq;
    Tensor2D wk;
    Tensor2D wv;
    std::optional<double> scale;
};

/// Reweights the sequence in the temporal frequency domain, then runs
/// per-frame self-attention over tokens.
inline TokenSequence stabilized_attention(const TokenSequence& seq, const SpectralWeights& weights,
                                          const AttentionProjections& proj) {
    const int d = seq.channels;
    if (proj.wq.rows() != d || proj.wk.rows() != d || proj.wq.cols() != proj.wk.cols()) {
        throw DimensionError("stabilized_attention: q/k projection shape mismatch");
    }
    if (proj.wv.rows() != d || proj.wv.cols() != d) {
        throw DimensionError("stabilized_attention: value projection must be D x D");
    }
    const TokenSequence filtered = spectral_reweight(seq, weights);
    TokenSequence out(seq.frames, seq.tokens, seq.channels);
    for (int t = 0; t < seq.frames; ++t) {
        const Tensor2D x = filtered.frame(t);
        out.set_frame(t, attention(x * proj.wq, x * proj.wk, x * proj.wv, proj.scale));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Flicker
// ---------------------------------------------------------------------------

/// Mean squared temporal second difference:
/// (1/(T-2)) sum_t mean_p |x_{t+1} - 2 x_t + x_{t-1}|^2, where each frame holds
/// `components` values per pixel.
inline double flicker_metric(std::span<const std::vector<double>> frames, int components) {
    if (frames.size() < 3) throw ArgumentError("flicker_metric needs at least 3 frames");
    if (components < 1) throw ArgumentError("flicker_metric: components must be >= 1");
    const std::size_t len = frames.front().size();
    if (len == 0 || len % static_cast<std::size_t>(components) != 0) {
        throw DimensionError("flicker_metric: frame length is not a multiple of components");
    }
    for (const auto& f : frames) {
        if (f.size() != len) throw DimensionError("flicker_metric: frames differ in size");
    }
    const std::size_t pixels = len / static_cast<std::size_t>(components);
    double total = 0.0;
    for (std::size_t t = 1; t + 1 < frames.size(); ++t) {
        double sum = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const double dd = frames[t + 1][i] - 2.0 * frames[t][i] + frames[t - 1][i];
            sum += dd * dd;
        }
        total += sum / static_cast<double>(pixels);
    }
    return total / static_cast<double>(frames.size() - 2);
}

inline double flicker_metric(const FlowSequence& seq) {
    std::vector<std::vector<double>> frames;
    for (const auto& f : seq.frames()) {
        std::vector<double> flat;
        flat.reserve(f.size() * 2);
        for (const auto& v : f.data()) {
            flat.push_back(v.u);
            flat.push_back(v.v);
        }
        frames.push_back(std::move(flat));
    }
    return flicker_metric(frames, 2);
}

inline double flicker_metric(std::span<const Image> images) {
    if (images.empty()) throw ArgumentError("flicker_metric needs at least 3 frames");
    std::vector<std::vector<double>> frames;
    for (const auto& img : images) frames.push_back(img.data);
    return flicker_metric(frames, images.front().channels);
}

inline double flicker_metric(const TokenSequence& seq) {
    std::vector<std::vector<double>> frames;
    const auto stride = static_cast<std::ptrdiff_t>(seq.tokens) * seq.channels;
    for (int t = 0; t < seq.frames; ++t) {
        frames.emplace_back(seq.data.begin() + t * stride, seq.data.begin() + (t + 1) * stride);
    }
    return flicker_metric(frames, seq.channels);
}

// ---------------------------------------------------------------------------
// Flow sequences as token streams (tokens = pixels, channels = (u, v))
// ---------------------------------------------------------------------------

inline TokenSequence to_tokens(const FlowSequence& seq) {
    if (seq.empty()) throw ArgumentError("empty flow sequence");
    TokenSequence out(seq.count(), seq.width() * seq.height(), 2);
    for (int t = 0; t < seq.count(); ++t) {
        const auto data = seq[t].data();
        for (std::size_t n = 0; n < data.size(); ++n) {
            out.at(t, static_cast<int>(n), 0) = data[n].u;
            out.at(t, static_cast<int>(n), 1) = data[n].v;
        }
    }
    return out;
}

/// Rebuilds flow frames with the shape and masks of `like`.
inline FlowSequence from_tokens(const TokenSequence& tokens, const FlowSequence& like) {
    if (tokens.frames != like.count() || tokens.tokens != like.width() * like.height() ||
        tokens.channels != 2) {
        throw DimensionError("token sequence does not match flow shape");
    }
    FlowSequence out = like;
    for (int t = 0; t < out.count(); ++t) {
        auto data = out[t].data();
        for (std::size_t n = 0; n < data.size(); ++n) {
            data[n] = {tokens.at(t, static_cast<int>(n), 0), tokens.at(t, static_cast<int>(n), 1)};
        }
    }
    return out;
}

inline FlowSequence stabilize_flow(const FlowSequence& seq, const SpectralWeights& weights) {
    return from_tokens(spectral_reweight(to_tokens(seq), weights), seq);
}

} // namespace uniflow
