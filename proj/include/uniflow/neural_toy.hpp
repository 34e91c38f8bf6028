#pragma once

#include "uniflow/errors.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace uniflow {

using Tensor2D = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline double default_attention_scale(Eigen::Index key_dim) {
    return 1.0 / std::sqrt(static_cast<double>(key_dim));
}

/// Row-wise softmax with max subtraction.
inline Tensor2D softmax_rows(const Tensor2D& logits) {
    Tensor2D p(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double m = logits.row(r).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            p(r, c) = std::exp(logits(r, c) - m);
            sum += p(r, c);
        }
        p.row(r) /= sum;
    }
    return p;
}

namespace detail {
inline void check_attention_dims(const Tensor2D& q, const Tensor2D& k, const Tensor2D& v) {
    if (q.cols() != k.cols()) throw DimensionError("attention: q and k widths differ");
    if (k.rows() != v.rows()) throw DimensionError("attention: k and v row counts differ");
    if (k.rows() == 0) throw DimensionError("attention: no keys");
}
} // namespace detail

/// Softmax(scale * q k^T) v. Scale defaults to 1/sqrt(q.cols()).
inline Tensor2D attention(const Tensor2D& q, const Tensor2D& k, const Tensor2D& v,
                          std::optional<double> scale = std::nullopt) {
    detail::check_attention_dims(q, k, v);
    const double s = scale ? *scale : default_attention_scale(q.cols());
    return softmax_rows(s * (q * k.transpose())) * v;
}

struct AttentionGrads {
    Tensor2D dq;
    Tensor2D dk;
    Tensor2D dv;
};

/// Gradients of sum(upstream .* attention(q, k, v, scale)).
inline AttentionGrads attention_backward(const Tensor2D& q, const Tensor2D& k, const Tensor2D& v,
                                         std::optional<double> scale, const Tensor2D& upstream) {
    detail::check_attention_dims(q, k, v);
    if (upstream.rows() != q.rows() || upstream.cols() != v.cols()) {
        throw DimensionError("attention_backward: upstream shape mismatch");
    }
    const double s = scale ? *scale : default_attention_scale(q.cols());
    const Tensor2D p = softmax_rows(s * (q * k.transpose()));

    AttentionGrads g;
    g.dv = p.transpose() * upstream;
    const Tensor2D dp = upstream * v.transpose();
    // Softmax Jacobian applied row by row: dS = P .* (dP - rowsum(dP .* P)).
    Tensor2D ds(p.rows(), p.cols());
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const double dot = (dp.row(r).array() * p.row(r).array()).sum();
        ds.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
    }
    g.dq = s * (ds * k);
    g.dk = s * (ds.transpose() * q);
    return g;
}

// ---------------------------------------------------------------------------
// Toy denoiser
// ---------------------------------------------------------------------------

struct DenoiserDims {
    int data_dim = 2;
    /// Sinusoidal timestep features appended to the input; must be even.
    int time_dim = 8;
    int hidden = 64;
    /// Width of one condition token (0 disables the conditioning block).
    int cond_dim = 0;
    int key_dim = 8;
    int value_dim = 8;

    bool conditioned() const { return cond_dim > 0; }
    int base_input() const { return data_dim + time_dim; }
    int mlp_input() const { return base_input() + (conditioned() ? value_dim : 0); }

    void validate() const {
        if (data_dim < 1 || hidden < 1 || time_dim < 0 || time_dim % 2 != 0) {
            throw DimensionError("denoiser: invalid dimensions");
        }
        if (cond_dim < 0 || (cond_dim > 0 && (key_dim < 1 || value_dim < 1))) {
            throw DimensionError("denoiser: invalid conditioning dimensions");
        }
    }

    friend bool operator==(const DenoiserDims&, const DenoiserDims&) = default;
};

/// Parameters (or their gradients) of the toy denoiser.
///
/// Forward pass for input x at step t with optional condition tokens C:
///   z0 = [x; time(t)]
///   a  = attention(z0^T Wq, C Wk, C Wv)      (zeros when C is absent)
///   h  = tanh(W1 [z0; a] + b1)
///   y  = W2 h + b2
struct DenoiserParams {
    Eigen::MatrixXd w1, b1, w2, b2, wq, wk, wv;

    static DenoiserParams zeros(const DenoiserDims& d) {
        DenoiserParams p;
        p.w1 = Eigen::MatrixXd::Zero(d.hidden, d.mlp_input());
        p.b1 = Eigen::MatrixXd::Zero(d.hidden, 1);
        p.w2 = Eigen::MatrixXd::Zero(d.data_dim, d.hidden);
        p.b2 = Eigen::MatrixXd::Zero(d.data_dim, 1);
        if (d.conditioned()) {
            p.wq = Eigen::MatrixXd::Zero(d.base_input(), d.key_dim);
            p.wk = Eigen::MatrixXd::Zero(d.cond_dim, d.key_dim);
            p.wv = Eigen::MatrixXd::Zero(d.cond_dim, d.value_dim);
        }
        return p;
    }

    template <class F>
    void visit(F&& f) {
        for (auto* m : {&w1, &b1, &w2, &b2, &wq, &wk, &wv}) f(*m);
    }
    template <class F>
    void visit(F&& f) const {
        for (const auto* m : {&w1, &b1, &w2, &b2, &wq, &wk, &wv}) f(*m);
    }

    Eigen::Index count() const {
        Eigen::Index n = 0;
        visit([&](const Eigen::MatrixXd& m) { n += m.size(); });
        return n;
    }

    Eigen::VectorXd flatten() const {
        Eigen::VectorXd out(count());
        Eigen::Index off = 0;
        visit([&](const Eigen::MatrixXd& m) {
            for (Eigen::Index i = 0; i < m.size(); ++i) out[off++] = m.data()[i];
        });
        return out;
    }

    void assign(const Eigen::VectorXd& flat) {
        if (flat.size() != count()) throw DimensionError("parameter vector length mismatch");
        Eigen::Index off = 0;
        visit([&](Eigen::MatrixXd& m) {
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = flat[off++];
        });
    }

    DenoiserParams& operator+=(const DenoiserParams& o) {
        w1 += o.w1; b1 += o.b1; w2 += o.w2; b2 += o.b2;
        wq += o.wq; wk += o.wk; wv += o.wv;
        return *this;
    }
    DenoiserParams& operator*=(double s) {
        visit([&](Eigen::MatrixXd& m) { m *= s; });
        return *this;
    }
};

struct ToyDenoiser {
    DenoiserDims dims;
    DenoiserParams params;

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases alike.
    static ToyDenoiser init(const DenoiserDims& dims, std::uint64_t seed) {
        dims.validate();
        ToyDenoiser m{dims, DenoiserParams::zeros(dims)};
        std::mt19937_64 rng(seed);
        auto fill = [&](Eigen::MatrixXd& mat, int fan_in) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (Eigen::Index i = 0; i < mat.size(); ++i) mat.data()[i] = u(rng);
        };
        fill(m.params.w1, dims.mlp_input());
        fill(m.params.b1, dims.mlp_input());
        fill(m.params.w2, dims.hidden);
        fill(m.params.b2, dims.hidden);
        if (dims.conditioned()) {
            fill(m.params.wq, dims.base_input());
            fill(m.params.wk, dims.cond_dim);
            fill(m.params.wv, dims.cond_dim);
        }
        return m;
    }

    static ToyDenoiser zeros(const DenoiserDims& dims) {
        dims.validate();
        return {dims, DenoiserParams::zeros(dims)};
    }
};

/// Sinusoidal features [sin(t w_0), cos(t w_0), ...], w_i = 10000^(-i / half).
inline Eigen::VectorXd time_features(double t, int time_dim) {
    Eigen::VectorXd f(time_dim);
    const int half = time_dim / 2;
    for (int i = 0; i < half; ++i) {
        const double w = std::pow(10000.0, -static_cast<double>(i) / half);
        f[2 * i] = std::sin(t * w);
        f[2 * i + 1] = std::cos(t * w);
    }
    return f;
}

namespace detail {

struct DenoiserTrace {
    Eigen::VectorXd z0;
    Eigen::VectorXd z;
    Eigen::VectorXd h;
    Eigen::VectorXd y;
    Tensor2D q, k, v;
    bool attended = false;
};

inline DenoiserTrace denoiser_trace(const ToyDenoiser& m, const Eigen::VectorXd& x, double t,
                                    const Tensor2D* cond) {
    const auto& d = m.dims;
    if (x.size() != d.data_dim) throw DimensionError("denoiser: input dimension mismatch");
    DenoiserTrace tr;
    tr.z0.resize(d.base_input());
    tr.z0 << x, time_features(t, d.time_dim);
    tr.z = Eigen::VectorXd::Zero(d.mlp_input());
    tr.z.head(d.base_input()) = tr.z0;
    if (d.conditioned() && cond != nullptr && cond->rows() > 0) {
        if (cond->cols() != d.cond_dim) throw DimensionError("denoiser: condition width mismatch");
        tr.q = tr.z0.transpose() * m.params.wq;
        tr.k = (*cond) * m.params.wk;
        tr.v = (*cond) * m.params.wv;
        const Tensor2D a = attention(tr.q, tr.k, tr.v);
        tr.z.tail(d.value_dim) = a.row(0).transpose();
        tr.attended = true;
    }
    tr.h = (m.params.w1 * tr.z + m.params.b1).array().tanh();
    tr.y = m.params.w2 * tr.h + m.params.b2;
    return tr;
}

} // namespace detail

/// Predicted noise for x_t at step t; `cond` rows are condition tokens.
inline Eigen::VectorXd denoiser_forward(const ToyDenoiser& model, const Eigen::VectorXd& x_t,
                                        double t, const Tensor2D* cond = nullptr) {
    return detail::denoiser_trace(model, x_t, t, cond).y;
}

struct DenoiserGrads {
    DenoiserParams params;
    Eigen::VectorXd input;
};

/// Gradients of upstream . denoiser_forward(model, x_t, t, cond).
inline DenoiserGrads denoiser_backward(const ToyDenoiser& model, const Eigen::VectorXd& x_t,
                                       double t, const Eigen::VectorXd& upstream,
                                       const Tensor2D* cond = nullptr) {
    const auto& d = model.dims;
    if (upstream.size() != d.data_dim) throw DimensionError("denoiser_backward: upstream mismatch");
    const auto tr = detail::denoiser_trace(model, x_t, t, cond);
    const auto& p = model.params;

    DenoiserGrads g{DenoiserParams::zeros(d), Eigen::VectorXd()};
    g.params.w2 = upstream * tr.h.transpose();
    g.params.b2 = upstream;
    const Eigen::VectorXd dpre = (p.w2.transpose() * upstream).array() * (1.0 - tr.h.array().square());
    g.params.w1 = dpre * tr.z.transpose();
    g.params.b1 = dpre;
    const Eigen::VectorXd dz = p.w1.transpose() * dpre;
    Eigen::VectorXd dz0 = dz.head(d.base_input());

    if (tr.attended) {
        const Tensor2D da = dz.tail(d.value_dim).transpose();
        const auto ag = attention_backward(tr.q, tr.k, tr.v, std::nullopt, da);
        g.params.wq = tr.z0 * ag.dq;
        g.params.wk = cond->transpose() * ag.dk;
        g.params.wv = cond->transpose() * ag.dv;
        dz0 += p.wq * ag.dq.transpose();
    }
    g.input = dz0.head(d.data_dim);
    return g;
}

// ---------------------------------------------------------------------------
// Checkpoints: one JSON header line, then little-endian float64 parameters.
// ---------------------------------------------------------------------------

inline nlohmann::json dims_to_json(const DenoiserDims& d) {
    return {{"data_dim", d.data_dim}, {"time_dim", d.time_dim}, {"hidden", d.hidden},
            {"cond_dim", d.cond_dim}, {"key_dim", d.key_dim}, {"value_dim", d.value_dim}};
}

inline DenoiserDims dims_from_json(const nlohmann::json& j) {
    DenoiserDims d;
    d.data_dim = j.value("data_dim", d.data_dim);
    d.time_dim = j.value("time_dim", d.time_dim);
    d.hidden = j.value("hidden", d.hidden);
    d.cond_dim = j.value("cond_dim", d.cond_dim);
    d.key_dim = j.value("key_dim", d.key_dim);
    d.value_dim = j.value("value_dim", d.value_dim);
    d.validate();
    return d;
}

struct Checkpoint {
    ToyDenoiser model;
    std::uint64_t seed = 0;
    long step = 0;
};

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    const nlohmann::json header = {{"format", "uniflow-denoiser"},
                                   {"dims", dims_to_json(ck.model.dims)},
                                   {"seed", ck.seed},
                                   {"step", ck.step},
                                   {"param_count", ck.model.params.count()}};
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << header.dump() << '\n';
    const Eigen::VectorXd flat = ck.model.params.flatten();
    for (Eigen::Index i = 0; i < flat.size(); ++i) {
        const auto bits = std::bit_cast<std::uint64_t>(flat[i]);
        char b[8];
        for (int k = 0; k < 8; ++k) b[k] = static_cast<char>((bits >> (8 * k)) & 0xff);
        out.write(b, 8);
    }
    if (!out) throw IoError("short write to " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint header: ") + e.what());
    }
    if (header.value("format", "") != "uniflow-denoiser") throw FormatError("not a denoiser checkpoint");
    Checkpoint ck;
    ck.model = ToyDenoiser::zeros(dims_from_json(header.at("dims")));
    ck.seed = header.value("seed", std::uint64_t{0});
    ck.step = header.value("step", 0L);
    const auto n = ck.model.params.count();
    if (header.value("param_count", Eigen::Index{-1}) != n) throw FormatError("checkpoint parameter count mismatch");
    Eigen::VectorXd flat(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        unsigned char b[8];
        if (!in.read(reinterpret_cast<char*>(b), 8)) throw IoError("truncated checkpoint payload");
        std::uint64_t bits = 0;
        for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
        flat[i] = std::bit_cast<double>(bits);
    }
    ck.model.params.assign(flat);
    return ck;
}

} // namespace uniflow
