#pragma once

#include "uniflow/errors.hpp"
#include "uniflow/flow_codec.hpp"
#include "uniflow/flow_core.hpp"
#include "uniflow/neural_toy.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace uniflow {

/// Beta schedule with cumulative products. Steps are 1-based.
class NoiseSchedule {
public:
    static NoiseSchedule from_betas(std::vector<double> betas) {
        if (betas.empty()) throw ArgumentError("schedule needs at least one step");
        NoiseSchedule s;
        s.betas_ = std::move(betas);
        double prod = 1.0;
        for (double b : s.betas_) {
            if (!(b > 0.0 && b < 1.0)) throw ArgumentError("betas must lie in (0, 1)");
            prod *= 1.0 - b;
            if (!s.alpha_bar_.empty() && !(prod < s.alpha_bar_.back())) {
                throw ArgumentError("alpha_bar must be strictly decreasing");
            }
            s.alpha_bar_.push_back(prod);
        }
        return s;
    }

    /// Linear betas from beta_start to beta_end over `steps`.
    static NoiseSchedule linear(int steps, double beta_start = 1e-4, double beta_end = 0.02) {
        if (steps < 1) throw ArgumentError("schedule needs at least one step");
        std::vector<double> b(static_cast<std::size_t>(steps));
        for (int i = 0; i < steps; ++i) {
            const double a = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
            b[static_cast<std::size_t>(i)] = beta_start + a * (beta_end - beta_start);
        }
        return from_betas(std::move(b));
    }

    int steps() const noexcept { return static_cast<int>(betas_.size()); }
    double beta(int t) const { return betas_.at(index(t)); }
    double alpha(int t) const { return 1.0 - beta(t); }
    double alpha_bar(int t) const { return alpha_bar_.at(index(t)); }
    const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }

private:
    std::size_t index(int t) const {
        if (t < 1 || t > steps()) {
            throw ArgumentError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
        }
        return static_cast<std::size_t>(t - 1);
    }

    std::vector<double> betas_;
    std::vector<double> alpha_bar_;
};

inline Eigen::VectorXd standard_normal(int dim, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v[i] = n(rng);
    return v;
}

struct Noised {
    Eigen::VectorXd x_t;
    Eigen::VectorXd eps;
};

/// x_t = sqrt(abar) x0 + sqrt(1 - abar) eps for a given cumulative coefficient.
inline Noised forward_diffuse_with(const Eigen::VectorXd& x0, double alpha_bar, std::mt19937_64& rng) {
    if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) throw ArgumentError("alpha_bar must lie in [0, 1]");
    Noised out;
    out.eps = standard_normal(static_cast<int>(x0.size()), rng);
    out.x_t = std::sqrt(alpha_bar) * x0 + std::sqrt(1.0 - alpha_bar) * out.eps;
    return out;
}

/// Closed-form jump from x0 to step t.
inline Noised forward_diffuse(const Eigen::VectorXd& x0, int t, const NoiseSchedule& sched,
                              std::uint64_t seed) {
    const double ab = sched.alpha_bar(t);
    std::mt19937_64 rng(seed);
    return forward_diffuse_with(x0, ab, rng);
}

/// Anything that maps (x_t, t) to a noise estimate.
template <class P>
concept NoisePredictor = requires(const P& p, const Eigen::VectorXd& x, int t) {
    { p(x, t) } -> std::convertible_to<Eigen::VectorXd>;
};

struct TrainingSample {
    Eigen::VectorXd x0;
    /// Condition tokens (rows) for conditioned models; empty otherwise.
    Tensor2D cond;
};

/// One (sample, t, eps) triple of a loss evaluation.
struct LossDraw {
    std::size_t sample = 0;
    int t = 1;
    Eigen::VectorXd eps;
    Eigen::VectorXd x_t;
};

/// Draws t ~ U{1..T} then eps ~ N(0, I) for each sample, in order.
inline std::vector<LossDraw> draw_noise(const std::vector<TrainingSample>& batch,
                                        std::span<const std::size_t> picks, const NoiseSchedule& sched,
                                        std::mt19937_64& rng) {
    std::uniform_int_distribution<int> step(1, sched.steps());
    std::vector<LossDraw> draws;
    draws.reserve(picks.size());
    for (std::size_t i : picks) {
        LossDraw d;
        d.sample = i;
        d.t = step(rng);
        const auto n = forward_diffuse_with(batch[i].x0, sched.alpha_bar(d.t), rng);
        d.eps = n.eps;
        d.x_t = n.x_t;
        draws.push_back(std::move(d));
    }
    return draws;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

/// Mean over draws of |eps - prediction|^2 for any predictor.
template <NoisePredictor P>
double evaluate_loss(const P& predictor, const std::vector<TrainingSample>& batch,
                     const NoiseSchedule& sched, std::uint64_t seed) {
    if (batch.empty()) throw ArgumentError("training_loss: empty batch");
    std::mt19937_64 rng(seed);
    const auto picks = all_indices(batch.size());
    const auto draws = draw_noise(batch, picks, sched, rng);
    double sum = 0.0;
    for (const auto& d : draws) sum += (d.eps - Eigen::VectorXd(predictor(d.x_t, d.t))).squaredNorm();
    return sum / static_cast<double>(draws.size());
}

struct LossResult {
    double loss = 0.0;
    DenoiserParams grads;
};

inline const Tensor2D* condition_of(const TrainingSample& s) {
    return s.cond.rows() > 0 ? &s.cond : nullptr;
}

/// Loss and parameter gradients of the toy denoiser on fixed draws.
inline LossResult loss_on_draws(const ToyDenoiser& model, const std::vector<TrainingSample>& batch,
                                const std::vector<LossDraw>& draws) {
    if (draws.empty()) throw ArgumentError("training_loss: empty batch");
    LossResult r{0.0, DenoiserParams::zeros(model.dims)};
    const double inv = 1.0 / static_cast<double>(draws.size());
    for (const auto& d : draws) {
        const Tensor2D* cond = condition_of(batch[d.sample]);
        const Eigen::VectorXd pred = denoiser_forward(model, d.x_t, d.t, cond);
        const Eigen::VectorXd diff = pred - d.eps;
        r.loss += diff.squaredNorm() * inv;
        auto g = denoiser_backward(model, d.x_t, d.t, 2.0 * inv * diff, cond);
        r.grads += g.params;
    }
    return r;
}

/// Eps-prediction loss of the denoiser over the whole batch with seeded draws.
inline LossResult training_loss(const ToyDenoiser& model, const std::vector<TrainingSample>& batch,
                                const NoiseSchedule& sched, std::uint64_t seed) {
    if (batch.empty()) throw ArgumentError("training_loss: empty batch");
    std::mt19937_64 rng(seed);
    const auto picks = all_indices(batch.size());
    return loss_on_draws(model, batch, draw_noise(batch, picks, sched, rng));
}

/// Forward-only loss with `repeats` seeded draws per sample. Used to compare
/// a model before and after training on identical noise.
inline double held_out_loss(const ToyDenoiser& model, const std::vector<TrainingSample>& dataset,
                            const NoiseSchedule& sched, std::uint64_t seed, int repeats = 16) {
    if (dataset.empty() || repeats < 1) throw ArgumentError("held_out_loss: empty evaluation");
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> picks;
    picks.reserve(dataset.size() * static_cast<std::size_t>(repeats));
    for (int r = 0; r < repeats; ++r) {
        for (std::size_t i = 0; i < dataset.size(); ++i) picks.push_back(i);
    }
    double sum = 0.0;
    for (const auto& d : draw_noise(dataset, picks, sched, rng)) {
        sum += (denoiser_forward(model, d.x_t, d.t, condition_of(dataset[d.sample])) - d.eps).squaredNorm();
    }
    return sum / static_cast<double>(picks.size());
}

// ---------------------------------------------------------------------------
// Ancestral sampling
// ---------------------------------------------------------------------------

/// Runs the reverse chain from x_T ~ N(0, I) down to t = 1 using the
/// eps-prediction posterior mean and sigma_t = sqrt(beta_t).
template <NoisePredictor P>
Eigen::VectorXd sample_chain(const P& predictor, const NoiseSchedule& sched, int dim,
                             std::mt19937_64& rng, std::vector<Eigen::VectorXd>* trace = nullptr) {
    if (dim < 1) throw ArgumentError("sample: dimension must be >= 1");
    Eigen::VectorXd x = standard_normal(dim, rng);
    for (int t = sched.steps(); t >= 1; --t) {
        const Eigen::VectorXd eps = predictor(x, t);
        if (eps.size() != dim) throw DimensionError("sample: predictor output dimension mismatch");
        const double beta = sched.beta(t);
        const double coef = beta / std::sqrt(1.0 - sched.alpha_bar(t));
        Eigen::VectorXd mean = (x - coef * eps) / std::sqrt(sched.alpha(t));
        if (t > 1) {
            x = mean + std::sqrt(beta) * standard_normal(dim, rng);
        } else {
            x = std::move(mean);
        }
        if (trace) trace->push_back(x);
    }
    return x;
}

inline auto denoiser_predictor(const ToyDenoiser& model, const Tensor2D* cond = nullptr) {
    if (cond && cond->rows() > 0 && (!model.dims.conditioned() || cond->cols() != model.dims.cond_dim)) {
        throw DimensionError("sample: condition shape does not match the model");
    }
    return [&model, cond](const Eigen::VectorXd& x, int t) {
        return denoiser_forward(model, x, t, cond);
    };
}

/// Draws `count` samples from the toy denoiser with one seeded stream.
inline std::vector<Eigen::VectorXd> sample(const ToyDenoiser& model, const NoiseSchedule& sched,
                                           int count, std::uint64_t seed,
                                           const Tensor2D* cond = nullptr) {
    std::mt19937_64 rng(seed);
    const auto pred = denoiser_predictor(model, cond);
    std::vector<Eigen::VectorXd> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(sample_chain(pred, sched, model.dims.data_dim, rng));
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct AdamParams {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(Eigen::Index n, AdamParams p)
        : p_(p), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

    void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
        ++t_;
        m_ = p_.beta1 * m_ + (1.0 - p_.beta1) * grad;
        v_ = p_.beta2 * v_ + (1.0 - p_.beta2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(p_.beta1, t_);
        const double c2 = 1.0 - std::pow(p_.beta2, t_);
        theta.array() -= p_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + p_.eps);
    }

private:
    AdamParams p_;
    Eigen::VectorXd m_;
    Eigen::VectorXd v_;
    long t_ = 0;
};

struct TrainConfig {
    int steps = 2000;
    int batch_size = 64;
    AdamParams adam;
    std::uint64_t seed = 0;
};

struct TrainResult {
    ToyDenoiser model;
    std::vector<double> loss_curve;
};

class TrainingError : public Error {
public:
    TrainingError(const std::string& what, int step) : Error(what), step_(step) {}
    int step() const noexcept { return step_; }

private:
    int step_;
};

/// Adam on minibatches drawn uniformly with replacement. One seeded stream
/// drives batch picks and noise draws, so runs are reproducible.
inline TrainResult train(const ToyDenoiser& initial, const std::vector<TrainingSample>& dataset,
                         const NoiseSchedule& sched, const TrainConfig& cfg) {
    if (dataset.empty()) throw ArgumentError("train: empty dataset");
    if (cfg.steps < 0 || cfg.batch_size < 1) throw ArgumentError("train: bad step count or batch size");
    TrainResult res{initial, {}};
    res.loss_curve.reserve(static_cast<std::size_t>(cfg.steps));
    Eigen::VectorXd theta = initial.params.flatten();
    Adam adam(theta.size(), cfg.adam);
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
    std::vector<std::size_t> picks(static_cast<std::size_t>(cfg.batch_size));

    for (int step = 0; step < cfg.steps; ++step) {
        for (auto& p : picks) p = pick(rng);
        const auto draws = draw_noise(dataset, picks, sched, rng);
        const LossResult lr = loss_on_draws(res.model, dataset, draws);
        const Eigen::VectorXd grad = lr.grads.flatten();
        if (!std::isfinite(lr.loss) || !grad.allFinite()) {
            throw TrainingError("non-finite loss at step " + std::to_string(step), step);
        }
        res.loss_curve.push_back(lr.loss);
        adam.step(theta, grad);
        res.model.params.assign(theta);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Synthetic flow-latent datasets
// ---------------------------------------------------------------------------

/// Flow clips whose every pixel moves by one of `modes`, encoded to latents.
/// Sample i uses mode i % modes.size(). With `cond_sigma` set, each sample
/// also carries the latent tokens of a noise-perturbed copy of its own flow.
struct ModeDatasetSpec {
    std::vector<Flow2> modes = {{1.0, 0.0}, {-1.0, 0.0}};
    int count = 256;
    int flow_frames = 4;
    int width = 8;
    int height = 8;
    std::optional<double> cond_sigma;
    std::uint64_t seed = 0;
};

inline LatentGrid mode_latent(Flow2 mode, int frames, int width, int height) {
    return encode(FlowSequence(
        std::vector<FlowField>(static_cast<std::size_t>(frames), FlowField(width, height, mode))));
}

inline std::vector<TrainingSample> make_mode_dataset(const ModeDatasetSpec& spec) {
    if (spec.modes.empty() || spec.count < 1) throw ArgumentError("dataset: need modes and count >= 1");
    std::vector<TrainingSample> out;
    out.reserve(static_cast<std::size_t>(spec.count));
    for (int i = 0; i < spec.count; ++i) {
        const Flow2 mode = spec.modes[static_cast<std::size_t>(i) % spec.modes.size()];
        const FlowSequence seq(std::vector<FlowField>(static_cast<std::size_t>(spec.flow_frames),
                                                      FlowField(spec.width, spec.height, mode)));
        TrainingSample s;
        s.x0 = encode(seq).flat();
        if (spec.cond_sigma) {
            s.cond = encode(add_flow_noise(seq, *spec.cond_sigma, spec.seed + static_cast<std::uint64_t>(i))).tokens();
        }
        out.push_back(std::move(s));
    }
    return out;
}

/// Fraction of samples within `radius` (L2) of any mode latent.
inline double mode_purity(const std::vector<Eigen::VectorXd>& samples,
                          const std::vector<Eigen::VectorXd>& modes, double radius) {
    if (samples.empty()) return 0.0;
    int hits = 0;
    for (const auto& s : samples) {
        for (const auto& m : modes) {
            if ((s - m).norm() < radius) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

} // namespace uniflow
