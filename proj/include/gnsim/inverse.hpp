#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "gnsim/common.hpp"
#include "gnsim/film.hpp"
#include "gnsim/metrics.hpp"
#include "gnsim/model.hpp"

namespace gnsim::inverse {

struct BoConfig {
    double lo = 0.0;
    double hi = 1.0;
    int n_init = 3;       // seeded uniform samples before the acquisition loop
    int max_iters = 20;   // total objective evaluations
    double xi = 0.01;     // expected-improvement exploration margin
    double tolerance = 1e-4;
    std::uint64_t seed = 0;
    int grid_size = 256;

    void validate() const {
        if (!(lo < hi)) throw std::invalid_argument("BoConfig: lo must be < hi");
        if (n_init < 2) throw std::invalid_argument("BoConfig.n_init must be >= 2");
        if (max_iters < n_init)
            throw std::invalid_argument("BoConfig.max_iters must be >= n_init");
        if (grid_size < 2) throw std::invalid_argument("BoConfig.grid_size must be >= 2");
    }
};

struct BoStep {
    double x = 0.0;
    double loss = 0.0;
    double best = 0.0;
};

struct BoTrace {
    std::vector<BoStep> steps;
    double best_x = 0.0;
    double best_loss = std::numeric_limits<double>::infinity();
};

/// Exact GP regression with a squared-exponential kernel. Hyperparameters
/// come from a small grid search maximizing the log marginal likelihood;
/// the signal variance is pinned to the sample variance of the targets.
class GpPosterior {
public:
    GpPosterior(std::vector<double> xs, std::vector<double> ys) : xs_(std::move(xs)) {
        if (xs_.size() < 2 || xs_.size() != ys.size())
            throw std::invalid_argument("gp_fit: need >= 2 points");
        const auto n = static_cast<Eigen::Index>(xs_.size());

        y_mean_ = 0.0;
        for (double y : ys) y_mean_ += y;
        y_mean_ /= static_cast<double>(ys.size());
        Eigen::VectorXd yc(n);
        for (Eigen::Index i = 0; i < n; ++i) yc[i] = ys[static_cast<std::size_t>(i)] - y_mean_;

        double var = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) var += yc[i] * yc[i];
        var /= static_cast<double>(n);
        signal_var_ = std::max(var, 1e-12);

        double span = *std::max_element(xs_.begin(), xs_.end()) -
                      *std::min_element(xs_.begin(), xs_.end());
        if (span <= 0.0) span = 1.0;

        const double ls_grid[] = {0.05, 0.1, 0.2, 0.4};
        const double noise_grid[] = {1e-6, 1e-4, 1e-2};
        double best_lml = -std::numeric_limits<double>::infinity();
        for (double ls : ls_grid) {
            for (double nf : noise_grid) {
                const double lengthscale = ls * span;
                const double noise = nf * signal_var_;
                double lml;
                Eigen::LLT<Eigen::MatrixXd> llt;
                if (!factorize(lengthscale, noise, yc, llt, lml)) continue;
                if (lml > best_lml) {
                    best_lml = lml;
                    lengthscale_ = lengthscale;
                    noise_ = noise;
                }
            }
        }
        if (!std::isfinite(best_lml))
            throw std::runtime_error("gp_fit: no admissible hyperparameters");

        Eigen::LLT<Eigen::MatrixXd> llt;
        double lml;
        if (!factorize(lengthscale_, noise_, yc, llt, lml))
            throw std::runtime_error("gp_fit: kernel factorization failed");
        llt_ = llt;
        alpha_ = llt_.solve(yc);
    }

    /// Posterior mean and variance at a probe point.
    std::pair<double, double> operator()(double x) const {
        const auto n = static_cast<Eigen::Index>(xs_.size());
        Eigen::VectorXd k(n);
        for (Eigen::Index i = 0; i < n; ++i)
            k[i] = kernel(x, xs_[static_cast<std::size_t>(i)], lengthscale_);
        const double mean = y_mean_ + k.dot(alpha_);
        const Eigen::VectorXd v = llt_.matrixL().solve(k);
        const double var = std::max(0.0, signal_var_ - v.squaredNorm());
        return {mean, var};
    }

    double lengthscale() const { return lengthscale_; }
    double noise() const { return noise_; }

private:
    double kernel(double a, double b, double lengthscale) const {
        return signal_var_ * std::exp(-0.5 * sq((a - b) / lengthscale));
    }

    bool factorize(double lengthscale, double noise, const Eigen::VectorXd& yc,
                   Eigen::LLT<Eigen::MatrixXd>& llt, double& lml) const {
        const auto n = static_cast<Eigen::Index>(xs_.size());
        Eigen::MatrixXd k(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                k(i, j) = kernel(xs_[static_cast<std::size_t>(i)],
                                 xs_[static_cast<std::size_t>(j)], lengthscale);

        double jitter = 1e-8 * signal_var_;
        for (int attempt = 0; attempt < 5; ++attempt) {
            Eigen::MatrixXd kn = k;
            kn.diagonal().array() += noise + jitter;
            llt.compute(kn);
            if (llt.info() == Eigen::Success) {
                const Eigen::VectorXd alpha = llt.solve(yc);
                double logdet = 0.0;
                for (Eigen::Index i = 0; i < n; ++i)
                    logdet += std::log(llt.matrixL()(i, i));
                lml = -0.5 * yc.dot(alpha) - logdet -
                      0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);
                return true;
            }
            jitter *= 10.0;
            if (jitter > 1e-4 * signal_var_) break;
        }
        return false;
    }

    std::vector<double> xs_;
    double y_mean_ = 0.0;
    double signal_var_ = 1.0;
    double lengthscale_ = 1.0;
    double noise_ = 1e-6;
    Eigen::VectorXd alpha_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

inline GpPosterior gp_fit(const std::vector<double>& xs, const std::vector<double>& ys) {
    return GpPosterior(xs, ys);
}

/// Expected improvement for minimization.
inline double expected_improvement(double mean, double variance, double best_f, double xi) {
    const double improvement = best_f - mean - xi;
    if (variance <= 0.0) return std::max(improvement, 0.0);
    const double sigma = std::sqrt(variance);
    const double z = improvement / sigma;
    const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
    const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
    return improvement * cdf + sigma * pdf;
}

/// Sequential model-based minimization of a 1D objective.
inline BoTrace run_bo(const std::function<double(double)>& objective, const BoConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    BoTrace trace;
    std::vector<double> xs, ys;

    const auto evaluate = [&](double x) {
        const double loss = objective(x);
        xs.push_back(x);
        ys.push_back(loss);
        if (loss < trace.best_loss) {
            trace.best_loss = loss;
            trace.best_x = x;
        }
        trace.steps.push_back(BoStep{x, loss, trace.best_loss});
    };

    for (int i = 0; i < cfg.n_init; ++i) {
        evaluate(rng.uniform(cfg.lo, cfg.hi));
        if (trace.best_loss < cfg.tolerance) return trace;
    }

    while (static_cast<int>(trace.steps.size()) < cfg.max_iters) {
        double candidate;
        bool have_candidate = false;
        try {
            const GpPosterior gp = gp_fit(xs, ys);
            double best_ei = 0.0;
            for (int i = 0; i < cfg.grid_size; ++i) {
                const double x =
                    cfg.lo + (cfg.hi - cfg.lo) * static_cast<double>(i) / (cfg.grid_size - 1);
                const auto [mean, var] = gp(x);
                const double ei = expected_improvement(mean, var, trace.best_loss, cfg.xi);
                if (ei > best_ei) {
                    best_ei = ei;
                    candidate = x;
                    have_candidate = true;
                }
            }
        } catch (const std::runtime_error&) {
            have_candidate = false;  // degenerate fit; fall through to random probing
        }
        if (!have_candidate) candidate = rng.uniform(cfg.lo, cfg.hi);
        evaluate(candidate);
        if (trace.best_loss < cfg.tolerance) break;
    }
    return trace;
}

inline constexpr double kFailedRolloutLoss = 1e6;

/// Inverse-problem loss: roll the conditioned surrogate from the observed
/// trajectory's initial frames at the candidate material and compare terminal
/// states with index-matched MPED. Non-finite rollouts score a sentinel.
inline double objective(double candidate_raw, const Trajectory& observed,
                        const film::ConditionedModel& cm,
                        metrics::MpedVariant variant = metrics::MpedVariant::kMatched) {
    const int c = cm.gns.features.velocity_history;
    if (observed.n_frames < c + 2)
        throw std::invalid_argument("objective: observed trajectory too short");
    model::Window window;
    for (int f = 0; f <= c; ++f) {
        window.emplace_back(observed.positions.begin() + f * observed.n_particles * 2,
                            observed.positions.begin() + (f + 1) * observed.n_particles * 2);
    }
    const double kappa = film::normalize_kappa(candidate_raw, cm.film.kappa_family,
                                               cm.film.kappa_min, cm.film.kappa_max);
    try {
        const model::RolloutResult r =
            film::rollout(cm, window, observed.n_particles, observed.dt_s,
                          observed.domain_size_m, observed.n_frames - (c + 1), kappa);
        const std::vector<double> pred_final(r.positions.end() - observed.n_particles * 2,
                                             r.positions.end());
        return metrics::mped(pred_final, metrics::final_frame(observed), variant);
    } catch (const std::runtime_error&) {
        return kFailedRolloutLoss;
    }
}

}  // namespace gnsim::inverse
