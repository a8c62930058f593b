#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "gnsim/common.hpp"
#include "gnsim/types.hpp"

namespace gnsim::metrics {

/// Mean squared position error over all frames and particles, indices
/// identity-matched.
inline double rollout_mse(const Trajectory& pred, const Trajectory& truth) {
    if (pred.n_frames != truth.n_frames || pred.n_particles != truth.n_particles)
        throw std::invalid_argument("rollout_mse: shape mismatch");
    if (std::abs(pred.dt_s - truth.dt_s) > 1e-9 * truth.dt_s)
        throw std::invalid_argument("rollout_mse: dt mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.positions.size(); i += 2) {
        acc += sq(pred.positions[i] - truth.positions[i]) +
               sq(pred.positions[i + 1] - truth.positions[i + 1]);
    }
    return acc / static_cast<double>(pred.n_frames * pred.n_particles);
}

struct EnergySeries {
    std::vector<double> kinetic;    // per frame, J
    std::vector<double> potential;  // per frame, J
    double e0 = 0.0;                // initial potential energy
};

/// Kinetic energy from finite-difference velocities (frame 0 is taken at
/// rest) and potential energy measured from the domain floor. E0 = E_p(0).
inline EnergySeries energy_series(const Trajectory& t, double mass_per_particle,
                                  double gravity_m_s2 = 9.81) {
    if (t.n_frames < 2)
        throw std::invalid_argument("energy_series: need at least 2 frames");
    EnergySeries s;
    s.kinetic.assign(static_cast<std::size_t>(t.n_frames), 0.0);
    s.potential.assign(static_cast<std::size_t>(t.n_frames), 0.0);
    const double inv_dt = 1.0 / t.dt_s;
    for (std::int64_t f = 0; f < t.n_frames; ++f) {
        double ek = 0.0, ep = 0.0;
        for (std::int64_t i = 0; i < t.n_particles; ++i) {
            ep += t.y(f, i);
            if (f > 0) {
                ek += sq((t.x(f, i) - t.x(f - 1, i)) * inv_dt) +
                      sq((t.y(f, i) - t.y(f - 1, i)) * inv_dt);
            }
        }
        s.kinetic[static_cast<std::size_t>(f)] = 0.5 * mass_per_particle * ek;
        s.potential[static_cast<std::size_t>(f)] = mass_per_particle * gravity_m_s2 * ep;
    }
    s.e0 = s.potential[0];
    return s;
}

/// Per-frame |E_pred - E_true| / E0 for one energy channel.
inline std::vector<double> normalized_energy_delta(const std::vector<double>& pred,
                                                   const std::vector<double>& truth,
                                                   double e0) {
    if (pred.size() != truth.size())
        throw std::invalid_argument("normalized_energy_delta: length mismatch");
    if (!(e0 > 0.0))
        throw std::invalid_argument("normalized_energy_delta: E0 must be > 0");
    std::vector<double> out(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) out[i] = std::abs(pred[i] - truth[i]) / e0;
    return out;
}

enum class MpedVariant { kLiteral, kMatched };

/// Maximum pairwise Euclidean distance between two particle sets at one
/// frame. The literal variant maximizes over all ordered pairs and is nonzero
/// even for identical states; the matched variant pairs identical indices.
inline double mped(const std::vector<double>& xs, const std::vector<double>& ys,
                   MpedVariant variant) {
    if (xs.empty() || ys.empty()) throw std::invalid_argument("mped: empty input");
    if (xs.size() % 2 != 0 || ys.size() % 2 != 0)
        throw std::invalid_argument("mped: inputs must be xy-interleaved");
    const std::size_t nx = xs.size() / 2, ny = ys.size() / 2;
    double worst = 0.0;
    if (variant == MpedVariant::kMatched) {
        if (nx != ny) throw std::invalid_argument("mped: matched variant needs equal sizes");
        for (std::size_t i = 0; i < nx; ++i) {
            worst = std::max(worst, sq(xs[2 * i] - ys[2 * i]) + sq(xs[2 * i + 1] - ys[2 * i + 1]));
        }
    } else {
        for (std::size_t i = 0; i < nx; ++i) {
            for (std::size_t j = 0; j < ny; ++j) {
                worst = std::max(worst,
                                 sq(xs[2 * i] - ys[2 * j]) + sq(xs[2 * i + 1] - ys[2 * j + 1]));
            }
        }
    }
    return std::sqrt(worst);
}

inline std::vector<double> final_frame(const Trajectory& t) {
    return {t.positions.end() - t.n_particles * 2, t.positions.end()};
}

struct RunoutHeightSeries {
    std::vector<double> runout;  // L(t)/L(0)
    std::vector<double> height;  // H(t)/H(0)
};

/// Normalized runout (99th-percentile x minus the column's left edge) and
/// height (99th-percentile y), both relative to frame 0. The percentile
/// guards against single ejected particles.
inline RunoutHeightSeries runout_height(const Trajectory& t) {
    RunoutHeightSeries out;
    const double left = t.initial_column_m[0];
    std::vector<double> xs(static_cast<std::size_t>(t.n_particles));
    std::vector<double> ys(static_cast<std::size_t>(t.n_particles));
    double l0 = 0.0, h0 = 0.0;
    for (std::int64_t f = 0; f < t.n_frames; ++f) {
        for (std::int64_t i = 0; i < t.n_particles; ++i) {
            xs[static_cast<std::size_t>(i)] = t.x(f, i);
            ys[static_cast<std::size_t>(i)] = t.y(f, i);
        }
        const double l = percentile(xs, 0.99) - left;
        const double h = percentile(ys, 0.99);
        if (f == 0) {
            l0 = l;
            h0 = h;
            if (!(l0 > 0.0) || !(h0 > 0.0))
                throw std::invalid_argument("runout_height: degenerate initial extent");
        }
        out.runout.push_back(l / l0);
        out.height.push_back(h / h0);
    }
    return out;
}

}  // namespace gnsim::metrics
