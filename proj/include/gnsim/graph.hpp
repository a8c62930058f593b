#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "gnsim/common.hpp"
#include "gnsim/types.hpp"

namespace gnsim::graph {

struct Edge {
    std::int32_t sender = 0;
    std::int32_t receiver = 0;
    friend bool operator==(const Edge&, const Edge&) = default;
};

/// Per-component normalization statistics gathered over the pretrain set.
struct FeatureStats {
    std::array<double, 2> vel_mean{0.0, 0.0};
    std::array<double, 2> vel_std{1.0, 1.0};
    std::array<double, 2> acc_mean{0.0, 0.0};
    std::array<double, 2> acc_std{1.0, 1.0};

    void validate() const {
        for (int d = 0; d < 2; ++d) {
            if (!(vel_std[d] > 0.0) || !(acc_std[d] > 0.0))
                throw std::invalid_argument("FeatureStats: std components must be > 0");
        }
    }
};

struct FeatureConfig {
    double connectivity_radius_m = 0.03;
    int velocity_history = 5;  // C
    FeatureStats stats;

    int node_feature_dim() const { return 2 * velocity_history + 4; }
    static constexpr int edge_feature_dim() { return 3; }

    void validate() const {
        if (connectivity_radius_m <= 0.0)
            throw std::invalid_argument("FeatureConfig.connectivity_radius_m must be > 0");
        if (velocity_history < 1)
            throw std::invalid_argument("FeatureConfig.velocity_history must be >= 1");
        stats.validate();
    }
};

/// One supervised example: the dynamic radius graph of a time step plus
/// normalized feature and target tensors (row-major).
struct GraphSample {
    std::int32_t n_nodes = 0;
    std::vector<Edge> edges;                // sorted receiver-major, sender-minor
    std::vector<float> node_features;       // n_nodes x F_v
    std::vector<float> edge_features;       // edges x 3
    std::vector<float> target_accel;        // n_nodes x 2, normalized; empty for inference
    double kappa = 0.0;
};

/// Directed edges for every ordered pair within the connectivity radius,
/// found with a uniform cell grid. Output is sorted receiver-major.
inline std::vector<Edge> build_radius_graph(const std::vector<double>& positions_xy,
                                            std::int64_t n, double radius) {
    if (radius <= 0.0) throw std::invalid_argument("build_radius_graph: radius must be > 0");
    std::vector<Edge> edges;
    if (n <= 1) return edges;

    double min_x = positions_xy[0], min_y = positions_xy[1];
    double max_x = min_x, max_y = min_y;
    for (std::int64_t i = 0; i < n; ++i) {
        min_x = std::min(min_x, positions_xy[2 * i]);
        max_x = std::max(max_x, positions_xy[2 * i]);
        min_y = std::min(min_y, positions_xy[2 * i + 1]);
        max_y = std::max(max_y, positions_xy[2 * i + 1]);
    }
    const double cell = radius;
    const auto ncx = static_cast<std::int64_t>((max_x - min_x) / cell) + 1;
    const auto ncy = static_cast<std::int64_t>((max_y - min_y) / cell) + 1;

    // bucket sort particles into cells
    std::vector<std::vector<std::int32_t>> buckets(static_cast<std::size_t>(ncx * ncy));
    auto cell_of = [&](std::int64_t i) {
        const auto cx = std::min<std::int64_t>(ncx - 1,
            static_cast<std::int64_t>((positions_xy[2 * i] - min_x) / cell));
        const auto cy = std::min<std::int64_t>(ncy - 1,
            static_cast<std::int64_t>((positions_xy[2 * i + 1] - min_y) / cell));
        return std::pair{cx, cy};
    };
    for (std::int64_t i = 0; i < n; ++i) {
        const auto [cx, cy] = cell_of(i);
        buckets[static_cast<std::size_t>(cy * ncx + cx)].push_back(static_cast<std::int32_t>(i));
    }

    const double r2 = radius * radius;
    std::vector<std::int32_t> senders;
    for (std::int64_t i = 0; i < n; ++i) {
        senders.clear();
        const auto [cx, cy] = cell_of(i);
        for (std::int64_t by = std::max<std::int64_t>(0, cy - 1);
             by <= std::min(ncy - 1, cy + 1); ++by) {
            for (std::int64_t bx = std::max<std::int64_t>(0, cx - 1);
                 bx <= std::min(ncx - 1, cx + 1); ++bx) {
                for (std::int32_t j : buckets[static_cast<std::size_t>(by * ncx + bx)]) {
                    if (j == i) continue;
                    const double dx = positions_xy[2 * i] - positions_xy[2 * j];
                    const double dy = positions_xy[2 * i + 1] - positions_xy[2 * j + 1];
                    if (dx * dx + dy * dy <= r2) senders.push_back(j);
                }
            }
        }
        std::sort(senders.begin(), senders.end());
        for (std::int32_t j : senders)
            edges.push_back(Edge{j, static_cast<std::int32_t>(i)});
    }
    return edges;
}

/// Per-node features: C normalized finite-difference velocities followed by
/// the four wall distances, clipped to the connectivity radius and scaled by
/// it. `window` holds C+1 frames of positions, oldest first.
inline std::vector<float> node_features(const std::vector<std::vector<double>>& window,
                                        std::int64_t n, double dt,
                                        const std::array<double, 2>& domain,
                                        const FeatureConfig& cfg) {
    const int c = cfg.velocity_history;
    if (static_cast<int>(window.size()) != c + 1)
        throw std::invalid_argument("node_features: window must hold C+1 frames");
    for (const auto& frame : window)
        if (frame.size() != static_cast<std::size_t>(2 * n))
            throw std::invalid_argument("node_features: frame size mismatch");

    const int fv = cfg.node_feature_dim();
    const double r = cfg.connectivity_radius_m;
    std::vector<float> out(static_cast<std::size_t>(n) * fv);
    for (std::int64_t i = 0; i < n; ++i) {
        float* row = out.data() + i * fv;
        for (int k = 0; k < c; ++k) {
            const double vx = (window[k + 1][2 * i] - window[k][2 * i]) / dt;
            const double vy = (window[k + 1][2 * i + 1] - window[k][2 * i + 1]) / dt;
            row[2 * k] = static_cast<float>((vx - cfg.stats.vel_mean[0]) / cfg.stats.vel_std[0]);
            row[2 * k + 1] = static_cast<float>((vy - cfg.stats.vel_mean[1]) / cfg.stats.vel_std[1]);
        }
        const double x = window[c][2 * i];
        const double y = window[c][2 * i + 1];
        const double walls[4] = {x, domain[0] - x, y, domain[1] - y};
        for (int w = 0; w < 4; ++w)
            row[2 * c + w] = static_cast<float>(std::min(walls[w], r) / r);
    }
    return out;
}

/// Per-edge features: relative displacement scaled by the radius plus its norm.
inline std::vector<float> edge_features(const std::vector<double>& positions_xy,
                                        const std::vector<Edge>& edges, double radius) {
    std::vector<float> out(edges.size() * 3);
    for (std::size_t e = 0; e < edges.size(); ++e) {
        const auto [s, rcv] = edges[e];
        const double dx = (positions_xy[2 * s] - positions_xy[2 * rcv]) / radius;
        const double dy = (positions_xy[2 * s + 1] - positions_xy[2 * rcv + 1]) / radius;
        out[3 * e] = static_cast<float>(dx);
        out[3 * e + 1] = static_cast<float>(dy);
        out[3 * e + 2] = static_cast<float>(std::sqrt(dx * dx + dy * dy));
    }
    return out;
}

/// Assembles the graph and features for the last frame of a C+1 window.
/// Target accelerations (if `next_frame` is given) are normalized with the
/// configured stats.
inline GraphSample build_sample(const std::vector<std::vector<double>>& window,
                                std::int64_t n, double dt,
                                const std::array<double, 2>& domain,
                                const FeatureConfig& cfg,
                                const std::vector<double>* next_frame = nullptr,
                                double kappa = 0.0) {
    cfg.validate();
    GraphSample s;
    s.n_nodes = static_cast<std::int32_t>(n);
    s.kappa = kappa;
    const auto& current = window.back();
    s.edges = build_radius_graph(current, n, cfg.connectivity_radius_m);
    s.node_features = node_features(window, n, dt, domain, cfg);
    s.edge_features = edge_features(current, s.edges, cfg.connectivity_radius_m);
    if (next_frame) {
        const auto& prev = window[window.size() - 2];
        s.target_accel.resize(static_cast<std::size_t>(n) * 2);
        for (std::int64_t i = 0; i < n; ++i) {
            for (int d = 0; d < 2; ++d) {
                const double v_now = (current[2 * i + d] - prev[2 * i + d]) / dt;
                const double v_next = ((*next_frame)[2 * i + d] - current[2 * i + d]) / dt;
                const double a = (v_next - v_now) / dt;
                s.target_accel[2 * i + d] = static_cast<float>(
                    (a - cfg.stats.acc_mean[d]) / cfg.stats.acc_std[d]);
            }
        }
    }
    return s;
}

/// Velocity/acceleration statistics over a set of trajectories; used once on
/// the pretrain split and then frozen into the checkpoint.
inline FeatureStats compute_stats(const std::vector<const Trajectory*>& trajectories) {
    double n_v = 0.0, n_a = 0.0;
    std::array<double, 2> sv{0, 0}, sv2{0, 0}, sa{0, 0}, sa2{0, 0};
    for (const Trajectory* t : trajectories) {
        const double inv_dt = 1.0 / t->dt_s;
        for (std::int64_t f = 1; f < t->n_frames; ++f) {
            for (std::int64_t i = 0; i < t->n_particles; ++i) {
                const double vx = (t->x(f, i) - t->x(f - 1, i)) * inv_dt;
                const double vy = (t->y(f, i) - t->y(f - 1, i)) * inv_dt;
                sv[0] += vx; sv2[0] += vx * vx;
                sv[1] += vy; sv2[1] += vy * vy;
                n_v += 1.0;
                if (f + 1 < t->n_frames) {
                    const double ax = ((t->x(f + 1, i) - t->x(f, i)) * inv_dt - vx) * inv_dt;
                    const double ay = ((t->y(f + 1, i) - t->y(f, i)) * inv_dt - vy) * inv_dt;
                    sa[0] += ax; sa2[0] += ax * ax;
                    sa[1] += ay; sa2[1] += ay * ay;
                    n_a += 1.0;
                }
            }
        }
    }
    if (n_v < 2.0 || n_a < 2.0)
        throw std::invalid_argument("compute_stats: not enough frames");
    FeatureStats st;
    constexpr double kFloor = 1e-8;
    for (int d = 0; d < 2; ++d) {
        st.vel_mean[d] = sv[d] / n_v;
        st.vel_std[d] = std::max(kFloor, std::sqrt(std::max(0.0, sv2[d] / n_v - sq(st.vel_mean[d]))));
        st.acc_mean[d] = sa[d] / n_a;
        st.acc_std[d] = std::max(kFloor, std::sqrt(std::max(0.0, sa2[d] / n_a - sq(st.acc_mean[d]))));
    }
    return st;
}

}  // namespace gnsim::graph
