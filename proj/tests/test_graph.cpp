#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "gnsim/graph.hpp"

using Catch::Approx;
using namespace gnsim;
using graph::Edge;

namespace {

// quadratic-time reference for the cell-grid implementation
std::vector<Edge> brute_force_edges(const std::vector<double>& xy, std::int64_t n, double r) {
    std::vector<Edge> out;
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double dx = xy[2 * i] - xy[2 * j];
            const double dy = xy[2 * i + 1] - xy[2 * j + 1];
            if (dx * dx + dy * dy <= r * r)
                out.push_back(Edge{static_cast<std::int32_t>(j), static_cast<std::int32_t>(i)});
        }
    }
    std::sort(out.begin(), out.end(), [](const Edge& a, const Edge& b) {
        return a.receiver != b.receiver ? a.receiver < b.receiver : a.sender < b.sender;
    });
    return out;
}

graph::FeatureConfig plain_config() {
    graph::FeatureConfig cfg;
    cfg.connectivity_radius_m = 0.03;
    cfg.velocity_history = 5;
    return cfg;
}

}  // namespace

TEST_CASE("build_radius_graph basics") {
    const double r = 0.03;
    SECTION("pair within the radius gives both directed edges") {
        const std::vector<double> xy{0.1, 0.1, 0.1 + 0.9 * r, 0.1};
        const auto edges = graph::build_radius_graph(xy, 2, r);
        REQUIRE(edges == std::vector<Edge>{{1, 0}, {0, 1}});
    }
    SECTION("pair outside the radius gives no edges") {
        const std::vector<double> xy{0.1, 0.1, 0.1 + 1.1 * r, 0.1};
        REQUIRE(graph::build_radius_graph(xy, 2, r).empty());
    }
    SECTION("no self edges even for coincident points") {
        const std::vector<double> xy{0.1, 0.1, 0.1, 0.1};
        const auto edges = graph::build_radius_graph(xy, 2, r);
        REQUIRE(edges == std::vector<Edge>{{1, 0}, {0, 1}});
    }
}

TEST_CASE("cell grid equals brute force on random instances") {
    Rng rng(2024);
    for (int rep = 0; rep < 10; ++rep) {
        const auto n = static_cast<std::int64_t>(20 + rng.uniform_int(181));
        std::vector<double> xy;
        for (std::int64_t i = 0; i < n; ++i) {
            xy.push_back(rng.uniform(0.0, 0.4));
            xy.push_back(rng.uniform(0.0, 0.2));
        }
        const double r = rng.uniform(0.01, 0.08);
        REQUIRE(graph::build_radius_graph(xy, n, r) == brute_force_edges(xy, n, r));
    }
}

TEST_CASE("node features") {
    auto cfg = plain_config();
    const std::array<double, 2> domain{1.0, 1.0};
    const int c = cfg.velocity_history;

    SECTION("interior particle has all wall features clipped to 1") {
        std::vector<std::vector<double>> window(c + 1, std::vector<double>{0.5, 0.5});
        const auto f = graph::node_features(window, 1, 0.005, domain, cfg);
        REQUIRE(f.size() == static_cast<std::size_t>(2 * c + 4));
        for (int w = 0; w < 4; ++w) REQUIRE(f[static_cast<std::size_t>(2 * c + w)] == 1.0f);
    }
    SECTION("stationary particle maps to the normalized zero velocity") {
        cfg.stats.vel_mean = {0.2, -0.1};
        cfg.stats.vel_std = {0.5, 0.25};
        std::vector<std::vector<double>> window(c + 1, std::vector<double>{0.5, 0.5});
        const auto f = graph::node_features(window, 1, 0.005, domain, cfg);
        for (int k = 0; k < c; ++k) {
            REQUIRE(f[static_cast<std::size_t>(2 * k)] == Approx((0.0 - 0.2) / 0.5));
            REQUIRE(f[static_cast<std::size_t>(2 * k + 1)] == Approx((0.0 + 0.1) / 0.25));
        }
    }
    SECTION("uniform dyadic translation leaves features bit-identical") {
        std::vector<std::vector<double>> window;
        for (int k = 0; k <= c; ++k) {
            // dyadic positions: exact under the +0.25 shift
            window.push_back({0.25 + k / 256.0, 0.375, 0.265625 + k / 256.0, 0.390625});
        }
        auto shifted = window;
        for (auto& frame : shifted)
            for (std::size_t j = 0; j < frame.size(); ++j)
                frame[j] += (j % 2 == 0) ? 0.25 : 0.125;
        const auto fa = graph::node_features(window, 2, 0.005, domain, cfg);
        const auto fb = graph::node_features(shifted, 2, 0.005, domain, cfg);
        REQUIRE(fa == fb);
        const auto ea = graph::build_radius_graph(window.back(), 2, cfg.connectivity_radius_m);
        const auto eb = graph::build_radius_graph(shifted.back(), 2, cfg.connectivity_radius_m);
        REQUIRE(ea == eb);
        REQUIRE(graph::edge_features(window.back(), ea, cfg.connectivity_radius_m) ==
                graph::edge_features(shifted.back(), eb, cfg.connectivity_radius_m));
    }
    SECTION("rejects wrong window length") {
        std::vector<std::vector<double>> window(c, std::vector<double>{0.5, 0.5});
        REQUIRE_THROWS_AS(graph::node_features(window, 1, 0.005, domain, cfg),
                          std::invalid_argument);
    }
}

TEST_CASE("edge features") {
    const double r = 0.03;
    SECTION("coincident particles give zeros") {
        const std::vector<double> xy{0.2, 0.2, 0.2, 0.2};
        const auto f = graph::edge_features(xy, {{1, 0}}, r);
        REQUIRE(f == std::vector<float>{0.0f, 0.0f, 0.0f});
    }
    SECTION("displacement of exactly r normalizes to unit length") {
        const std::vector<double> xy{0.2, 0.2, 0.2 + r, 0.2};
        const auto f = graph::edge_features(xy, {{1, 0}}, r);
        REQUIRE(f[0] == Approx(1.0));
        REQUIRE(f[1] == Approx(0.0).margin(1e-12));
        REQUIRE(f[2] == Approx(1.0));
    }
    SECTION("random pair matches hand arithmetic") {
        Rng rng(3);
        const std::vector<double> xy{rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0),
                                     rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)};
        const auto f = graph::edge_features(xy, {{0, 1}}, r);
        const double dx = (xy[0] - xy[2]) / r;
        const double dy = (xy[1] - xy[3]) / r;
        REQUIRE(f[0] == Approx(dx).epsilon(1e-6));
        REQUIRE(f[1] == Approx(dy).epsilon(1e-6));
        REQUIRE(f[2] == Approx(std::sqrt(dx * dx + dy * dy)).epsilon(1e-6));
    }
}

TEST_CASE("permutation consistency of the built sample") {
    auto cfg = plain_config();
    cfg.stats.vel_mean = {0.01, 0.02};
    cfg.stats.vel_std = {0.4, 0.3};
    const std::array<double, 2> domain{0.5, 0.5};
    const int c = cfg.velocity_history;
    const std::int64_t n = 6;

    Rng rng(11);
    std::vector<std::vector<double>> window;
    for (int k = 0; k <= c; ++k) {
        std::vector<double> frame;
        for (std::int64_t i = 0; i < n; ++i) {
            frame.push_back(0.2 + 0.02 * static_cast<double>(i) + 1e-4 * k);
            frame.push_back(0.2 + 0.015 * static_cast<double>((i * 3) % 5));
        }
        window.push_back(frame);
    }

    std::vector<std::int64_t> perm{3, 0, 5, 1, 4, 2};  // new index of each old particle
    auto permuted = window;
    for (int k = 0; k <= c; ++k) {
        for (std::int64_t i = 0; i < n; ++i) {
            permuted[static_cast<std::size_t>(k)][2 * perm[i]] = window[k][2 * i];
            permuted[static_cast<std::size_t>(k)][2 * perm[i] + 1] = window[k][2 * i + 1];
        }
    }

    const auto a = graph::build_sample(window, n, 0.005, domain, cfg);
    const auto b = graph::build_sample(permuted, n, 0.005, domain, cfg);

    const int fv = cfg.node_feature_dim();
    for (std::int64_t i = 0; i < n; ++i) {
        for (int j = 0; j < fv; ++j) {
            REQUIRE(b.node_features[static_cast<std::size_t>(perm[i] * fv + j)] ==
                    a.node_features[static_cast<std::size_t>(i * fv + j)]);
        }
    }
    // the permuted edge set must be the relabeled original edge set
    std::vector<Edge> mapped;
    for (const auto& e : a.edges)
        mapped.push_back(Edge{static_cast<std::int32_t>(perm[e.sender]),
                              static_cast<std::int32_t>(perm[e.receiver])});
    std::sort(mapped.begin(), mapped.end(), [](const Edge& x, const Edge& y) {
        return x.receiver != y.receiver ? x.receiver < y.receiver : x.sender < y.sender;
    });
    REQUIRE(mapped == b.edges);
}

TEST_CASE("compute_stats normalizes targets in build_sample") {
    Trajectory t;
    t.n_frames = 8;
    t.n_particles = 2;
    t.dt_s = 0.01;
    t.domain_size_m = {1.0, 1.0};
    const double g = 2.5;
    for (std::int64_t f = 0; f < t.n_frames; ++f) {
        const double time = static_cast<double>(f) * t.dt_s;
        for (std::int64_t i = 0; i < 2; ++i) {
            t.positions.push_back(0.1 + 0.01 * static_cast<double>(i) + 0.03 * time);
            t.positions.push_back(0.5 - 0.5 * g * time * time);
        }
    }
    const auto stats = graph::compute_stats({&t});
    REQUIRE(stats.acc_mean[1] == Approx(-g).epsilon(1e-9));
    REQUIRE(stats.acc_mean[0] == Approx(0.0).margin(1e-9));
    REQUIRE(stats.vel_mean[0] == Approx(0.03).epsilon(1e-9));

    auto cfg = plain_config();
    cfg.stats = stats;
    const int c = cfg.velocity_history;
    std::vector<std::vector<double>> window;
    for (std::int64_t f = 0; f <= c; ++f)
        window.emplace_back(t.positions.begin() + f * 4, t.positions.begin() + (f + 1) * 4);
    const std::vector<double> next(t.positions.begin() + (c + 1) * 4,
                                   t.positions.begin() + (c + 2) * 4);
    const auto s = graph::build_sample(window, 2, t.dt_s, t.domain_size_m, cfg, &next);
    REQUIRE(s.target_accel.size() == 4);
    // constant-acceleration motion: targets equal the normalized mean exactly
    for (std::int64_t i = 0; i < 2; ++i) {
        REQUIRE(s.target_accel[static_cast<std::size_t>(2 * i)] == Approx(0.0).margin(1e-4));
        REQUIRE(s.target_accel[static_cast<std::size_t>(2 * i + 1)] == Approx(0.0).margin(1e-4));
    }
}
