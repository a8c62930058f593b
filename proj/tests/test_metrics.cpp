#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gnsim/common.hpp"
#include "gnsim/metrics.hpp"

using Catch::Approx;
using namespace gnsim;
using metrics::MpedVariant;

namespace {

Trajectory flat_trajectory(std::int64_t frames, std::int64_t particles) {
    Trajectory t;
    t.n_frames = frames;
    t.n_particles = particles;
    t.dt_s = 0.01;
    t.domain_size_m = {1.0, 1.0};
    t.initial_column_m = {0.2, 0.0, 0.2, 0.2};
    t.positions.assign(static_cast<std::size_t>(frames * particles * 2), 0.0);
    return t;
}

}  // namespace

TEST_CASE("rollout_mse") {
    SECTION("identical trajectories score zero") {
        auto t = flat_trajectory(4, 3);
        Rng rng(1);
        for (auto& p : t.positions) p = rng.uniform(0.0, 1.0);
        REQUIRE(metrics::rollout_mse(t, t) == 0.0);
    }
    SECTION("uniform offset of magnitude d scores d^2") {
        auto truth = flat_trajectory(5, 4);
        Rng rng(2);
        for (auto& p : truth.positions) p = rng.uniform(0.2, 0.8);
        auto pred = truth;
        const double dx = 0.003, dy = 0.004;
        for (std::size_t i = 0; i < pred.positions.size(); i += 2) {
            pred.positions[i] += dx;
            pred.positions[i + 1] += dy;
        }
        REQUIRE(metrics::rollout_mse(pred, truth) == Approx(dx * dx + dy * dy).epsilon(1e-9));
    }
    SECTION("random 2x2 fixture by hand") {
        auto truth = flat_trajectory(3, 2);
        auto pred = flat_trajectory(3, 2);
        truth.positions = {0.1, 0.2, 0.3, 0.4, 0.1, 0.2, 0.3, 0.4, 0.0, 0.0, 1.0, 1.0};
        pred.positions = {0.2, 0.2, 0.3, 0.5, 0.1, 0.2, 0.3, 0.4, 0.0, 0.1, 1.0, 0.9};
        // squared errors per (frame, particle): 0.01, 0.01, 0, 0, 0.01, 0.01
        REQUIRE(metrics::rollout_mse(pred, truth) == Approx(0.04 / 6.0).epsilon(1e-9));
    }
    SECTION("shape mismatch rejected") {
        const auto a = flat_trajectory(3, 2);
        const auto b = flat_trajectory(4, 2);
        REQUIRE_THROWS_AS(metrics::rollout_mse(a, b), std::invalid_argument);
    }
}

TEST_CASE("energy_series") {
    SECTION("particles at rest on the floor carry no energy") {
        const auto t = flat_trajectory(4, 3);
        const auto e = metrics::energy_series(t, 1.0);
        for (double v : e.kinetic) REQUIRE(v == 0.0);
        for (double v : e.potential) REQUIRE(v == 0.0);
        REQUIRE(e.e0 == 0.0);
    }
    SECTION("single particle at 1 m with unit mass") {
        auto t = flat_trajectory(3, 1);
        for (std::int64_t f = 0; f < 3; ++f) t.y(f, 0) = 1.0;
        const auto e = metrics::energy_series(t, 1.0, 9.81);
        REQUIRE(e.potential[0] == Approx(9.81));
        REQUIRE(e.e0 == Approx(9.81));
        REQUIRE(e.kinetic[1] == 0.0);
    }
    SECTION("normalized delta on a fabricated pair") {
        auto truth = flat_trajectory(3, 1);
        truth.y(0, 0) = 1.0;
        truth.y(1, 0) = 0.8;
        truth.y(2, 0) = 0.5;
        auto pred = truth;
        pred.y(1, 0) = 0.7;
        pred.y(2, 0) = 0.55;
        const auto et = metrics::energy_series(truth, 2.0, 10.0);
        const auto ep = metrics::energy_series(pred, 2.0, 10.0);
        REQUIRE(et.e0 == Approx(20.0));
        const auto delta = metrics::normalized_energy_delta(ep.potential, et.potential, et.e0);
        REQUIRE(delta[0] == Approx(0.0).margin(1e-12));
        REQUIRE(delta[1] == Approx(std::abs(0.7 - 0.8) * 20.0 / 20.0).epsilon(1e-9));
        REQUIRE(delta[2] == Approx(std::abs(0.55 - 0.5) * 20.0 / 20.0).epsilon(1e-9));
        REQUIRE_THROWS_AS(metrics::normalized_energy_delta(ep.potential, et.potential, 0.0),
                          std::invalid_argument);
    }
}

TEST_CASE("mped") {
    SECTION("matched on identical states is zero") {
        const std::vector<double> x{0.0, 0.0, 1.0, 0.0};
        REQUIRE(metrics::mped(x, x, MpedVariant::kMatched) == 0.0);
    }
    SECTION("literal on identical states returns the set diameter") {
        const std::vector<double> x{0.0, 0.0, 1.0, 0.0};
        REQUIRE(metrics::mped(x, x, MpedVariant::kLiteral) == Approx(1.0));
    }
    SECTION("single pair gives the plain distance in both variants") {
        const std::vector<double> x{0.0, 0.0};
        const std::vector<double> y{3.0, 4.0};
        REQUIRE(metrics::mped(x, y, MpedVariant::kLiteral) == Approx(5.0));
        REQUIRE(metrics::mped(x, y, MpedVariant::kMatched) == Approx(5.0));
    }
    SECTION("literal dominates matched and relabeling invariance holds") {
        Rng rng(5);
        for (int rep = 0; rep < 20; ++rep) {
            const std::size_t n = 3 + rng.uniform_int(6);
            std::vector<double> x, y;
            for (std::size_t i = 0; i < 2 * n; ++i) {
                x.push_back(rng.uniform(-1.0, 1.0));
                y.push_back(rng.uniform(-1.0, 1.0));
            }
            const double lit = metrics::mped(x, y, MpedVariant::kLiteral);
            REQUIRE(lit >= metrics::mped(x, y, MpedVariant::kMatched));

            // literal is invariant under independent relabeling of either set
            std::vector<std::size_t> perm(n);
            for (std::size_t i = 0; i < n; ++i) perm[i] = i;
            rng.shuffle(perm);
            std::vector<double> xp(2 * n);
            for (std::size_t i = 0; i < n; ++i) {
                xp[2 * perm[i]] = x[2 * i];
                xp[2 * perm[i] + 1] = x[2 * i + 1];
            }
            REQUIRE(metrics::mped(xp, y, MpedVariant::kLiteral) == Approx(lit).epsilon(1e-12));
        }
    }
    SECTION("errors") {
        REQUIRE_THROWS_AS(metrics::mped({}, {0.0, 0.0}, MpedVariant::kLiteral),
                          std::invalid_argument);
        REQUIRE_THROWS_AS(
            metrics::mped({0.0, 0.0}, {0.0, 0.0, 1.0, 1.0}, MpedVariant::kMatched),
            std::invalid_argument);
    }
}

TEST_CASE("runout_height") {
    SECTION("frame zero normalizes to (1, 1) and static stays constant") {
        auto t = flat_trajectory(3, 3);
        for (std::int64_t f = 0; f < 3; ++f) {
            for (std::int64_t i = 0; i < 3; ++i) {
                t.x(f, i) = 0.2 + 0.1 * static_cast<double>(i);
                t.y(f, i) = 0.05 * static_cast<double>(i + 1);
            }
        }
        const auto r = metrics::runout_height(t);
        REQUIRE(r.runout[0] == 1.0);
        REQUIRE(r.height[0] == 1.0);
        REQUIRE(r.runout[2] == Approx(1.0));
        REQUIRE(r.height[2] == Approx(1.0));
    }
    SECTION("hand fixture with one moved particle") {
        auto t = flat_trajectory(2, 3);
        for (std::int64_t i = 0; i < 3; ++i) {
            t.x(0, i) = 0.2 + 0.1 * static_cast<double>(i);
            t.y(0, i) = 0.05 * static_cast<double>(i + 1);
            t.x(1, i) = t.x(0, i);
            t.y(1, i) = t.y(0, i);
        }
        t.x(1, 2) = 0.5;  // farthest particle advances: L 0.2 -> 0.3
        const auto r = metrics::runout_height(t);
        REQUIRE(r.runout[1] == Approx(1.5));
        REQUIRE(r.height[1] == Approx(1.0));
    }
}
