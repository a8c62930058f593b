#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gnsim/analysis.hpp"

using Catch::Approx;
using namespace gnsim;

namespace {

model::GnsModel small_model(std::uint64_t seed = 1) {
    model::GnsConfig cfg;
    cfg.latent_dim = 8;
    cfg.n_mp_blocks = 2;
    cfg.mlp_hidden = 8;
    graph::FeatureConfig fc;
    fc.velocity_history = 2;
    return model::make_gns(cfg, fc, seed);
}

film::FilmConfig small_film() {
    film::FilmConfig fc;
    fc.target_blocks = 1;
    fc.cond_hidden = 4;
    fc.film_hidden = 8;
    fc.kappa_min = 0.0;
    fc.kappa_max = 1.0;
    return fc;
}

Trajectory probe_trajectory() {
    Trajectory t;
    t.n_frames = 12;
    t.n_particles = 5;
    t.dt_s = 0.01;
    t.domain_size_m = {0.6, 0.3};
    t.initial_column_m = {0.2, 0.0, 0.1, 0.1};
    Rng rng(4);
    std::vector<double> base;
    for (std::int64_t i = 0; i < 5; ++i) {
        base.push_back(rng.uniform(0.2, 0.28));
        base.push_back(rng.uniform(0.05, 0.12));
    }
    for (std::int64_t f = 0; f < t.n_frames; ++f) {
        for (std::size_t j = 0; j < base.size(); ++j)
            t.positions.push_back(base[j] + 1e-3 * static_cast<double>(f) * ((j % 2) ? -0.3 : 1.0));
    }
    return t;
}

}  // namespace

TEST_CASE("pca") {
    SECTION("data on a line explains everything with one component") {
        nn::Mat<double> data(5, 2);
        for (int i = 0; i < 5; ++i) {
            data.at(i, 0) = static_cast<double>(i);
            data.at(i, 1) = 2.0 * static_cast<double>(i);
        }
        const auto r = analysis::pca(data, 2);
        REQUIRE(r.explained_ratio.size() == 1);  // rank-deficient dim dropped
        REQUIRE(r.explained_ratio[0] == 1.0);
        REQUIRE(r.components.rows == 1);
        const double norm = std::hypot(r.components.at(0, 0), r.components.at(0, 1));
        REQUIRE(norm == Approx(1.0).epsilon(1e-12));
        REQUIRE(r.components.at(0, 1) == Approx(2.0 * r.components.at(0, 0)).epsilon(1e-9));
    }
    SECTION("planar fixture against the hand eigendecomposition") {
        nn::Mat<double> data(4, 2);
        data.at(0, 0) = 1.0;
        data.at(1, 0) = -1.0;
        data.at(2, 1) = 0.5;
        data.at(3, 1) = -0.5;
        const auto r = analysis::pca(data, 2);
        // covariance (n-1 normalized) is diag(2/3, 0.5/3)
        REQUIRE(r.explained_ratio[0] == Approx(2.0 / 2.5).epsilon(1e-12));
        REQUIRE(r.explained_ratio[1] == Approx(0.5 / 2.5).epsilon(1e-12));
        REQUIRE(r.components.at(0, 0) == Approx(1.0).epsilon(1e-9));  // sign convention
        REQUIRE(r.components.at(0, 1) == Approx(0.0).margin(1e-9));
        REQUIRE(r.components.at(1, 1) == Approx(1.0).epsilon(1e-9));
        REQUIRE(r.projections.at(0, 0) == Approx(1.0).epsilon(1e-9));
    }
    SECTION("projections are invariant to a constant shift of all rows") {
        Rng rng(8);
        nn::Mat<double> data(7, 3);
        for (auto& v : data.v) v = rng.uniform(-1.0, 1.0);
        auto shifted = data;
        for (std::int64_t i = 0; i < 7; ++i) {
            shifted.at(i, 0) += 5.0;
            shifted.at(i, 1) -= 2.0;
            shifted.at(i, 2) += 0.25;
        }
        const auto a = analysis::pca(data, 2);
        const auto b = analysis::pca(shifted, 2);
        for (std::size_t i = 0; i < a.projections.v.size(); ++i)
            REQUIRE(a.projections.v[i] == Approx(b.projections.v[i]).margin(1e-9));
    }
    SECTION("orthonormality and reconstruction on full-rank data") {
        Rng rng(9);
        nn::Mat<double> data(12, 4);
        for (auto& v : data.v) v = rng.uniform(-2.0, 2.0);
        const auto r = analysis::pca(data, 4);
        REQUIRE(r.components.rows == 4);
        for (std::int64_t a = 0; a < 4; ++a) {
            for (std::int64_t b = 0; b < 4; ++b) {
                double dot = 0.0;
                for (std::int64_t j = 0; j < 4; ++j)
                    dot += r.components.at(a, j) * r.components.at(b, j);
                REQUIRE(dot == Approx(a == b ? 1.0 : 0.0).margin(1e-8));
            }
        }
        for (std::int64_t i = 0; i < 12; ++i) {
            for (std::int64_t j = 0; j < 4; ++j) {
                double rec = r.mean[static_cast<std::size_t>(j)];
                for (std::int64_t c = 0; c < 4; ++c)
                    rec += r.projections.at(i, c) * r.components.at(c, j);
                REQUIRE(rec == Approx(data.at(i, j)).margin(1e-5));
            }
        }
        double ratio_sum = 0.0;
        for (double v : r.explained_ratio) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
            ratio_sum += v;
        }
        REQUIRE(ratio_sum <= 1.0 + 1e-12);
    }
    SECTION("needs k+1 rows") {
        nn::Mat<double> data(2, 3);
        REQUIRE_THROWS_AS(analysis::pca(data, 2), std::invalid_argument);
    }
}

TEST_CASE("film hook values match a manual evaluation") {
    film::FilmConfig fc = small_film();
    film::HookPosition pos{1, true, 2, 3, 2};
    fc.cond_hidden = 2;
    fc.film_hidden = 2;

    nn::ParamStoreT<double> p;
    const auto cond = film::cond_mlp_def(fc, pos);   // dims {1, 2, 3}
    const auto gen = film::film_mlp_def(fc, pos);    // dims {3, 2, 4}
    nn::register_mlp(p, cond);
    nn::register_mlp(p, gen);
    // hand-set weights
    p.at(cond.weight_name(1)).values = {1.0, -2.0};
    p.at(cond.bias_name(1)).values = {0.5, 0.0};
    p.at(cond.weight_name(2)).values = {1.0, 0.0, 0.0, 1.0, 1.0, 1.0};
    p.at(cond.bias_name(2)).values = {0.0, 0.1, -0.1};
    p.at(gen.weight_name(1)).values = {0.2, 0.0, -0.2, 0.0, 0.3, 0.1};
    p.at(gen.bias_name(1)).values = {0.05, -0.05};
    p.at(gen.weight_name(2)).values = {1.0, 0.0, 0.0, 1.0, 0.5, 0.5, -0.5, 0.5};
    p.at(gen.bias_name(2)).values = {0.01, 0.02, 0.03, 0.04};

    const double kappa = 0.7;
    // manual route
    const auto relu = [](double v) { return v > 0.0 ? v : 0.0; };
    const double c1 = relu(1.0 * kappa + 0.5);
    const double c2 = relu(-2.0 * kappa + 0.0);
    const std::array<double, 3> cond_out{c1, 0.1 + c2, -0.1 + c1 + c2};
    const std::array<double, 3> h_prev{0.4, -0.3, 0.2};
    std::array<double, 3> z{};
    for (int j = 0; j < 3; ++j) z[static_cast<std::size_t>(j)] = cond_out[static_cast<std::size_t>(j)] * h_prev[static_cast<std::size_t>(j)];
    const double g1 = relu(0.2 * z[0] + 0.0 * z[1] - 0.2 * z[2] + 0.05);
    const double g2 = relu(0.0 * z[0] + 0.3 * z[1] + 0.1 * z[2] - 0.05);
    const std::array<double, 4> heads{1.0 * g1 + 0.0 * g2 + 0.01, 0.0 * g1 + 1.0 * g2 + 0.02,
                                      0.5 * g1 + 0.5 * g2 + 0.03, -0.5 * g1 + 0.5 * g2 + 0.04};
    const std::array<double, 2> preact_in{0.6, -0.8};
    const std::array<double, 2> expected{(1.0 + heads[0]) * preact_in[0] + heads[2],
                                         (1.0 + heads[1]) * preact_in[1] + heads[3]};

    film::FilmCapture capture;
    film::FilmPreactHook<double> hook(fc, pos, kappa, &capture);
    nn::Mat<double> h(1, 3);
    h.v = {h_prev[0], h_prev[1], h_prev[2]};
    nn::Mat<double> preact(1, 2);
    preact.v = {preact_in[0], preact_in[1]};
    hook.forward(p, h, preact, false);
    REQUIRE(preact.at(0, 0) == Approx(expected[0]).epsilon(1e-12));
    REQUIRE(preact.at(0, 1) == Approx(expected[1]).epsilon(1e-12));
    const auto& row = capture.rows.at(pos.key()).front();
    REQUIRE(row[0] == Approx(1.0 + heads[0]).epsilon(1e-12));
    REQUIRE(row[1] == Approx(1.0 + heads[1]).epsilon(1e-12));
    REQUIRE(row[2] == Approx(heads[2]).epsilon(1e-12));
    REQUIRE(row[3] == Approx(heads[3]).epsilon(1e-12));
}

TEST_CASE("collect_film_sweep") {
    const auto probe = probe_trajectory();
    SECTION("identity conditioning yields constant rows") {
        const auto cm = film::attach(small_model(3), small_film(), 21);
        const auto sweep = analysis::collect_film_sweep(cm, {0.0, 0.5, 1.0}, probe, 3);
        REQUIRE(sweep.size() == 4);  // block 1, node+edge MLPs, layers 2 and 3
        for (const auto& [pos, m] : sweep) {
            REQUIRE(m.rows.rows == 9);  // 3 kappas x 3 probe frames
            const std::int64_t half = m.rows.cols / 2;
            for (std::int64_t r = 0; r < m.rows.rows; ++r) {
                for (std::int64_t j = 0; j < m.rows.cols; ++j) {
                    REQUIRE(m.rows.at(r, j) ==
                            Approx(j < half ? 1.0 : 0.0).margin(1e-12));
                }
            }
        }
    }
    SECTION("randomized generators produce kappa-dependent finite sweeps") {
        auto cm = film::attach(small_model(5), small_film(), 22);
        Rng rng(42);
        for (auto& [name, g] : cm.gns.params.groups) {
            if (name.rfind("film.", 0) == 0 && name.find(".film.layer2.") != std::string::npos)
                for (auto& v : g.values) v = static_cast<float>(rng.uniform(-0.3, 0.3));
        }
        std::vector<double> grid;
        for (int i = 0; i < 9; ++i) grid.push_back(1.2 * i / 8.0);
        const auto sweep = analysis::collect_film_sweep(cm, grid, probe, 2);
        for (const auto& [pos, m] : sweep) {
            REQUIRE(m.rows.rows == 18);
            const auto r = analysis::pca(m.rows, 2);
            const auto smooth = analysis::sweep_smoothness(m, r);
            REQUIRE(std::isfinite(smooth.path_length));
            REQUIRE(smooth.path_length >= smooth.max_jump);
            REQUIRE(smooth.max_jump >= 0.0);
        }
    }
}
