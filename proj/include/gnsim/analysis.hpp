#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "gnsim/film.hpp"
#include "gnsim/model.hpp"
#include "gnsim/nn.hpp"
#include "gnsim/types.hpp"

namespace gnsim::analysis {

/// Captured modulation vectors for one hooked layer position: one row of
/// concatenated (gamma, beta) means per (kappa, probe frame).
struct FilmSweepMatrix {
    std::string position;
    std::vector<double> kappas;     // per row
    std::vector<int> probe_frames;  // per row
    nn::Mat<double> rows;
};

/// Runs the conditioned model on fixed probe frames across a kappa grid,
/// capturing the per-layer mean modulation parameters.
inline std::map<std::string, FilmSweepMatrix> collect_film_sweep(
    const film::ConditionedModel& cm, const std::vector<double>& kappa_grid,
    const Trajectory& probe, int n_probe_frames = 5) {
    if (kappa_grid.empty())
        throw std::invalid_argument("collect_film_sweep: empty kappa grid");
    const int c = cm.gns.features.velocity_history;
    const std::int64_t first = c;
    const std::int64_t last = probe.n_frames - 2;
    if (last < first)
        throw std::invalid_argument("collect_film_sweep: probe trajectory too short");
    std::vector<std::int64_t> frames;
    const int count = std::min<int>(n_probe_frames, static_cast<int>(last - first + 1));
    for (int i = 0; i < count; ++i) {
        frames.push_back(count == 1
                             ? first
                             : first + (last - first) * i / (count - 1));
    }

    std::map<std::string, FilmSweepMatrix> out;
    for (double kappa : kappa_grid) {
        for (std::int64_t f : frames) {
            model::Window window;
            for (std::int64_t w = f - c; w <= f; ++w) {
                window.emplace_back(probe.positions.begin() + w * probe.n_particles * 2,
                                    probe.positions.begin() + (w + 1) * probe.n_particles * 2);
            }
            film::FilmCapture capture;
            film::predict_accel(cm, window, probe.n_particles, probe.dt_s,
                                probe.domain_size_m, kappa, &capture);
            if (capture.rows.empty())
                throw std::runtime_error("collect_film_sweep: no modulation captured");
            for (const auto& [position, rows] : capture.rows) {
                for (const auto& row : rows) {
                    auto& m = out[position];
                    m.position = position;
                    m.kappas.push_back(kappa);
                    m.probe_frames.push_back(static_cast<int>(f));
                    if (m.rows.cols == 0) m.rows.cols = static_cast<std::int64_t>(row.size());
                    if (m.rows.cols != static_cast<std::int64_t>(row.size()))
                        throw std::runtime_error("collect_film_sweep: inconsistent row width");
                    m.rows.v.insert(m.rows.v.end(), row.begin(), row.end());
                    ++m.rows.rows;
                }
            }
        }
    }
    return out;
}

struct PcaResult {
    nn::Mat<double> projections;          // rows x k_eff
    std::vector<double> explained_ratio;  // k_eff entries, fractions of total variance
    nn::Mat<double> components;           // k_eff x dims, orthonormal rows
    std::vector<double> mean;             // column means of the input
};

/// Mean-centered covariance eigendecomposition. Requested components beyond
/// the numerical rank are dropped; the sign convention makes each component's
/// largest-magnitude coordinate positive.
inline PcaResult pca(const nn::Mat<double>& data, int k = 2) {
    const std::int64_t n = data.rows;
    const std::int64_t d = data.cols;
    if (k < 1) throw std::invalid_argument("pca: k must be >= 1");
    if (n < k + 1) throw std::invalid_argument("pca: need at least k+1 rows");

    PcaResult out;
    out.mean.assign(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j)
            out.mean[static_cast<std::size_t>(j)] += data.at(i, j);
    for (auto& m : out.mean) m /= static_cast<double>(n);

    Eigen::MatrixXd centered(n, d);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j)
            centered(i, j) = data.at(i, j) - out.mean[static_cast<std::size_t>(j)];
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw std::runtime_error("pca: eigensolver failed");
    const Eigen::VectorXd evals = solver.eigenvalues();  // ascending
    const Eigen::MatrixXd evecs = solver.eigenvectors();

    double total = 0.0;
    const double lambda_max = std::max(0.0, evals[d - 1]);
    const double floor = lambda_max * 1e-12;
    for (Eigen::Index i = 0; i < d; ++i)
        if (evals[i] > floor) total += evals[i];

    const int k_eff = [&] {
        int rank = 0;
        for (Eigen::Index i = 0; i < d; ++i)
            if (evals[i] > floor) ++rank;
        return std::min(k, rank);
    }();

    out.components = nn::Mat<double>(k_eff, d);
    out.explained_ratio.resize(static_cast<std::size_t>(k_eff));
    for (int c = 0; c < k_eff; ++c) {
        const Eigen::Index src = d - 1 - c;  // descending eigenvalue order
        Eigen::VectorXd v = evecs.col(src);
        Eigen::Index argmax = 0;
        v.cwiseAbs().maxCoeff(&argmax);
        if (v[argmax] < 0.0) v = -v;
        for (std::int64_t j = 0; j < d; ++j) out.components.at(c, j) = v[j];
        out.explained_ratio[static_cast<std::size_t>(c)] =
            total > 0.0 ? evals[src] / total : 0.0;
    }

    out.projections = nn::Mat<double>(n, k_eff);
    for (std::int64_t i = 0; i < n; ++i) {
        for (int c = 0; c < k_eff; ++c) {
            double acc = 0.0;
            for (std::int64_t j = 0; j < d; ++j) acc += centered(i, j) * out.components.at(c, j);
            out.projections.at(i, c) = acc;
        }
    }
    return out;
}

struct SweepSmoothness {
    double path_length = 0.0;    // over kappa-averaged projections, sorted by kappa
    double max_jump = 0.0;       // largest inter-kappa distance along that path
};

/// Summary a reader can use to judge how smoothly the modulation moves
/// through the reduced space as the material parameter varies.
inline SweepSmoothness sweep_smoothness(const FilmSweepMatrix& sweep, const PcaResult& pca_res) {
    std::map<double, std::pair<std::vector<double>, int>> by_kappa;
    const std::int64_t k_eff = pca_res.projections.cols;
    for (std::int64_t r = 0; r < pca_res.projections.rows; ++r) {
        auto& [acc, count] = by_kappa[sweep.kappas[static_cast<std::size_t>(r)]];
        acc.resize(static_cast<std::size_t>(k_eff), 0.0);
        for (std::int64_t c = 0; c < k_eff; ++c)
            acc[static_cast<std::size_t>(c)] += pca_res.projections.at(r, c);
        ++count;
    }
    SweepSmoothness out;
    std::vector<std::vector<double>> path;
    for (auto& [kappa, entry] : by_kappa) {
        auto& [acc, count] = entry;
        for (auto& v : acc) v /= static_cast<double>(count);
        path.push_back(acc);
    }
    for (std::size_t i = 1; i < path.size(); ++i) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < path[i].size(); ++j) d2 += sq(path[i][j] - path[i - 1][j]);
        const double d = std::sqrt(d2);
        out.path_length += d;
        out.max_jump = std::max(out.max_jump, d);
    }
    return out;
}

}  // namespace gnsim::analysis
