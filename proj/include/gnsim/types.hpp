#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gnsim {

/// Constitutive constants identifying one material environment.
struct MaterialParams {
    double friction_angle_deg = 30.0;
    double cohesion_kpa = 0.1;
    double youngs_modulus_pa = 1.0e7;  // desk-scale default, keeps the CFL time step workable
    double poisson_ratio = 0.3;
    double density_kg_m3 = 1800.0;
    double tension_cutoff_kpa = 0.05;

    void validate() const {
        if (friction_angle_deg < 0.0 || friction_angle_deg >= 90.0)
            throw std::invalid_argument("MaterialParams.friction_angle_deg must be in [0, 90)");
        if (cohesion_kpa < 0.0)
            throw std::invalid_argument("MaterialParams.cohesion_kpa must be >= 0");
        if (youngs_modulus_pa <= 0.0)
            throw std::invalid_argument("MaterialParams.youngs_modulus_pa must be > 0");
        if (poisson_ratio <= 0.0 || poisson_ratio >= 0.5)
            throw std::invalid_argument("MaterialParams.poisson_ratio must be in (0, 0.5)");
        if (density_kg_m3 <= 0.0)
            throw std::invalid_argument("MaterialParams.density_kg_m3 must be > 0");
        if (tension_cutoff_kpa < 0.0)
            throw std::invalid_argument("MaterialParams.tension_cutoff_kpa must be >= 0");
    }
};

/// Time series of particle positions plus the metadata needed to rebuild
/// supervision targets. Positions are t-major, particle-minor, xy-interleaved.
struct Trajectory {
    std::int64_t n_frames = 0;
    std::int64_t n_particles = 0;
    std::vector<double> positions;  // n_frames * n_particles * 2
    double dt_s = 0.0;
    std::array<double, 2> domain_size_m{0.0, 0.0};
    MaterialParams material;
    std::array<double, 4> initial_column_m{0.0, 0.0, 0.0, 0.0};  // x, y, w, h
    std::uint64_t seed = 0;

    double x(std::int64_t t, std::int64_t i) const {
        return positions[static_cast<std::size_t>((t * n_particles + i) * 2)];
    }
    double y(std::int64_t t, std::int64_t i) const {
        return positions[static_cast<std::size_t>((t * n_particles + i) * 2 + 1)];
    }
    double& x(std::int64_t t, std::int64_t i) {
        return positions[static_cast<std::size_t>((t * n_particles + i) * 2)];
    }
    double& y(std::int64_t t, std::int64_t i) {
        return positions[static_cast<std::size_t>((t * n_particles + i) * 2 + 1)];
    }

    void validate() const {
        if (n_frames < 3) throw std::invalid_argument("Trajectory needs at least 3 frames");
        if (n_particles <= 0) throw std::invalid_argument("Trajectory has no particles");
        if (dt_s <= 0.0) throw std::invalid_argument("Trajectory.dt_s must be > 0");
        if (positions.size() != static_cast<std::size_t>(n_frames * n_particles * 2))
            throw std::invalid_argument("Trajectory position buffer size mismatch");
    }

    double column_height() const { return initial_column_m[3]; }
};

}  // namespace gnsim
