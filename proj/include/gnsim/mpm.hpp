#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "gnsim/common.hpp"
#include "gnsim/types.hpp"

namespace gnsim::mpm {

/// 2D plane-strain Cauchy stress; the out-of-plane normal component is
/// tracked so the three-invariant plasticity sees the full stress state.
struct Stress {
    double xx = 0.0;
    double yy = 0.0;
    double xy = 0.0;
    double zz = 0.0;
};

struct StressInvariants {
    double mean_pressure_p = 0.0;  // compression positive
    double deviatoric_q = 0.0;     // >= 0
    double lode_angle_theta = 0.0; // radians, in [-pi/6, pi/6]
};

struct MpmConfig {
    std::array<double, 2> domain_size_m{0.6, 0.3};
    double cell_size_m = 0.0125;
    int particles_per_cell = 4;  // must be a perfect square
    std::array<double, 2> column_origin_m{0.225, 0.0};
    std::array<double, 2> column_size_m{0.15, 0.15};
    double dt_internal_s = 5.0e-5;
    int n_internal_steps = 10000;
    int subsample_every = 100;
    double gravity_m_s2 = 9.81;      // magnitude, acts along -y
    double wall_friction_mu = 0.0;   // Coulomb friction at domain walls; 0 = frictionless
    double pic_fraction = 0.0;       // velocity transfer blend; 0 = pure FLIP

    void validate() const {
        if (domain_size_m[0] <= 0.0 || domain_size_m[1] <= 0.0)
            throw std::invalid_argument("MpmConfig.domain_size_m components must be > 0");
        if (cell_size_m <= 0.0) throw std::invalid_argument("MpmConfig.cell_size_m must be > 0");
        for (int d = 0; d < 2; ++d) {
            const double cells = domain_size_m[d] / cell_size_m;
            if (std::abs(cells - std::round(cells)) > 1e-9 * cells)
                throw std::invalid_argument("MpmConfig.domain_size_m must be a whole number of cells");
        }
        const int k = static_cast<int>(std::round(std::sqrt(double(particles_per_cell))));
        if (particles_per_cell <= 0 || k * k != particles_per_cell)
            throw std::invalid_argument("MpmConfig.particles_per_cell must be a perfect square");
        if (column_size_m[0] <= 0.0 || column_size_m[1] <= 0.0)
            throw std::invalid_argument("MpmConfig.column_size_m components must be > 0");
        if (column_origin_m[0] < 0.0 || column_origin_m[1] < 0.0 ||
            column_origin_m[0] + column_size_m[0] > domain_size_m[0] + 1e-12 ||
            column_origin_m[1] + column_size_m[1] > domain_size_m[1] + 1e-12)
            throw std::invalid_argument("MpmConfig: column does not fit inside the domain");
        if (dt_internal_s <= 0.0) throw std::invalid_argument("MpmConfig.dt_internal_s must be > 0");
        if (n_internal_steps <= 0) throw std::invalid_argument("MpmConfig.n_internal_steps must be > 0");
        if (subsample_every <= 0) throw std::invalid_argument("MpmConfig.subsample_every must be > 0");
        if (gravity_m_s2 < 0.0) throw std::invalid_argument("MpmConfig.gravity_m_s2 must be >= 0");
        if (pic_fraction < 0.0 || pic_fraction > 1.0)
            throw std::invalid_argument("MpmConfig.pic_fraction must be in [0, 1]");
        if (wall_friction_mu < 0.0)
            throw std::invalid_argument("MpmConfig.wall_friction_mu must be >= 0");
    }
};

struct StepReport {
    std::int64_t yielded_particles = 0;
    std::int64_t tension_clamped_particles = 0;
    std::int64_t escaped_particles = 0;  // clamped back to the domain boundary
};

struct MpmState {
    int n = 0;
    std::vector<double> px, py;    // position, m
    std::vector<double> vx, vy;    // velocity, m/s
    std::vector<double> mass;      // kg (per unit depth)
    std::vector<double> volume;    // m^3 (per unit depth)
    std::vector<Stress> stress;    // Pa
    StepReport totals;

    // grid scratch, sized lazily by step()
    std::vector<double> g_mass, g_momx, g_momy, g_fx, g_fy, g_vx, g_vy, g_vsx, g_vsy;
};

inline StressInvariants compute_invariants(const Stress& s) {
    StressInvariants inv;
    const double mean = (s.xx + s.yy + s.zz) / 3.0;
    inv.mean_pressure_p = -mean;
    const double dxx = s.xx - mean;
    const double dyy = s.yy - mean;
    const double dzz = s.zz - mean;
    const double j2 = 0.5 * (dxx * dxx + dyy * dyy + dzz * dzz) + s.xy * s.xy;
    inv.deviatoric_q = std::sqrt(3.0 * std::max(0.0, j2));
    if (j2 <= 0.0) {
        inv.lode_angle_theta = 0.0;  // tie-break for a vanishing deviator
        return inv;
    }
    const double j3 = dzz * (dxx * dyy - s.xy * s.xy);
    const double arg = -1.5 * std::sqrt(3.0) * j3 / std::pow(j2, 1.5);
    inv.lode_angle_theta = std::asin(std::clamp(arg, -1.0, 1.0)) / 3.0;
    return inv;
}

/// Lode-angle-dependent shape factor of the Mohr-Coulomb surface.
inline double mc_shape_factor(double lode_theta, double friction_angle_rad) {
    const double a = lode_theta + M_PI / 3.0;
    return std::sin(a) / (std::sqrt(3.0) * std::cos(friction_angle_rad)) +
           std::cos(a) * std::tan(friction_angle_rad) / 3.0;
}

/// Mohr-Coulomb yield function; F >= 0 means the stress state is at or
/// outside the surface. With compression-positive p', the pressure term
/// enters with a minus sign so that confinement strengthens the material
/// (equivalently: the classic R_mc q + p tan(phi) - c with tension-positive
/// mean stress p).
inline double mc_yield(const StressInvariants& inv, const MaterialParams& mat) {
    if (mat.friction_angle_deg >= 90.0)
        throw std::invalid_argument("mc_yield: friction angle must be < 90 degrees");
    const double phi = mat.friction_angle_deg * M_PI / 180.0;
    const double c_pa = mat.cohesion_kpa * 1e3;
    return mc_shape_factor(inv.lode_angle_theta, phi) * inv.deviatoric_q -
           inv.mean_pressure_p * std::tan(phi) - c_pa;
}

namespace detail {

/// Rebuild a stress tensor from a deviator scale factor and a target mean
/// pressure (compression positive).
inline Stress rescale(const Stress& s, double mean_old, double dev_scale, double p_new) {
    Stress out;
    out.xx = (s.xx - mean_old) * dev_scale - p_new;
    out.yy = (s.yy - mean_old) * dev_scale - p_new;
    out.zz = (s.zz - mean_old) * dev_scale - p_new;
    out.xy = s.xy * dev_scale;
    return out;
}

}  // namespace detail

/// Projects a trial stress back onto the yield surface. Radial scaling of the
/// deviator at fixed mean pressure (zero-dilation flow), apex collapse when
/// no deviator scaling can restore admissibility, then a mean-stress clamp at
/// the tension cutoff followed by one shear re-projection.
inline Stress return_map(const Stress& trial, const MaterialParams& mat,
                         bool* yielded = nullptr, bool* tension_clamped = nullptr) {
    const double phi = mat.friction_angle_deg * M_PI / 180.0;
    const double tan_phi = std::tan(phi);
    const double c_pa = mat.cohesion_kpa * 1e3;
    const double cutoff_pa = mat.tension_cutoff_kpa * 1e3;

    Stress s = trial;
    StressInvariants inv = compute_invariants(s);
    bool did_yield = false;

    const auto shear_project = [&](double p_fixed) {
        const double r = mc_shape_factor(inv.lode_angle_theta, phi);
        const double admissible_rq = c_pa + p_fixed * tan_phi;
        const double mean_old = -inv.mean_pressure_p;
        if (admissible_rq <= 0.0) {
            // Apex: the mean stress is tensile beyond the cone tip, so no
            // deviatoric stress can be sustained there.
            const double p_apex = tan_phi > 0.0 ? -c_pa / tan_phi : 0.0;
            s = Stress{-p_apex, -p_apex, 0.0, -p_apex};
        } else if (inv.deviatoric_q > 0.0) {
            const double q_new = admissible_rq / r;
            if (q_new < inv.deviatoric_q) {
                s = detail::rescale(s, mean_old, q_new / inv.deviatoric_q, p_fixed);
            }
        }
        inv = compute_invariants(s);
    };

    if (mc_yield(inv, mat) >= 0.0) {
        shear_project(inv.mean_pressure_p);
        did_yield = true;
    }

    bool clamped = false;
    if (inv.mean_pressure_p < -cutoff_pa) {
        const double mean_old = -inv.mean_pressure_p;
        s = detail::rescale(s, mean_old, 1.0, -cutoff_pa);
        inv = compute_invariants(s);
        clamped = true;
        if (mc_yield(inv, mat) > 0.0) {
            shear_project(inv.mean_pressure_p);
            did_yield = true;
        }
    }

    if (yielded) *yielded = did_yield;
    if (tension_clamped) *tension_clamped = clamped;
    return s;
}

/// P-wave speed under plane strain.
inline double pressure_wave_speed(const MaterialParams& mat) {
    if (mat.poisson_ratio >= 0.499)
        throw std::invalid_argument("check_cfl: poisson_ratio too close to 0.5");
    const double e = mat.youngs_modulus_pa;
    const double nu = mat.poisson_ratio;
    const double rho = mat.density_kg_m3;
    return std::sqrt(e * (1.0 - nu) / ((1.0 + nu) * (1.0 - 2.0 * nu) * rho));
}

/// Returns the maximum stable time step cell/c_p. The configured step must
/// stay at or below half of it.
inline double check_cfl(const MaterialParams& mat, const MpmConfig& config) {
    const double dt_max = config.cell_size_m / pressure_wave_speed(mat);
    if (config.dt_internal_s > 0.5 * dt_max)
        throw std::invalid_argument("MpmConfig.dt_internal_s violates the CFL bound (needs <= 0.5 * cell/c_p)");
    return dt_max;
}

/// Particles on a jittered regular lattice filling the column rectangle.
inline MpmState init_state(const MpmConfig& config, const MaterialParams& mat,
                           std::uint64_t seed) {
    config.validate();
    mat.validate();
    check_cfl(mat, config);

    const int k = static_cast<int>(std::round(std::sqrt(double(config.particles_per_cell))));
    const double spacing = config.cell_size_m / k;
    const int nx = static_cast<int>(std::round(config.column_size_m[0] / spacing));
    const int ny = static_cast<int>(std::round(config.column_size_m[1] / spacing));
    if (nx <= 0 || ny <= 0) throw std::invalid_argument("init_state: column too small for lattice");

    MpmState st;
    st.n = nx * ny;
    st.px.reserve(st.n);
    st.py.reserve(st.n);
    Rng rng(seed);
    const double jitter = 0.1 * spacing;
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            st.px.push_back(config.column_origin_m[0] + (i + 0.5) * spacing +
                            rng.uniform(-jitter, jitter));
            st.py.push_back(config.column_origin_m[1] + (j + 0.5) * spacing +
                            rng.uniform(-jitter, jitter));
        }
    }
    st.vx.assign(st.n, 0.0);
    st.vy.assign(st.n, 0.0);
    const double vol = spacing * spacing;
    st.volume.assign(st.n, vol);
    st.mass.assign(st.n, mat.density_kg_m3 * vol);
    st.stress.assign(st.n, Stress{});
    return st;
}

/// One explicit update-stress-last step: particle-to-grid transfer with
/// linear shape functions, grid momentum update, grid-to-particle transfer,
/// then strain increment and constitutive update.
inline StepReport step(MpmState& st, const MpmConfig& config, const MaterialParams& mat) {
    const double h = config.cell_size_m;
    const double inv_h = 1.0 / h;
    const int ncx = static_cast<int>(std::round(config.domain_size_m[0] * inv_h));
    const int ncy = static_cast<int>(std::round(config.domain_size_m[1] * inv_h));
    const int gx = ncx + 1;
    const int gy = ncy + 1;
    const std::size_t n_nodes = static_cast<std::size_t>(gx) * gy;
    const double dt = config.dt_internal_s;
    const double g = config.gravity_m_s2;
    const double lambda = mat.youngs_modulus_pa * mat.poisson_ratio /
                          ((1.0 + mat.poisson_ratio) * (1.0 - 2.0 * mat.poisson_ratio));
    const double mu = mat.youngs_modulus_pa / (2.0 * (1.0 + mat.poisson_ratio));

    auto node = [gx](int i, int j) { return static_cast<std::size_t>(j) * gx + i; };

    st.g_mass.assign(n_nodes, 0.0);
    st.g_momx.assign(n_nodes, 0.0);
    st.g_momy.assign(n_nodes, 0.0);
    st.g_fx.assign(n_nodes, 0.0);
    st.g_fy.assign(n_nodes, 0.0);
    st.g_vx.assign(n_nodes, 0.0);
    st.g_vy.assign(n_nodes, 0.0);
    st.g_vsx.assign(n_nodes, 0.0);
    st.g_vsy.assign(n_nodes, 0.0);

    struct Support {
        int ci, cj;
        double fx, fy;  // local coordinates in [0, 1]
    };
    auto support = [&](int p) {
        Support s;
        s.ci = std::clamp(static_cast<int>(st.px[p] * inv_h), 0, ncx - 1);
        s.cj = std::clamp(static_cast<int>(st.py[p] * inv_h), 0, ncy - 1);
        s.fx = st.px[p] * inv_h - s.ci;
        s.fy = st.py[p] * inv_h - s.cj;
        return s;
    };

    // particle-to-grid
    for (int p = 0; p < st.n; ++p) {
        const Support sp = support(p);
        const double wx[2] = {1.0 - sp.fx, sp.fx};
        const double wy[2] = {1.0 - sp.fy, sp.fy};
        const double dwx[2] = {-inv_h, inv_h};
        const double dwy[2] = {-inv_h, inv_h};
        const Stress& sg = st.stress[p];
        for (int a = 0; a < 2; ++a) {
            for (int b = 0; b < 2; ++b) {
                const std::size_t id = node(sp.ci + a, sp.cj + b);
                const double w = wx[a] * wy[b];
                const double gwx = dwx[a] * wy[b];
                const double gwy = wx[a] * dwy[b];
                st.g_mass[id] += w * st.mass[p];
                st.g_momx[id] += w * st.mass[p] * st.vx[p];
                st.g_momy[id] += w * st.mass[p] * st.vy[p];
                st.g_fx[id] -= st.volume[p] * (sg.xx * gwx + sg.xy * gwy);
                st.g_fy[id] -= st.volume[p] * (sg.xy * gwx + sg.yy * gwy);
                st.g_fy[id] -= w * st.mass[p] * g;
            }
        }
    }

    // grid momentum update with boundary conditions
    const double m_eps = 1e-12;
    for (int j = 0; j < gy; ++j) {
        for (int i = 0; i < gx; ++i) {
            const std::size_t id = node(i, j);
            if (st.g_mass[id] <= m_eps) continue;
            const double vsx = st.g_momx[id] / st.g_mass[id];
            const double vsy = st.g_momy[id] / st.g_mass[id];
            double vnx = vsx + dt * st.g_fx[id] / st.g_mass[id];
            double vny = vsy + dt * st.g_fy[id] / st.g_mass[id];
            const bool wall_x = (i == 0 || i == ncx);
            const bool wall_y = (j == 0 || j == ncy);
            if (wall_x) {
                const double removed = std::abs(vnx);
                vnx = 0.0;
                if (config.wall_friction_mu > 0.0 && std::abs(vny) > 0.0) {
                    const double drop = config.wall_friction_mu * removed;
                    vny -= std::copysign(std::min(drop, std::abs(vny)), vny);
                }
            }
            if (wall_y) {
                const double removed = std::abs(vny);
                vny = 0.0;
                if (config.wall_friction_mu > 0.0 && std::abs(vnx) > 0.0) {
                    const double drop = config.wall_friction_mu * removed;
                    vnx -= std::copysign(std::min(drop, std::abs(vnx)), vnx);
                }
            }
            st.g_vsx[id] = vsx;
            st.g_vsy[id] = vsy;
            st.g_vx[id] = vnx;
            st.g_vy[id] = vny;
        }
    }

    // grid-to-particle, strain increment, constitutive update
    StepReport report;
    const double w_edge = config.domain_size_m[0];
    const double h_edge = config.domain_size_m[1];
    for (int p = 0; p < st.n; ++p) {
        const Support sp = support(p);
        const double wx[2] = {1.0 - sp.fx, sp.fx};
        const double wy[2] = {1.0 - sp.fy, sp.fy};
        const double dwx[2] = {-inv_h, inv_h};
        const double dwy[2] = {-inv_h, inv_h};
        double vx_pic = 0.0, vy_pic = 0.0, dvx = 0.0, dvy = 0.0;
        double lxx = 0.0, lxy = 0.0, lyx = 0.0, lyy = 0.0;
        for (int a = 0; a < 2; ++a) {
            for (int b = 0; b < 2; ++b) {
                const std::size_t id = node(sp.ci + a, sp.cj + b);
                const double w = wx[a] * wy[b];
                const double gwx = dwx[a] * wy[b];
                const double gwy = wx[a] * dwy[b];
                vx_pic += w * st.g_vx[id];
                vy_pic += w * st.g_vy[id];
                dvx += w * (st.g_vx[id] - st.g_vsx[id]);
                dvy += w * (st.g_vy[id] - st.g_vsy[id]);
                lxx += st.g_vx[id] * gwx;
                lxy += st.g_vx[id] * gwy;
                lyx += st.g_vy[id] * gwx;
                lyy += st.g_vy[id] * gwy;
            }
        }
        const double a_pic = config.pic_fraction;
        st.vx[p] = a_pic * vx_pic + (1.0 - a_pic) * (st.vx[p] + dvx);
        st.vy[p] = a_pic * vy_pic + (1.0 - a_pic) * (st.vy[p] + dvy);
        st.px[p] += dt * vx_pic;
        st.py[p] += dt * vy_pic;

        if (st.px[p] < 0.0 || st.px[p] > w_edge || st.py[p] < 0.0 || st.py[p] > h_edge) {
            ++report.escaped_particles;
            if (st.px[p] < 0.0) { st.px[p] = 0.0; st.vx[p] = std::max(0.0, st.vx[p]); }
            if (st.px[p] > w_edge) { st.px[p] = w_edge; st.vx[p] = std::min(0.0, st.vx[p]); }
            if (st.py[p] < 0.0) { st.py[p] = 0.0; st.vy[p] = std::max(0.0, st.vy[p]); }
            if (st.py[p] > h_edge) { st.py[p] = h_edge; st.vy[p] = std::min(0.0, st.vy[p]); }
        }

        const double exx = dt * lxx;
        const double eyy = dt * lyy;
        const double exy = 0.5 * dt * (lxy + lyx);
        const double tr = exx + eyy;
        Stress trial = st.stress[p];
        trial.xx += lambda * tr + 2.0 * mu * exx;
        trial.yy += lambda * tr + 2.0 * mu * eyy;
        trial.zz += lambda * tr;  // plane strain: no out-of-plane strain increment
        trial.xy += 2.0 * mu * exy;
        bool yielded = false, clamped = false;
        st.stress[p] = return_map(trial, mat, &yielded, &clamped);
        report.yielded_particles += yielded ? 1 : 0;
        report.tension_clamped_particles += clamped ? 1 : 0;
    }

    st.totals.yielded_particles += report.yielded_particles;
    st.totals.tension_clamped_particles += report.tension_clamped_particles;
    st.totals.escaped_particles += report.escaped_particles;
    return report;
}

inline double kinetic_energy(const MpmState& st) {
    double e = 0.0;
    for (int p = 0; p < st.n; ++p) e += 0.5 * st.mass[p] * (sq(st.vx[p]) + sq(st.vy[p]));
    return e;
}

inline double potential_energy(const MpmState& st, double gravity) {
    double e = 0.0;
    for (int p = 0; p < st.n; ++p) e += st.mass[p] * gravity * st.py[p];
    return e;
}

/// Stored elastic strain energy from the isotropic compliance applied to the
/// tracked stress state.
inline double elastic_energy(const MpmState& st, const MaterialParams& mat) {
    const double e_mod = mat.youngs_modulus_pa;
    const double nu = mat.poisson_ratio;
    double e = 0.0;
    for (int p = 0; p < st.n; ++p) {
        const Stress& s = st.stress[p];
        const double ss = s.xx * s.xx + s.yy * s.yy + s.zz * s.zz + 2.0 * s.xy * s.xy;
        const double tr = s.xx + s.yy + s.zz;
        e += st.volume[p] * ((1.0 + nu) * ss - nu * tr * tr) / (2.0 * e_mod);
    }
    return e;
}

inline double total_mass(const MpmState& st) {
    double m = 0.0;
    for (int p = 0; p < st.n; ++p) m += st.mass[p];
    return m;
}

/// Runs the solver and records a subsampled position history.
inline Trajectory generate_trajectory(const MpmConfig& config, const MaterialParams& mat,
                                      std::uint64_t seed) {
    MpmState st = init_state(config, mat, seed);
    Trajectory traj;
    traj.n_particles = st.n;
    traj.dt_s = config.dt_internal_s * config.subsample_every;
    traj.domain_size_m = config.domain_size_m;
    traj.material = mat;
    traj.initial_column_m = {config.column_origin_m[0], config.column_origin_m[1],
                            config.column_size_m[0], config.column_size_m[1]};
    traj.seed = seed;

    const auto record = [&]() {
        for (int p = 0; p < st.n; ++p) {
            traj.positions.push_back(st.px[p]);
            traj.positions.push_back(st.py[p]);
        }
        ++traj.n_frames;
    };
    record();
    for (int i = 1; i <= config.n_internal_steps; ++i) {
        step(st, config, mat);
        if (i % config.subsample_every == 0) record();
    }
    return traj;
}

}  // namespace gnsim::mpm
