#pragma once

#include <cmath>
#include <stdexcept>

#include "gnsim/types.hpp"

namespace gnsim::sampling {

/// Characteristic collapse time sqrt(H0/g); t/tau_c near 1 marks full
/// mobilization of the column.
inline double characteristic_time(double column_height_m, double gravity_m_s2) {
    if (column_height_m <= 0.0)
        throw std::invalid_argument("characteristic_time: column height must be > 0");
    if (gravity_m_s2 <= 0.0)
        throw std::invalid_argument("characteristic_time: gravity must be > 0");
    return std::sqrt(column_height_m / gravity_m_s2);
}

/// Keeps the information-rich early window: frames with t <= multiple * tau_c
/// plus the history frames needed to form targets at the window start.
inline Trajectory select_window(const Trajectory& t, double multiple, int velocity_history,
                                double gravity_m_s2 = 9.81) {
    if (multiple <= 0.0) throw std::invalid_argument("select_window: multiple must be > 0");
    const double h0 = t.column_height();
    const double tau_c = characteristic_time(h0, gravity_m_s2);
    const auto n_window =
        static_cast<std::int64_t>(std::ceil(multiple * tau_c / t.dt_s));
    const std::int64_t keep = std::min<std::int64_t>(t.n_frames, n_window + velocity_history);
    if (keep < velocity_history + 2)
        throw std::invalid_argument("select_window: window shorter than C+2 frames");

    Trajectory out = t;
    out.n_frames = keep;
    out.positions.assign(t.positions.begin(),
                         t.positions.begin() + keep * t.n_particles * 2);
    return out;
}

}  // namespace gnsim::sampling
