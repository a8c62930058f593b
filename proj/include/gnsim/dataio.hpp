#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gnsim/types.hpp"

namespace gnsim::io {

// Trajectory container format: magic "GNST", u16 version, then a fixed
// header (frame/particle counts, dt, domain, material, column, seed) and a
// t-major, particle-minor f32 position block. All integers and floats are
// little-endian regardless of host.
inline constexpr char kTrajMagic[4] = {'G', 'N', 'S', 'T'};
inline constexpr std::uint16_t kTrajVersion = 1;

namespace detail {

inline void put_bytes(std::string& out, std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& out, std::uint16_t v) { put_bytes(out, v, 2); }
inline void put_u32(std::string& out, std::uint32_t v) { put_bytes(out, v, 4); }
inline void put_u64(std::string& out, std::uint64_t v) { put_bytes(out, v, 8); }
inline void put_f32(std::string& out, float v) {
    put_bytes(out, std::bit_cast<std::uint32_t>(v), 4);
}

class Reader {
public:
    Reader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

    std::uint64_t bytes(int n) {
        if (pos_ + n > buf_.size())
            throw std::runtime_error("read_trajectory: unexpected EOF in " + path_);
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += n;
        return v;
    }
    std::uint16_t u16() { return static_cast<std::uint16_t>(bytes(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
    std::uint64_t u64() { return bytes(8); }
    float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(bytes(4))); }
    std::size_t pos() const { return pos_; }

private:
    const std::string& buf_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline void write_trajectory(const Trajectory& t, const std::string& path) {
    t.validate();
    std::string out;
    out.reserve(80 + t.positions.size() * 4);
    out.append(kTrajMagic, 4);
    detail::put_u16(out, kTrajVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(t.n_frames));
    detail::put_u32(out, static_cast<std::uint32_t>(t.n_particles));
    detail::put_u32(out, 2);
    detail::put_f32(out, static_cast<float>(t.dt_s));
    detail::put_f32(out, static_cast<float>(t.domain_size_m[0]));
    detail::put_f32(out, static_cast<float>(t.domain_size_m[1]));
    detail::put_f32(out, static_cast<float>(t.material.friction_angle_deg));
    detail::put_f32(out, static_cast<float>(t.material.cohesion_kpa));
    detail::put_f32(out, static_cast<float>(t.material.youngs_modulus_pa));
    detail::put_f32(out, static_cast<float>(t.material.poisson_ratio));
    detail::put_f32(out, static_cast<float>(t.material.density_kg_m3));
    for (double c : t.initial_column_m) detail::put_f32(out, static_cast<float>(c));
    detail::put_u64(out, t.seed);
    for (double p : t.positions) detail::put_f32(out, static_cast<float>(p));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("write_trajectory: cannot open " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("write_trajectory: write failed for " + path);
}

inline Trajectory read_trajectory(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_trajectory: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    detail::Reader r(buf, path);

    if (buf.size() < 6 || std::memcmp(buf.data(), kTrajMagic, 4) != 0)
        throw std::runtime_error("read_trajectory: bad magic in " + path);
    r.bytes(4);
    const std::uint16_t version = r.u16();
    if (version != kTrajVersion)
        throw std::runtime_error("read_trajectory: unsupported version " +
                                 std::to_string(version) + " in " + path);

    Trajectory t;
    t.n_frames = r.u32();
    t.n_particles = r.u32();
    const std::uint32_t dim = r.u32();
    if (dim != 2) throw std::runtime_error("read_trajectory: expected 2D data in " + path);
    t.dt_s = r.f32();
    t.domain_size_m = {r.f32(), r.f32()};
    t.material.friction_angle_deg = r.f32();
    t.material.cohesion_kpa = r.f32();
    t.material.youngs_modulus_pa = r.f32();
    t.material.poisson_ratio = r.f32();
    t.material.density_kg_m3 = r.f32();
    t.material.tension_cutoff_kpa = 0.0;  // not stored in v1
    for (double& c : t.initial_column_m) c = r.f32();
    t.seed = r.u64();

    const std::size_t count = static_cast<std::size_t>(t.n_frames) * t.n_particles * 2;
    if (t.n_frames < 3 || t.n_particles <= 0 || count > (1ull << 33))
        throw std::runtime_error("read_trajectory: implausible header in " + path);
    t.positions.resize(count);
    for (double& p : t.positions) p = r.f32();
    t.validate();
    return t;
}

/// Velocities v_t = (x_t - x_{t-1})/dt and accelerations a_t = (v_{t+1} - v_t)/dt.
/// Frame 0 velocity and frames {0, T-1} accelerations are zero-filled; valid
/// acceleration targets are frames 1..T-2.
struct Kinematics {
    std::int64_t n_frames = 0;
    std::int64_t n_particles = 0;
    std::vector<double> velocities;     // T x N x 2
    std::vector<double> accelerations;  // T x N x 2

    double vx(std::int64_t t, std::int64_t i) const { return velocities[(t * n_particles + i) * 2]; }
    double vy(std::int64_t t, std::int64_t i) const { return velocities[(t * n_particles + i) * 2 + 1]; }
    double ax(std::int64_t t, std::int64_t i) const { return accelerations[(t * n_particles + i) * 2]; }
    double ay(std::int64_t t, std::int64_t i) const { return accelerations[(t * n_particles + i) * 2 + 1]; }
};

inline Kinematics finite_difference_kinematics(const Trajectory& t) {
    if (t.n_frames < 3)
        throw std::invalid_argument("finite_difference_kinematics: need at least 3 frames");
    Kinematics k;
    k.n_frames = t.n_frames;
    k.n_particles = t.n_particles;
    k.velocities.assign(t.positions.size(), 0.0);
    k.accelerations.assign(t.positions.size(), 0.0);
    const double inv_dt = 1.0 / t.dt_s;
    for (std::int64_t f = 1; f < t.n_frames; ++f) {
        for (std::int64_t i = 0; i < t.n_particles; ++i) {
            k.velocities[(f * t.n_particles + i) * 2] = (t.x(f, i) - t.x(f - 1, i)) * inv_dt;
            k.velocities[(f * t.n_particles + i) * 2 + 1] = (t.y(f, i) - t.y(f - 1, i)) * inv_dt;
        }
    }
    for (std::int64_t f = 1; f + 1 < t.n_frames; ++f) {
        for (std::int64_t i = 0; i < t.n_particles; ++i) {
            for (int d = 0; d < 2; ++d) {
                k.accelerations[(f * t.n_particles + i) * 2 + d] =
                    (k.velocities[((f + 1) * t.n_particles + i) * 2 + d] -
                     k.velocities[(f * t.n_particles + i) * 2 + d]) * inv_dt;
            }
        }
    }
    return k;
}

enum class Role { kPretrain, kAdapt, kTest };

inline std::string role_name(Role r) {
    switch (r) {
        case Role::kPretrain: return "pretrain";
        case Role::kAdapt: return "adapt";
        case Role::kTest: return "test";
    }
    throw std::logic_error("unknown role");
}

inline Role role_from_name(const std::string& s) {
    if (s == "pretrain") return Role::kPretrain;
    if (s == "adapt") return Role::kAdapt;
    if (s == "test") return Role::kTest;
    throw std::runtime_error("unknown dataset role: " + s);
}

struct ManifestEntry {
    std::string path;  // relative to the manifest directory
    MaterialParams material;
    Role role = Role::kPretrain;
};

struct KappaBounds {
    double min = 0.0;
    double max = 0.0;
};

/// Dataset index: trajectory files, their materials and roles, and the
/// conditioning normalization bounds derived from the adapt-role materials.
struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::map<std::string, KappaBounds> kappa_bounds;  // keys: "friction", "cohesion"

    std::vector<ManifestEntry> with_role(Role r) const {
        std::vector<ManifestEntry> out;
        for (const auto& e : entries)
            if (e.role == r) out.push_back(e);
        return out;
    }

    /// Friction bounds over tan(phi), cohesion bounds over c in kPa, both
    /// computed from adapt-role entries.
    void recompute_kappa_bounds() {
        kappa_bounds.clear();
        bool first = true;
        KappaBounds fr, co;
        for (const auto& e : entries) {
            if (e.role != Role::kAdapt) continue;
            const double tf = std::tan(e.material.friction_angle_deg * M_PI / 180.0);
            const double c = e.material.cohesion_kpa;
            if (first) {
                fr = {tf, tf};
                co = {c, c};
                first = false;
            } else {
                fr.min = std::min(fr.min, tf);
                fr.max = std::max(fr.max, tf);
                co.min = std::min(co.min, c);
                co.max = std::max(co.max, c);
            }
        }
        if (!first) {
            kappa_bounds["friction"] = fr;
            kappa_bounds["cohesion"] = co;
        }
    }

    void validate() const {
        std::map<std::string, Role> seen;
        for (const auto& e : entries) {
            auto [it, inserted] = seen.emplace(e.path, e.role);
            if (!inserted && it->second != e.role)
                throw std::runtime_error("DatasetManifest: conflicting roles for " + e.path);
        }
    }
};

inline nlohmann::json material_to_json(const MaterialParams& m) {
    return nlohmann::json{{"friction_angle_deg", m.friction_angle_deg},
                          {"cohesion_kpa", m.cohesion_kpa},
                          {"youngs_modulus_pa", m.youngs_modulus_pa},
                          {"poisson_ratio", m.poisson_ratio},
                          {"density_kg_m3", m.density_kg_m3},
                          {"tension_cutoff_kpa", m.tension_cutoff_kpa}};
}

inline MaterialParams material_from_json(const nlohmann::json& j) {
    MaterialParams m;
    m.friction_angle_deg = j.at("friction_angle_deg").get<double>();
    m.cohesion_kpa = j.at("cohesion_kpa").get<double>();
    m.youngs_modulus_pa = j.at("youngs_modulus_pa").get<double>();
    m.poisson_ratio = j.at("poisson_ratio").get<double>();
    m.density_kg_m3 = j.at("density_kg_m3").get<double>();
    m.tension_cutoff_kpa = j.at("tension_cutoff_kpa").get<double>();
    m.validate();
    return m;
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : m.entries) {
        entries.push_back({{"path", e.path},
                           {"role", role_name(e.role)},
                           {"material", material_to_json(e.material)}});
    }
    nlohmann::json bounds;
    for (const auto& [family, b] : m.kappa_bounds)
        bounds[family] = {{"min", b.min}, {"max", b.max}};
    return nlohmann::json{{"entries", entries}, {"kappa_bounds", bounds}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
    DatasetManifest m;
    for (const auto& e : j.at("entries")) {
        ManifestEntry entry;
        entry.path = e.at("path").get<std::string>();
        entry.role = role_from_name(e.at("role").get<std::string>());
        entry.material = material_from_json(e.at("material"));
        m.entries.push_back(std::move(entry));
    }
    if (j.contains("kappa_bounds")) {
        for (const auto& [family, b] : j.at("kappa_bounds").items())
            m.kappa_bounds[family] = {b.at("min").get<double>(), b.at("max").get<double>()};
    }
    m.validate();
    return m;
}

inline void write_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("write_manifest: cannot open " + path);
    f << manifest_to_json(m).dump(2) << "\n";
}

inline DatasetManifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_manifest: cannot open " + path);
    nlohmann::json j;
    f >> j;
    return manifest_from_json(j);
}

/// Loads a manifest entry's trajectory, resolving the path relative to the
/// manifest's directory.
inline Trajectory load_entry(const std::string& manifest_dir, const ManifestEntry& e) {
    const std::filesystem::path p = std::filesystem::path(manifest_dir) / e.path;
    Trajectory t = read_trajectory(p.string());
    t.material = e.material;  // manifest carries the full material incl. tension cutoff
    return t;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << content;
}

}  // namespace gnsim::io
