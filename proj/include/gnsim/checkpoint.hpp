#pragma once

#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "gnsim/dataio.hpp"
#include "gnsim/film.hpp"
#include "gnsim/model.hpp"

namespace gnsim::ckpt {

inline constexpr int kVersion = 1;

/// Checkpoint layout: a single JSON header line (architecture, feature
/// config, normalization stats, kappa bounds, group table) followed by the
/// little-endian f32 parameter blob in group-name sorted order.
inline void save_checkpoint(const std::string& path, const model::GnsModel& m,
                            const film::FilmConfig* fc = nullptr, int trained_epochs = 0) {
    nlohmann::json j;
    j["format"] = "gnsim-checkpoint";
    j["version"] = kVersion;
    j["trained_epochs"] = trained_epochs;
    j["gns"] = {{"latent_dim", m.cfg.latent_dim},
                {"n_mp_blocks", m.cfg.n_mp_blocks},
                {"mlp_hidden", m.cfg.mlp_hidden},
                {"residual", m.cfg.residual},
                {"aggregation", "sum"}};
    j["features"] = {{"connectivity_radius_m", m.features.connectivity_radius_m},
                     {"velocity_history", m.features.velocity_history},
                     {"vel_mean", m.features.stats.vel_mean},
                     {"vel_std", m.features.stats.vel_std},
                     {"acc_mean", m.features.stats.acc_mean},
                     {"acc_std", m.features.stats.acc_std}};
    if (fc) {
        j["film"] = {{"target_blocks", fc->target_blocks},
                     {"target_layers", fc->target_layers},
                     {"cond_hidden", fc->cond_hidden},
                     {"film_hidden", fc->film_hidden},
                     {"kappa_family", film::family_name(fc->kappa_family)},
                     {"kappa_min", fc->kappa_min},
                     {"kappa_max", fc->kappa_max},
                     {"shared", fc->shared}};
    }
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& [name, g] : m.params.groups)
        groups.push_back({{"name", name}, {"rows", g.rows}, {"cols", g.cols},
                          {"trainable", g.trainable}});
    j["groups"] = groups;

    std::string blob;
    for (const auto& [name, g] : m.params.groups)
        for (float v : g.values) io::detail::put_f32(blob, v);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f << j.dump() << "\n";
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

struct LoadedCheckpoint {
    model::GnsModel gns;
    std::optional<film::FilmConfig> film;
    int trained_epochs = 0;

    film::ConditionedModel conditioned() const {
        if (!film) throw std::runtime_error("checkpoint has no conditioning attached");
        return film::ConditionedModel{gns, *film};
    }
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string header;
    if (!std::getline(f, header))
        throw std::runtime_error("load_checkpoint: missing header in " + path);
    nlohmann::json j = nlohmann::json::parse(header);
    if (j.value("format", "") != "gnsim-checkpoint" || j.value("version", 0) != kVersion)
        throw std::runtime_error("load_checkpoint: unsupported format in " + path);

    LoadedCheckpoint out;
    out.trained_epochs = j.value("trained_epochs", 0);
    auto& m = out.gns;
    m.cfg.latent_dim = j["gns"].at("latent_dim").get<int>();
    m.cfg.n_mp_blocks = j["gns"].at("n_mp_blocks").get<int>();
    m.cfg.mlp_hidden = j["gns"].at("mlp_hidden").get<int>();
    m.cfg.residual = j["gns"].at("residual").get<bool>();
    m.cfg.validate();
    const auto& jf = j["features"];
    m.features.connectivity_radius_m = jf.at("connectivity_radius_m").get<double>();
    m.features.velocity_history = jf.at("velocity_history").get<int>();
    m.features.stats.vel_mean = jf.at("vel_mean").get<std::array<double, 2>>();
    m.features.stats.vel_std = jf.at("vel_std").get<std::array<double, 2>>();
    m.features.stats.acc_mean = jf.at("acc_mean").get<std::array<double, 2>>();
    m.features.stats.acc_std = jf.at("acc_std").get<std::array<double, 2>>();
    m.features.validate();

    if (j.contains("film")) {
        film::FilmConfig fc;
        const auto& jm = j["film"];
        fc.target_blocks = jm.at("target_blocks").get<int>();
        fc.target_layers = jm.at("target_layers").get<std::vector<int>>();
        fc.cond_hidden = jm.at("cond_hidden").get<int>();
        fc.film_hidden = jm.at("film_hidden").get<int>();
        fc.kappa_family = film::family_from_name(jm.at("kappa_family").get<std::string>());
        fc.kappa_min = jm.at("kappa_min").get<double>();
        fc.kappa_max = jm.at("kappa_max").get<double>();
        fc.shared = jm.at("shared").get<bool>();
        fc.validate(m.cfg.n_mp_blocks);
        out.film = fc;
    }

    for (const auto& jg : j.at("groups")) {
        auto& g = m.params.add(jg.at("name").get<std::string>(), jg.at("rows").get<std::int64_t>(),
                               jg.at("cols").get<std::int64_t>());
        g.trainable = jg.at("trainable").get<bool>();
    }
    // groups were added in header order; the blob is in sorted-name order,
    // which the std::map restores regardless of header ordering
    std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::size_t expected = 0;
    for (const auto& [_, g] : m.params.groups) expected += g.values.size();
    if (blob.size() != expected * 4)
        throw std::runtime_error("load_checkpoint: parameter blob size mismatch in " + path);
    io::detail::Reader r(blob, path);
    for (auto& [_, g] : m.params.groups)
        for (auto& v : g.values) v = r.f32();

    // sanity: the base architecture's groups must all exist
    for (const auto& def : m.all_defs()) {
        for (int l = 1; l <= def.n_layers(); ++l) {
            if (!m.params.has(def.weight_name(l)) || !m.params.has(def.bias_name(l)))
                throw std::runtime_error("load_checkpoint: missing group " + def.weight_name(l));
        }
    }
    return out;
}

}  // namespace gnsim::ckpt
