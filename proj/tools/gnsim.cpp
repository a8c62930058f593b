// Command-line frontend: dataset generation, training drivers, evaluation,
// sensitivity reports, the inverse solver, and the modulation-space analysis.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gnsim/analysis.hpp"
#include "gnsim/checkpoint.hpp"
#include "gnsim/inverse.hpp"
#include "gnsim/metrics.hpp"
#include "gnsim/mpm.hpp"
#include "gnsim/sampling.hpp"
#include "gnsim/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gnsim;

namespace {

std::string format_double(double v, int precision = 9) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    return buf;
}

void ensure_run_dirs(const std::string& out) {
    fs::create_directories(out);
    fs::create_directories(fs::path(out) / "checkpoints");
    fs::create_directories(fs::path(out) / "metrics");
    fs::create_directories(fs::path(out) / "logs");
}

std::vector<std::uint64_t> parse_seeds(const std::string& spec) {
    std::vector<std::uint64_t> seeds;
    const auto dots = spec.find("..");
    if (dots != std::string::npos) {
        const auto lo = std::stoull(spec.substr(0, dots));
        const auto hi = std::stoull(spec.substr(dots + 2));
        if (hi < lo) throw std::runtime_error("--seeds range is empty: " + spec);
        for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
        return seeds;
    }
    std::size_t pos = 0;
    while (pos < spec.size()) {
        const auto comma = spec.find(',', pos);
        const auto part = spec.substr(pos, comma == std::string::npos ? spec.size() - pos
                                                                      : comma - pos);
        if (!part.empty()) seeds.push_back(std::stoull(part));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (seeds.empty()) throw std::runtime_error("--seeds parsed to nothing: " + spec);
    return seeds;
}

std::vector<double> parse_values(const std::string& spec) {
    std::vector<double> values;
    std::size_t pos = 0;
    while (pos < spec.size()) {
        const auto comma = spec.find(',', pos);
        const auto part = spec.substr(pos, comma == std::string::npos ? spec.size() - pos
                                                                      : comma - pos);
        if (!part.empty()) values.push_back(std::stod(part));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (values.empty()) throw std::runtime_error("--values parsed to nothing: " + spec);
    return values;
}

json load_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    json j;
    f >> j;
    return j;
}

mpm::MpmConfig mpm_config_from_json(const json& j) {
    mpm::MpmConfig c;
    const auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("domain_size_m", c.domain_size_m);
    get("cell_size_m", c.cell_size_m);
    get("particles_per_cell", c.particles_per_cell);
    get("column_origin_m", c.column_origin_m);
    get("column_size_m", c.column_size_m);
    get("dt_internal_s", c.dt_internal_s);
    get("n_internal_steps", c.n_internal_steps);
    get("subsample_every", c.subsample_every);
    get("gravity_m_s2", c.gravity_m_s2);
    get("wall_friction_mu", c.wall_friction_mu);
    get("pic_fraction", c.pic_fraction);
    c.validate();
    return c;
}

train::TrainConfig train_config_from_json(const json& j) {
    train::TrainConfig c;
    const auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("lr_init", c.lr_init);
    get("lr_final", c.lr_final);
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("noise_scale", c.noise_scale);
    get("seed", c.seed);
    get("sample_stride", c.sample_stride);
    get("n_threads", c.n_threads);
    get("val_holdout", c.val_holdout);
    return c;
}

struct LoadedDataset {
    io::DatasetManifest manifest;
    std::string dir;

    std::vector<Trajectory> load_role(io::Role role) const {
        std::vector<Trajectory> out;
        for (const auto& e : manifest.entries)
            if (e.role == role) out.push_back(io::load_entry(dir, e));
        return out;
    }
};

LoadedDataset load_dataset(const std::string& dir) {
    LoadedDataset d;
    d.dir = dir;
    d.manifest = io::read_manifest((fs::path(dir) / "manifest.json").string());
    return d;
}

std::vector<const Trajectory*> pointers(const std::vector<Trajectory>& v) {
    std::vector<const Trajectory*> out;
    out.reserve(v.size());
    for (const auto& t : v) out.push_back(&t);
    return out;
}

void truncate_to_window(std::vector<Trajectory>& trajs, double multiple, int history) {
    if (multiple <= 0.0) return;
    for (auto& t : trajs) t = sampling::select_window(t, multiple, history);
}

train::LogCallback jsonl_logger(std::ofstream& out, int epoch_offset = 0) {
    return [&out, epoch_offset](const train::EpochLog& e) {
        const int epoch = e.epoch + epoch_offset;
        json train_line{{"epoch", epoch}, {"split", "train"}, {"loss", e.train_loss},
                        {"lr", e.lr},     {"wall_s", e.wall_s}};
        json val_line{{"epoch", epoch}, {"split", "val"}, {"loss", e.val_loss},
                      {"lr", e.lr},     {"wall_s", e.wall_s}};
        out << train_line.dump() << "\n" << val_line.dump() << "\n";
    };
}

std::string trajectory_file_name(const MaterialParams& m, std::uint64_t seed) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "traj_phi%.2f_c%.3f_s%" PRIu64 ".gnst",
                  m.friction_angle_deg, m.cohesion_kpa, seed);
    return buf;
}

void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::vector<double>>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << header << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i)
            f << (i ? "," : "") << format_double(row[i]);
        f << "\n";
    }
}

json quartiles(std::vector<double> values) {
    if (values.empty()) return json::object();
    return json{{"min", percentile(values, 0.0)},  {"q25", percentile(values, 0.25)},
                {"median", percentile(values, 0.5)}, {"q75", percentile(values, 0.75)},
                {"max", percentile(values, 1.0)},  {"count", values.size()}};
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateArgs {
    std::string out;
    std::string config_path;
    std::string material_path;
    std::string family;
    std::string values = "";
    std::string role = "pretrain";
    std::string seeds = "0..0";
    double window_multiple = 0.0;
    int jobs = 1;
};

int run_generate(const GenerateArgs& a) {
    ensure_run_dirs(a.out);
    mpm::MpmConfig cfg;
    if (!a.config_path.empty()) cfg = mpm_config_from_json(load_json_file(a.config_path));
    MaterialParams base;
    if (!a.material_path.empty())
        base = io::material_from_json(load_json_file(a.material_path));

    std::vector<MaterialParams> materials;
    if (a.values.empty()) {
        materials.push_back(base);
    } else {
        if (a.family != "friction" && a.family != "cohesion")
            throw std::runtime_error("--param-family must be friction or cohesion when --values is set");
        for (double v : parse_values(a.values)) {
            MaterialParams m = base;
            if (a.family == "friction")
                m.friction_angle_deg = v;
            else
                m.cohesion_kpa = v;
            m.validate();
            materials.push_back(m);
        }
    }
    const auto seeds = parse_seeds(a.seeds);
    const io::Role role = io::role_from_name(a.role);

    struct Task {
        MaterialParams material;
        std::uint64_t seed;
        std::string name;
    };
    std::vector<Task> tasks;
    for (const auto& m : materials)
        for (const auto s : seeds) tasks.push_back({m, s, trajectory_file_name(m, s)});

    std::size_t next = 0;
    while (next < tasks.size()) {
        const std::size_t wave = std::min<std::size_t>(std::max(1, a.jobs), tasks.size() - next);
        std::vector<std::future<void>> futures;
        for (std::size_t w = 0; w < wave; ++w) {
            const Task* t = &tasks[next + w];
            futures.push_back(std::async(std::launch::async, [&cfg, t, &a] {
                Trajectory traj = mpm::generate_trajectory(cfg, t->material, t->seed);
                if (a.window_multiple > 0.0)
                    traj = sampling::select_window(traj, a.window_multiple, 5);
                io::write_trajectory(traj, (fs::path(a.out) / t->name).string());
            }));
        }
        for (auto& f : futures) f.get();
        next += wave;
    }

    // merge into the manifest: replace entries for regenerated paths
    io::DatasetManifest manifest;
    const std::string manifest_path = (fs::path(a.out) / "manifest.json").string();
    if (fs::exists(manifest_path)) manifest = io::read_manifest(manifest_path);
    for (const auto& t : tasks) {
        bool replaced = false;
        for (auto& e : manifest.entries) {
            if (e.path == t.name) {
                e.material = t.material;
                e.role = role;
                replaced = true;
            }
        }
        if (!replaced) manifest.entries.push_back({t.name, t.material, role});
    }
    std::sort(manifest.entries.begin(), manifest.entries.end(),
              [](const auto& x, const auto& y) { return x.path < y.path; });
    manifest.validate();
    manifest.recompute_kappa_bounds();
    io::write_manifest(manifest, manifest_path);
    std::printf("generate: wrote %zu trajectories to %s\n", tasks.size(), a.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// training subcommands
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string out;
    std::string base_checkpoint;
    std::string resume;
    std::string train_config_path;
    std::string unlock;
    std::string family = "friction";
    int film_blocks = 1;
    bool film_shared = false;
    double window_multiple = 0.0;
    // flag overrides; negative therefore "not set"
    double lr_init = -1.0, lr_final = -1.0, noise_scale = -1.0;
    int epochs = -1, batch = -1, stride = -1, jobs = -1;
    std::uint64_t seed = 0;
    bool seed_set = false;
    // architecture (pretrain only)
    int latent = 32, blocks = 10, hidden = 32;
    double radius = 0.03;
    int history = 5;
};

train::TrainConfig resolve_train_config(const TrainArgs& a, double default_lr_init,
                                        double default_lr_final, int default_epochs) {
    train::TrainConfig cfg;
    cfg.lr_init = default_lr_init;
    cfg.lr_final = default_lr_final;
    cfg.epochs = default_epochs;
    if (!a.train_config_path.empty())
        cfg = train_config_from_json(load_json_file(a.train_config_path));
    if (a.lr_init > 0.0) cfg.lr_init = a.lr_init;
    if (a.lr_final > 0.0) cfg.lr_final = a.lr_final;
    if (a.noise_scale >= 0.0) cfg.noise_scale = a.noise_scale;
    if (a.epochs > 0) cfg.epochs = a.epochs;
    if (a.batch > 0) cfg.batch_size = a.batch;
    if (a.stride > 0) cfg.sample_stride = a.stride;
    if (a.jobs > 0) cfg.n_threads = a.jobs;
    if (a.seed_set) cfg.seed = a.seed;
    cfg.validate();
    return cfg;
}

int run_pretrain(const TrainArgs& a) {
    ensure_run_dirs(a.out);
    const auto dataset = load_dataset(a.data);
    const auto trajs = dataset.load_role(io::Role::kPretrain);
    if (trajs.empty()) throw std::runtime_error("no pretrain-role trajectories in " + a.data);

    model::GnsModel gns;
    int epoch_offset = 0;
    if (!a.resume.empty()) {
        auto loaded = ckpt::load_checkpoint(a.resume);
        gns = std::move(loaded.gns);
        epoch_offset = loaded.trained_epochs;
    } else {
        graph::FeatureConfig features;
        features.connectivity_radius_m = a.radius;
        features.velocity_history = a.history;
        features.stats = graph::compute_stats(pointers(trajs));
        model::GnsConfig gc;
        gc.latent_dim = a.latent;
        gc.n_mp_blocks = a.blocks;
        gc.mlp_hidden = a.hidden;
        gns = model::make_gns(gc, features, a.seed);
    }

    const auto cfg = resolve_train_config(a, 1e-3, 1e-5, 40);
    std::ofstream log_file((fs::path(a.out) / "logs" / "train.jsonl").string(),
                           a.resume.empty() ? std::ios::trunc : std::ios::app);
    const auto result =
        train::pretrain(gns, pointers(trajs), cfg, jsonl_logger(log_file, epoch_offset));

    ckpt::save_checkpoint((fs::path(a.out) / "checkpoints" / "final.gnsc").string(), gns,
                          nullptr, epoch_offset + cfg.epochs);
    std::printf("pretrain: %d epochs, final val loss %s\n", cfg.epochs,
                format_double(result.final_val_loss, 6).c_str());
    return 0;
}

void write_sensitivity_outputs(const std::string& out, const train::SensitivityReport& report) {
    const auto cdf = train::update_cdf(report);
    std::vector<std::vector<double>> rows;
    std::ofstream csv((fs::path(out) / "metrics" / "update_cdf.csv").string(), std::ios::trunc);
    csv << "component,frac_params,frac_magnitude\n";
    json summary;
    for (const auto& [component, curve] : cdf) {
        const std::size_t n = curve.frac_params.size();
        const std::size_t step = std::max<std::size_t>(1, n / 512);
        for (std::size_t i = 0; i < n; i += step)
            csv << component << "," << format_double(curve.frac_params[i]) << ","
                << format_double(curve.frac_magnitude[i]) << "\n";
        csv << component << ",1,1\n";
        summary[component] = {{"n_params", n},
                              {"frac_params_for_85pct", train::fraction_covering(curve, 0.85)}};
    }
    summary["test_loss"] = report.test_loss;
    io::write_text_file((fs::path(out) / "metrics" / "sensitivity.json").string(),
                        summary.dump(2) + "\n");
}

int run_finetune(const TrainArgs& a, bool full_unlock) {
    ensure_run_dirs(a.out);
    auto loaded = ckpt::load_checkpoint(a.base_checkpoint);
    const auto dataset = load_dataset(a.data);
    auto adapt = dataset.load_role(io::Role::kAdapt);
    if (adapt.empty()) throw std::runtime_error("no adapt-role trajectories in " + a.data);
    truncate_to_window(adapt, a.window_multiple, loaded.gns.features.velocity_history);
    const auto test = dataset.load_role(io::Role::kTest);

    std::vector<std::string> mask;
    if (full_unlock) {
        mask.push_back("*");
    } else {
        std::size_t pos = 0;
        while (pos < a.unlock.size()) {
            const auto comma = a.unlock.find(',', pos);
            const auto part = a.unlock.substr(
                pos, comma == std::string::npos ? a.unlock.size() - pos : comma - pos);
            if (!part.empty()) mask.push_back(part);
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (mask.empty()) throw std::runtime_error("--unlock is required for finetune");
    }

    const auto cfg = resolve_train_config(a, 1e-4, 1e-5, 15);
    std::ofstream log_file((fs::path(a.out) / "logs" / "train.jsonl").string(), std::ios::trunc);
    const auto test_ptrs = pointers(test);
    const auto result = train::finetune(loaded.gns, pointers(adapt), mask, cfg,
                                        test.empty() ? nullptr : &test_ptrs,
                                        jsonl_logger(log_file));

    ckpt::save_checkpoint((fs::path(a.out) / "checkpoints" / "final.gnsc").string(), loaded.gns,
                          loaded.film ? &*loaded.film : nullptr,
                          loaded.trained_epochs + cfg.epochs);
    write_sensitivity_outputs(a.out, result.sensitivity);
    std::printf("%s: final val loss %s, test loss %s\n", full_unlock ? "sensitivity" : "finetune",
                format_double(result.fit.final_val_loss, 6).c_str(),
                format_double(result.sensitivity.test_loss, 6).c_str());
    return 0;
}

int run_train_film(const TrainArgs& a) {
    ensure_run_dirs(a.out);
    auto loaded = ckpt::load_checkpoint(a.base_checkpoint);
    const auto dataset = load_dataset(a.data);
    auto adapt = dataset.load_role(io::Role::kAdapt);
    if (adapt.empty()) throw std::runtime_error("no adapt-role trajectories in " + a.data);
    truncate_to_window(adapt, a.window_multiple, loaded.gns.features.velocity_history);

    const auto bounds_it = dataset.manifest.kappa_bounds.find(a.family);
    if (bounds_it == dataset.manifest.kappa_bounds.end())
        throw std::runtime_error("manifest has no kappa bounds for family " + a.family);

    film::FilmConfig fc;
    fc.target_blocks = a.film_blocks;
    fc.kappa_family = film::family_from_name(a.family);
    fc.kappa_min = bounds_it->second.min;
    fc.kappa_max = bounds_it->second.max;
    fc.shared = a.film_shared;

    auto cm = film::attach(std::move(loaded.gns), fc, a.seed);
    const auto cfg = resolve_train_config(a, 1e-3, 1e-4, 20);
    std::ofstream log_file((fs::path(a.out) / "logs" / "train.jsonl").string(), std::ios::trunc);
    const auto result = train::train_film(cm, pointers(adapt), cfg, jsonl_logger(log_file));

    ckpt::save_checkpoint((fs::path(a.out) / "checkpoints" / "final.gnsc").string(), cm.gns,
                          &cm.film, cfg.epochs);
    std::printf("train-film: K=%d family=%s final val loss %s\n", fc.target_blocks,
                a.family.c_str(), format_double(result.final_val_loss, 6).c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// rollout / eval
// ---------------------------------------------------------------------------

model::Window initial_window(const Trajectory& t, int history) {
    model::Window w;
    for (int f = 0; f <= history; ++f)
        w.emplace_back(t.positions.begin() + f * t.n_particles * 2,
                       t.positions.begin() + (f + 1) * t.n_particles * 2);
    return w;
}

double family_raw_value(const MaterialParams& m, film::KappaFamily family) {
    return family == film::KappaFamily::kFriction ? m.friction_angle_deg : m.cohesion_kpa;
}

Trajectory rollout_against(const ckpt::LoadedCheckpoint& loaded, const Trajectory& truth,
                           std::int64_t steps, std::optional<double> kappa_raw) {
    const int c = loaded.gns.features.velocity_history;
    if (truth.n_frames < c + 2) throw std::runtime_error("trajectory too short for the window");
    const auto n_steps = std::min<std::int64_t>(steps > 0 ? steps : truth.n_frames - (c + 1),
                                                truth.n_frames - (c + 1));
    model::RolloutResult r;
    if (loaded.film) {
        const auto cm = loaded.conditioned();
        const double raw = kappa_raw ? *kappa_raw
                                     : family_raw_value(truth.material, cm.film.kappa_family);
        const double kappa = film::normalize_kappa(raw, cm.film.kappa_family, cm.film.kappa_min,
                                                   cm.film.kappa_max);
        r = film::rollout(cm, initial_window(truth, c), truth.n_particles, truth.dt_s,
                          truth.domain_size_m, n_steps, kappa);
    } else {
        r = model::rollout(loaded.gns, initial_window(truth, c), truth.n_particles, truth.dt_s,
                           truth.domain_size_m, n_steps);
    }
    Trajectory pred = truth;
    pred.n_frames = r.n_frames;
    pred.positions = r.positions;
    return pred;
}

json trajectory_pair_metrics(const Trajectory& pred, const Trajectory& truth) {
    Trajectory truth_cut = truth;
    truth_cut.n_frames = pred.n_frames;
    truth_cut.positions.assign(truth.positions.begin(),
                               truth.positions.begin() + pred.n_frames * pred.n_particles * 2);
    const double mse = metrics::rollout_mse(pred, truth_cut);
    const double cell_mass = truth.material.density_kg_m3 *
                             truth.initial_column_m[2] * truth.initial_column_m[3] /
                             static_cast<double>(truth.n_particles);
    const auto e_pred = metrics::energy_series(pred, cell_mass);
    const auto e_true = metrics::energy_series(truth_cut, cell_mass);
    double mean_dek = 0.0, mean_dep = 0.0;
    if (e_true.e0 > 0.0) {
        const auto dek = metrics::normalized_energy_delta(e_pred.kinetic, e_true.kinetic, e_true.e0);
        const auto dep =
            metrics::normalized_energy_delta(e_pred.potential, e_true.potential, e_true.e0);
        for (double v : dek) mean_dek += v;
        for (double v : dep) mean_dep += v;
        mean_dek /= static_cast<double>(dek.size());
        mean_dep /= static_cast<double>(dep.size());
    }
    return json{{"rollout_mse", mse},
                {"final_mped_matched",
                 metrics::mped(metrics::final_frame(pred), metrics::final_frame(truth_cut),
                               metrics::MpedVariant::kMatched)},
                {"final_mped_literal",
                 metrics::mped(metrics::final_frame(pred), metrics::final_frame(truth_cut),
                               metrics::MpedVariant::kLiteral)},
                {"mean_energy_delta_kinetic", mean_dek},
                {"mean_energy_delta_potential", mean_dep},
                {"frames", pred.n_frames}};
}

struct RolloutArgs {
    std::string model;
    std::string traj;
    std::string out;
    std::int64_t steps = 0;
    double kappa_raw = std::numeric_limits<double>::quiet_NaN();
};

int run_rollout(const RolloutArgs& a) {
    ensure_run_dirs(a.out);
    const auto loaded = ckpt::load_checkpoint(a.model);
    const auto truth = io::read_trajectory(a.traj);
    std::optional<double> kappa;
    if (std::isfinite(a.kappa_raw)) kappa = a.kappa_raw;
    const auto pred = rollout_against(loaded, truth, a.steps, kappa);
    io::write_trajectory(pred, (fs::path(a.out) / "rollout.gnst").string());

    std::vector<std::vector<double>> rows;
    for (std::int64_t f = 0; f < pred.n_frames; ++f) {
        double err = 0.0;
        for (std::int64_t i = 0; i < pred.n_particles; ++i)
            err += sq(pred.x(f, i) - truth.x(f, i)) + sq(pred.y(f, i) - truth.y(f, i));
        rows.push_back({static_cast<double>(f), err / static_cast<double>(pred.n_particles)});
    }
    write_csv((fs::path(a.out) / "metrics" / "rollout.csv").string(), "frame,mse", rows);
    const json m = trajectory_pair_metrics(pred, truth);
    io::write_text_file((fs::path(a.out) / "metrics" / "rollout.json").string(), m.dump(2) + "\n");
    std::printf("rollout: %s frames, mse %s\n", format_double(pred.n_frames).c_str(),
                format_double(m["rollout_mse"].get<double>(), 6).c_str());
    return 0;
}

struct EvalArgs {
    std::string model;
    std::string data;
    std::string out;
    std::string role = "test";
    std::string pred;
    std::string truth;
    std::int64_t steps = 0;
    int jobs = 2;
};

int run_eval(const EvalArgs& a) {
    ensure_run_dirs(a.out);
    if (!a.pred.empty() || !a.truth.empty()) {
        if (a.pred.empty() || a.truth.empty())
            throw std::runtime_error("--pred and --truth must be given together");
        const auto pred = io::read_trajectory(a.pred);
        const auto truth = io::read_trajectory(a.truth);
        const json m = trajectory_pair_metrics(pred, truth);
        io::write_text_file((fs::path(a.out) / "metrics" / "eval_summary.json").string(),
                            m.dump(2) + "\n");
        std::printf("eval: pair mode, rollout mse %s\n",
                    format_double(m["rollout_mse"].get<double>(), 6).c_str());
        return 0;
    }

    const auto loaded = ckpt::load_checkpoint(a.model);
    const auto dataset = load_dataset(a.data);
    const auto trajs = dataset.load_role(io::role_from_name(a.role));
    if (trajs.empty()) throw std::runtime_error("no " + a.role + "-role trajectories in " + a.data);

    std::vector<json> per_traj(trajs.size());
    std::size_t next = 0;
    while (next < trajs.size()) {
        const std::size_t wave = std::min<std::size_t>(std::max(1, a.jobs), trajs.size() - next);
        std::vector<std::future<json>> futures;
        for (std::size_t w = 0; w < wave; ++w) {
            const Trajectory* t = &trajs[next + w];
            futures.push_back(std::async(std::launch::async, [&loaded, t, &a] {
                const auto pred = rollout_against(loaded, *t, a.steps, std::nullopt);
                return trajectory_pair_metrics(pred, *t);
            }));
        }
        for (std::size_t w = 0; w < wave; ++w) per_traj[next + w] = futures[w].get();
        next += wave;
    }

    std::vector<std::vector<double>> rows;
    std::vector<double> mses, mpeds;
    for (std::size_t i = 0; i < per_traj.size(); ++i) {
        const auto& m = per_traj[i];
        rows.push_back({static_cast<double>(i), m["rollout_mse"].get<double>(),
                        m["final_mped_matched"].get<double>(),
                        m["mean_energy_delta_kinetic"].get<double>(),
                        m["mean_energy_delta_potential"].get<double>()});
        mses.push_back(m["rollout_mse"].get<double>());
        mpeds.push_back(m["final_mped_matched"].get<double>());
    }
    write_csv((fs::path(a.out) / "metrics" / "eval.csv").string(),
              "trajectory,rollout_mse,final_mped_matched,mean_energy_delta_kinetic,"
              "mean_energy_delta_potential",
              rows);
    const json summary{{"rollout_mse", quartiles(mses)},
                       {"final_mped_matched", quartiles(mpeds)},
                       {"n_trajectories", trajs.size()}};
    io::write_text_file((fs::path(a.out) / "metrics" / "eval_summary.json").string(),
                        summary.dump(2) + "\n");
    std::printf("eval: %zu trajectories, median rollout mse %s\n", trajs.size(),
                format_double(summary["rollout_mse"]["median"].get<double>(), 6).c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// invert / pca
// ---------------------------------------------------------------------------

struct InvertArgs {
    std::string param = "cohesion";
    std::vector<double> bounds;
    std::string observed;
    std::string model;
    std::string forward = "surrogate";
    std::string config_path;
    std::string material_path;
    std::string out;
    int n_init = 3;
    int max_iters = 20;
    std::uint64_t seed = 0;
};

int run_invert(const InvertArgs& a) {
    ensure_run_dirs(a.out);
    if (a.bounds.size() != 2) throw std::runtime_error("--bounds needs exactly two values");
    inverse::BoConfig cfg;
    cfg.lo = a.bounds[0];
    cfg.hi = a.bounds[1];
    cfg.n_init = a.n_init;
    cfg.max_iters = a.max_iters;
    cfg.seed = a.seed;
    cfg.validate();

    const auto observed = io::read_trajectory(a.observed);
    const film::KappaFamily family = film::family_from_name(a.param);

    std::function<double(double)> objective;
    std::optional<ckpt::LoadedCheckpoint> loaded;
    std::optional<film::ConditionedModel> cm;
    if (a.forward == "surrogate") {
        if (a.model.empty()) throw std::runtime_error("--model is required for surrogate mode");
        loaded = ckpt::load_checkpoint(a.model);
        cm = loaded->conditioned();
        if (cm->film.kappa_family != family)
            throw std::runtime_error("checkpoint conditions on a different parameter family");
        objective = [&](double candidate) { return inverse::objective(candidate, observed, *cm); };
    } else if (a.forward == "oracle") {
        if (a.config_path.empty())
            throw std::runtime_error("--config is required for oracle mode");
        const auto mpm_cfg = mpm_config_from_json(load_json_file(a.config_path));
        MaterialParams base = observed.material;
        if (!a.material_path.empty())
            base = io::material_from_json(load_json_file(a.material_path));
        objective = [&, mpm_cfg, base](double candidate) {
            MaterialParams m = base;
            if (family == film::KappaFamily::kFriction)
                m.friction_angle_deg = candidate;
            else
                m.cohesion_kpa = candidate;
            const auto sim = mpm::generate_trajectory(mpm_cfg, m, observed.seed);
            return metrics::mped(metrics::final_frame(sim), metrics::final_frame(observed),
                                 metrics::MpedVariant::kMatched);
        };
    } else {
        throw std::runtime_error("--forward must be surrogate or oracle");
    }

    const auto trace = inverse::run_bo(objective, cfg);
    std::vector<std::vector<double>> rows;
    json steps = json::array();
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
        const auto& s = trace.steps[i];
        rows.push_back({static_cast<double>(i), s.x, s.loss, s.best});
        steps.push_back({{"iter", i}, {"x", s.x}, {"loss", s.loss}, {"best", s.best}});
    }
    write_csv((fs::path(a.out) / "metrics" / "bo_trace.csv").string(), "iter,x,loss,best", rows);
    const json summary{{"param", a.param},     {"bounds", a.bounds},
                       {"best_x", trace.best_x}, {"best_loss", trace.best_loss},
                       {"evaluations", trace.steps.size()}, {"steps", steps}};
    io::write_text_file((fs::path(a.out) / "metrics" / "bo_trace.json").string(),
                        summary.dump(2) + "\n");
    std::printf("invert: best %s = %s with loss %s after %zu evaluations\n", a.param.c_str(),
                format_double(trace.best_x, 6).c_str(),
                format_double(trace.best_loss, 6).c_str(), trace.steps.size());
    return 0;
}

struct PcaArgs {
    std::string model;
    std::string probe;
    std::string out;
    std::string kappas = "0:1.2:9";
    int frames = 5;
};

int run_pca(const PcaArgs& a) {
    ensure_run_dirs(a.out);
    const auto loaded = ckpt::load_checkpoint(a.model);
    const auto cm = loaded.conditioned();
    const auto probe = io::read_trajectory(a.probe);

    std::vector<double> grid;
    const auto c1 = a.kappas.find(':');
    if (c1 != std::string::npos) {
        const auto c2 = a.kappas.find(':', c1 + 1);
        if (c2 == std::string::npos) throw std::runtime_error("--kappas wants lo:hi:n or a list");
        const double lo = std::stod(a.kappas.substr(0, c1));
        const double hi = std::stod(a.kappas.substr(c1 + 1, c2 - c1 - 1));
        const int n = std::stoi(a.kappas.substr(c2 + 1));
        if (n < 2) throw std::runtime_error("--kappas needs at least 2 grid points");
        for (int i = 0; i < n; ++i)
            grid.push_back(lo + (hi - lo) * static_cast<double>(i) / (n - 1));
    } else {
        grid = parse_values(a.kappas);
    }

    const auto sweep = analysis::collect_film_sweep(cm, grid, probe, a.frames);
    json summary;
    for (const auto& [position, matrix] : sweep) {
        const auto res = analysis::pca(matrix.rows, 2);
        std::vector<std::vector<double>> rows;
        for (std::int64_t r = 0; r < matrix.rows.rows; ++r) {
            std::vector<double> row{matrix.kappas[static_cast<std::size_t>(r)],
                                    static_cast<double>(matrix.probe_frames[static_cast<std::size_t>(r)])};
            for (std::int64_t c = 0; c < res.projections.cols; ++c)
                row.push_back(res.projections.at(r, c));
            rows.push_back(std::move(row));
        }
        std::string name = position;
        for (auto& ch : name)
            if (ch == '.') ch = '_';
        write_csv((fs::path(a.out) / "metrics" / ("film_pca_" + name + ".csv")).string(),
                  "kappa,probe_frame,pc1,pc2", rows);
        const auto smooth = analysis::sweep_smoothness(matrix, res);
        summary[position] = {{"explained_ratio", res.explained_ratio},
                             {"path_length", smooth.path_length},
                             {"max_jump", smooth.max_jump}};
    }
    io::write_text_file((fs::path(a.out) / "metrics" / "film_pca_summary.json").string(),
                        summary.dump(2) + "\n");
    std::printf("pca: %zu hooked positions over %zu kappa values\n", sweep.size(), grid.size());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"material-conditioned graph network simulator for granular column collapse"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "run the ground-truth solver over a material grid");
    generate->add_option("--out", gen.out, "run directory")->required();
    generate->add_option("--config", gen.config_path, "solver config JSON");
    generate->add_option("--material", gen.material_path, "base material JSON");
    generate->add_option("--param-family", gen.family, "friction|cohesion");
    generate->add_option("--values", gen.values, "comma-separated parameter values");
    generate->add_option("--role", gen.role, "pretrain|adapt|test");
    generate->add_option("--seeds", gen.seeds, "a..b range or comma list");
    generate->add_option("--jobs", gen.jobs, "parallel workers");
    generate->add_option("--window-tau-multiple", gen.window_multiple,
                         "truncate outputs to t <= multiple*tau_c");

    TrainArgs pre;
    auto* pretrain = app.add_subcommand("pretrain", "train a model from scratch on one material");
    pretrain->add_option("--data", pre.data, "dataset directory")->required();
    pretrain->add_option("--out", pre.out, "run directory")->required();
    pretrain->add_option("--train-config", pre.train_config_path, "training config JSON");
    pretrain->add_option("--epochs", pre.epochs);
    pretrain->add_option("--batch", pre.batch);
    pretrain->add_option("--lr-init", pre.lr_init);
    pretrain->add_option("--lr-final", pre.lr_final);
    pretrain->add_option("--noise", pre.noise_scale);
    pretrain->add_option("--stride", pre.stride);
    pretrain->add_option("--jobs", pre.jobs);
    pretrain->add_option("--seed", pre.seed)->each([&pre](const std::string&) { pre.seed_set = true; });
    pretrain->add_option("--latent", pre.latent);
    pretrain->add_option("--blocks", pre.blocks);
    pretrain->add_option("--hidden", pre.hidden);
    pretrain->add_option("--radius", pre.radius);
    pretrain->add_option("--history", pre.history);
    pretrain->add_option("--resume", pre.resume, "checkpoint to continue training from");

    TrainArgs fin;
    auto* finetune = app.add_subcommand("finetune", "adapt a checkpoint to a target material");
    finetune->add_option("--base", fin.base_checkpoint, "base checkpoint")->required();
    finetune->add_option("--data", fin.data, "dataset directory")->required();
    finetune->add_option("--out", fin.out, "run directory")->required();
    finetune->add_option("--unlock", fin.unlock, "comma-separated group globs")->required();
    finetune->add_option("--train-config", fin.train_config_path);
    finetune->add_option("--epochs", fin.epochs);
    finetune->add_option("--batch", fin.batch);
    finetune->add_option("--lr-init", fin.lr_init);
    finetune->add_option("--lr-final", fin.lr_final);
    finetune->add_option("--noise", fin.noise_scale);
    finetune->add_option("--stride", fin.stride);
    finetune->add_option("--jobs", fin.jobs);
    finetune->add_option("--seed", fin.seed)->each([&fin](const std::string&) { fin.seed_set = true; });
    finetune->add_option("--window-tau-multiple", fin.window_multiple);

    TrainArgs film_args;
    auto* train_film = app.add_subcommand("train-film", "train conditioning generators on adapt materials");
    train_film->add_option("--base", film_args.base_checkpoint, "base checkpoint")->required();
    train_film->add_option("--data", film_args.data, "dataset directory")->required();
    train_film->add_option("--out", film_args.out, "run directory")->required();
    train_film->add_option("--film-blocks", film_args.film_blocks, "condition blocks 1..K");
    train_film->add_option("--param-family", film_args.family, "friction|cohesion");
    train_film->add_flag("--film-shared", film_args.film_shared,
                         "share one generator pair across positions");
    train_film->add_option("--train-config", film_args.train_config_path);
    train_film->add_option("--epochs", film_args.epochs);
    train_film->add_option("--batch", film_args.batch);
    train_film->add_option("--lr-init", film_args.lr_init);
    train_film->add_option("--lr-final", film_args.lr_final);
    train_film->add_option("--noise", film_args.noise_scale);
    train_film->add_option("--stride", film_args.stride);
    train_film->add_option("--jobs", film_args.jobs);
    train_film->add_option("--seed", film_args.seed)
        ->each([&film_args](const std::string&) { film_args.seed_set = true; });
    train_film->add_option("--window-tau-multiple", film_args.window_multiple);

    TrainArgs sens;
    auto* sensitivity = app.add_subcommand("sensitivity", "full-unlock fine-tune with update statistics");
    sensitivity->add_option("--base", sens.base_checkpoint, "base checkpoint")->required();
    sensitivity->add_option("--data", sens.data, "dataset directory")->required();
    sensitivity->add_option("--out", sens.out, "run directory")->required();
    sensitivity->add_option("--epochs", sens.epochs);
    sensitivity->add_option("--batch", sens.batch);
    sensitivity->add_option("--lr-init", sens.lr_init);
    sensitivity->add_option("--lr-final", sens.lr_final);
    sensitivity->add_option("--jobs", sens.jobs);
    sensitivity->add_option("--seed", sens.seed)
        ->each([&sens](const std::string&) { sens.seed_set = true; });

    RolloutArgs roll;
    auto* rollout = app.add_subcommand("rollout", "closed-loop prediction against a trajectory");
    rollout->add_option("--model", roll.model, "checkpoint")->required();
    rollout->add_option("--traj", roll.traj, "ground-truth trajectory")->required();
    rollout->add_option("--out", roll.out, "run directory")->required();
    rollout->add_option("--steps", roll.steps, "steps to predict (default: full length)");
    rollout->add_option("--kappa-raw", roll.kappa_raw, "raw material parameter for conditioning");

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "aggregate rollout metrics over a dataset role");
    eval->add_option("--model", ev.model, "checkpoint");
    eval->add_option("--data", ev.data, "dataset directory");
    eval->add_option("--out", ev.out, "run directory")->required();
    eval->add_option("--role", ev.role, "dataset role to evaluate");
    eval->add_option("--steps", ev.steps);
    eval->add_option("--jobs", ev.jobs);
    eval->add_option("--pred", ev.pred, "pair mode: predicted trajectory");
    eval->add_option("--truth", ev.truth, "pair mode: ground-truth trajectory");

    InvertArgs inv;
    auto* invert = app.add_subcommand("invert", "recover a material parameter from an observed trajectory");
    invert->add_option("--param", inv.param, "friction|cohesion");
    invert->add_option("--bounds", inv.bounds, "search bounds (two values)")->expected(2);
    invert->add_option("--observed", inv.observed, "observed trajectory")->required();
    invert->add_option("--model", inv.model, "conditioned checkpoint (surrogate mode)");
    invert->add_option("--forward", inv.forward, "surrogate|oracle");
    invert->add_option("--config", inv.config_path, "solver config JSON (oracle mode)");
    invert->add_option("--material", inv.material_path, "base material JSON (oracle mode)");
    invert->add_option("--out", inv.out, "run directory")->required();
    invert->add_option("--n-init", inv.n_init);
    invert->add_option("--max-iters", inv.max_iters);
    invert->add_option("--seed", inv.seed);

    PcaArgs pca_args;
    auto* pca_cmd = app.add_subcommand("pca", "project modulation parameters over a kappa sweep");
    pca_cmd->add_option("--model", pca_args.model, "conditioned checkpoint")->required();
    pca_cmd->add_option("--probe", pca_args.probe, "probe trajectory")->required();
    pca_cmd->add_option("--out", pca_args.out, "run directory")->required();
    pca_cmd->add_option("--kappas", pca_args.kappas, "lo:hi:n or comma list");
    pca_cmd->add_option("--frames", pca_args.frames, "probe frames");

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) return run_generate(gen);
        if (pretrain->parsed()) return run_pretrain(pre);
        if (finetune->parsed()) return run_finetune(fin, false);
        if (sensitivity->parsed()) return run_finetune(sens, true);
        if (train_film->parsed()) return run_train_film(film_args);
        if (rollout->parsed()) return run_rollout(roll);
        if (eval->parsed()) return run_eval(ev);
        if (invert->parsed()) return run_invert(inv);
        if (pca_cmd->parsed()) return run_pca(pca_args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "error: no subcommand\n";
    return 1;
}
