#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnsim/common.hpp"
#include "gnsim/dataio.hpp"
#include "gnsim/film.hpp"
#include "gnsim/graph.hpp"
#include "gnsim/model.hpp"
#include "gnsim/nn.hpp"

namespace gnsim::train {

struct TrainConfig {
    double lr_init = 1e-3;
    double lr_final = 1e-5;
    int epochs = 40;
    int batch_size = 4;
    double noise_scale = 6.7e-4;  // position-noise std as a multiple of |velocity std|
    std::uint64_t seed = 0;
    int sample_stride = 1;  // keep every k-th target frame
    int n_threads = 2;
    int val_holdout = 2;  // last windows of each trajectory held out for validation

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("TrainConfig.epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig.batch_size must be >= 1");
        if (lr_init <= 0.0 || lr_final <= 0.0)
            throw std::invalid_argument("TrainConfig learning rates must be > 0");
        if (sample_stride < 1) throw std::invalid_argument("TrainConfig.sample_stride must be >= 1");
        if (n_threads < 1) throw std::invalid_argument("TrainConfig.n_threads must be >= 1");
        if (noise_scale < 0.0) throw std::invalid_argument("TrainConfig.noise_scale must be >= 0");
        if (val_holdout < 0) throw std::invalid_argument("TrainConfig.val_holdout must be >= 0");
    }

    double lr_at(int epoch) const {
        if (epochs <= 1) return lr_init;
        const double f = static_cast<double>(epoch) / (epochs - 1);
        return lr_init * std::pow(lr_final / lr_init, f);
    }
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
    double wall_s = 0.0;
};

using LogCallback = std::function<void(const EpochLog&)>;

/// One supervised window: a trajectory index plus the frame whose
/// acceleration is the target.
struct SampleRef {
    int traj = 0;
    std::int64_t target_frame = 0;
    double kappa = 0.0;
};

struct SampleSplit {
    std::vector<SampleRef> train;
    std::vector<SampleRef> val;
};

inline SampleSplit build_sample_refs(const std::vector<const Trajectory*>& trajs,
                                     const std::vector<double>& kappas, int velocity_history,
                                     int stride, int val_holdout) {
    if (!kappas.empty() && kappas.size() != trajs.size())
        throw std::invalid_argument("build_sample_refs: kappa count mismatch");
    SampleSplit split;
    for (std::size_t ti = 0; ti < trajs.size(); ++ti) {
        const Trajectory& t = *trajs[ti];
        const double kappa = kappas.empty() ? 0.0 : kappas[ti];
        const std::int64_t first = velocity_history;
        const std::int64_t last = t.n_frames - 2;
        if (last < first)
            throw std::invalid_argument("build_sample_refs: trajectory too short for the window");
        std::vector<SampleRef> refs;
        for (std::int64_t f = first; f <= last; f += stride)
            refs.push_back(SampleRef{static_cast<int>(ti), f, kappa});
        const std::size_t n_val = std::min<std::size_t>(refs.size() > 1 ? val_holdout : 0,
                                                        refs.size() - 1);
        split.train.insert(split.train.end(), refs.begin(), refs.end() - n_val);
        split.val.insert(split.val.end(), refs.end() - n_val, refs.end());
    }
    if (split.train.empty()) throw std::invalid_argument("build_sample_refs: no training samples");
    return split;
}

/// Builds the graph sample for one window. Training noise is a seeded random
/// walk over the history frames; the target acceleration is recomputed
/// against the clean next frame so the model learns to damp the noise.
inline graph::GraphSample make_sample(const Trajectory& t, std::int64_t target_frame,
                                      const graph::FeatureConfig& cfg, double noise_std,
                                      std::uint64_t noise_seed, double kappa) {
    const int c = cfg.velocity_history;
    if (target_frame < c || target_frame + 1 >= t.n_frames)
        throw std::invalid_argument("make_sample: target frame out of range");
    const std::int64_t n = t.n_particles;
    model::Window window(static_cast<std::size_t>(c) + 1);
    for (int k = 0; k <= c; ++k) {
        const std::int64_t f = target_frame - c + k;
        window[static_cast<std::size_t>(k)].assign(
            t.positions.begin() + f * n * 2, t.positions.begin() + (f + 1) * n * 2);
    }
    if (noise_std > 0.0) {
        Rng rng(noise_seed);
        const double step_std = noise_std / std::sqrt(static_cast<double>(c));
        std::vector<double> acc(static_cast<std::size_t>(2 * n), 0.0);
        for (int k = 1; k <= c; ++k) {
            auto& frame = window[static_cast<std::size_t>(k)];
            for (std::size_t j = 0; j < acc.size(); ++j) {
                acc[j] += rng.normal(0.0, step_std);
                frame[j] += acc[j];
            }
        }
    }
    const std::vector<double> next(t.positions.begin() + (target_frame + 1) * n * 2,
                                   t.positions.begin() + (target_frame + 2) * n * 2);
    return graph::build_sample(window, n, t.dt_s, t.domain_size_m, cfg, &next, kappa);
}

namespace detail {

struct SampleGrad {
    double loss = 0.0;
    nn::ParamStoreT<float> grads;
};

inline SampleGrad forward_backward_one(const model::GnsModel& m, const graph::GraphSample& s,
                                       const film::FilmConfig* fc) {
    SampleGrad out;
    out.grads = nn::zeros_like<float>(m.params);
    film::FilmHookSet<float> hooks;
    const model::ModelHooks<float>* hook_ptr = nullptr;
    if (fc) {
        hooks = film::make_film_hooks<float>(m, *fc, s.kappa);
        hook_ptr = &hooks.hooks;
    }
    model::GnsTape<float> tape;
    const nn::Mat<float> pred = model::gns_forward<float>(m.params, m, s, &tape, hook_ptr);
    const std::int64_t n = pred.rows;
    nn::Mat<float> d_out(n, 2);
    double loss = 0.0;
    const double scale = 1.0 / static_cast<double>(n * 2);
    for (std::int64_t i = 0; i < n; ++i) {
        for (int d = 0; d < 2; ++d) {
            const double diff = static_cast<double>(pred.at(i, d)) -
                                static_cast<double>(s.target_accel[static_cast<std::size_t>(2 * i + d)]);
            loss += diff * diff * scale;
            d_out.at(i, d) = static_cast<float>(2.0 * diff * scale);
        }
    }
    out.loss = loss;
    model::gns_backward<float>(m.params, m, s, tape, d_out, out.grads, hook_ptr);
    return out;
}

inline void accumulate(nn::ParamStoreT<float>& into, const nn::ParamStoreT<float>& from,
                       float scale) {
    for (auto& [name, g] : into.groups) {
        if (!g.trainable) continue;
        const auto& src = from.at(name);
        for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] += scale * src.values[i];
    }
}

}  // namespace detail

/// Mean one-step MSE of a batch (no gradients). Samples may carry per-sample
/// kappa; `fc` enables the conditioning hooks.
inline double one_step_loss(const model::GnsModel& m,
                            const std::vector<const graph::GraphSample*>& batch,
                            const film::FilmConfig* fc = nullptr) {
    if (batch.empty()) throw std::invalid_argument("one_step_loss: empty batch");
    double total = 0.0;
    for (const auto* s : batch) {
        film::FilmHookSet<float> hooks;
        const model::ModelHooks<float>* hook_ptr = nullptr;
        if (fc) {
            hooks = film::make_film_hooks<float>(m, *fc, s->kappa);
            hook_ptr = &hooks.hooks;
        }
        const nn::Mat<float> pred = model::gns_forward<float>(m.params, m, *s, nullptr, hook_ptr);
        double loss = 0.0;
        for (std::int64_t i = 0; i < pred.rows; ++i) {
            for (int d = 0; d < 2; ++d) {
                loss += sq(static_cast<double>(pred.at(i, d)) -
                           static_cast<double>(s->target_accel[static_cast<std::size_t>(2 * i + d)]));
            }
        }
        total += loss / static_cast<double>(pred.rows * 2);
    }
    return total / static_cast<double>(batch.size());
}

/// Batched loss and gradients. Per-sample work fans out to a small pool; the
/// accumulation runs in sample order so results are thread-count independent.
inline double batch_loss_and_grads(const model::GnsModel& m,
                                   const std::vector<graph::GraphSample>& batch,
                                   nn::ParamStoreT<float>& grads, const film::FilmConfig* fc,
                                   int n_threads) {
    grads = nn::zeros_like<float>(m.params);
    const float scale = 1.0f / static_cast<float>(batch.size());
    double loss = 0.0;
    std::size_t next = 0;
    while (next < batch.size()) {
        const std::size_t wave = std::min<std::size_t>(n_threads, batch.size() - next);
        std::vector<std::future<detail::SampleGrad>> futures;
        for (std::size_t w = 0; w < wave; ++w) {
            const graph::GraphSample* s = &batch[next + w];
            futures.push_back(std::async(std::launch::async, [&m, s, fc] {
                return detail::forward_backward_one(m, *s, fc);
            }));
        }
        for (auto& f : futures) {
            detail::SampleGrad sg = f.get();
            loss += sg.loss / static_cast<double>(batch.size());
            detail::accumulate(grads, sg.grads, scale);
        }
        next += wave;
    }
    return loss;
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index) {
    std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL + (epoch << 32) + index);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

struct FitResult {
    std::vector<EpochLog> history;
    double final_val_loss = 0.0;
};

/// Core training loop shared by pretraining, fine-tuning, and conditioning
/// runs. Trains whatever groups are currently marked trainable in the store.
inline FitResult fit(model::GnsModel& m, const std::vector<const Trajectory*>& trajs,
                     const std::vector<double>& kappas, const TrainConfig& cfg,
                     const film::FilmConfig* fc, const LogCallback& log = nullptr) {
    cfg.validate();
    const SampleSplit split = build_sample_refs(trajs, kappas, m.features.velocity_history,
                                                cfg.sample_stride, cfg.val_holdout);
    const double vel_std_norm = std::sqrt(sq(m.features.stats.vel_std[0]) +
                                          sq(m.features.stats.vel_std[1]));
    const double noise_std = cfg.noise_scale * vel_std_norm;

    std::vector<graph::GraphSample> val_samples;
    for (const auto& ref : split.val)
        val_samples.push_back(make_sample(*trajs[static_cast<std::size_t>(ref.traj)],
                                          ref.target_frame, m.features, 0.0, 0, ref.kappa));
    std::vector<const graph::GraphSample*> val_ptrs;
    for (const auto& s : val_samples) val_ptrs.push_back(&s);

    Rng order_rng(cfg.seed);
    nn::AdamState adam;
    FitResult result;
    const auto t_start = std::chrono::steady_clock::now();

    std::vector<SampleRef> order = split.train;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr_at(epoch);
        order_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<graph::GraphSample> batch;
            for (std::size_t i = start; i < end; ++i) {
                const auto& ref = order[i];
                batch.push_back(make_sample(
                    *trajs[static_cast<std::size_t>(ref.traj)], ref.target_frame, m.features,
                    noise_std, detail::mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), i),
                    ref.kappa));
            }
            nn::ParamStoreT<float> grads;
            const double loss = batch_loss_and_grads(m, batch, grads, fc, cfg.n_threads);
            if (!std::isfinite(loss))
                throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                         std::to_string(epoch));
            nn::adam_step(m.params, grads, adam, static_cast<float>(lr));
            epoch_loss += loss;
            ++n_batches;
        }
        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = epoch_loss / static_cast<double>(n_batches);
        entry.val_loss = val_ptrs.empty() ? 0.0 : one_step_loss(m, val_ptrs, fc);
        entry.lr = lr;
        entry.wall_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        result.history.push_back(entry);
        if (log) log(entry);
    }
    result.final_val_loss = result.history.empty() ? 0.0 : result.history.back().val_loss;
    return result;
}

/// Mean one-step MSE over every valid window of the given trajectories
/// (noise-free, stride to keep evaluation cheap).
inline double eval_one_step_mse(const model::GnsModel& m,
                                const std::vector<const Trajectory*>& trajs,
                                const std::vector<double>& kappas,
                                const film::FilmConfig* fc = nullptr, int stride = 1) {
    const SampleSplit split =
        build_sample_refs(trajs, kappas, m.features.velocity_history, stride, 0);
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& ref : split.train) {
        const graph::GraphSample s =
            make_sample(*trajs[static_cast<std::size_t>(ref.traj)], ref.target_frame,
                        m.features, 0.0, 0, ref.kappa);
        total += one_step_loss(m, {&s}, fc);
        ++count;
    }
    return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// training drivers
// ---------------------------------------------------------------------------

/// Pretraining: all parameter groups trainable.
inline FitResult pretrain(model::GnsModel& m, const std::vector<const Trajectory*>& trajs,
                          const TrainConfig& cfg, const LogCallback& log = nullptr) {
    for (auto& [_, g] : m.params.groups) g.trainable = true;
    return fit(m, trajs, {}, cfg, nullptr, log);
}

/// Per-parameter |delta| with group labels; the raw material for the
/// update-magnitude CDF and the layer ablation comparisons.
struct SensitivityReport {
    std::vector<std::pair<std::string, std::vector<float>>> deltas;
    double test_loss = 0.0;
    std::map<std::string, double> ablation_losses;  // optional, filled by drivers
};

struct FinetuneResult {
    FitResult fit;
    SensitivityReport sensitivity;
};

/// Layer-masked fine-tuning to a single target material. Groups matching the
/// mask train; everything else stays frozen (exactly).
inline FinetuneResult finetune(model::GnsModel& m,
                               const std::vector<const Trajectory*>& target_data,
                               const std::vector<std::string>& mask, const TrainConfig& cfg,
                               const std::vector<const Trajectory*>* test_data = nullptr,
                               const LogCallback& log = nullptr) {
    if (mask.empty()) throw std::invalid_argument("finetune: empty trainable mask");
    const std::size_t unlocked = m.params.apply_trainable_mask(mask);
    if (unlocked == 0)
        throw std::invalid_argument("finetune: mask matched no parameter groups");

    std::map<std::string, std::vector<float>> before;
    for (const auto& [name, g] : m.params.groups) before[name] = g.values;

    FinetuneResult out;
    out.fit = fit(m, target_data, {}, cfg, nullptr, log);

    for (const auto& [name, g] : m.params.groups) {
        std::vector<float> d(g.values.size());
        const auto& b = before[name];
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::abs(g.values[i] - b[i]);
        out.sensitivity.deltas.emplace_back(name, std::move(d));
    }
    if (test_data && !test_data->empty())
        out.sensitivity.test_loss = eval_one_step_mse(m, *test_data, {});
    return out;
}

/// Multi-task conditioning run: the base stays frozen (attach() already
/// dropped its trainable flags); only `film.*` groups move. Batches mix
/// materials uniformly via global shuffling; each sample carries its kappa.
inline FitResult train_film(film::ConditionedModel& cm,
                            const std::vector<const Trajectory*>& trajs,
                            const TrainConfig& cfg, const LogCallback& log = nullptr) {
    std::vector<double> kappas;
    for (const auto* t : trajs) kappas.push_back(cm.kappa_of(t->material));
    double kmin = kappas[0], kmax = kappas[0];
    for (double k : kappas) {
        kmin = std::min(kmin, k);
        kmax = std::max(kmax, k);
    }
    if (!(kmax > kmin))
        throw std::invalid_argument("train_film: need at least 2 distinct adapt materials");
    std::size_t trainable = 0;
    for (const auto& [name, g] : cm.gns.params.groups)
        if (g.trainable) {
            if (name.rfind("film.", 0) != 0)
                throw std::logic_error("train_film: non-film group is trainable");
            ++trainable;
        }
    if (trainable == 0) throw std::invalid_argument("train_film: no film groups registered");
    return fit(cm.gns, trajs, kappas, cfg, &cm.film, log);
}

// ---------------------------------------------------------------------------
// update-magnitude statistics
// ---------------------------------------------------------------------------

struct CdfCurve {
    std::vector<double> frac_params;     // nondecreasing, ends at 1
    std::vector<double> frac_magnitude;  // nondecreasing, ends at 1 (or stays 0)
};

inline std::string component_of(const std::string& group_name) {
    const auto dot = group_name.find('.');
    return dot == std::string::npos ? group_name : group_name.substr(0, dot);
}

/// Sorts |delta| descending within each component and emits cumulative
/// fraction-of-total-magnitude versus fraction-of-parameters.
inline std::map<std::string, CdfCurve> update_cdf(const SensitivityReport& report) {
    std::map<std::string, std::vector<float>> by_component;
    for (const auto& [name, deltas] : report.deltas) {
        auto& bucket = by_component[component_of(name)];
        bucket.insert(bucket.end(), deltas.begin(), deltas.end());
    }
    std::map<std::string, CdfCurve> out;
    for (auto& [component, deltas] : by_component) {
        std::sort(deltas.begin(), deltas.end(), std::greater<float>());
        double total = 0.0;
        for (float d : deltas) total += d;
        CdfCurve curve;
        double acc = 0.0;
        const double n = static_cast<double>(deltas.size());
        for (std::size_t i = 0; i < deltas.size(); ++i) {
            acc += deltas[i];
            curve.frac_params.push_back(static_cast<double>(i + 1) / n);
            curve.frac_magnitude.push_back(total > 0.0 ? acc / total : 0.0);
        }
        out[component] = std::move(curve);
    }
    return out;
}

/// Smallest parameter fraction whose updates cover `target` of the total
/// magnitude.
inline double fraction_covering(const CdfCurve& curve, double target) {
    for (std::size_t i = 0; i < curve.frac_magnitude.size(); ++i)
        if (curve.frac_magnitude[i] >= target) return curve.frac_params[i];
    return 1.0;
}

}  // namespace gnsim::train
