#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnsim/model.hpp"
#include "gnsim/nn.hpp"

namespace gnsim::film {

/// Which scalar material parameter drives the conditioning network.
enum class KappaFamily { kFriction, kCohesion };

inline std::string family_name(KappaFamily f) {
    return f == KappaFamily::kFriction ? "friction" : "cohesion";
}

inline KappaFamily family_from_name(const std::string& s) {
    if (s == "friction") return KappaFamily::kFriction;
    if (s == "cohesion") return KappaFamily::kCohesion;
    throw std::runtime_error("unknown kappa family: " + s);
}

/// Maps a raw material parameter to the conditioning scalar. Friction uses
/// tan(phi) space; bounds are (tan(phi_min), tan(phi_max)) or (c_min, c_max).
/// Values outside the bounds pass through unclamped.
inline double normalize_kappa(double raw, KappaFamily family, double bound_min,
                              double bound_max) {
    if (!(bound_max > bound_min))
        throw std::invalid_argument("normalize_kappa: degenerate bounds");
    const double value =
        family == KappaFamily::kFriction ? std::tan(raw * M_PI / 180.0) : raw;
    return (value - bound_min) / (bound_max - bound_min);
}

inline double kappa_for_material(const MaterialParams& mat, KappaFamily family,
                                 double bound_min, double bound_max) {
    const double raw =
        family == KappaFamily::kFriction ? mat.friction_angle_deg : mat.cohesion_kpa;
    return normalize_kappa(raw, family, bound_min, bound_max);
}

struct FilmConfig {
    int target_blocks = 1;               // K: hooks on blocks 1..K
    std::vector<int> target_layers{2, 3};  // of each 3-layer MLP
    int cond_hidden = 16;
    int film_hidden = 32;
    KappaFamily kappa_family = KappaFamily::kFriction;
    double kappa_min = 0.0;
    double kappa_max = 1.0;
    bool shared = false;  // one generator pair reused by every hooked position

    void validate(int n_mp_blocks) const {
        if (target_blocks < 1 || target_blocks > n_mp_blocks)
            throw std::invalid_argument("FilmConfig.target_blocks must be in [1, L]");
        if (!(kappa_max > kappa_min))
            throw std::invalid_argument("FilmConfig: kappa bounds must satisfy min < max");
        if (cond_hidden <= 0 || film_hidden <= 0)
            throw std::invalid_argument("FilmConfig: hidden dims must be > 0");
        if (target_layers.empty())
            throw std::invalid_argument("FilmConfig.target_layers must be nonempty");
    }
};

/// One hooked layer position: (block, node-or-edge MLP, layer index).
struct HookPosition {
    int block = 1;
    bool edge_mlp = true;
    int layer = 2;
    int d_in = 0;   // width of the layer input
    int d_out = 0;  // width of the layer pre-activation

    std::string key() const {
        return "block_" + std::to_string(block) + (edge_mlp ? ".edge" : ".node") + ".layer" +
               std::to_string(layer);
    }
};

inline std::vector<HookPosition> hook_positions(const model::GnsModel& gns,
                                                const FilmConfig& cfg) {
    std::vector<HookPosition> out;
    for (int k = 1; k <= cfg.target_blocks; ++k) {
        for (int pass = 0; pass < 2; ++pass) {
            const bool edge = pass == 0;
            const nn::MlpDef def = edge ? gns.block_edge_def(k) : gns.block_node_def(k);
            for (int l : cfg.target_layers) {
                if (l < 2 || l > def.n_layers())
                    throw std::invalid_argument("FilmConfig: target layer out of range");
                out.push_back(HookPosition{k, edge, l, def.dims[l - 1], def.dims[l]});
            }
        }
    }
    return out;
}

/// Parameter prefix of the generator pair serving one hook position.
inline std::string generator_prefix(const FilmConfig& cfg, const HookPosition& pos) {
    return cfg.shared ? "film.shared" : "film." + pos.key();
}

inline nn::MlpDef cond_mlp_def(const FilmConfig& cfg, const HookPosition& pos) {
    return {generator_prefix(cfg, pos) + ".cond", {1, cfg.cond_hidden, pos.d_in}, false};
}

inline nn::MlpDef film_mlp_def(const FilmConfig& cfg, const HookPosition& pos) {
    return {generator_prefix(cfg, pos) + ".film", {pos.d_in, cfg.film_hidden, 2 * pos.d_out},
            false};
}

/// A GNS whose early message-passing layers are modulated by the
/// material-conditioning generators. Base parameters are frozen; generator
/// parameters live in the same store under the `film.` prefix.
struct ConditionedModel {
    model::GnsModel gns;
    FilmConfig film;

    double kappa_of(const MaterialParams& mat) const {
        return kappa_for_material(mat, film.kappa_family, film.kappa_min, film.kappa_max);
    }
};

/// Registers the conditioning generators, freezes the base network, and
/// initializes the affine heads at the identity (gamma = 1, beta = 0).
inline ConditionedModel attach(model::GnsModel base, const FilmConfig& cfg,
                               std::uint64_t seed) {
    cfg.validate(base.cfg.n_mp_blocks);
    const auto positions = hook_positions(base, cfg);
    if (cfg.shared) {
        for (const auto& p : positions) {
            if (p.d_in != positions[0].d_in || p.d_out != positions[0].d_out)
                throw std::invalid_argument(
                    "FilmConfig.shared requires identical layer widths at every hooked position");
        }
    }

    for (auto& [name, g] : base.params.groups) g.trainable = false;

    Rng rng(seed);
    for (const auto& pos : positions) {
        const auto cond = cond_mlp_def(cfg, pos);
        if (base.params.has(cond.weight_name(1))) continue;  // shared pair already registered
        const auto fgen = film_mlp_def(cfg, pos);
        nn::register_mlp(base.params, cond);
        nn::register_mlp(base.params, fgen);
        nn::init_xavier(base.params, cond, rng);
        nn::init_xavier(base.params, fgen, rng);
        // zero the affine head so training starts from the identity modulation
        const int last = fgen.n_layers();
        for (auto& v : base.params.at(fgen.weight_name(last)).values) v = 0.0f;
        for (auto& v : base.params.at(fgen.bias_name(last)).values) v = 0.0f;
    }
    return ConditionedModel{std::move(base), cfg};
}

inline std::size_t film_param_count(const model::GnsModel& gns, const FilmConfig& cfg) {
    std::size_t n = 0;
    std::vector<std::string> seen;
    for (const auto& pos : hook_positions(gns, cfg)) {
        const std::string prefix = generator_prefix(cfg, pos);
        if (std::find(seen.begin(), seen.end(), prefix) != seen.end()) continue;
        seen.push_back(prefix);
        n += cond_mlp_def(cfg, pos).param_count() + film_mlp_def(cfg, pos).param_count();
    }
    return n;
}

/// Mean (gamma, beta) per hooked position, appended once per forward pass.
struct FilmCapture {
    std::map<std::string, std::vector<std::vector<double>>> rows;
};

template <class S>
struct FilmHookTape final : nn::HookTape<S> {
    nn::Mat<S> raw_preact;
    nn::Mat<S> cond_out;  // 1 x d_in
    nn::MlpTape<S> cond_tape;
    nn::MlpTape<S> film_tape;
};

/// Pre-activation hook implementing the gated state-and-material modulation:
/// z = cond(kappa) ⊙ h_prev, (gamma, beta) = gen(z), out = gamma ⊙ preact + beta.
/// gamma is parameterized as 1 + delta with a zero-initialized head.
template <class S>
class FilmPreactHook final : public nn::PreactHook<S> {
public:
    FilmPreactHook(const FilmConfig& cfg, HookPosition pos, double kappa,
                   FilmCapture* capture)
        : cond_def_(cond_mlp_def(cfg, pos)), film_def_(film_mlp_def(cfg, pos)),
          pos_(std::move(pos)), kappa_(kappa), capture_(capture) {}

    std::unique_ptr<nn::HookTape<S>> forward(const nn::ParamStoreT<S>& params,
                                             const nn::Mat<S>& h_prev, nn::Mat<S>& preact,
                                             bool want_tape) override {
        auto tape = want_tape ? std::make_unique<FilmHookTape<S>>() : nullptr;
        nn::Mat<S> kappa_in(1, 1);
        kappa_in.at(0, 0) = static_cast<S>(kappa_);
        nn::Mat<S> cond_out = nn::mlp_forward(params, cond_def_, kappa_in,
                                              tape ? &tape->cond_tape : nullptr);

        const std::int64_t n = h_prev.rows;
        const std::int64_t din = h_prev.cols;
        const std::int64_t dout = preact.cols;
        nn::Mat<S> z(n, din);
        for (std::int64_t r = 0; r < n; ++r) {
            const S* hp = h_prev.row(r);
            S* zr = z.row(r);
            for (std::int64_t j = 0; j < din; ++j) zr[j] = cond_out.at(0, j) * hp[j];
        }
        nn::Mat<S> heads = nn::mlp_forward(params, film_def_, z,
                                           tape ? &tape->film_tape : nullptr);
        if (tape) {
            tape->raw_preact = preact;
            tape->cond_out = cond_out;
        }
        if (capture_ && n > 0) {
            std::vector<double> row(static_cast<std::size_t>(2 * dout), 0.0);
            for (std::int64_t r = 0; r < n; ++r) {
                for (std::int64_t o = 0; o < dout; ++o) {
                    row[static_cast<std::size_t>(o)] += 1.0 + static_cast<double>(heads.at(r, o));
                    row[static_cast<std::size_t>(dout + o)] +=
                        static_cast<double>(heads.at(r, dout + o));
                }
            }
            for (auto& v : row) v /= static_cast<double>(n);
            capture_->rows[pos_.key()].push_back(std::move(row));
        }
        for (std::int64_t r = 0; r < n; ++r) {
            const S* hr = heads.row(r);
            S* pr = preact.row(r);
            for (std::int64_t o = 0; o < dout; ++o)
                pr[o] = (S(1) + hr[o]) * pr[o] + hr[dout + o];
        }
        return tape;
    }

    void backward(const nn::ParamStoreT<S>& params, const nn::HookTape<S>& tape_base,
                  const nn::Mat<S>& h_prev, nn::Mat<S>& d_preact, nn::Mat<S>& d_h_prev,
                  nn::ParamStoreT<S>& grads) override {
        const auto& tape = dynamic_cast<const FilmHookTape<S>&>(tape_base);
        const std::int64_t n = h_prev.rows;
        const std::int64_t din = h_prev.cols;
        const std::int64_t dout = d_preact.cols;
        const nn::Mat<S>& heads = tape.film_tape.h.back();

        nn::Mat<S> d_heads(n, 2 * dout);
        for (std::int64_t r = 0; r < n; ++r) {
            const S* dp = d_preact.row(r);
            const S* raw = tape.raw_preact.row(r);
            const S* hr = heads.row(r);
            S* dh = d_heads.row(r);
            S* dpm = d_preact.row(r);
            for (std::int64_t o = 0; o < dout; ++o) {
                dh[o] = dp[o] * raw[o];            // d gamma
                dh[dout + o] = dp[o];              // d beta
                dpm[o] = dp[o] * (S(1) + hr[o]);   // d raw preact
            }
        }
        nn::Mat<S> dz = nn::mlp_backward(params, film_def_, tape.film_tape, d_heads, grads);

        nn::Mat<S> d_cond(1, din);
        for (std::int64_t r = 0; r < n; ++r) {
            const S* dzr = dz.row(r);
            const S* hp = h_prev.row(r);
            S* dhp = d_h_prev.row(r);
            for (std::int64_t j = 0; j < din; ++j) {
                dhp[j] += dzr[j] * tape.cond_out.at(0, j);
                d_cond.at(0, j) += dzr[j] * hp[j];
            }
        }
        nn::mlp_backward(params, cond_def_, tape.cond_tape, d_cond, grads);
    }

private:
    nn::MlpDef cond_def_;
    nn::MlpDef film_def_;
    HookPosition pos_;
    double kappa_;
    FilmCapture* capture_;
};

/// Owning set of hooks for one forward/backward pass at a fixed kappa.
template <class S>
struct FilmHookSet {
    std::vector<std::unique_ptr<FilmPreactHook<S>>> owned;
    model::ModelHooks<S> hooks;
};

template <class S>
FilmHookSet<S> make_film_hooks(const model::GnsModel& gns, const FilmConfig& cfg, double kappa,
                               FilmCapture* capture = nullptr) {
    FilmHookSet<S> set;
    for (const auto& pos : hook_positions(gns, cfg)) {
        auto hook = std::make_unique<FilmPreactHook<S>>(cfg, pos, kappa, capture);
        auto& block = set.hooks[pos.block];
        (pos.edge_mlp ? block.edge : block.node)[pos.layer] = hook.get();
        set.owned.push_back(std::move(hook));
    }
    return set;
}

/// Conditioned one-step prediction (de-normalized accelerations).
inline nn::Mat<double> predict_accel(const ConditionedModel& cm, const model::Window& window,
                                     std::int64_t n, double dt,
                                     const std::array<double, 2>& domain, double kappa,
                                     FilmCapture* capture = nullptr) {
    auto hooks = make_film_hooks<float>(cm.gns, cm.film, kappa, capture);
    return model::predict_accel(cm.gns, window, n, dt, domain, &hooks.hooks, kappa);
}

/// Conditioned closed-loop rollout.
inline model::RolloutResult rollout(const ConditionedModel& cm,
                                    const model::Window& initial_window, std::int64_t n,
                                    double dt, const std::array<double, 2>& domain,
                                    std::int64_t n_steps, double kappa) {
    auto hooks = make_film_hooks<float>(cm.gns, cm.film, kappa);
    return model::rollout(cm.gns, initial_window, n, dt, domain, n_steps, &hooks.hooks, kappa);
}

}  // namespace gnsim::film
