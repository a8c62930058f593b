#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnsim/common.hpp"

namespace gnsim::nn {

template <class S>
struct Mat {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<S> v;

    Mat() = default;
    Mat(std::int64_t r, std::int64_t c) : rows(r), cols(c), v(static_cast<std::size_t>(r * c), S(0)) {}

    S* row(std::int64_t i) { return v.data() + i * cols; }
    const S* row(std::int64_t i) const { return v.data() + i * cols; }
    S& at(std::int64_t i, std::int64_t j) { return v[static_cast<std::size_t>(i * cols + j)]; }
    S at(std::int64_t i, std::int64_t j) const { return v[static_cast<std::size_t>(i * cols + j)]; }
    void zero() { std::fill(v.begin(), v.end(), S(0)); }
};

template <class To, class From>
Mat<To> cast_mat(const Mat<From>& m) {
    Mat<To> out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.v.size(); ++i) out.v[i] = static_cast<To>(m.v[i]);
    return out;
}

template <class S>
struct ParamGroup {
    std::vector<S> values;
    std::int64_t rows = 0;  // for bias vectors rows=1
    std::int64_t cols = 0;
    bool trainable = true;
};

/// Named parameter groups in sorted-name order. Group names follow the
/// component hierarchy (encoder.*, processor.block_k.*, decoder.*, film.*),
/// which is what freezing masks and the update-magnitude reports key on.
template <class S>
struct ParamStoreT {
    std::map<std::string, ParamGroup<S>> groups;

    ParamGroup<S>& add(const std::string& name, std::int64_t rows, std::int64_t cols) {
        auto [it, inserted] = groups.emplace(name, ParamGroup<S>{});
        if (!inserted) throw std::invalid_argument("ParamStore: duplicate group " + name);
        it->second.rows = rows;
        it->second.cols = cols;
        it->second.values.assign(static_cast<std::size_t>(rows * cols), S(0));
        return it->second;
    }

    bool has(const std::string& name) const { return groups.count(name) != 0; }

    ParamGroup<S>& at(const std::string& name) {
        auto it = groups.find(name);
        if (it == groups.end()) throw std::invalid_argument("ParamStore: no group " + name);
        return it->second;
    }
    const ParamGroup<S>& at(const std::string& name) const {
        auto it = groups.find(name);
        if (it == groups.end()) throw std::invalid_argument("ParamStore: no group " + name);
        return it->second;
    }

    std::size_t n_params() const {
        std::size_t n = 0;
        for (const auto& [_, g] : groups) n += g.values.size();
        return n;
    }

    std::size_t n_params_matching(const std::string& pattern) const {
        std::size_t n = 0;
        for (const auto& [name, g] : groups)
            if (glob_match(pattern, name)) n += g.values.size();
        return n;
    }

    /// Marks groups matching any pattern as trainable and all others frozen.
    /// Returns the number of groups unlocked.
    std::size_t apply_trainable_mask(const std::vector<std::string>& patterns) {
        std::size_t unlocked = 0;
        for (auto& [name, g] : groups) {
            g.trainable = false;
            for (const auto& p : patterns) {
                if (glob_match(p, name)) {
                    g.trainable = true;
                    ++unlocked;
                    break;
                }
            }
        }
        return unlocked;
    }
};

using ParamStore = ParamStoreT<float>;

template <class To, class From>
ParamStoreT<To> cast_params(const ParamStoreT<From>& src) {
    ParamStoreT<To> out;
    for (const auto& [name, g] : src.groups) {
        auto& ng = out.add(name, g.rows, g.cols);
        ng.trainable = g.trainable;
        for (std::size_t i = 0; i < g.values.size(); ++i)
            ng.values[i] = static_cast<To>(g.values[i]);
    }
    return out;
}

template <class S, class X>
ParamStoreT<S> zeros_like(const ParamStoreT<X>& src) {
    ParamStoreT<S> out;
    for (const auto& [name, g] : src.groups) {
        auto& ng = out.add(name, g.rows, g.cols);
        ng.trainable = g.trainable;
    }
    return out;
}

/// MLP shape: affine layers dims[0] -> ... -> dims[L], ReLU on hidden layers,
/// linear output, optional (non-learnable) layer normalization on the output.
struct MlpDef {
    std::string prefix;
    std::vector<int> dims;
    bool layer_norm = false;

    int n_layers() const { return static_cast<int>(dims.size()) - 1; }
    std::string weight_name(int layer) const {  // 1-based
        return prefix + ".layer" + std::to_string(layer) + ".W";
    }
    std::string bias_name(int layer) const {
        return prefix + ".layer" + std::to_string(layer) + ".b";
    }
    std::size_t param_count() const {
        std::size_t n = 0;
        for (int l = 1; l <= n_layers(); ++l)
            n += static_cast<std::size_t>(dims[l]) * dims[l - 1] + dims[l];
        return n;
    }
};

template <class S>
void register_mlp(ParamStoreT<S>& store, const MlpDef& def) {
    if (def.n_layers() < 1) throw std::invalid_argument("MlpDef needs at least one layer");
    for (int d : def.dims)
        if (d <= 0) throw std::invalid_argument("MlpDef dims must be > 0");
    for (int l = 1; l <= def.n_layers(); ++l) {
        store.add(def.weight_name(l), def.dims[l], def.dims[l - 1]);
        store.add(def.bias_name(l), 1, def.dims[l]);
    }
}

/// Xavier-uniform weights, zero biases.
template <class S>
void init_xavier(ParamStoreT<S>& store, const MlpDef& def, Rng& rng) {
    for (int l = 1; l <= def.n_layers(); ++l) {
        auto& w = store.at(def.weight_name(l));
        const double bound = std::sqrt(6.0 / (def.dims[l] + def.dims[l - 1]));
        for (auto& x : w.values) x = static_cast<S>(rng.uniform(-bound, bound));
    }
}

// ---------------------------------------------------------------------------
// hook interface: a conditioning module may transform the pre-activation of a
// layer; the host MLP applies its nonlinearity afterward.
// ---------------------------------------------------------------------------

template <class S>
struct HookTape {
    virtual ~HookTape() = default;
};

template <class S>
struct PreactHook {
    virtual ~PreactHook() = default;
    /// Transforms `preact` in place. `h_prev` is the layer input.
    virtual std::unique_ptr<HookTape<S>> forward(const ParamStoreT<S>& params,
                                                 const Mat<S>& h_prev, Mat<S>& preact,
                                                 bool want_tape) = 0;
    /// Converts the upstream gradient w.r.t. the transformed pre-activation
    /// (in `d_preact`, modified in place) into the gradient w.r.t. the raw
    /// pre-activation; accumulates into `d_h_prev` and parameter `grads`.
    virtual void backward(const ParamStoreT<S>& params, const HookTape<S>& tape,
                          const Mat<S>& h_prev, Mat<S>& d_preact, Mat<S>& d_h_prev,
                          ParamStoreT<S>& grads) = 0;
};

template <class S>
using HookMap = std::map<int, PreactHook<S>*>;  // 1-based layer index -> hook

template <class S>
struct MlpTape {
    std::vector<Mat<S>> h;       // h[0] = input, h[l] = post-activation output of layer l
    std::vector<Mat<S>> preact;  // preact[l-1] = (possibly hook-transformed) pre-activation
    std::vector<std::unique_ptr<HookTape<S>>> hook_tapes;  // per layer, null if no hook
    std::vector<S> ln_inv_std;   // per row, when layer_norm
};

namespace detail {

template <class S>
void affine_forward(const ParamGroup<S>& w, const ParamGroup<S>& b, const Mat<S>& x, Mat<S>& out) {
    const std::int64_t n = x.rows, in = w.cols, m = w.rows;
    if (x.cols != in) throw std::invalid_argument("mlp_forward: input dim mismatch");
    out.rows = n;
    out.cols = m;
    out.v.assign(static_cast<std::size_t>(n * m), S(0));
    for (std::int64_t r = 0; r < n; ++r) {
        const S* xr = x.row(r);
        S* or_ = out.row(r);
        for (std::int64_t o = 0; o < m; ++o) {
            const S* wr = w.values.data() + o * in;
            S acc = b.values[static_cast<std::size_t>(o)];
            for (std::int64_t k = 0; k < in; ++k) acc += wr[k] * xr[k];
            or_[o] = acc;
        }
    }
}

// dX += dY * W ; dW += dY^T * X ; db += colsum(dY)
template <class S>
void affine_backward(const ParamGroup<S>& w, const Mat<S>& x, const Mat<S>& dy,
                     Mat<S>& dx, ParamGroup<S>* dw, ParamGroup<S>* db) {
    const std::int64_t n = x.rows, in = w.cols, m = w.rows;
    for (std::int64_t r = 0; r < n; ++r) {
        const S* dyr = dy.row(r);
        const S* xr = x.row(r);
        S* dxr = dx.row(r);
        for (std::int64_t o = 0; o < m; ++o) {
            const S g = dyr[o];
            if (g == S(0)) continue;
            const S* wr = w.values.data() + o * in;
            for (std::int64_t k = 0; k < in; ++k) dxr[k] += g * wr[k];
            if (dw) {
                S* dwr = dw->values.data() + o * in;
                for (std::int64_t k = 0; k < in; ++k) dwr[k] += g * xr[k];
            }
            if (db) db->values[static_cast<std::size_t>(o)] += g;
        }
    }
}

constexpr double kLayerNormEps = 1e-6;

template <class S>
void layer_norm_forward(Mat<S>& x, std::vector<S>* inv_std_out) {
    const std::int64_t n = x.rows, d = x.cols;
    if (inv_std_out) inv_std_out->resize(static_cast<std::size_t>(n));
    for (std::int64_t r = 0; r < n; ++r) {
        S* xr = x.row(r);
        S mean = S(0);
        for (std::int64_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<S>(d);
        S var = S(0);
        for (std::int64_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<S>(d);
        const S inv = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
        for (std::int64_t j = 0; j < d; ++j) xr[j] = (xr[j] - mean) * inv;
        if (inv_std_out) (*inv_std_out)[static_cast<std::size_t>(r)] = inv;
    }
}

template <class S>
void layer_norm_backward(const Mat<S>& y, const std::vector<S>& inv_std, const Mat<S>& dy,
                         Mat<S>& dx) {
    const std::int64_t n = y.rows, d = y.cols;
    dx.rows = n;
    dx.cols = d;
    dx.v.assign(static_cast<std::size_t>(n * d), S(0));
    for (std::int64_t r = 0; r < n; ++r) {
        const S* yr = y.row(r);
        const S* dyr = dy.row(r);
        S* dxr = dx.row(r);
        S mean_dy = S(0), mean_dyy = S(0);
        for (std::int64_t j = 0; j < d; ++j) {
            mean_dy += dyr[j];
            mean_dyy += dyr[j] * yr[j];
        }
        mean_dy /= static_cast<S>(d);
        mean_dyy /= static_cast<S>(d);
        const S inv = inv_std[static_cast<std::size_t>(r)];
        for (std::int64_t j = 0; j < d; ++j)
            dxr[j] = inv * (dyr[j] - mean_dy - yr[j] * mean_dyy);
    }
}

}  // namespace detail

/// Forward pass. When `tape` is null only the output is produced; hooks then
/// run without recording.
template <class S>
Mat<S> mlp_forward(const ParamStoreT<S>& params, const MlpDef& def, const Mat<S>& x,
                   MlpTape<S>* tape = nullptr, const HookMap<S>* hooks = nullptr) {
    const int n_layers = def.n_layers();
    if (tape) {
        tape->h.assign(static_cast<std::size_t>(n_layers) + 1, Mat<S>{});
        tape->preact.assign(static_cast<std::size_t>(n_layers), Mat<S>{});
        tape->hook_tapes.clear();
        tape->hook_tapes.resize(static_cast<std::size_t>(n_layers));
        tape->h[0] = x;
    }
    Mat<S> cur = x;
    for (int l = 1; l <= n_layers; ++l) {
        Mat<S> pre;
        detail::affine_forward(params.at(def.weight_name(l)), params.at(def.bias_name(l)), cur, pre);
        if (hooks) {
            auto it = hooks->find(l);
            if (it != hooks->end()) {
                auto ht = it->second->forward(params, cur, pre, tape != nullptr);
                if (tape) tape->hook_tapes[static_cast<std::size_t>(l - 1)] = std::move(ht);
            }
        }
        if (tape) tape->preact[static_cast<std::size_t>(l - 1)] = pre;
        if (l < n_layers) {
            for (auto& v : pre.v) v = v > S(0) ? v : S(0);
        } else if (def.layer_norm) {
            detail::layer_norm_forward(pre, tape ? &tape->ln_inv_std : nullptr);
        }
        cur = std::move(pre);
        if (tape) tape->h[static_cast<std::size_t>(l)] = cur;
    }
    return cur;
}

/// Reverse pass; returns the gradient w.r.t. the input. Parameter gradients
/// accumulate into `grads` for trainable groups only.
template <class S>
Mat<S> mlp_backward(const ParamStoreT<S>& params, const MlpDef& def, const MlpTape<S>& tape,
                    const Mat<S>& d_out, ParamStoreT<S>& grads,
                    const HookMap<S>* hooks = nullptr) {
    const int n_layers = def.n_layers();
    Mat<S> d_cur = d_out;
    for (int l = n_layers; l >= 1; --l) {
        const Mat<S>& pre = tape.preact[static_cast<std::size_t>(l - 1)];
        const Mat<S>& h_prev = tape.h[static_cast<std::size_t>(l - 1)];
        if (l < n_layers) {
            // ReLU mask on the recorded (transformed) pre-activation
            for (std::size_t i = 0; i < d_cur.v.size(); ++i)
                if (pre.v[i] <= S(0)) d_cur.v[i] = S(0);
        } else if (def.layer_norm) {
            Mat<S> dn;
            detail::layer_norm_backward(tape.h[static_cast<std::size_t>(l)], tape.ln_inv_std,
                                        d_cur, dn);
            d_cur = std::move(dn);
        }

        Mat<S> d_prev(h_prev.rows, h_prev.cols);
        if (hooks) {
            auto it = hooks->find(l);
            if (it != hooks->end()) {
                const auto& ht = tape.hook_tapes[static_cast<std::size_t>(l - 1)];
                if (!ht) throw std::logic_error("mlp_backward: hook tape missing");
                it->second->backward(params, *ht, h_prev, d_cur, d_prev, grads);
            }
        }

        auto& wg = grads.at(def.weight_name(l));
        auto& bg = grads.at(def.bias_name(l));
        detail::affine_backward(params.at(def.weight_name(l)), h_prev, d_cur, d_prev,
                                wg.trainable ? &wg : nullptr, bg.trainable ? &bg : nullptr);
        d_cur = std::move(d_prev);
    }
    return d_cur;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

struct AdamConfig {
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

struct AdamState {
    std::map<std::string, std::pair<std::vector<float>, std::vector<float>>> moments;
    std::int64_t t = 0;
};

/// One Adam update over trainable groups only.
inline void adam_step(ParamStore& params, const ParamStoreT<float>& grads, AdamState& state,
                      float lr, const AdamConfig& cfg = {}) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (auto& [name, g] : params.groups) {
        if (!g.trainable) continue;
        const auto& grad = grads.at(name);
        auto& [m, v] = state.moments[name];
        if (m.size() != g.values.size()) {
            m.assign(g.values.size(), 0.0f);
            v.assign(g.values.size(), 0.0f);
        }
        for (std::size_t i = 0; i < g.values.size(); ++i) {
            const float gi = grad.values[i];
            m[i] = cfg.beta1 * m[i] + (1.0f - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0f - cfg.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            g.values[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

// ---------------------------------------------------------------------------
// finite-difference verification
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t n_checked = 0;
    std::string worst_group;
    std::size_t worst_index = 0;
};

/// Central-difference check of analytic gradients on a random subsample of
/// trainable coordinates. `fn` is recomputed in f64.
template <class F>
GradCheckReport grad_check(F&& fn, ParamStoreT<double>& params,
                           const ParamStoreT<double>& analytic, std::size_t min_coords,
                           Rng& rng, double step = 1e-3) {
    std::vector<std::pair<std::string, std::size_t>> coords;
    for (const auto& [name, g] : params.groups) {
        if (!g.trainable) continue;
        for (std::size_t i = 0; i < g.values.size(); ++i) coords.emplace_back(name, i);
    }
    if (coords.empty()) throw std::invalid_argument("grad_check: no trainable coordinates");
    rng.shuffle(coords);
    const std::size_t n = std::min(coords.size(), std::max<std::size_t>(min_coords, 1));

    GradCheckReport report;
    for (std::size_t c = 0; c < n; ++c) {
        const auto& [name, idx] = coords[c];
        double& theta = params.at(name).values[idx];
        const double saved = theta;
        theta = saved + step;
        const double fp = fn(params);
        theta = saved - step;
        const double fm = fn(params);
        theta = saved;
        const double fd = (fp - fm) / (2.0 * step);
        const double an = analytic.at(name).values[idx];
        const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_group = name;
            report.worst_index = idx;
        }
        ++report.n_checked;
    }
    return report;
}

}  // namespace gnsim::nn
