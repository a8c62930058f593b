#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnsim/graph.hpp"
#include "gnsim/nn.hpp"

namespace gnsim::model {

struct GnsConfig {
    int latent_dim = 32;
    int n_mp_blocks = 10;
    int mlp_hidden = 32;
    bool residual = true;

    void validate() const {
        if (latent_dim <= 0) throw std::invalid_argument("GnsConfig.latent_dim must be > 0");
        if (n_mp_blocks < 1) throw std::invalid_argument("GnsConfig.n_mp_blocks must be >= 1");
        if (mlp_hidden <= 0) throw std::invalid_argument("GnsConfig.mlp_hidden must be > 0");
    }
};

/// Encoder-processor-decoder network over dynamic radius graphs. Parameters
/// live in a flat named store so adaptation masks and update statistics can
/// address individual blocks and layers.
struct GnsModel {
    GnsConfig cfg;
    graph::FeatureConfig features;
    nn::ParamStore params;

    nn::MlpDef encoder_node_def() const {
        return {"encoder.node_mlp", {features.node_feature_dim(), cfg.mlp_hidden, cfg.mlp_hidden,
                                     cfg.latent_dim}, true};
    }
    nn::MlpDef encoder_edge_def() const {
        return {"encoder.edge_mlp", {graph::FeatureConfig::edge_feature_dim(), cfg.mlp_hidden,
                                     cfg.mlp_hidden, cfg.latent_dim}, true};
    }
    nn::MlpDef block_edge_def(int k) const {  // k is 1-based
        return {"processor.block_" + std::to_string(k) + ".edge_mlp",
                {3 * cfg.latent_dim, cfg.mlp_hidden, cfg.mlp_hidden, cfg.latent_dim}, true};
    }
    nn::MlpDef block_node_def(int k) const {
        return {"processor.block_" + std::to_string(k) + ".node_mlp",
                {2 * cfg.latent_dim, cfg.mlp_hidden, cfg.mlp_hidden, cfg.latent_dim}, true};
    }
    nn::MlpDef decoder_def() const {
        return {"decoder.node_mlp", {cfg.latent_dim, cfg.mlp_hidden, cfg.mlp_hidden, 2}, false};
    }

    std::vector<nn::MlpDef> all_defs() const {
        std::vector<nn::MlpDef> defs{encoder_node_def(), encoder_edge_def()};
        for (int k = 1; k <= cfg.n_mp_blocks; ++k) {
            defs.push_back(block_edge_def(k));
            defs.push_back(block_node_def(k));
        }
        defs.push_back(decoder_def());
        return defs;
    }
};

inline GnsModel make_gns(const GnsConfig& cfg, const graph::FeatureConfig& features,
                         std::uint64_t seed) {
    cfg.validate();
    features.validate();
    GnsModel m;
    m.cfg = cfg;
    m.features = features;
    Rng rng(seed);
    for (const auto& def : m.all_defs()) {
        nn::register_mlp(m.params, def);
        nn::init_xavier(m.params, def, rng);
    }
    return m;
}

template <class S>
struct BlockHooks {
    nn::HookMap<S> edge;
    nn::HookMap<S> node;
};

/// Conditioning hooks per message-passing block (1-based index).
template <class S>
using ModelHooks = std::map<int, BlockHooks<S>>;

template <class S>
struct GnsTape {
    nn::MlpTape<S> enc_node, enc_edge, dec;
    struct Block {
        nn::MlpTape<S> edge, node;
    };
    std::vector<Block> blocks;
};

namespace detail {

template <class S>
nn::Mat<S> concat_edge_inputs(const nn::Mat<S>& v, const nn::Mat<S>& e,
                              const std::vector<graph::Edge>& edges) {
    const std::int64_t d = v.cols;
    nn::Mat<S> out(static_cast<std::int64_t>(edges.size()), 3 * d);
    for (std::size_t idx = 0; idx < edges.size(); ++idx) {
        S* row = out.row(static_cast<std::int64_t>(idx));
        const S* vs = v.row(edges[idx].sender);
        const S* vr = v.row(edges[idx].receiver);
        const S* er = e.row(static_cast<std::int64_t>(idx));
        for (std::int64_t j = 0; j < d; ++j) row[j] = vs[j];
        for (std::int64_t j = 0; j < d; ++j) row[d + j] = vr[j];
        for (std::int64_t j = 0; j < d; ++j) row[2 * d + j] = er[j];
    }
    return out;
}

/// Sum-aggregates edge latents into their receiver rows. Accumulation runs in
/// f64 in edge-list order so results do not depend on floating-point width.
template <class S>
nn::Mat<S> aggregate(const nn::Mat<S>& e, const std::vector<graph::Edge>& edges,
                     std::int64_t n_nodes) {
    const std::int64_t d = e.cols;
    nn::Mat<double> acc(n_nodes, d);
    for (std::size_t idx = 0; idx < edges.size(); ++idx) {
        double* row = acc.row(edges[idx].receiver);
        const S* er = e.row(static_cast<std::int64_t>(idx));
        for (std::int64_t j = 0; j < d; ++j) row[j] += static_cast<double>(er[j]);
    }
    return nn::cast_mat<S>(acc);
}

template <class S>
nn::Mat<S> concat_node_inputs(const nn::Mat<S>& v, const nn::Mat<S>& agg) {
    const std::int64_t d = v.cols;
    nn::Mat<S> out(v.rows, 2 * d);
    for (std::int64_t i = 0; i < v.rows; ++i) {
        S* row = out.row(i);
        const S* vi = v.row(i);
        const S* ai = agg.row(i);
        for (std::int64_t j = 0; j < d; ++j) row[j] = vi[j];
        for (std::int64_t j = 0; j < d; ++j) row[d + j] = ai[j];
    }
    return out;
}

template <class S>
void add_inplace(nn::Mat<S>& a, const nn::Mat<S>& b) {
    for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

}  // namespace detail

/// Full forward pass to normalized accelerations [N x 2].
template <class S>
nn::Mat<S> gns_forward(const nn::ParamStoreT<S>& params, const GnsModel& model,
                       const graph::GraphSample& sample, GnsTape<S>* tape = nullptr,
                       const ModelHooks<S>* hooks = nullptr) {
    const int d = model.cfg.latent_dim;
    const std::int64_t n = sample.n_nodes;
    nn::Mat<S> node_feats(n, model.features.node_feature_dim());
    for (std::size_t i = 0; i < sample.node_features.size(); ++i)
        node_feats.v[i] = static_cast<S>(sample.node_features[i]);
    nn::Mat<S> edge_feats(static_cast<std::int64_t>(sample.edges.size()),
                          graph::FeatureConfig::edge_feature_dim());
    for (std::size_t i = 0; i < sample.edge_features.size(); ++i)
        edge_feats.v[i] = static_cast<S>(sample.edge_features[i]);

    if (tape) tape->blocks.resize(static_cast<std::size_t>(model.cfg.n_mp_blocks));

    nn::Mat<S> v = nn::mlp_forward(params, model.encoder_node_def(), node_feats,
                                   tape ? &tape->enc_node : nullptr);
    nn::Mat<S> e = nn::mlp_forward(params, model.encoder_edge_def(), edge_feats,
                                   tape ? &tape->enc_edge : nullptr);

    for (int k = 1; k <= model.cfg.n_mp_blocks; ++k) {
        const BlockHooks<S>* bh = nullptr;
        if (hooks) {
            auto it = hooks->find(k);
            if (it != hooks->end()) bh = &it->second;
        }
        auto edge_in = detail::concat_edge_inputs(v, e, sample.edges);
        nn::Mat<S> msg = nn::mlp_forward(params, model.block_edge_def(k), edge_in,
                                         tape ? &tape->blocks[k - 1].edge : nullptr,
                                         bh ? &bh->edge : nullptr);
        if (model.cfg.residual) detail::add_inplace(msg, e);
        auto agg = detail::aggregate(msg, sample.edges, n);
        auto node_in = detail::concat_node_inputs(v, agg);
        nn::Mat<S> upd = nn::mlp_forward(params, model.block_node_def(k), node_in,
                                         tape ? &tape->blocks[k - 1].node : nullptr,
                                         bh ? &bh->node : nullptr);
        if (model.cfg.residual) detail::add_inplace(upd, v);
        e = std::move(msg);
        v = std::move(upd);
    }

    (void)d;
    return nn::mlp_forward(params, model.decoder_def(), v, tape ? &tape->dec : nullptr);
}

/// Reverse pass matching gns_forward; accumulates parameter gradients.
template <class S>
void gns_backward(const nn::ParamStoreT<S>& params, const GnsModel& model,
                  const graph::GraphSample& sample, const GnsTape<S>& tape,
                  const nn::Mat<S>& d_out, nn::ParamStoreT<S>& grads,
                  const ModelHooks<S>* hooks = nullptr) {
    const int d = model.cfg.latent_dim;
    const std::int64_t n = sample.n_nodes;
    const std::int64_t n_edges = static_cast<std::int64_t>(sample.edges.size());

    nn::Mat<S> d_v = nn::mlp_backward(params, model.decoder_def(), tape.dec, d_out, grads);
    nn::Mat<S> d_e(n_edges, d);

    for (int k = model.cfg.n_mp_blocks; k >= 1; --k) {
        const BlockHooks<S>* bh = nullptr;
        if (hooks) {
            auto it = hooks->find(k);
            if (it != hooks->end()) bh = &it->second;
        }
        // node update: v_out = [v_in + ] node_mlp(concat(v_in, agg))
        nn::Mat<S> d_node_in = nn::mlp_backward(params, model.block_node_def(k),
                                                tape.blocks[k - 1].node, d_v, grads,
                                                bh ? &bh->node : nullptr);
        nn::Mat<S> d_v_in(n, d);
        if (model.cfg.residual) d_v_in = d_v;
        nn::Mat<S> d_agg(n, d);
        for (std::int64_t i = 0; i < n; ++i) {
            const S* row = d_node_in.row(i);
            S* dvi = d_v_in.row(i);
            S* dai = d_agg.row(i);
            for (std::int64_t j = 0; j < d; ++j) {
                dvi[j] += row[j];
                dai[j] = row[d + j];
            }
        }
        // aggregation: d_msg[edge] = d_e_out[edge] + d_agg[receiver]
        nn::Mat<S> d_msg = d_e;
        for (std::int64_t idx = 0; idx < n_edges; ++idx) {
            const S* src = d_agg.row(sample.edges[static_cast<std::size_t>(idx)].receiver);
            S* dst = d_msg.row(idx);
            for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
        }
        // edge update: e_out = [e_in + ] edge_mlp(concat(v_s, v_r, e_in))
        nn::Mat<S> d_edge_in = nn::mlp_backward(params, model.block_edge_def(k),
                                                tape.blocks[k - 1].edge, d_msg, grads,
                                                bh ? &bh->edge : nullptr);
        nn::Mat<S> d_e_in(n_edges, d);
        if (model.cfg.residual) d_e_in = d_msg;
        for (std::int64_t idx = 0; idx < n_edges; ++idx) {
            const auto& edge = sample.edges[static_cast<std::size_t>(idx)];
            const S* row = d_edge_in.row(idx);
            S* dvs = d_v_in.row(edge.sender);
            S* dvr = d_v_in.row(edge.receiver);
            S* dei = d_e_in.row(idx);
            for (std::int64_t j = 0; j < d; ++j) {
                dvs[j] += row[j];
                dvr[j] += row[d + j];
                dei[j] += row[2 * d + j];
            }
        }
        d_v = std::move(d_v_in);
        d_e = std::move(d_e_in);
    }

    nn::mlp_backward(params, model.encoder_node_def(), tape.enc_node, d_v, grads);
    nn::mlp_backward(params, model.encoder_edge_def(), tape.enc_edge, d_e, grads);
}

/// Window of the C+1 most recent frames, oldest first; each frame holds
/// 2N doubles.
using Window = std::vector<std::vector<double>>;

/// Predicts de-normalized accelerations (m/s^2) for the last frame of the
/// window.
inline nn::Mat<double> predict_accel(const GnsModel& model, const Window& window,
                                     std::int64_t n, double dt,
                                     const std::array<double, 2>& domain,
                                     const ModelHooks<float>* hooks = nullptr,
                                     double kappa = 0.0) {
    const graph::GraphSample sample =
        graph::build_sample(window, n, dt, domain, model.features, nullptr, kappa);
    const nn::Mat<float> out = gns_forward<float>(model.params, model, sample, nullptr, hooks);
    nn::Mat<double> accel(out.rows, 2);
    for (std::int64_t i = 0; i < out.rows; ++i) {
        for (int c = 0; c < 2; ++c) {
            accel.at(i, c) = static_cast<double>(out.at(i, c)) * model.features.stats.acc_std[c] +
                             model.features.stats.acc_mean[c];
        }
    }
    return accel;
}

struct RolloutResult {
    std::int64_t n_frames = 0;
    std::int64_t n_particles = 0;
    std::vector<double> positions;      // n_frames x N x 2, seed window included
    std::vector<double> accelerations;  // predicted steps x N x 2
    std::int64_t wall_clamp_events = 0;
};

/// Closed-loop rollout with semi-implicit Euler integration; the graph is
/// rebuilt every step and positions are kept inside the domain (normal
/// velocity zeroed on contact by position clamping).
inline RolloutResult rollout(const GnsModel& model, const Window& initial_window,
                             std::int64_t n, double dt, const std::array<double, 2>& domain,
                             std::int64_t n_steps, const ModelHooks<float>* hooks = nullptr,
                             double kappa = 0.0) {
    const int c = model.features.velocity_history;
    if (static_cast<int>(initial_window.size()) != c + 1)
        throw std::invalid_argument("rollout: initial window must hold C+1 frames");

    RolloutResult result;
    result.n_particles = n;
    std::deque<std::vector<double>> window(initial_window.begin(), initial_window.end());
    for (const auto& frame : window) {
        result.positions.insert(result.positions.end(), frame.begin(), frame.end());
        ++result.n_frames;
    }

    for (std::int64_t s = 0; s < n_steps; ++s) {
        const Window w(window.begin(), window.end());
        const nn::Mat<double> accel = predict_accel(model, w, n, dt, domain, hooks, kappa);
        const auto& cur = window.back();
        const auto& prev = window[window.size() - 2];
        std::vector<double> next(static_cast<std::size_t>(2 * n));
        for (std::int64_t i = 0; i < n; ++i) {
            for (int dcomp = 0; dcomp < 2; ++dcomp) {
                const std::size_t j = static_cast<std::size_t>(2 * i + dcomp);
                const double v = (cur[j] - prev[j]) / dt + accel.at(i, dcomp) * dt;
                double x = cur[j] + v * dt;
                const double hi = domain[dcomp];
                if (x < 0.0 || x > hi) {
                    x = std::clamp(x, 0.0, hi);
                    ++result.wall_clamp_events;
                }
                if (!std::isfinite(x))
                    throw std::runtime_error("rollout: non-finite position at step " +
                                             std::to_string(s));
                next[j] = x;
            }
        }
        for (std::int64_t i = 0; i < n; ++i) {
            result.accelerations.push_back(accel.at(i, 0));
            result.accelerations.push_back(accel.at(i, 1));
        }
        result.positions.insert(result.positions.end(), next.begin(), next.end());
        ++result.n_frames;
        window.pop_front();
        window.push_back(std::move(next));
    }
    return result;
}

/// Packages a rollout as a Trajectory for metric reuse.
inline Trajectory rollout_to_trajectory(const RolloutResult& r, const Trajectory& reference) {
    Trajectory t = reference;
    t.n_frames = r.n_frames;
    t.positions = r.positions;
    t.validate();
    return t;
}

}  // namespace gnsim::model
