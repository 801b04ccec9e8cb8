#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mpda/rng.hpp"
#include "mpda/tape.hpp"

namespace mpda {

struct FaxConfig {
    int window_p = 4;
    int grid_g = 4;
    int heads = 4;
    int head_dim = 8;
    int model_dim() const { return heads * head_dim; }
};

template <typename T>
struct LnParams {
    Tensor<T> gamma, beta;
    void init(int d) {
        gamma = Tensor<T>({d}, T(1));
        beta = Tensor<T>({d});
    }
    template <typename F>
    void visit(const std::string& pre, F&& f) {
        f(pre + ".gamma", gamma);
        f(pre + ".beta", beta);
    }
};

// per-pixel projections d -> model_dim (q/k/v) and model_dim -> d (out)
template <typename T>
struct AttentionParams {
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
    // zero_out starts the output projection at zero so the surrounding
    // residual begins as an exact identity
    void init(int d, int model_dim, uint64_t seed, bool zero_out);
    template <typename F>
    void visit(const std::string& pre, F&& f) {
        f(pre + ".wq", wq);
        f(pre + ".bq", bq);
        f(pre + ".wk", wk);
        f(pre + ".bk", bk);
        f(pre + ".wv", wv);
        f(pre + ".bv", bv);
        f(pre + ".wo", wo);
        f(pre + ".bo", bo);
    }
};

// one window sublayer followed by one grid sublayer, each pre-normed
template <typename T>
struct FaxParams {
    AttentionParams<T> window, grid;
    LnParams<T> ln_q_win, ln_kv_win, ln_q_grid, ln_kv_grid;
    void init(int d, const FaxConfig& cfg, uint64_t seed, bool zero_out);
    template <typename F>
    void visit(const std::string& pre, F&& f) {
        window.visit(pre + ".win", f);
        grid.visit(pre + ".grid", f);
        ln_q_win.visit(pre + ".ln_q_win", f);
        ln_kv_win.visit(pre + ".ln_kv_win", f);
        ln_q_grid.visit(pre + ".ln_q_grid", f);
        ln_kv_grid.visit(pre + ".ln_kv_grid", f);
    }
};

using IndexMap = std::shared_ptr<const std::vector<int64_t>>;

// Flat source index per token element. Window groups tile the map in p x p
// patches: token (a,i,j) -> group (a, i/p, j/p), in-group slot (i%p)*p + j%p.
// Grid groups stride across the whole map: with h=H/g, w=W/g, token (a,i,j)
// -> group (a, i%h, j%w), slot (i/h)*g + j/w.
IndexMap window_partition_map(int a, int h, int w, int d, int p);
IndexMap window_unpartition_map(int a, int h, int w, int d, int p);
IndexMap grid_partition_map(int a, int h, int w, int d, int g);
IndexMap grid_unpartition_map(int a, int h, int w, int d, int g);
IndexMap broadcast_agents_map(int n, int64_t slice);

// tape ops; x is [A,H,W,D], tokens are [groups, tokens, D]
template <typename T>
VarId window_partition(Tape<T>& tp, VarId x, int p);
template <typename T>
VarId window_unpartition(Tape<T>& tp, VarId tok, int a, int h, int w, int p);
template <typename T>
VarId grid_partition(Tape<T>& tp, VarId x, int g);
template <typename T>
VarId grid_unpartition(Tape<T>& tp, VarId tok, int a, int h, int w, int g);

// replicate a [1,...] tensor n times along axis 0
template <typename T>
VarId broadcast_agents(Tape<T>& tp, VarId x, int n);

// projections + per-group scaled dot-product attention + output projection
template <typename T>
VarId multi_head_attention(Tape<T>& tp, VarId q_tok, VarId k_tok, VarId v_tok,
                           AttentionParams<T>& p, const FaxConfig& cfg);

// Residual delta of both sublayers (a1 + a2): sublayer 1 window-attends q
// over kv, sublayer 2 grid-attends (q + a1) over kv. A kv map with a single
// agent slice is broadcast across q's agent axis.
template <typename T>
VarId fax_delta(Tape<T>& tp, VarId q_map, VarId kv_map, FaxParams<T>& p, const FaxConfig& cfg);

// same, with separate key and value maps (used when outer projections
// already split the source map into K and V)
template <typename T>
VarId fax_delta_kv(Tape<T>& tp, VarId q_map, VarId k_map, VarId v_map, FaxParams<T>& p,
                   const FaxConfig& cfg);

// q_map + fax_delta(q_map, kv_map); self form is fax_block(x, x, ...)
template <typename T>
VarId fax_block(Tape<T>& tp, VarId q_map, VarId kv_map, FaxParams<T>& p, const FaxConfig& cfg);

}  // namespace mpda
