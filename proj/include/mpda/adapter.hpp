#pragma once

#include <string>
#include <vector>

#include "mpda/fax.hpp"
#include "mpda/tape.hpp"

namespace mpda {

struct ResizerConfig {
    int target_h = 32;  // H_S
    int target_w = 88;  // W_S
    int target_c = 64;  // C_S
    int n_repeats = 4;
    int r_blocks = 2;
    FaxConfig fax;
    uint64_t rng_seed = 1;

    int c_in() const { return 2 * target_c; }
};

// Channel selection for the aligner. With C_T > C_in every repeat draws a
// uniform C_in-subset (ascending order); with C_T < C_in the map is padded by
// C_in - C_T channels drawn uniformly with replacement; equal widths need no
// plan. Exposed so tests can replay the exact sequence.
struct AlignPlan {
    std::vector<std::vector<int>> subsets;  // drop branch, n_repeats entries
    std::vector<int> pad;                   // pad branch, appended channel ids
};

AlignPlan make_align_plan(int c_t, int c_in, int n_repeats, uint64_t seed);

template <typename T>
struct ResBlockParams {
    Tensor<T> w1, b1, w2, b2;
    void init(int c, uint64_t seed);
    template <typename F>
    void visit(const std::string& pre, F&& f) {
        f(pre + ".w1", w1);
        f(pre + ".b1", b1);
        f(pre + ".w2", w2);
        f(pre + ".b2", b2);
    }
};

// All learnable state of G: the resizer (aligner conv, self FAX, res blocks)
// and the cross-domain transformer (outer Q/K/V convs, cross FAX, FFN, two
// layer norms). Residual branches start at zero so both blocks begin as
// identities around their skip paths.
template <typename T>
struct AdapterParams {
    Tensor<T> align_w, align_b;  // [2*C_S, C_S]
    FaxParams<T> resizer_fax;
    std::vector<ResBlockParams<T>> res;

    Tensor<T> cd_wq, cd_bq, cd_wk, cd_bk, cd_wv, cd_bv;  // [C_S, C_S]
    FaxParams<T> cd_fax;
    Tensor<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;  // expansion 2
    LnParams<T> cd_ln_attn, cd_ln_ffn;

    void init(const ResizerConfig& cfg, uint64_t seed);

    template <typename F>
    void visit(F&& f) {
        f("align.w", align_w);
        f("align.b", align_b);
        resizer_fax.visit("resizer.fax", f);
        for (size_t i = 0; i < res.size(); ++i) res[i].visit("resizer.res" + std::to_string(i), f);
        f("cd.wq", cd_wq);
        f("cd.bq", cd_bq);
        f("cd.wk", cd_wk);
        f("cd.bk", cd_bk);
        f("cd.wv", cd_wv);
        f("cd.bv", cd_bv);
        cd_fax.visit("cd.fax", f);
        f("cd.ffn.w1", ffn_w1);
        f("cd.ffn.b1", ffn_b1);
        f("cd.ffn.w2", ffn_w2);
        f("cd.ffn.b2", ffn_b2);
        cd_ln_attn.visit("cd.ln_attn", f);
        cd_ln_ffn.visit("cd.ln_ffn", f);
    }
};

// f_t [N,H_T,W_T,C_T] -> [N,H_T,W_T,C_S]; seed drives the channel plan
template <typename T>
VarId channel_align(Tape<T>& tp, VarId f_t, AdapterParams<T>& p, const ResizerConfig& cfg,
                    uint64_t seed);

// the resizer Phi: x = channel_align(f_t); y = bilinear(fax_delta(x,x)) +
// bilinear(x); then r res blocks. Output [N, H_S, W_S, C_S].
template <typename T>
VarId resize_features(Tape<T>& tp, VarId f_t, AdapterParams<T>& p, const ResizerConfig& cfg,
                      uint64_t seed);

// Q = wq(f_t'); K/V = wk/wv(f_s) broadcast over agents;
// f_hat = Q + LN(fax_delta(Q, K, V)); out = f_hat + LN(FFN(f_hat))
template <typename T>
VarId cross_domain_transform(Tape<T>& tp, VarId f_t_prime, VarId f_s, AdapterParams<T>& p,
                             const FaxConfig& cfg);

}  // namespace mpda
