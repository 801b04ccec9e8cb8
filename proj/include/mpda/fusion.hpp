#pragma once

#include <string>

#include "mpda/rng.hpp"
#include "mpda/tape.hpp"

namespace mpda {

// Per-pixel attention over the agent axis: the ego pixel queries the stacked
// (1+N) agent pixels at the same location. Output shape [1,H,W,C].
template <typename T>
struct FusionModel {
    Tensor<T> wq, bq, wk, bk, wv, bv;  // [C, heads*head_dim]
    Tensor<T> wo, bo;                  // [heads*head_dim, C]
    int heads = 4;
    int head_dim = 8;

    void init(int c, uint64_t seed);

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

// f_s [1,H,W,C] is the ego map; f_t2 [N,H,W,C] the adapted collaborators
// (kNoVar when N=0, the single-agent case)
template <typename T>
VarId fuse(Tape<T>& tp, VarId f_s, VarId f_t2, FusionModel<T>& m);

}  // namespace mpda
