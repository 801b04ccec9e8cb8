#include "mpda/fusion.hpp"

namespace mpda {

template <typename T>
void FusionModel<T>::init(int c, uint64_t seed) {
    const int dm = heads * head_dim;
    const double s_in = 1.0 / std::sqrt(static_cast<double>(c));
    wq = Tensor<T>({c, dm});
    wk = Tensor<T>({c, dm});
    wv = Tensor<T>({c, dm});
    fill_normal(wq, mix_seed(seed, 1), s_in);
    fill_normal(wk, mix_seed(seed, 2), s_in);
    fill_normal(wv, mix_seed(seed, 3), s_in);
    bq = Tensor<T>({dm});
    bk = Tensor<T>({dm});
    bv = Tensor<T>({dm});
    wo = Tensor<T>({dm, c});
    fill_normal(wo, mix_seed(seed, 4), 1.0 / std::sqrt(static_cast<double>(dm)));
    bo = Tensor<T>({c});
}

namespace {

// ego pixel as the single query token per pixel group
std::shared_ptr<std::vector<int64_t>> ego_token_map(int64_t px, int c) {
    auto m = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(px * c));
    for (int64_t i = 0; i < px * c; ++i) (*m)[i] = i;
    return m;
}

// out[p, t, c] = stacked[t, p, c]: all agent slices at one pixel form a group
std::shared_ptr<std::vector<int64_t>> agent_token_map(int agents, int64_t px, int c) {
    auto m = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(agents * px * c));
    int64_t out = 0;
    for (int64_t p = 0; p < px; ++p)
        for (int t = 0; t < agents; ++t)
            for (int ch = 0; ch < c; ++ch) (*m)[out++] = (t * px + p) * c + ch;
    return m;
}

}  // namespace

template <typename T>
VarId fuse(Tape<T>& tp, VarId f_s, VarId f_t2, FusionModel<T>& m) {
    const auto& ss = tp.val(f_s).shape;
    require(ss.size() == 4 && ss[0] == 1, "fuse: ego map must be [1,H,W,C]");
    const int h = ss[1], w = ss[2], c = ss[3];
    int agents = 1;
    VarId stacked = f_s;
    if (f_t2 != kNoVar) {
        const auto& ts = tp.val(f_t2).shape;
        require(ts.size() == 4 && ts[1] == h && ts[2] == w && ts[3] == c,
                "fuse: collaborator dims mismatch " + shape_str(ts) + " vs " + shape_str(ss));
        agents += ts[0];
        stacked = tp.concat0(f_s, f_t2);
    }
    const int64_t px = static_cast<int64_t>(h) * w;

    VarId q_tok = tp.gather(f_s, ego_token_map(px, c), {static_cast<int>(px), 1, c});
    VarId kv_tok =
        tp.gather(stacked, agent_token_map(agents, px, c), {static_cast<int>(px), agents, c});

    VarId q = tp.linear(q_tok, tp.param(m.wq), tp.param(m.bq));
    VarId k = tp.linear(kv_tok, tp.param(m.wk), tp.param(m.bk));
    VarId v = tp.linear(kv_tok, tp.param(m.wv), tp.param(m.bv));
    VarId o = tp.attention(q, k, v, m.heads);
    VarId out = tp.linear(o, tp.param(m.wo), tp.param(m.bo));
    return tp.reshape(out, {1, h, w, c});
}

#define MPDA_FUSION_INSTANTIATE(T)       \
    template struct FusionModel<T>;      \
    template VarId fuse<T>(Tape<T>&, VarId, VarId, FusionModel<T>&);

MPDA_FUSION_INSTANTIATE(float)
MPDA_FUSION_INSTANTIATE(double)

#undef MPDA_FUSION_INSTANTIATE

}  // namespace mpda
