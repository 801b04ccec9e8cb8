#include "mpda/fax.hpp"

namespace mpda {

template <typename T>
void AttentionParams<T>::init(int d, int model_dim, uint64_t seed, bool zero_out) {
    const double s_in = 1.0 / std::sqrt(static_cast<double>(d));
    wq = Tensor<T>({d, model_dim});
    wk = Tensor<T>({d, model_dim});
    wv = Tensor<T>({d, model_dim});
    fill_normal(wq, mix_seed(seed, 1), s_in);
    fill_normal(wk, mix_seed(seed, 2), s_in);
    fill_normal(wv, mix_seed(seed, 3), s_in);
    bq = Tensor<T>({model_dim});
    bk = Tensor<T>({model_dim});
    bv = Tensor<T>({model_dim});
    wo = Tensor<T>({model_dim, d});
    if (!zero_out) fill_normal(wo, mix_seed(seed, 4), 1.0 / std::sqrt(static_cast<double>(model_dim)));
    bo = Tensor<T>({d});
}

template <typename T>
void FaxParams<T>::init(int d, const FaxConfig& cfg, uint64_t seed, bool zero_out) {
    window.init(d, cfg.model_dim(), mix_seed(seed, 11), zero_out);
    grid.init(d, cfg.model_dim(), mix_seed(seed, 12), zero_out);
    ln_q_win.init(d);
    ln_kv_win.init(d);
    ln_q_grid.init(d);
    ln_kv_grid.init(d);
}

namespace {

std::shared_ptr<std::vector<int64_t>> alloc_map(int64_t n) {
    return std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n));
}

inline int64_t flat4(int a, int i, int j, int c, int h, int w, int d) {
    (void)h;
    return ((static_cast<int64_t>(a) * h + i) * w + j) * d + c;
}

}  // namespace

IndexMap window_partition_map(int a, int h, int w, int d, int p) {
    require(p >= 1 && h % p == 0 && w % p == 0,
            "window partition: dims " + std::to_string(h) + "x" + std::to_string(w) +
                " not divisible by p=" + std::to_string(p));
    auto m = alloc_map(static_cast<int64_t>(a) * h * w * d);
    int64_t out = 0;
    for (int ag = 0; ag < a; ++ag)
        for (int gi = 0; gi < h / p; ++gi)
            for (int gj = 0; gj < w / p; ++gj)
                for (int ii = 0; ii < p; ++ii)
                    for (int jj = 0; jj < p; ++jj)
                        for (int c = 0; c < d; ++c)
                            (*m)[out++] = flat4(ag, gi * p + ii, gj * p + jj, c, h, w, d);
    return m;
}

IndexMap window_unpartition_map(int a, int h, int w, int d, int p) {
    auto fwd = window_partition_map(a, h, w, d, p);
    auto m = alloc_map(static_cast<int64_t>(fwd->size()));
    for (size_t i = 0; i < fwd->size(); ++i) (*m)[(*fwd)[i]] = static_cast<int64_t>(i);
    return m;
}

IndexMap grid_partition_map(int a, int h, int w, int d, int g) {
    require(g >= 1 && h % g == 0 && w % g == 0,
            "grid partition: dims " + std::to_string(h) + "x" + std::to_string(w) +
                " not divisible by g=" + std::to_string(g));
    const int hh = h / g, ww = w / g;
    auto m = alloc_map(static_cast<int64_t>(a) * h * w * d);
    int64_t out = 0;
    for (int ag = 0; ag < a; ++ag)
        for (int r = 0; r < hh; ++r)
            for (int c0 = 0; c0 < ww; ++c0)
                for (int al = 0; al < g; ++al)
                    for (int be = 0; be < g; ++be)
                        for (int c = 0; c < d; ++c)
                            (*m)[out++] = flat4(ag, al * hh + r, be * ww + c0, c, h, w, d);
    return m;
}

IndexMap grid_unpartition_map(int a, int h, int w, int d, int g) {
    auto fwd = grid_partition_map(a, h, w, d, g);
    auto m = alloc_map(static_cast<int64_t>(fwd->size()));
    for (size_t i = 0; i < fwd->size(); ++i) (*m)[(*fwd)[i]] = static_cast<int64_t>(i);
    return m;
}

IndexMap broadcast_agents_map(int n, int64_t slice) {
    auto m = alloc_map(n * slice);
    int64_t out = 0;
    for (int r = 0; r < n; ++r)
        for (int64_t i = 0; i < slice; ++i) (*m)[out++] = i;
    return m;
}

template <typename T>
VarId window_partition(Tape<T>& tp, VarId x, int p) {
    const auto& s = tp.val(x).shape;
    require(s.size() == 4, "window_partition: rank 4 expected");
    const int a = s[0], h = s[1], w = s[2], d = s[3];
    auto m = window_partition_map(a, h, w, d, p);
    return tp.gather(x, m, {a * (h / p) * (w / p), p * p, d});
}

template <typename T>
VarId window_unpartition(Tape<T>& tp, VarId tok, int a, int h, int w, int p) {
    const int d = tp.val(tok).shape.back();
    auto m = window_unpartition_map(a, h, w, d, p);
    return tp.gather(tok, m, {a, h, w, d});
}

template <typename T>
VarId grid_partition(Tape<T>& tp, VarId x, int g) {
    const auto& s = tp.val(x).shape;
    require(s.size() == 4, "grid_partition: rank 4 expected");
    const int a = s[0], h = s[1], w = s[2], d = s[3];
    auto m = grid_partition_map(a, h, w, d, g);
    return tp.gather(x, m, {a * (h / g) * (w / g), g * g, d});
}

template <typename T>
VarId grid_unpartition(Tape<T>& tp, VarId tok, int a, int h, int w, int g) {
    const int d = tp.val(tok).shape.back();
    auto m = grid_unpartition_map(a, h, w, d, g);
    return tp.gather(tok, m, {a, h, w, d});
}

template <typename T>
VarId broadcast_agents(Tape<T>& tp, VarId x, int n) {
    const auto& s = tp.val(x).shape;
    require(s[0] == 1, "broadcast_agents: leading axis must be 1");
    std::vector<int> oshape = s;
    oshape[0] = n;
    return tp.gather(x, broadcast_agents_map(n, tp.val(x).size()), oshape);
}

template <typename T>
VarId multi_head_attention(Tape<T>& tp, VarId q_tok, VarId k_tok, VarId v_tok,
                           AttentionParams<T>& p, const FaxConfig& cfg) {
    VarId q = tp.linear(q_tok, tp.param(p.wq), tp.param(p.bq));
    VarId k = tp.linear(k_tok, tp.param(p.wk), tp.param(p.bk));
    VarId v = tp.linear(v_tok, tp.param(p.wv), tp.param(p.bv));
    VarId o = tp.attention(q, k, v, cfg.heads);
    return tp.linear(o, tp.param(p.wo), tp.param(p.bo));
}

template <typename T>
VarId fax_delta_kv(Tape<T>& tp, VarId q_map, VarId k_map, VarId v_map, FaxParams<T>& p,
                   const FaxConfig& cfg) {
    // copies, not references: the tape's node storage may move when the
    // broadcast below appends nodes
    const std::vector<int> qs = tp.val(q_map).shape;
    const std::vector<int> ks = tp.val(k_map).shape;
    require(qs.size() == 4 && ks.size() == 4, "fax: rank 4 maps expected");
    require(tp.val(k_map).same_shape(tp.val(v_map)), "fax: k/v shape mismatch");
    require(qs[1] == ks[1] && qs[2] == ks[2] && qs[3] == ks[3],
            "fax: q/kv shape mismatch " + shape_str(qs) + " vs " + shape_str(ks));
    VarId k = k_map, v = v_map;
    if (ks[0] == 1 && qs[0] > 1) {
        k = broadcast_agents(tp, k_map, qs[0]);
        v = (v_map == k_map) ? k : broadcast_agents(tp, v_map, qs[0]);
    } else {
        require(ks[0] == qs[0], "fax: agent axis mismatch");
    }
    const int a = qs[0], h = qs[1], w = qs[2];

    VarId qn = tp.layer_norm(q_map, tp.param(p.ln_q_win.gamma), tp.param(p.ln_q_win.beta));
    VarId gkw = tp.param(p.ln_kv_win.gamma), bkw = tp.param(p.ln_kv_win.beta);
    VarId qt = window_partition(tp, qn, cfg.window_p);
    VarId kt = window_partition(tp, tp.layer_norm(k, gkw, bkw), cfg.window_p);
    VarId vt = (v == k) ? kt : window_partition(tp, tp.layer_norm(v, gkw, bkw), cfg.window_p);
    VarId a1 = window_unpartition<T>(
        tp, multi_head_attention(tp, qt, kt, vt, p.window, cfg), a, h, w, cfg.window_p);

    VarId s1 = tp.add(q_map, a1);
    VarId sn = tp.layer_norm(s1, tp.param(p.ln_q_grid.gamma), tp.param(p.ln_q_grid.beta));
    VarId gkg = tp.param(p.ln_kv_grid.gamma), bkg = tp.param(p.ln_kv_grid.beta);
    VarId st = grid_partition(tp, sn, cfg.grid_g);
    VarId kt2 = grid_partition(tp, tp.layer_norm(k, gkg, bkg), cfg.grid_g);
    VarId vt2 = (v == k) ? kt2 : grid_partition(tp, tp.layer_norm(v, gkg, bkg), cfg.grid_g);
    VarId a2 = grid_unpartition<T>(tp, multi_head_attention(tp, st, kt2, vt2, p.grid, cfg), a, h,
                                   w, cfg.grid_g);
    return tp.add(a1, a2);
}

template <typename T>
VarId fax_delta(Tape<T>& tp, VarId q_map, VarId kv_map, FaxParams<T>& p, const FaxConfig& cfg) {
    return fax_delta_kv(tp, q_map, kv_map, kv_map, p, cfg);
}

template <typename T>
VarId fax_block(Tape<T>& tp, VarId q_map, VarId kv_map, FaxParams<T>& p, const FaxConfig& cfg) {
    return tp.add(q_map, fax_delta(tp, q_map, kv_map, p, cfg));
}

#define MPDA_FAX_INSTANTIATE(T)                                                                  \
    template struct AttentionParams<T>;                                                          \
    template struct FaxParams<T>;                                                                \
    template VarId window_partition<T>(Tape<T>&, VarId, int);                                    \
    template VarId window_unpartition<T>(Tape<T>&, VarId, int, int, int, int);                   \
    template VarId grid_partition<T>(Tape<T>&, VarId, int);                                      \
    template VarId grid_unpartition<T>(Tape<T>&, VarId, int, int, int, int);                     \
    template VarId broadcast_agents<T>(Tape<T>&, VarId, int);                                    \
    template VarId multi_head_attention<T>(Tape<T>&, VarId, VarId, VarId, AttentionParams<T>&,   \
                                           const FaxConfig&);                                    \
    template VarId fax_delta<T>(Tape<T>&, VarId, VarId, FaxParams<T>&, const FaxConfig&);        \
    template VarId fax_delta_kv<T>(Tape<T>&, VarId, VarId, VarId, FaxParams<T>&,                 \
                                   const FaxConfig&);                                            \
    template VarId fax_block<T>(Tape<T>&, VarId, VarId, FaxParams<T>&, const FaxConfig&);

MPDA_FAX_INSTANTIATE(float)
MPDA_FAX_INSTANTIATE(double)

#undef MPDA_FAX_INSTANTIATE

}  // namespace mpda
