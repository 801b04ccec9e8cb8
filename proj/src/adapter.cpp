#include "mpda/adapter.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace mpda {

AlignPlan make_align_plan(int c_t, int c_in, int n_repeats, uint64_t seed) {
    require(c_t >= 1 && c_in >= 1 && n_repeats >= 1, "align plan: bad sizes");
    AlignPlan plan;
    std::mt19937_64 eng(seed);
    if (c_t > c_in) {
        std::vector<int> all(c_t);
        std::iota(all.begin(), all.end(), 0);
        plan.subsets.resize(n_repeats);
        for (auto& sub : plan.subsets) {
            sub.resize(c_in);
            std::sample(all.begin(), all.end(), sub.begin(), c_in, eng);
        }
    } else if (c_t < c_in) {
        std::uniform_int_distribution<int> pick(0, c_t - 1);
        plan.pad.resize(c_in - c_t);
        for (auto& ch : plan.pad) ch = pick(eng);
    }
    return plan;
}

template <typename T>
void ResBlockParams<T>::init(int c, uint64_t seed) {
    w1 = Tensor<T>({3, 3, c, c});
    fill_normal(w1, mix_seed(seed, 1), std::sqrt(2.0 / (9.0 * c)));
    b1 = Tensor<T>({c});
    w2 = Tensor<T>({3, 3, c, c});  // zero: block starts as identity
    b2 = Tensor<T>({c});
}

template <typename T>
void AdapterParams<T>::init(const ResizerConfig& cfg, uint64_t seed) {
    const int c = cfg.target_c, cin = cfg.c_in();
    align_w = Tensor<T>({cin, c});
    fill_normal(align_w, mix_seed(seed, 1), 1.0 / std::sqrt(static_cast<double>(cin)));
    align_b = Tensor<T>({c});
    resizer_fax.init(c, cfg.fax, mix_seed(seed, 2), /*zero_out=*/true);
    res.resize(static_cast<size_t>(cfg.r_blocks));
    for (size_t i = 0; i < res.size(); ++i) res[i].init(c, mix_seed(seed, 3, i));

    cd_wq = Tensor<T>({c, c});  // identity: Q starts as the input feature
    for (int i = 0; i < c; ++i) cd_wq.at2(i, i) = T(1);
    cd_bq = Tensor<T>({c});
    cd_wk = Tensor<T>({c, c});
    cd_wv = Tensor<T>({c, c});
    fill_normal(cd_wk, mix_seed(seed, 4), 1.0 / std::sqrt(static_cast<double>(c)));
    fill_normal(cd_wv, mix_seed(seed, 5), 1.0 / std::sqrt(static_cast<double>(c)));
    cd_bk = Tensor<T>({c});
    cd_bv = Tensor<T>({c});
    cd_fax.init(c, cfg.fax, mix_seed(seed, 6), /*zero_out=*/true);
    ffn_w1 = Tensor<T>({c, 2 * c});
    fill_normal(ffn_w1, mix_seed(seed, 7), 1.0 / std::sqrt(static_cast<double>(c)));
    ffn_b1 = Tensor<T>({2 * c});
    ffn_w2 = Tensor<T>({2 * c, c});  // zero: FFN residual starts as identity
    ffn_b2 = Tensor<T>({c});
    cd_ln_attn.init(c);
    cd_ln_ffn.init(c);
}

namespace {

// index map selecting/reordering channels: out[a,i,j,k] = x[a,i,j,sel[k]]
std::shared_ptr<std::vector<int64_t>> channel_map(int a, int h, int w, int c_src,
                                                  const std::vector<int>& sel) {
    auto m = std::make_shared<std::vector<int64_t>>(
        static_cast<size_t>(a) * h * w * sel.size());
    int64_t out = 0;
    const int64_t px = static_cast<int64_t>(a) * h * w;
    for (int64_t p = 0; p < px; ++p)
        for (int k : sel) (*m)[out++] = p * c_src + k;
    return m;
}

}  // namespace

template <typename T>
VarId channel_align(Tape<T>& tp, VarId f_t, AdapterParams<T>& p, const ResizerConfig& cfg,
                    uint64_t seed) {
    const auto& s = tp.val(f_t).shape;
    require(s.size() == 4, "channel_align: rank 4 expected");
    const int a = s[0], h = s[1], w = s[2], c_t = s[3];
    const int cin = cfg.c_in();
    VarId ww = tp.param(p.align_w), bb = tp.param(p.align_b);

    if (c_t == cin) return tp.linear(f_t, ww, bb);

    const AlignPlan plan = make_align_plan(c_t, cin, cfg.n_repeats, seed);
    if (c_t > cin) {
        VarId acc = kNoVar;
        for (const auto& sub : plan.subsets) {
            VarId picked = tp.gather(f_t, channel_map(a, h, w, c_t, sub), {a, h, w, cin});
            VarId pass = tp.linear(picked, ww, bb);
            acc = (acc == kNoVar) ? pass : tp.add(acc, pass);
        }
        return tp.scale(acc, T(1) / static_cast<T>(plan.subsets.size()));
    }

    std::vector<int> sel(static_cast<size_t>(c_t));
    std::iota(sel.begin(), sel.end(), 0);
    sel.insert(sel.end(), plan.pad.begin(), plan.pad.end());
    VarId padded = tp.gather(f_t, channel_map(a, h, w, c_t, sel), {a, h, w, cin});
    return tp.linear(padded, ww, bb);
}

template <typename T>
VarId resize_features(Tape<T>& tp, VarId f_t, AdapterParams<T>& p, const ResizerConfig& cfg,
                      uint64_t seed) {
    VarId x = channel_align(tp, f_t, p, cfg, seed);
    VarId main = tp.bilinear(fax_delta(tp, x, x, p.resizer_fax, cfg.fax), cfg.target_h,
                             cfg.target_w);
    VarId skip = tp.bilinear(x, cfg.target_h, cfg.target_w);
    VarId y = tp.add(main, skip);
    for (auto& rb : p.res) {
        VarId h1 = tp.gelu(tp.conv3x3(y, tp.param(rb.w1), tp.param(rb.b1)));
        y = tp.add(y, tp.conv3x3(h1, tp.param(rb.w2), tp.param(rb.b2)));
    }
    return y;
}

template <typename T>
VarId cross_domain_transform(Tape<T>& tp, VarId f_t_prime, VarId f_s, AdapterParams<T>& p,
                             const FaxConfig& cfg) {
    const auto& st = tp.val(f_t_prime).shape;
    const auto& ss = tp.val(f_s).shape;
    require(st.size() == 4 && ss.size() == 4, "cross_domain: rank 4 expected");
    require(ss[0] == 1, "cross_domain: source map must have a single agent slice");
    require(st[1] == ss[1] && st[2] == ss[2] && st[3] == ss[3],
            "cross_domain: source/target dims mismatch " + shape_str(st) + " vs " +
                shape_str(ss));

    VarId q = tp.linear(f_t_prime, tp.param(p.cd_wq), tp.param(p.cd_bq));
    VarId k = tp.linear(f_s, tp.param(p.cd_wk), tp.param(p.cd_bk));
    VarId v = tp.linear(f_s, tp.param(p.cd_wv), tp.param(p.cd_bv));
    VarId delta = fax_delta_kv(tp, q, k, v, p.cd_fax, cfg);
    VarId f_hat = tp.add(
        q, tp.layer_norm(delta, tp.param(p.cd_ln_attn.gamma), tp.param(p.cd_ln_attn.beta)));

    VarId hid = tp.gelu(tp.linear(f_hat, tp.param(p.ffn_w1), tp.param(p.ffn_b1)));
    VarId ffn = tp.linear(hid, tp.param(p.ffn_w2), tp.param(p.ffn_b2));
    return tp.add(f_hat,
                  tp.layer_norm(ffn, tp.param(p.cd_ln_ffn.gamma), tp.param(p.cd_ln_ffn.beta)));
}

#define MPDA_ADAPTER_INSTANTIATE(T)                                                              \
    template struct ResBlockParams<T>;                                                           \
    template struct AdapterParams<T>;                                                            \
    template VarId channel_align<T>(Tape<T>&, VarId, AdapterParams<T>&, const ResizerConfig&,    \
                                    uint64_t);                                                   \
    template VarId resize_features<T>(Tape<T>&, VarId, AdapterParams<T>&, const ResizerConfig&,  \
                                      uint64_t);                                                 \
    template VarId cross_domain_transform<T>(Tape<T>&, VarId, VarId, AdapterParams<T>&,          \
                                             const FaxConfig&);

MPDA_ADAPTER_INSTANTIATE(float)
MPDA_ADAPTER_INSTANTIATE(double)

#undef MPDA_ADAPTER_INSTANTIATE

}  // namespace mpda
