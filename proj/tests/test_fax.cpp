#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "mpda/fax.hpp"
#include "mpda/rng.hpp"

using namespace mpda;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat map_tokens(const Tensor<double>& x) {
    const int h = x.dim(1), w = x.dim(2), d = x.dim(3);
    Mat t(static_cast<size_t>(h) * w, std::vector<double>(d));
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int c = 0; c < d; ++c) t[static_cast<size_t>(i) * w + j][c] = x.at4(0, i, j, c);
    return t;
}

Mat ln_ref(const Mat& x) {
    const double eps = 1e-5;
    Mat y(x.size(), std::vector<double>(x[0].size()));
    for (size_t t = 0; t < x.size(); ++t) {
        double mu = 0;
        for (double v : x[t]) mu += v;
        mu /= static_cast<double>(x[t].size());
        double var = 0;
        for (double v : x[t]) var += (v - mu) * (v - mu);
        var /= static_cast<double>(x[t].size());
        const double rs = 1.0 / std::sqrt(var + eps);
        for (size_t c = 0; c < x[t].size(); ++c) y[t][c] = (x[t][c] - mu) * rs;
    }
    return y;
}

Mat linear_ref(const Mat& x, const Tensor<double>& w, const Tensor<double>& b) {
    const int cin = w.dim(0), cout = w.dim(1);
    Mat y(x.size(), std::vector<double>(cout));
    for (size_t t = 0; t < x.size(); ++t)
        for (int o = 0; o < cout; ++o) {
            double s = b.data[o];
            for (int i = 0; i < cin; ++i) s += x[t][i] * w.data[static_cast<size_t>(i) * cout + o];
            y[t][o] = s;
        }
    return y;
}

// dense attention over every token at once, straight from the definition
Mat mha_ref(const Mat& qm, const Mat& km, AttentionParams<double>& p, int heads, int hd) {
    Mat q = linear_ref(qm, p.wq, p.bq);
    Mat k = linear_ref(km, p.wk, p.bk);
    Mat v = linear_ref(km, p.wv, p.bv);
    const size_t tq = q.size(), tk = k.size();
    Mat o(tq, std::vector<double>(static_cast<size_t>(heads) * hd, 0.0));
    for (int h = 0; h < heads; ++h)
        for (size_t i = 0; i < tq; ++i) {
            std::vector<double> sc(tk);
            double mx = -1e300;
            for (size_t j = 0; j < tk; ++j) {
                double s = 0;
                for (int d = 0; d < hd; ++d) s += q[i][h * hd + d] * k[j][h * hd + d];
                sc[j] = s / std::sqrt(static_cast<double>(hd));
                mx = std::max(mx, sc[j]);
            }
            double den = 0;
            for (size_t j = 0; j < tk; ++j) {
                sc[j] = std::exp(sc[j] - mx);
                den += sc[j];
            }
            for (size_t j = 0; j < tk; ++j)
                for (int d = 0; d < hd; ++d) o[i][h * hd + d] += sc[j] / den * v[j][h * hd + d];
        }
    return linear_ref(o, p.wo, p.bo);
}

Mat add_ref(const Mat& a, const Mat& b) {
    Mat y = a;
    for (size_t t = 0; t < y.size(); ++t)
        for (size_t c = 0; c < y[t].size(); ++c) y[t][c] += b[t][c];
    return y;
}

}  // namespace

TEST_CASE("window partition collects p x p patches") {
    auto m = window_partition_map(1, 4, 4, 1, 2);
    REQUIRE(m->size() == 16);
    CHECK((*m)[0] == 0);
    CHECK((*m)[1] == 1);
    CHECK((*m)[2] == 4);
    CHECK((*m)[3] == 5);
    CHECK((*m)[15] == 15);
}

TEST_CASE("grid partition strides across the whole map") {
    auto m = grid_partition_map(1, 4, 4, 1, 2);
    REQUIRE(m->size() == 16);
    CHECK((*m)[0] == 0);
    CHECK((*m)[1] == 2);
    CHECK((*m)[2] == 8);
    CHECK((*m)[3] == 10);
}

TEST_CASE("partitions reject non-divisible dims") {
    CHECK_THROWS_AS(window_partition_map(1, 5, 4, 1, 2), std::invalid_argument);
    CHECK_THROWS_AS(grid_partition_map(1, 4, 6, 1, 4), std::invalid_argument);
}

TEST_CASE("partition and unpartition round trip bit-exactly") {
    Tensor<float> x({2, 8, 12, 5});
    fill_normal(x, 31, 1.0);
    Tape<float> tp;
    VarId xi = tp.leaf(x);

    VarId wt = window_partition(tp, xi, 4);
    CHECK(tp.val(wt).shape == std::vector<int>{2 * 2 * 3, 16, 5});
    VarId wr = window_unpartition(tp, wt, 2, 8, 12, 4);
    CHECK(std::memcmp(tp.val(wr).ptr(), x.ptr(), sizeof(float) * x.size()) == 0);

    VarId gt = grid_partition(tp, xi, 4);
    CHECK(tp.val(gt).shape == std::vector<int>{2 * 2 * 3, 16, 5});
    VarId gr = grid_unpartition(tp, gt, 2, 8, 12, 4);
    CHECK(std::memcmp(tp.val(gr).ptr(), x.ptr(), sizeof(float) * x.size()) == 0);
}

TEST_CASE("whole-map fax block matches a dense attention reference") {
    FaxConfig cfg;
    cfg.window_p = 4;
    cfg.grid_g = 4;
    const int d = 8;
    FaxParams<double> p;
    p.init(d, cfg, 77, false);
    Tensor<double> x({1, 4, 4, d});
    fill_normal(x, 91, 1.0);

    Tape<double> tp;
    VarId y = fax_block(tp, tp.leaf(x), tp.leaf(x), p, cfg);

    // with p = g = H the partitions are single whole-map groups in raster
    // order, so the block must equal two rounds of dense attention
    Mat xt = map_tokens(x);
    Mat a1 = mha_ref(ln_ref(xt), ln_ref(xt), p.window, cfg.heads, cfg.head_dim);
    Mat s1 = add_ref(xt, a1);
    Mat a2 = mha_ref(ln_ref(s1), ln_ref(xt), p.grid, cfg.heads, cfg.head_dim);
    Mat want = add_ref(add_ref(xt, a1), a2);

    const Tensor<double>& got = tp.val(y);
    double worst = 0;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            for (int c = 0; c < d; ++c)
                worst = std::max(worst,
                                 std::abs(got.at4(0, i, j, c) - want[static_cast<size_t>(i) * 4 + j][c]));
    CHECK(worst < 1e-10);
}

TEST_CASE("zero output projection makes the block an exact identity") {
    FaxConfig cfg;
    FaxParams<float> p;
    p.init(6, cfg, 5, true);
    Tensor<float> x({2, 8, 8, 6});
    fill_normal(x, 6, 1.0);
    Tape<float> tp;
    VarId y = fax_block(tp, tp.leaf(x), tp.leaf(x), p, cfg);
    CHECK(std::memcmp(tp.val(y).ptr(), x.ptr(), sizeof(float) * x.size()) == 0);
}

TEST_CASE("agent slices are processed independently") {
    FaxConfig cfg;
    FaxParams<double> p;
    p.init(6, cfg, 17, false);
    Tensor<double> x({2, 4, 8, 6});
    fill_normal(x, 18, 1.0);
    Tensor<double> xs({2, 4, 8, 6});
    const int64_t slice = x.size() / 2;
    std::memcpy(xs.ptr(), x.ptr() + slice, sizeof(double) * slice);
    std::memcpy(xs.ptr() + slice, x.ptr(), sizeof(double) * slice);

    Tape<double> ta, tb;
    VarId ya = fax_block(ta, ta.leaf(x), ta.leaf(x), p, cfg);
    VarId yb = fax_block(tb, tb.leaf(xs), tb.leaf(xs), p, cfg);
    CHECK(std::memcmp(ta.val(ya).ptr(), tb.val(yb).ptr() + slice, sizeof(double) * slice) == 0);
    CHECK(std::memcmp(ta.val(ya).ptr() + slice, tb.val(yb).ptr(), sizeof(double) * slice) == 0);
}

TEST_CASE("single-slice kv broadcasts across query agents") {
    FaxConfig cfg;
    FaxParams<double> p;
    p.init(6, cfg, 23, false);
    Tensor<double> q({3, 4, 8, 6}), kv({1, 4, 8, 6});
    fill_normal(q, 24, 1.0);
    fill_normal(kv, 25, 1.0);

    Tape<double> tp;
    VarId y = fax_delta_kv(tp, tp.leaf(q), tp.leaf(kv), tp.leaf(kv), p, cfg);
    const int64_t slice = tp.val(y).size() / 3;

    for (int a = 0; a < 3; ++a) {
        Tensor<double> qa({1, 4, 8, 6});
        std::memcpy(qa.ptr(), q.ptr() + a * slice, sizeof(double) * slice);
        Tape<double> ts;
        VarId ys = fax_delta_kv(ts, ts.leaf(qa), ts.leaf(kv), ts.leaf(kv), p, cfg);
        CHECK(std::memcmp(ts.val(ys).ptr(), tp.val(y).ptr() + a * slice,
                          sizeof(double) * slice) == 0);
    }
}

TEST_CASE("fax gradients reach every parameter") {
    FaxConfig cfg;
    cfg.heads = 2;
    cfg.head_dim = 4;
    FaxParams<double> p;
    p.init(6, cfg, 29, false);
    Tensor<double> x({1, 4, 4, 6});
    fill_normal(x, 30, 1.0);
    Tape<double> tp;
    VarId y = fax_block(tp, tp.param(x), tp.param(x), p, cfg);
    VarId flat = tp.reshape(y, {1, static_cast<int>(tp.val(y).size())});
    Tensor<double> ones({static_cast<int>(tp.val(y).size()), 1}, 1.0);
    tp.backward(tp.linear(flat, tp.leaf(std::move(ones)), kNoVar));

    int nonzero = 0;
    p.visit("fax", [&](const std::string&, Tensor<double>& t) {
        const Tensor<double> g = tp.param_grad(t);
        for (double v : g.data)
            if (v != 0) {
                ++nonzero;
                break;
            }
    });
    CHECK(nonzero >= 16);  // every weight and bias tensor gets signal
}
