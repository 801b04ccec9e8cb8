#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <memory>
#include <vector>

#include "doctest.h"
#include "mpda/rng.hpp"
#include "mpda/tape.hpp"

using namespace mpda;

namespace {

// scalar-output finite difference on one tensor coordinate
template <typename Build>
double fd_coord(Tensor<double>& t, int64_t i, Build&& build) {
    const double x0 = t.data[i];
    const double h = 1e-5 * std::max(1.0, std::abs(x0));
    t.data[i] = x0 + h;
    Tape<double> tp;
    const double fp = tp.val(build(tp)).data[0];
    t.data[i] = x0 - h;
    Tape<double> tm;
    const double fm = tm.val(build(tm)).data[0];
    t.data[i] = x0;
    return (fp - fm) / (2 * h);
}

template <typename Build>
void check_grads(Tensor<double>& t, Build&& build, double tol = 1e-6) {
    Tape<double> tp;
    VarId root = build(tp);
    REQUIRE(tp.val(root).size() == 1);
    tp.backward(root);
    Tensor<double> ga = tp.param_grad(t);
    for (int64_t i = 0; i < t.size(); ++i) {
        const double fd = fd_coord(t, i, build);
        CHECK(ga.data[i] == doctest::Approx(fd).epsilon(tol).scale(1.0));
    }
}

VarId sum_all(Tape<double>& tp, VarId v) {
    const int64_t n = tp.val(v).size();
    VarId flat = tp.reshape(v, {1, static_cast<int>(n)});
    Tensor<double> w({static_cast<int>(n), 1}, 1.0);
    return tp.linear(flat, tp.leaf(std::move(w)), kNoVar);
}

}  // namespace

TEST_CASE("add and scale propagate gradients") {
    Tensor<double> a({3}), b({3});
    a.data = {1, 2, 3};
    b.data = {4, 5, 6};
    Tape<double> tp;
    VarId r = sum_all(tp, tp.add(tp.param(a), tp.scale(tp.param(b), 2.0)));
    tp.backward(r);
    CHECK(tp.param_grad(a).data[1] == doctest::Approx(1.0));
    CHECK(tp.param_grad(b).data[1] == doctest::Approx(2.0));
}

TEST_CASE("value consumed twice accumulates both paths") {
    Tensor<double> a({2});
    a.data = {1.5, -0.5};
    Tape<double> tp;
    VarId x = tp.param(a);
    VarId r = sum_all(tp, tp.add(x, x));
    tp.backward(r);
    CHECK(tp.param_grad(a).data[0] == doctest::Approx(2.0));
}

TEST_CASE("parameter registered twice is one node") {
    Tensor<double> a({2});
    a.data = {1, 2};
    Tape<double> tp;
    CHECK(tp.param(a) == tp.param(a));
    CHECK(tp.find_param(a) != kNoVar);
    Tensor<double> other({2});
    CHECK(tp.find_param(other) == kNoVar);
}

TEST_CASE("gelu gradient matches finite differences") {
    Tensor<double> x({6});
    x.data = {-2.0, -0.7, -0.01, 0.3, 1.1, 2.5};
    check_grads(x, [&](Tape<double>& tp) { return sum_all(tp, tp.gelu(tp.param(x))); });
}

TEST_CASE("tanh matches std::tanh and its gradient") {
    Tensor<double> x({6});
    x.data = {-3.0, -1.2, -0.05, 0.4, 1.7, 4.0};
    Tape<double> tp;
    VarId y = tp.tanh(tp.param(x));
    for (int i = 0; i < 6; ++i) CHECK(tp.val(y).data[i] == doctest::Approx(std::tanh(x.data[i])));
    check_grads(x, [&](Tape<double>& tp2) { return sum_all(tp2, tp2.tanh(tp2.param(x))); });
}

TEST_CASE("linear gradients match finite differences") {
    Tensor<double> x({4, 3}), w({3, 2}), b({2});
    fill_normal(x, 1, 1.0);
    fill_normal(w, 2, 0.8);
    fill_normal(b, 3, 0.5);
    auto build = [&](Tape<double>& tp) {
        return sum_all(tp, tp.linear(tp.param(x), tp.param(w), tp.param(b)));
    };
    check_grads(x, build);
    check_grads(w, build);
    check_grads(b, build);
}

TEST_CASE("conv3x3 gradients match finite differences") {
    Tensor<double> x({2, 4, 5, 3}), w({3, 3, 3, 2}), b({2});
    fill_normal(x, 4, 1.0);
    fill_normal(w, 5, 0.4);
    fill_normal(b, 6, 0.2);
    auto build = [&](Tape<double>& tp) {
        return sum_all(tp, tp.conv3x3(tp.param(x), tp.param(w), tp.param(b)));
    };
    check_grads(x, build);
    check_grads(w, build);
}

TEST_CASE("bilinear gradient matches finite differences") {
    Tensor<double> x({1, 3, 4, 2});
    fill_normal(x, 7, 1.0);
    check_grads(x, [&](Tape<double>& tp) { return sum_all(tp, tp.bilinear(tp.param(x), 5, 7)); });
}

TEST_CASE("layer norm gradients match finite differences") {
    Tensor<double> x({2, 2, 2, 4}), gamma({4}), beta({4});
    fill_normal(x, 8, 1.5);
    fill_normal(gamma, 9, 0.5);
    fill_normal(beta, 10, 0.5);
    auto build = [&](Tape<double>& tp) {
        return sum_all(tp, tp.layer_norm(tp.param(x), tp.param(gamma), tp.param(beta)));
    };
    check_grads(x, build, 1e-5);
    check_grads(gamma, build, 1e-5);
    check_grads(beta, build, 1e-5);
}

TEST_CASE("attention gradients match finite differences") {
    Tensor<double> q({2, 3, 4}), k({2, 5, 4}), v({2, 5, 4});
    fill_normal(q, 11, 0.6);
    fill_normal(k, 12, 0.6);
    fill_normal(v, 13, 0.6);
    auto build = [&](Tape<double>& tp) {
        return sum_all(tp, tp.attention(tp.param(q), tp.param(k), tp.param(v), 2));
    };
    check_grads(q, build, 1e-5);
    check_grads(k, build, 1e-5);
    check_grads(v, build, 1e-5);
}

TEST_CASE("gather routes gradients through repeated indices") {
    Tensor<double> x({5});
    x.data = {1, 2, 3, 4, 5};
    auto idx = std::make_shared<const std::vector<int64_t>>(std::vector<int64_t>{4, 1, 1, 0});
    Tape<double> tp;
    VarId r = sum_all(tp, tp.gather(tp.param(x), idx, {4}));
    tp.backward(r);
    Tensor<double> g = tp.param_grad(x);
    CHECK(g.data[1] == doctest::Approx(2.0));
    CHECK(g.data[4] == doctest::Approx(1.0));
    CHECK(g.data[2] == doctest::Approx(0.0));
}

TEST_CASE("concat0 splits gradients") {
    Tensor<double> a({1, 2, 2, 1}), b({2, 2, 2, 1});
    fill_normal(a, 14, 1.0);
    fill_normal(b, 15, 1.0);
    Tape<double> tp;
    VarId c = tp.concat0(tp.param(a), tp.param(b));
    CHECK(tp.val(c).dim(0) == 3);
    VarId r = sum_all(tp, tp.scale(c, 3.0));
    tp.backward(r);
    CHECK(tp.param_grad(a).data[0] == doctest::Approx(3.0));
    CHECK(tp.param_grad(b).data[7] == doctest::Approx(3.0));
}

TEST_CASE("grad_reverse is identity forward, negated and scaled backward") {
    Tensor<double> x({3});
    x.data = {1, -2, 3};
    Tape<double> tp;
    VarId rev = tp.grad_reverse(tp.param(x), 0.7);
    for (int i = 0; i < 3; ++i) CHECK(tp.val(rev).data[i] == x.data[i]);
    VarId r = sum_all(tp, rev);
    tp.backward(r);
    CHECK(tp.param_grad(x).data[0] == doctest::Approx(-0.7));
    CHECK(tp.param_grad(x).data[2] == doctest::Approx(-0.7));
}

TEST_CASE("mean_hw averages per agent and channel") {
    Tensor<double> x({2, 2, 3, 2});
    fill_normal(x, 16, 1.0);
    Tape<double> tp;
    VarId m = tp.mean_hw(tp.param(x));
    REQUIRE(tp.val(m).shape == std::vector<int>{2, 2});
    double want = 0;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j) want += x.at4(1, i, j, 0);
    CHECK(tp.val(m).at2(1, 0) == doctest::Approx(want / 6));

    check_grads(x, [&](Tape<double>& tp2) { return sum_all(tp2, tp2.mean_hw(tp2.param(x))); });
}

TEST_CASE("bce_mean matches the closed form and its gradient") {
    Tensor<double> z({2, 1});
    z.data = {0.8, -1.3};
    for (int label : {0, 1}) {
        Tape<double> tp;
        VarId l = tp.bce_mean(tp.param(z), label);
        double want = 0;
        for (double zi : z.data) {
            const double p = 1.0 / (1.0 + std::exp(-zi));
            want += label ? -std::log(p) : -std::log(1 - p);
        }
        CHECK(tp.val(l).data[0] == doctest::Approx(want / 2));
        check_grads(z, [&](Tape<double>& tp2) { return tp2.bce_mean(tp2.param(z), label); });
    }
}

TEST_CASE("bce_mean is stable at extreme logits") {
    Tensor<double> z({1, 1});
    z.data = {500.0};
    Tape<double> tp;
    CHECK(std::isfinite(tp.val(tp.bce_mean(tp.param(z), 0)).data[0]));
    z.data = {-500.0};
    Tape<double> tp2;
    CHECK(std::isfinite(tp2.val(tp2.bce_mean(tp2.param(z), 1)).data[0]));
}

TEST_CASE("backward rejects non-scalar roots") {
    Tensor<double> x({3});
    Tape<double> tp;
    VarId v = tp.param(x);
    CHECK_THROWS_AS(tp.backward(v), std::invalid_argument);
}

TEST_CASE("float and double tapes share one implementation") {
    Tensor<float> x({2, 2});
    x.data = {1.f, 2.f, 3.f, 4.f};
    Tape<float> tp;
    VarId y = tp.gelu(tp.param(x));
    CHECK(tp.val(y).size() == 4);
}
