#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <vector>

#include "doctest.h"
#include "mpda/kernels.hpp"
#include "mpda/rng.hpp"
#include "mpda/tensor.hpp"

using namespace mpda;
namespace kn = mpda::kernels;

namespace {

// run fn under both backends into fresh buffers, require bitwise equality
template <typename T, typename Fn>
void both_backends(Fn&& fn, std::vector<Tensor<T>*> outs) {
    std::vector<Tensor<T>> serial_copies;
    kn::set_backend(kn::Backend::serial);
    fn();
    for (Tensor<T>* o : outs) serial_copies.push_back(*o);
    for (Tensor<T>* o : outs) o->fill(T(0));
    kn::set_backend(kn::Backend::openmp);
    fn();
    for (size_t i = 0; i < outs.size(); ++i) {
        REQUIRE(outs[i]->size() == serial_copies[i].size());
        CHECK(std::memcmp(outs[i]->ptr(), serial_copies[i].ptr(),
                          sizeof(T) * outs[i]->size()) == 0);
    }
    kn::set_backend(kn::Backend::openmp);
}

}  // namespace

TEST_CASE("elementwise kernels agree across backends") {
    Tensor<float> x({3, 7, 11, 5}), y({3, 7, 11, 5}), out({3, 7, 11, 5});
    fill_normal(x, 1, 1.0);
    fill_normal(y, 2, 1.0);

    both_backends<float>([&] { kn::add(x.ptr(), y.ptr(), out.ptr(), out.size()); }, {&out});
    both_backends<float>([&] { kn::scale(x.ptr(), 1.7f, out.ptr(), out.size()); }, {&out});
    both_backends<float>([&] { kn::gelu_fwd(x.ptr(), out.ptr(), out.size()); }, {&out});
    both_backends<float>([&] { kn::tanh_fwd(x.ptr(), out.ptr(), out.size()); }, {&out});

    Tensor<float> dx({3, 7, 11, 5});
    both_backends<float>(
        [&] {
            dx.fill(0);
            kn::gelu_bwd(x.ptr(), y.ptr(), dx.ptr(), x.size());
        },
        {&dx});
    both_backends<float>(
        [&] {
            dx.fill(0);
            kn::tanh_bwd(x.ptr(), y.ptr(), dx.ptr(), x.size());
        },
        {&dx});
}

TEST_CASE("axpy accumulates") {
    Tensor<double> x({4}), y({4});
    x.data = {1, 2, 3, 4};
    y.data = {10, 10, 10, 10};
    kn::axpy(2.0, x.ptr(), y.ptr(), 4);
    CHECK(y.data[0] == doctest::Approx(12));
    CHECK(y.data[3] == doctest::Approx(18));
}

TEST_CASE("linear kernels agree across backends") {
    const int p = 70, cin = 13, cout = 9;
    Tensor<float> x({p, cin}), w({cin, cout}), b({cout});
    fill_normal(x, 3, 1.0);
    fill_normal(w, 4, 0.5);
    fill_normal(b, 5, 0.5);
    Tensor<float> y({p, cout});
    both_backends<float>([&] { kn::linear_fwd(x.ptr(), w.ptr(), b.ptr(), y.ptr(), p, cin, cout); },
                         {&y});

    Tensor<float> dy({p, cout});
    fill_normal(dy, 6, 1.0);
    Tensor<float> dx({p, cin}), dw({cin, cout}), db({cout});
    both_backends<float>(
        [&] {
            dx.fill(0);
            kn::linear_bwd_input(dy.ptr(), w.ptr(), dx.ptr(), p, cin, cout);
        },
        {&dx});
    both_backends<float>(
        [&] {
            dw.fill(0);
            db.fill(0);
            kn::linear_bwd_params(x.ptr(), dy.ptr(), dw.ptr(), db.ptr(), p, cin, cout);
        },
        {&dw, &db});
}

TEST_CASE("conv3x3 kernels agree across backends") {
    const int a = 2, h = 9, wd = 12, cin = 6, cout = 8;
    Tensor<float> x({a, h, wd, cin}), w({3, 3, cin, cout}), b({cout});
    fill_normal(x, 7, 1.0);
    fill_normal(w, 8, 0.3);
    fill_normal(b, 9, 0.3);
    Tensor<float> y({a, h, wd, cout});
    both_backends<float>(
        [&] { kn::conv3x3_fwd(x.ptr(), w.ptr(), b.ptr(), y.ptr(), a, h, wd, cin, cout); }, {&y});

    Tensor<float> dy({a, h, wd, cout});
    fill_normal(dy, 10, 1.0);
    Tensor<float> dx({a, h, wd, cin}), dw({3, 3, cin, cout}), db({cout});
    both_backends<float>(
        [&] {
            dx.fill(0);
            kn::conv3x3_bwd_input(dy.ptr(), w.ptr(), dx.ptr(), a, h, wd, cin, cout);
        },
        {&dx});
    both_backends<float>(
        [&] {
            dw.fill(0);
            db.fill(0);
            kn::conv3x3_bwd_params(x.ptr(), dy.ptr(), dw.ptr(), db.ptr(), a, h, wd, cin, cout);
        },
        {&dw, &db});
}

TEST_CASE("bilinear kernels agree across backends") {
    const int a = 2, hi = 7, wi = 11, ho = 13, wo = 5, c = 4;
    Tensor<float> x({a, hi, wi, c}), y({a, ho, wo, c});
    fill_normal(x, 11, 1.0);
    both_backends<float>([&] { kn::bilinear_fwd(x.ptr(), y.ptr(), a, hi, wi, ho, wo, c); }, {&y});

    Tensor<float> dy({a, ho, wo, c}), dx({a, hi, wi, c});
    fill_normal(dy, 12, 1.0);
    both_backends<float>(
        [&] {
            dx.fill(0);
            kn::bilinear_bwd(dy.ptr(), dx.ptr(), a, hi, wi, ho, wo, c);
        },
        {&dx});
}

TEST_CASE("layernorm kernels agree across backends") {
    const int p = 50, c = 17;
    Tensor<float> x({p, c}), gamma({c}), beta({c});
    fill_normal(x, 13, 2.0);
    fill_normal(gamma, 14, 0.5);
    fill_normal(beta, 15, 0.5);
    Tensor<float> y({p, c}), mean({p}), rstd({p});
    both_backends<float>(
        [&] {
            kn::layernorm_fwd(x.ptr(), gamma.ptr(), beta.ptr(), y.ptr(), mean.ptr(), rstd.ptr(), p,
                              c, 1e-5f);
        },
        {&y, &mean, &rstd});

    Tensor<float> dy({p, c}), dx({p, c}), dgamma({c}), dbeta({c});
    fill_normal(dy, 16, 1.0);
    both_backends<float>(
        [&] {
            dx.fill(0);
            dgamma.fill(0);
            dbeta.fill(0);
            kn::layernorm_bwd(x.ptr(), gamma.ptr(), mean.ptr(), rstd.ptr(), dy.ptr(), dx.ptr(),
                              dgamma.ptr(), dbeta.ptr(), p, c);
        },
        {&dx, &dgamma, &dbeta});
}

TEST_CASE("attention kernels agree across backends") {
    const int g = 6, tq = 5, tk = 7, heads = 2, hd = 4;
    Tensor<float> q({g, tq, heads * hd}), k({g, tk, heads * hd}), v({g, tk, heads * hd});
    fill_normal(q, 17, 0.7);
    fill_normal(k, 18, 0.7);
    fill_normal(v, 19, 0.7);
    Tensor<float> out({g, tq, heads * hd}), probs({g, heads, tq, tk});
    both_backends<float>(
        [&] {
            kn::attn_fwd(q.ptr(), k.ptr(), v.ptr(), out.ptr(), probs.ptr(), g, tq, tk, heads, hd);
        },
        {&out, &probs});

    Tensor<float> dout({g, tq, heads * hd});
    fill_normal(dout, 20, 1.0);
    Tensor<float> dq({g, tq, heads * hd}), dk({g, tk, heads * hd}), dv({g, tk, heads * hd});
    both_backends<float>(
        [&] {
            dq.fill(0);
            dk.fill(0);
            dv.fill(0);
            kn::attn_bwd(q.ptr(), k.ptr(), v.ptr(), probs.ptr(), dout.ptr(), dq.ptr(), dk.ptr(),
                         dv.ptr(), g, tq, tk, heads, hd);
        },
        {&dq, &dk, &dv});
}

TEST_CASE("attention rows are a convex mix of values") {
    const int g = 1, tq = 1, tk = 3, heads = 1, hd = 1;
    Tensor<double> q({g, tq, 1}), k({g, tk, 1}), v({g, tk, 1});
    q.data = {0.3};
    k.data = {0.1, -0.2, 0.5};
    v.data = {1.0, 2.0, 3.0};
    Tensor<double> out({g, tq, 1}), probs({g, heads, tq, tk});
    kn::attn_fwd(q.ptr(), k.ptr(), v.ptr(), out.ptr(), probs.ptr(), g, tq, tk, heads, hd);
    double psum = 0, mix = 0;
    for (int t = 0; t < tk; ++t) {
        psum += probs.data[t];
        mix += probs.data[t] * v.data[t];
    }
    CHECK(psum == doctest::Approx(1.0));
    CHECK(out.data[0] == doctest::Approx(mix));
    CHECK(out.data[0] > 1.0);
    CHECK(out.data[0] < 3.0);
}

TEST_CASE("gather kernels agree and backward scatters") {
    const int64_t n = 40;
    Tensor<float> x({n});
    fill_normal(x, 21, 1.0);
    std::vector<int64_t> idx = {0, 5, 5, 39, 12, 5};
    Tensor<float> y({static_cast<int>(idx.size())});
    both_backends<float>([&] { kn::gather_fwd(x.ptr(), idx.data(), y.ptr(), idx.size()); }, {&y});
    CHECK(y.data[1] == x.data[5]);
    CHECK(y.data[2] == x.data[5]);

    Tensor<float> dy({static_cast<int>(idx.size())});
    dy.fill(1.0f);
    Tensor<float> dx({n});
    both_backends<float>(
        [&] {
            dx.fill(0);
            kn::gather_bwd(dy.ptr(), idx.data(), dx.ptr(), idx.size());
        },
        {&dx});
    CHECK(dx.data[5] == doctest::Approx(3.0));  // repeated index accumulates
    CHECK(dx.data[0] == doctest::Approx(1.0));
    CHECK(dx.data[1] == doctest::Approx(0.0));
}

TEST_CASE("adam step moves against the gradient with bias correction") {
    Tensor<double> p({2}), g({2}), m({2}), v({2});
    p.data = {1.0, -1.0};
    g.data = {0.5, -0.25};
    kn::adam_step(p.ptr(), g.ptr(), m.ptr(), v.ptr(), 2, 0.1, 0.9, 0.999, 1e-8, 0.0, 1);
    // first step: m_hat = g, v_hat = g^2, update ~ lr * sign(g)
    CHECK(p.data[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-3));
    CHECK(p.data[1] == doctest::Approx(-1.0 + 0.1).epsilon(1e-3));
}

TEST_CASE("backend setting is visible") {
    kn::set_backend(kn::Backend::serial);
    CHECK(kn::backend() == kn::Backend::serial);
    kn::set_backend(kn::Backend::openmp);
    CHECK(kn::backend() == kn::Backend::openmp);
    CHECK(kn::max_threads() >= 1);
}
