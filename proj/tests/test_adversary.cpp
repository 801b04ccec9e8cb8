#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "mpda/adversary.hpp"
#include "mpda/rng.hpp"
#include "mpda/train.hpp"

using namespace mpda;

namespace {

Tensor<float> gaussian_slice(uint64_t seed, double mean, double sigma) {
    Tensor<float> x({1, 8, 8, 4});
    fill_normal(x, seed, sigma);
    for (auto& v : x.data) v += static_cast<float>(mean);
    return x;
}

std::vector<Tensor<float>*> clf_params(DomainClassifier<float>& clf) {
    std::vector<Tensor<float>*> ps;
    clf.visit("clf", [&](const std::string&, Tensor<float>& t) { ps.push_back(&t); });
    return ps;
}

// one optimizer step of the classifier on a single labeled slice
void clf_step(DomainClassifier<float>& clf, AdamOpt<float>& opt, const Tensor<float>& x,
              int label) {
    Tape<float> tp;
    VarId loss = tp.bce_mean(classify_domain(tp, tp.leaf(x), clf), label);
    tp.backward(loss);
    std::vector<Tensor<float>> grads;
    std::vector<std::pair<Tensor<float>*, const Tensor<float>*>> pg;
    auto ps = clf_params(clf);
    grads.reserve(ps.size());
    for (auto* p : ps) grads.push_back(tp.param_grad(*p));
    for (size_t i = 0; i < ps.size(); ++i) pg.emplace_back(ps[i], &grads[i]);
    opt.step(2e-3, pg);
}

double clf_accuracy(DomainClassifier<float>& clf, const std::vector<Tensor<float>>& xs,
                    const std::vector<int>& labels) {
    int correct = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        Tape<float> tp;
        VarId logit = classify_domain(tp, tp.leaf(xs[i]), clf);
        correct += ((tp.val(logit).data[0] > 0) == (labels[i] == 1)) ? 1 : 0;
    }
    return static_cast<double>(correct) / xs.size();
}

// train a fresh classifier on the given slice pairs, report held-out accuracy
double separability(const std::vector<Tensor<float>>& s0, const std::vector<Tensor<float>>& s1,
                    uint64_t seed) {
    const size_t split = s0.size() / 2;
    DomainClassifier<float> clf;
    clf.init(4, seed);
    AdamOpt<float> opt;
    for (int ep = 0; ep < 30; ++ep)
        for (size_t i = 0; i < split; ++i) {
            clf_step(clf, opt, s0[i], 0);
            clf_step(clf, opt, s1[i], 1);
        }
    std::vector<Tensor<float>> xs;
    std::vector<int> labels;
    for (size_t i = split; i < s0.size(); ++i) {
        xs.push_back(s0[i]);
        labels.push_back(0);
        xs.push_back(s1[i]);
        labels.push_back(1);
    }
    return clf_accuracy(clf, xs, labels);
}

}  // namespace

TEST_CASE("reversal schedule ramps linearly and then holds") {
    GrlSetting g;
    g.lambda = 0.5;
    CHECK(g.effective(0) == doctest::Approx(0.5));
    CHECK(g.effective(1000) == doctest::Approx(0.5));

    g.warmup_steps = 10;
    CHECK(g.effective(0) == doctest::Approx(0.0));
    CHECK(g.effective(5) == doctest::Approx(0.25));
    CHECK(g.effective(10) == doctest::Approx(0.5));
    CHECK(g.effective(99) == doctest::Approx(0.5));

    g.lambda = 0.0;
    CHECK(g.effective(7) == doctest::Approx(0.0));
}

TEST_CASE("domain loss closed forms") {
    Tensor<double> zs({2, 1}), zt({3, 1});

    SUBCASE("zero logits give ln 2 per group") {
        Tape<double> tp;
        VarId l = domain_loss(tp, tp.leaf(zs), tp.leaf(zt));
        CHECK(tp.val(l).data[0] == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
    }

    SUBCASE("confident correct logits drive the loss to zero") {
        zs.fill(-20.0);
        zt.fill(20.0);
        Tape<double> tp;
        CHECK(tp.val(domain_loss(tp, tp.leaf(zs), tp.leaf(zt))).data[0] < 1e-8);
    }

    SUBCASE("confident wrong logits cost about the logit magnitude per group") {
        zs.fill(20.0);
        zt.fill(-20.0);
        Tape<double> tp;
        CHECK(tp.val(domain_loss(tp, tp.leaf(zs), tp.leaf(zt))).data[0] ==
              doctest::Approx(40.0).epsilon(1e-6));
    }

    SUBCASE("single group is its own mean") {
        zt.data = {0.0, 0.0, 0.0};
        Tape<double> tp;
        VarId l = domain_loss(tp, kNoVar, tp.leaf(zt));
        CHECK(tp.val(l).data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
        Tape<double> t2;
        CHECK_THROWS_AS(domain_loss(t2, kNoVar, kNoVar), std::invalid_argument);
    }
}

TEST_CASE("smoothed labels put the optimum at a finite logit") {
    // with targets 0.1 / 0.9 the per-logit gradient vanishes at z = ln(9)
    const double zstar = std::log(0.9 / 0.1);
    Tensor<double> zs({1, 1}), zt({1, 1});
    zs.data = {-zstar};
    zt.data = {zstar};
    Tape<double> tp;
    VarId l = domain_loss(tp, tp.param(zs), tp.param(zt), 0.1);
    const double per_group =
        -(0.9 * std::log(0.9) + 0.1 * std::log(0.1));
    CHECK(tp.val(l).data[0] == doctest::Approx(2.0 * per_group).epsilon(1e-12));
    tp.backward(l);
    CHECK(std::abs(tp.param_grad(zs).data[0]) < 1e-12);
    CHECK(std::abs(tp.param_grad(zt).data[0]) < 1e-12);

    // past the optimum the gradient pushes back toward it
    Tensor<double> far({1, 1});
    far.data = {8.0};
    Tape<double> t2;
    VarId l2 = domain_loss(t2, kNoVar, t2.param(far), 0.1);
    t2.backward(l2);
    CHECK(t2.param_grad(far).data[0] > 0);  // increasing z increases the loss

    Tape<double> t3;
    CHECK_THROWS_AS(domain_loss(t3, t3.leaf(zs), t3.leaf(zt), 0.7), std::invalid_argument);
}

TEST_CASE("classifier emits one logit per agent slice") {
    DomainClassifier<float> clf;
    clf.init(4, 11);
    Tensor<float> x({3, 8, 8, 4});
    fill_normal(x, 12, 1.0);
    Tape<float> tp;
    VarId logits = classify_domain(tp, tp.leaf(x), clf);
    CHECK(tp.val(logits).shape == std::vector<int>{3, 1});

    Tensor<float> bad({2, 8, 8, 6});
    Tape<float> t2;
    CHECK_THROWS_AS(classify_domain(t2, t2.leaf(bad), clf), std::invalid_argument);
    DomainClassifier<float> odd;
    CHECK_THROWS_AS(odd.init(5, 1), std::invalid_argument);
}

TEST_CASE("classifier learns a separable pair") {
    std::vector<Tensor<float>> s0, s1;
    for (int i = 0; i < 24; ++i) {
        s0.push_back(gaussian_slice(mix_seed(100, i), 0.0, 1.0));
        s1.push_back(gaussian_slice(mix_seed(200, i), 0.8, 1.0));
    }
    CHECK(separability(s0, s1, 7) >= 0.95);
}

TEST_CASE("adversarial updates drive the two groups together") {
    // source N(0,1); target N(1.2,1); the generator is a learnable offset on
    // the target group. Each player gets its own term: the classifier trains
    // on detached inputs with smoothed labels, the offset trains through the
    // reversal against a frozen classifier copy.
    std::vector<Tensor<float>> src, tgt;
    for (int i = 0; i < 24; ++i) {
        src.push_back(gaussian_slice(mix_seed(300, i), 0.0, 1.0));
        tgt.push_back(gaussian_slice(mix_seed(400, i), 1.2, 1.0));
    }
    CHECK(separability(src, tgt, 8) >= 0.95);

    DomainClassifier<float> clf;
    clf.init(4, 9);
    Tensor<float> offset({1, 8, 8, 4});
    AdamOpt<float> opt;
    for (int ep = 0; ep < 100; ++ep)
        for (size_t i = 0; i < tgt.size(); ++i) {
            Tape<float> tp;
            VarId adapted = tp.add(tp.leaf(tgt[i]), tp.param(offset));

            VarId lt = classify_domain(tp, tp.leaf(tp.val(adapted)), clf);
            VarId ls = classify_domain(tp, tp.leaf(src[i]), clf);
            VarId dloss = domain_loss(tp, ls, lt, 0.1);

            VarId rev = tp.grad_reverse(adapted, 1.0f);
            VarId h1 = tp.gelu(tp.conv3x3(rev, tp.leaf(clf.w1), tp.leaf(clf.b1)));
            VarId zt = tp.mean_hw(tp.conv3x3(h1, tp.leaf(clf.w2), tp.leaf(clf.b2)));
            VarId loss = tp.add(dloss, tp.scale(tp.bce_mean(zt, 0.0), -1.0f));

            tp.backward(loss);
            std::vector<Tensor<float>*> ps = clf_params(clf);
            ps.push_back(&offset);
            std::vector<Tensor<float>> grads;
            grads.reserve(ps.size());
            std::vector<std::pair<Tensor<float>*, const Tensor<float>*>> pg;
            for (auto* p : ps) grads.push_back(tp.param_grad(*p));
            for (size_t k = 0; k < ps.size(); ++k) pg.emplace_back(ps[k], &grads[k]);
            opt.step(2e-3, pg);
        }

    // the offset should have moved the target group onto the source group
    std::vector<Tensor<float>> moved;
    for (const auto& t : tgt) {
        Tensor<float> m = t;
        for (int64_t i = 0; i < m.size(); ++i) m.data[i] += offset.data[i];
        moved.push_back(std::move(m));
    }
    CHECK(separability(src, moved, 10) <= 0.6);
}
