#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cstring>
#include <set>
#include <vector>

#include "doctest.h"
#include "mpda/adapter.hpp"
#include "mpda/rng.hpp"

using namespace mpda;

namespace {

ResizerConfig small_cfg() {
    ResizerConfig cfg;
    cfg.target_h = 8;
    cfg.target_w = 8;
    cfg.target_c = 8;  // c_in = 16
    cfg.r_blocks = 2;
    return cfg;
}

}  // namespace

TEST_CASE("resizer maps any collaborator shape onto the ego grid") {
    const ResizerConfig cfg = small_cfg();
    AdapterParams<float> p;
    p.init(cfg, 40);
    // channel counts below, at, and above the aligner's 2x input width
    const int hs[] = {4, 8, 12};
    const int ws[] = {4, 8, 16};
    const int cs[] = {10, 16, 40};
    for (int h : hs)
        for (int w : ws)
            for (int c : cs) {
                Tensor<float> ft({2, h, w, c});
                fill_normal(ft, mix_seed(41, h, w * 100 + c), 1.0);
                Tape<float> tp;
                VarId y = resize_features(tp, tp.leaf(ft), p, cfg, 7);
                CHECK(tp.val(y).shape == std::vector<int>{2, 8, 8, 8});
            }
}

TEST_CASE("align plan: drop branch draws ascending unique subsets") {
    AlignPlan plan = make_align_plan(40, 16, 4, 99);
    CHECK(plan.pad.empty());
    REQUIRE(plan.subsets.size() == 4);
    for (const auto& sub : plan.subsets) {
        REQUIRE(sub.size() == 16);
        CHECK(std::is_sorted(sub.begin(), sub.end()));
        CHECK(std::set<int>(sub.begin(), sub.end()).size() == 16);
        for (int ch : sub) {
            CHECK(ch >= 0);
            CHECK(ch < 40);
        }
    }

    AlignPlan again = make_align_plan(40, 16, 4, 99);
    CHECK(again.subsets == plan.subsets);
    AlignPlan other = make_align_plan(40, 16, 4, 100);
    CHECK(other.subsets != plan.subsets);
}

TEST_CASE("align plan: pad branch draws existing channels") {
    AlignPlan plan = make_align_plan(3, 16, 4, 17);
    CHECK(plan.subsets.empty());
    REQUIRE(plan.pad.size() == 13);
    for (int ch : plan.pad) {
        CHECK(ch >= 0);
        CHECK(ch < 3);
    }
    CHECK(make_align_plan(16, 16, 4, 17).subsets.empty());
    CHECK(make_align_plan(16, 16, 4, 17).pad.empty());
    CHECK_THROWS_AS(make_align_plan(0, 16, 4, 17), std::invalid_argument);
}

TEST_CASE("drop branch selection frequency is uniform across channels") {
    const int c_t = 24, c_in = 16, reps = 4, trials = 10000;
    std::vector<int64_t> count(c_t, 0);
    for (int i = 0; i < trials; ++i) {
        AlignPlan plan = make_align_plan(c_t, c_in, reps, mix_seed(4242, i));
        for (const auto& sub : plan.subsets)
            for (int ch : sub) ++count[ch];
    }
    const double expect = static_cast<double>(trials) * reps * c_in / c_t;
    for (int ch = 0; ch < c_t; ++ch) {
        CHECK(static_cast<double>(count[ch]) > expect * 0.95);
        CHECK(static_cast<double>(count[ch]) < expect * 1.05);
    }
}

TEST_CASE("equal-width aligner is a plain linear map") {
    const ResizerConfig cfg = small_cfg();
    AdapterParams<double> p;
    p.init(cfg, 50);
    Tensor<double> ft({1, 2, 2, 16});
    fill_normal(ft, 51, 1.0);

    Tape<double> tp;
    VarId y = channel_align(tp, tp.leaf(ft), p, cfg, 7);
    REQUIRE(tp.val(y).shape == std::vector<int>{1, 2, 2, 8});
    for (int px = 0; px < 4; ++px)
        for (int o = 0; o < 8; ++o) {
            double want = p.align_b.data[o];
            for (int i = 0; i < 16; ++i)
                want += ft.data[px * 16 + i] * p.align_w.at2(i, o);
            CHECK(tp.val(y).data[px * 8 + o] == doctest::Approx(want).epsilon(1e-12));
        }
}

TEST_CASE("drop branch averages the aligned subsets") {
    ResizerConfig cfg = small_cfg();
    cfg.target_c = 2;  // c_in = 4
    cfg.n_repeats = 3;
    AdapterParams<double> p;
    p.init(cfg, 60);
    Tensor<double> ft({1, 1, 1, 5});
    ft.data = {0.3, -1.2, 2.0, 0.7, -0.4};

    const uint64_t seed = 88;
    Tape<double> tp;
    VarId y = channel_align(tp, tp.leaf(ft), p, cfg, seed);

    const AlignPlan plan = make_align_plan(5, 4, 3, seed);
    for (int o = 0; o < 2; ++o) {
        double want = 0;
        for (const auto& sub : plan.subsets) {
            double one = p.align_b.data[o];
            for (int i = 0; i < 4; ++i) one += ft.data[sub[i]] * p.align_w.at2(i, o);
            want += one;
        }
        want /= 3.0;
        CHECK(tp.val(y).data[o] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("pad branch appends drawn channels before the linear map") {
    ResizerConfig cfg = small_cfg();
    cfg.target_c = 2;  // c_in = 4
    AdapterParams<double> p;
    p.init(cfg, 70);
    Tensor<double> ft({1, 1, 1, 3});
    ft.data = {1.5, -0.6, 0.9};

    const uint64_t seed = 31;
    Tape<double> tp;
    VarId y = channel_align(tp, tp.leaf(ft), p, cfg, seed);

    const AlignPlan plan = make_align_plan(3, 4, cfg.n_repeats, seed);
    std::vector<double> padded = {ft.data[0], ft.data[1], ft.data[2], ft.data[plan.pad[0]]};
    for (int o = 0; o < 2; ++o) {
        double want = p.align_b.data[o];
        for (int i = 0; i < 4; ++i) want += padded[i] * p.align_w.at2(i, o);
        CHECK(tp.val(y).data[o] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("fresh resizer equals bilinear after the aligner, bit for bit") {
    const ResizerConfig cfg = small_cfg();
    AdapterParams<float> p;
    p.init(cfg, 80);
    Tensor<float> ft({2, 4, 12, 16});
    fill_normal(ft, 81, 1.0);

    Tape<float> tp;
    VarId got = resize_features(tp, tp.leaf(ft), p, cfg, 5);
    VarId want = tp.bilinear(channel_align(tp, tp.leaf(ft), p, cfg, 5), 8, 8);
    REQUIRE(tp.val(got).size() == tp.val(want).size());
    CHECK(std::memcmp(tp.val(got).ptr(), tp.val(want).ptr(),
                      sizeof(float) * tp.val(got).size()) == 0);
}

TEST_CASE("fresh cross-domain transformer is an exact identity") {
    const ResizerConfig cfg = small_cfg();
    AdapterParams<float> p;
    p.init(cfg, 90);
    Tensor<float> ftp({3, 8, 8, 8}), fs({1, 8, 8, 8});
    fill_normal(ftp, 91, 1.0);
    fill_normal(fs, 92, 1.0);

    Tape<float> tp;
    VarId y = cross_domain_transform(tp, tp.leaf(ftp), tp.leaf(fs), p, cfg.fax);
    REQUIRE(tp.val(y).shape == ftp.shape);
    CHECK(std::memcmp(tp.val(y).ptr(), ftp.ptr(), sizeof(float) * ftp.size()) == 0);
}

TEST_CASE("cross-domain transformer rejects mismatched grids") {
    const ResizerConfig cfg = small_cfg();
    AdapterParams<float> p;
    p.init(cfg, 95);
    Tensor<float> ftp({2, 8, 8, 8}), fs({1, 8, 4, 8});
    Tape<float> tp;
    CHECK_THROWS_AS(cross_domain_transform(tp, tp.leaf(ftp), tp.leaf(fs), p, cfg.fax),
                    std::invalid_argument);
}
