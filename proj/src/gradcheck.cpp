#include "mpda/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "mpda/adapter.hpp"
#include "mpda/adversary.hpp"
#include "mpda/detection.hpp"
#include "mpda/fusion.hpp"
#include "mpda/rng.hpp"
#include "mpda/tape.hpp"

namespace mpda {
namespace {

using D = double;

constexpr double kTolGeneral = 1e-3;
constexpr double kTolGrl = 1e-4;

Tensor<D> randn(std::vector<int> shape, uint64_t seed, double sd = 0.5) {
    Tensor<D> t(std::move(shape));
    fill_normal(t, seed, sd);
    return t;
}

// fixed-weight scalar projection so non-scalar outputs can be FD-checked
VarId proj(Tape<D>& tp, VarId v, uint64_t seed) {
    const int64_t n = tp.val(v).size();
    VarId flat = tp.reshape(v, {1, static_cast<int>(n)});
    Tensor<D> w({static_cast<int>(n), 1});
    fill_normal(w, seed, 1.0);
    return tp.linear(flat, tp.leaf(std::move(w)), kNoVar);
}

// analytic gradients from one tape, then central differences per coordinate
// of every checked tensor; one pooled relative error per case
GradCheckRow run_case(const std::string& name, double tol,
                      const std::vector<Tensor<D>*>& tensors,
                      const std::function<VarId(Tape<D>&)>& build) {
    Tape<D> tp;
    VarId root = build(tp);
    require(tp.val(root).size() == 1, name + ": projected root must be scalar");
    tp.backward(root);
    std::vector<Tensor<D>> ga;
    ga.reserve(tensors.size());
    for (Tensor<D>* t : tensors) ga.push_back(tp.param_grad(*t));

    auto eval = [&build]() {
        Tape<D> t2;
        return static_cast<double>(t2.val(build(t2)).data[0]);
    };

    double diff2 = 0, a2 = 0, fd2 = 0;
    for (size_t ti = 0; ti < tensors.size(); ++ti) {
        Tensor<D>& t = *tensors[ti];
        for (int64_t i = 0; i < t.size(); ++i) {
            const double x0 = t.data[i];
            const double h = 1e-5 * std::max(1.0, std::abs(x0));
            t.data[i] = x0 + h;
            const double fp = eval();
            t.data[i] = x0 - h;
            const double fm = eval();
            t.data[i] = x0;
            const double gfd = (fp - fm) / (2 * h);
            const double g = ga[ti].data[i];
            diff2 += (g - gfd) * (g - gfd);
            a2 += g * g;
            fd2 += gfd * gfd;
        }
    }
    GradCheckRow row;
    row.name = name;
    row.tol = tol;
    row.rel_err = std::sqrt(diff2) / (std::sqrt(a2) + std::sqrt(fd2) + 1e-12);
    row.pass = row.rel_err <= tol;
    return row;
}

FaxConfig tiny_fax() {
    FaxConfig cfg;
    cfg.window_p = 2;
    cfg.grid_g = 2;
    cfg.heads = 2;
    cfg.head_dim = 4;
    return cfg;
}

ResizerConfig tiny_resizer() {
    ResizerConfig rc;
    rc.target_h = 8;
    rc.target_w = 8;
    rc.target_c = 8;
    rc.n_repeats = 2;
    rc.r_blocks = 1;
    rc.fax = tiny_fax();
    rc.rng_seed = 9;
    return rc;
}

void collect(std::vector<Tensor<D>*>& out, AdapterParams<D>& p, const std::string& prefix) {
    p.visit([&](const std::string& n, Tensor<D>& t) {
        if (n.rfind(prefix, 0) == 0) out.push_back(&t);
    });
}

GradCheckRow grl_case(double lambda) {
    DomainClassifier<D> clf;
    clf.init(8, 404);
    Tensor<D> x = randn({2, 6, 6, 8}, 405);
    const Tensor<D> src = randn({1, 6, 6, 8}, 406);

    auto build = [&](Tape<D>& tp) {
        VarId xs = tp.param(x);
        VarId rev = tp.grad_reverse(xs, lambda);
        VarId lt = classify_domain(tp, rev, clf);
        VarId ls = classify_domain(tp, tp.leaf(src), clf);
        return domain_loss(tp, ls, lt);
    };

    Tape<D> tp;
    VarId root = build(tp);
    tp.backward(root);
    Tensor<D> ga = tp.param_grad(x);

    // the forward pass ignores the reversal, so the FD slope is the
    // unreversed gradient; analytic must equal -lambda times it
    double diff2 = 0, a2 = 0, fd2 = 0;
    for (int64_t i = 0; i < x.size(); ++i) {
        const double x0 = x.data[i];
        const double h = 1e-5 * std::max(1.0, std::abs(x0));
        auto eval = [&]() {
            Tape<D> t2;
            return static_cast<double>(t2.val(build(t2)).data[0]);
        };
        x.data[i] = x0 + h;
        const double fp = eval();
        x.data[i] = x0 - h;
        const double fm = eval();
        x.data[i] = x0;
        const double want = -lambda * (fp - fm) / (2 * h);
        const double g = ga.data[i];
        diff2 += (g - want) * (g - want);
        a2 += g * g;
        fd2 += want * want;
    }
    GradCheckRow row;
    row.name = "grl_lambda_" + std::to_string(lambda).substr(0, 3);
    row.tol = kTolGrl;
    row.rel_err = std::sqrt(diff2) / (std::sqrt(a2) + std::sqrt(fd2) + 1e-12);
    row.pass = row.rel_err <= row.tol;
    return row;
}

}  // namespace

std::vector<GradCheckRow> run_gradient_suite() {
    std::vector<GradCheckRow> rows;

    {
        Tensor<D> x = randn({2, 5, 7, 4}, 101);
        rows.push_back(run_case("bilinear_resize", kTolGeneral, {&x}, [&](Tape<D>& tp) {
            return proj(tp, tp.bilinear(tp.param(x), 8, 8), 7101);
        }));
    }
    {
        const FaxConfig cfg = tiny_fax();
        FaxParams<D> p;
        p.init(8, cfg, 202, false);
        Tensor<D> q = randn({2, 4, 4, 8}, 203);
        Tensor<D> kv = randn({2, 4, 4, 8}, 204);
        std::vector<Tensor<D>*> ts{&q, &kv};
        p.visit("fax", [&](const std::string&, Tensor<D>& t) { ts.push_back(&t); });
        rows.push_back(run_case("fax_block", kTolGeneral, ts, [&](Tape<D>& tp) {
            return proj(tp, fax_block(tp, tp.param(q), tp.param(kv), p, cfg), 7202);
        }));
    }
    {
        // one case per aligner branch: equal width, drop, pad
        const ResizerConfig rc = tiny_resizer();
        for (auto [label, c_t] : {std::pair{"channel_align_eq", 16},
                                  std::pair{"channel_align_drop", 20},
                                  std::pair{"channel_align_pad", 12}}) {
            AdapterParams<D> ap;
            ap.init(rc, 301);
            Tensor<D> x = randn({2, 4, 4, c_t}, 302 + c_t);
            std::vector<Tensor<D>*> ts{&x, &ap.align_w, &ap.align_b};
            rows.push_back(run_case(label, kTolGeneral, ts, [&, c_t = c_t](Tape<D>& tp) {
                return proj(tp, channel_align(tp, tp.param(x), ap, rc, 55), 7300 + c_t);
            }));
        }
    }
    {
        const ResizerConfig rc = tiny_resizer();
        AdapterParams<D> ap;
        ap.init(rc, 311);
        Tensor<D> x = randn({2, 4, 4, 20}, 312);
        std::vector<Tensor<D>*> ts{&x};
        collect(ts, ap, "align.");
        collect(ts, ap, "resizer.");
        rows.push_back(run_case("resizer", kTolGeneral, ts, [&](Tape<D>& tp) {
            return proj(tp, resize_features(tp, tp.param(x), ap, rc, 56), 7311);
        }));
    }
    {
        const ResizerConfig rc = tiny_resizer();
        AdapterParams<D> ap;
        ap.init(rc, 321);
        Tensor<D> ftp = randn({2, 8, 8, 8}, 322);
        Tensor<D> fs = randn({1, 8, 8, 8}, 323);
        std::vector<Tensor<D>*> ts{&ftp, &fs};
        collect(ts, ap, "cd.");
        rows.push_back(run_case("cross_domain", kTolGeneral, ts, [&](Tape<D>& tp) {
            return proj(tp, cross_domain_transform(tp, tp.param(ftp), tp.param(fs), ap, rc.fax),
                        7321);
        }));
    }
    {
        DomainClassifier<D> clf;
        clf.init(8, 401);
        Tensor<D> x = randn({2, 6, 6, 8}, 402);
        std::vector<Tensor<D>*> ts{&x, &clf.w1, &clf.b1, &clf.w2, &clf.b2};
        rows.push_back(run_case("classifier", kTolGeneral, ts, [&](Tape<D>& tp) {
            return proj(tp, classify_domain(tp, tp.param(x), clf), 7401);
        }));
    }
    {
        FusionModel<D> m;
        m.heads = 2;
        m.head_dim = 4;
        m.init(8, 501);
        Tensor<D> fs = randn({1, 4, 4, 8}, 502);
        Tensor<D> ft = randn({2, 4, 4, 8}, 503);
        std::vector<Tensor<D>*> ts{&fs, &ft};
        m.visit("fusion", [&](const std::string&, Tensor<D>& t) { ts.push_back(&t); });
        rows.push_back(run_case("fusion", kTolGeneral, ts, [&](Tape<D>& tp) {
            return proj(tp, fuse(tp, tp.param(fs), tp.param(ft), m), 7501);
        }));
    }
    {
        DetectionHead<D> head;
        head.init(8, 601);
        Tensor<D> x = randn({1, 6, 6, 8}, 602);
        std::vector<Tensor<D>*> ts{&x, &head.w, &head.b};
        rows.push_back(run_case("detection_head", kTolGeneral, ts, [&](Tape<D>& tp) {
            return proj(tp, head_forward(tp, tp.param(x), head), 7601);
        }));
    }
    {
        Tensor<D> x = randn({1, 6, 6, 5}, 611);
        BoxSet gts;
        gts.push_back({2.3, 1.7, 2.0, 1.5, 1.0});
        gts.push_back({4.6, 4.2, 1.8, 2.2, 1.0});
        rows.push_back(run_case("detection_loss", kTolGeneral, {&x}, [&](Tape<D>& tp) {
            return detection_loss(tp, tp.param(x), gts).total;
        }));
    }
    {
        Tensor<D> zs = randn({2, 1}, 621);
        Tensor<D> zt = randn({3, 1}, 622);
        rows.push_back(run_case("domain_loss", kTolGeneral, {&zs, &zt}, [&](Tape<D>& tp) {
            return domain_loss(tp, tp.param(zs), tp.param(zt));
        }));
    }
    for (double lambda : {0.0, 0.5, 1.0}) rows.push_back(grl_case(lambda));

    return rows;
}

bool all_pass(const std::vector<GradCheckRow>& rows) {
    for (const GradCheckRow& r : rows)
        if (!r.pass) return false;
    return !rows.empty();
}

}  // namespace mpda
