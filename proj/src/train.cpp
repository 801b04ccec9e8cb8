#include "mpda/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <type_traits>

#include "json.hpp"
#include "mpda/kernels.hpp"

namespace mpda {
namespace {

// salts keeping a run's random streams (scenes, shuffles, channel plans,
// bridges, probes, benches) independent of each other
constexpr uint64_t kTrainSceneSalt = 1001;
constexpr uint64_t kEvalSceneSalt = 2001;
constexpr uint64_t kProbeSceneSalt = 3001;
constexpr uint64_t kShuffleSalt = 4001;
constexpr uint64_t kAlignSalt = 5001;
constexpr uint64_t kBridgeSalt = 6001;
constexpr uint64_t kModelSalt = 7001;
constexpr uint64_t kProbeClfSalt = 8001;
constexpr uint64_t kBenchSalt = 9001;
constexpr uint64_t kInstSalt = 9501;

constexpr double kScoreThr = 0.3;
constexpr double kNmsIou = 0.5;
constexpr double kGradClip = 1.0;  // global norm, keeps the adversarial phase bounded

template <typename T>
Tensor<T> to_precision(const Tensor<float>& x) {
    if constexpr (std::is_same_v<T, float>)
        return x;
    else
        return x.template cast<T>();
}

// standardize each agent slice over all of its elements (mean 0, var 1).
// The domain branch sees features only through this, so absolute feature
// magnitude is not a channel either network can play with; the detection
// branch still sees (and anchors) the raw scale.
template <typename T>
VarId ln_fixed(Tape<T>& tp, VarId x) {
    const auto s = tp.val(x).shape;
    const int a = s[0];
    const int flat = static_cast<int>(tp.val(x).size() / a);
    VarId gamma = tp.leaf(Tensor<T>({flat}, T(1)));
    VarId beta = tp.leaf(Tensor<T>({flat}));
    VarId rows = tp.reshape(x, {a, 1, 1, flat});
    VarId normed = tp.layer_norm(rows, gamma, beta);
    return tp.reshape(normed, s);
}

// Smoothed labels for the classifier's side of the adversarial game. The
// per-logit optimum of the smoothed BCE sits at a finite logit (about
// +-2.2), so the gradient turns around past it and the classifier cannot
// ride its optimizer into numeric saturation, which would freeze the game.
constexpr double kLabelSmooth = 0.1;

// classifier forward through value copies of the weights: the features
// receive the game gradient, the classifier's own parameters do not
template <typename T>
VarId classify_frozen(Tape<T>& tp, VarId x, const DomainClassifier<T>& clf) {
    VarId h1 = tp.gelu(tp.conv3x3(x, tp.leaf(clf.w1), tp.leaf(clf.b1)));
    VarId h2 = tp.conv3x3(h1, tp.leaf(clf.w2), tp.leaf(clf.b2));
    return tp.mean_hw(h2);
}

// seeded noise on the classifier's (standardized) inputs. With a bit of
// overlap forced onto the two groups the classifier can never be exactly
// right or exactly fooled, and its decision boundary keeps tracking the
// actual distribution gap.
template <typename T>
VarId jitter(Tape<T>& tp, VarId x, uint64_t seed) {
    Tensor<T> n(tp.val(x).shape);
    fill_normal(n, seed, 0.25);
    return tp.add(x, tp.leaf(std::move(n)));
}

// the same per-slice standardization the training-time domain branch sees,
// so probes measure pattern differences rather than magnitude
Tensor<float> ln_rows(const Tensor<float>& x) {
    const int a = x.dim(0);
    const int64_t flat = x.size() / a;
    Tensor<float> out(x.shape);
    for (int s = 0; s < a; ++s) {
        const float* src = x.ptr() + s * flat;
        float* dst = out.ptr() + s * flat;
        double mu = 0;
        for (int64_t i = 0; i < flat; ++i) mu += src[i];
        mu /= static_cast<double>(flat);
        double var = 0;
        for (int64_t i = 0; i < flat; ++i) var += (src[i] - mu) * (src[i] - mu);
        var /= static_cast<double>(flat);
        const double rstd = 1.0 / std::sqrt(var + 1e-5);
        for (int64_t i = 0; i < flat; ++i) dst[i] = static_cast<float>((src[i] - mu) * rstd);
    }
    return out;
}

// all collaborator views of one scene stacked along the agent axis
Tensor<float> stack_views(const SceneSpec& scene, const DomainSpec& dom) {
    require(scene.n_collab >= 1, "stack_views: scene has no collaborators");
    Tensor<float> out({scene.n_collab, dom.h, dom.w, dom.c});
    const int64_t plane = static_cast<int64_t>(dom.h) * dom.w * dom.c;
    for (int v = 1; v <= scene.n_collab; ++v) {
        FeatureMap<float> fm = extract_features(scene, dom, v);
        std::copy(fm.data.data.begin(), fm.data.data.end(), out.data.begin() + (v - 1) * plane);
    }
    return out;
}

template <typename T>
struct TaskForward {
    VarId f_s = kNoVar;     // ego leaf
    VarId adapted = kNoVar; // collaborator maps as the fusion sees them
    VarId fused = kNoVar;
    VarId pred = kNoVar;
};

// One scene through the full stack. Under mpda the collaborators pass the
// adapter; naive inputs arrive pre-bridged to ego dims and skip it.
template <typename T>
TaskForward<T> forward_task(Tape<T>& tp, Pipeline<T>& model, const Tensor<T>& ego,
                            const Tensor<T>& collab, uint64_t align_seed) {
    TaskForward<T> fw;
    fw.f_s = tp.leaf(ego);
    if (collab.size() > 0) {
        VarId ft = tp.leaf(collab);
        if (model.method == Method::mpda) {
            VarId ftp = resize_features(tp, ft, model.adapter, model.rcfg, align_seed);
            fw.adapted = cross_domain_transform(tp, ftp, fw.f_s, model.adapter, model.rcfg.fax);
        } else {
            fw.adapted = ft;
        }
    }
    fw.fused = fuse(tp, fw.f_s, fw.adapted, model.fusion);
    fw.pred = head_forward(tp, fw.fused, model.head);
    return fw;
}

// channel-mean slices for the cheap per-epoch probe
template <typename T>
std::vector<double> pooled_means(const Tensor<T>& x, int agent) {
    const int h = x.dim(1), w = x.dim(2), c = x.dim(3);
    std::vector<double> out(c, 0.0);
    const T* base = x.ptr() + static_cast<int64_t>(agent) * h * w * c;
    for (int64_t px = 0; px < static_cast<int64_t>(h) * w; ++px)
        for (int ch = 0; ch < c; ++ch) out[ch] += static_cast<double>(base[px * c + ch]);
    for (double& v : out) v /= static_cast<double>(h) * w;
    return out;
}

// logistic regression on pooled channel means, first-half scenes train,
// second half score; a coarse invariance signal logged every epoch
template <typename T>
double linear_probe_acc(Pipeline<T>& model, uint64_t seed, const ScenarioDomains& doms) {
    constexpr int kScenes = 8;
    constexpr int kTrain = 4;
    struct Vec {
        std::vector<double> x;
        int label, scene;
    };
    std::vector<Vec> vecs;
    for (int i = 0; i < kScenes; ++i) {
        SceneSpec scene = gen_scene(mix_seed(seed, kProbeSceneSalt, 50000 + i));
        Tensor<T> ego = to_precision<T>(extract_features(scene, doms.ego, 0).data);
        Tensor<T> collab = to_precision<T>(stack_views(scene, doms.collab_train));
        Tape<T> tp;
        TaskForward<T> fw =
            forward_task(tp, model, ego, collab, mix_seed(seed, kAlignSalt, 50000 + i));
        const Tensor<float> fs = ln_rows(tp.val(fw.f_s).template cast<float>());
        const Tensor<float> ad = ln_rows(tp.val(fw.adapted).template cast<float>());
        vecs.push_back({pooled_means(fs, 0), 0, i});
        for (int a = 0; a < ad.dim(0); ++a) vecs.push_back({pooled_means(ad, a), 1, i});
    }
    const size_t dim = vecs[0].x.size();
    // standardize with train-split statistics
    std::vector<double> mu(dim, 0), sd(dim, 0);
    int n_train = 0;
    for (const Vec& v : vecs)
        if (v.scene < kTrain) {
            ++n_train;
            for (size_t d = 0; d < dim; ++d) mu[d] += v.x[d];
        }
    for (double& m : mu) m /= n_train;
    for (const Vec& v : vecs)
        if (v.scene < kTrain)
            for (size_t d = 0; d < dim; ++d) sd[d] += (v.x[d] - mu[d]) * (v.x[d] - mu[d]);
    for (double& s : sd) s = std::sqrt(s / n_train) + 1e-8;

    std::vector<double> w(dim, 0.0);
    double b = 0.0;
    for (int it = 0; it < 200; ++it) {
        std::vector<double> gw(dim, 0.0);
        double gb = 0.0;
        for (const Vec& v : vecs) {
            if (v.scene >= kTrain) continue;
            double z = b;
            for (size_t d = 0; d < dim; ++d) z += w[d] * (v.x[d] - mu[d]) / sd[d];
            const double err = 1.0 / (1.0 + std::exp(-z)) - v.label;
            for (size_t d = 0; d < dim; ++d) gw[d] += err * (v.x[d] - mu[d]) / sd[d];
            gb += err;
        }
        for (size_t d = 0; d < dim; ++d) w[d] -= 0.5 / n_train * gw[d];
        b -= 0.5 / n_train * gb;
    }
    int correct = 0, total = 0;
    for (const Vec& v : vecs) {
        if (v.scene < kTrain) continue;
        double z = b;
        for (size_t d = 0; d < dim; ++d) z += w[d] * (v.x[d] - mu[d]) / sd[d];
        correct += ((z > 0) == (v.label == 1)) ? 1 : 0;
        ++total;
    }
    return static_cast<double>(correct) / total;
}

bool owned_by(const std::string& name, const char* prefix) {
    return name.rfind(prefix, 0) == 0;
}

// frozen feature slices fed to the post-hoc probe
struct ProbeSlice {
    Tensor<float> x;  // [1,H,W,C]
    int label, scene;
};

Tensor<float> agent_slice(const Tensor<float>& x, int agent) {
    const int h = x.dim(1), w = x.dim(2), c = x.dim(3);
    Tensor<float> out({1, h, w, c});
    const int64_t plane = static_cast<int64_t>(h) * w * c;
    std::copy_n(x.data.begin() + agent * plane, plane, out.data.begin());
    return out;
}

double probe_run(const std::vector<ProbeSlice>& slices, int train_scenes, uint64_t clf_seed,
                 int epochs) {
    require(!slices.empty(), "probe_run: no slices");
    const int c = slices[0].x.dim(3);
    DomainClassifier<float> clf;
    clf.init(c, clf_seed);
    std::vector<Tensor<float>*> params;
    clf.visit("p", [&](const std::string&, Tensor<float>& t) { params.push_back(&t); });

    std::vector<int> train_ids;
    for (size_t i = 0; i < slices.size(); ++i)
        if (slices[i].scene < train_scenes) train_ids.push_back(static_cast<int>(i));
    require(!train_ids.empty(), "probe_run: empty train split");

    AdamOpt<float> opt;
    std::mt19937_64 shuf(mix_seed(clf_seed, kProbeClfSalt));
    for (int ep = 0; ep < epochs; ++ep) {
        std::shuffle(train_ids.begin(), train_ids.end(), shuf);
        for (int id : train_ids) {
            Tape<float> tp;
            VarId x = tp.leaf(slices[id].x);
            VarId logit = classify_domain(tp, x, clf);
            VarId loss = tp.bce_mean(logit, slices[id].label);
            tp.backward(loss);
            std::vector<std::pair<Tensor<float>*, const Tensor<float>*>> pg;
            std::vector<Tensor<float>> grads;
            grads.reserve(params.size());
            for (Tensor<float>* p : params) grads.push_back(tp.param_grad(*p));
            for (size_t i = 0; i < params.size(); ++i) pg.emplace_back(params[i], &grads[i]);
            opt.step(2e-3, pg);
        }
    }
    int correct = 0, total = 0;
    for (const ProbeSlice& s : slices) {
        if (s.scene < train_scenes) continue;
        Tape<float> tp;
        VarId logit = classify_domain(tp, tp.leaf(s.x), clf);
        const double z = static_cast<double>(tp.val(logit).data[0]);
        correct += ((z > 0) == (s.label == 1)) ? 1 : 0;
        ++total;
    }
    require(total > 0, "probe_run: empty held-out split");
    return static_cast<double>(correct) / total;
}

}  // namespace

template <typename T>
void Pipeline<T>::init(Scenario sc, Method m, uint64_t seed) {
    scenario = sc;
    method = m;
    const ScenarioDomains doms = scenario_domains(sc);
    rcfg = ResizerConfig{};
    rcfg.target_h = doms.ego.h;
    rcfg.target_w = doms.ego.w;
    rcfg.target_c = doms.ego.c;
    rcfg.rng_seed = mix_seed(seed, kModelSalt, 1);
    adapter.init(rcfg, mix_seed(seed, kModelSalt, 2));
    clf.init(rcfg.target_c, mix_seed(seed, kModelSalt, 3));
    fusion.init(rcfg.target_c, mix_seed(seed, kModelSalt, 4));
    head.init(rcfg.target_c, mix_seed(seed, kModelSalt, 5));
    grl = GrlSetting{};
    // ceiling of the reversal ramp; the 0.1 domain-loss weight scales it back
    // down, so the adapter's reversed signal peaks at parity with detection
    grl.lambda = 10.0;
}

template <typename T>
void AdamOpt<T>::step(double lr, const std::vector<std::pair<Tensor<T>*, const Tensor<T>*>>& pg) {
    ++t_;
    for (const auto& [p, g] : pg) {
        require(p->size() == g->size(), "adam: param/grad size mismatch");
        auto it = state_.find(p);
        if (it == state_.end())
            it = state_.emplace(p, std::make_pair(Tensor<T>(p->shape), Tensor<T>(p->shape))).first;
        kernels::adam_step(p->ptr(), g->ptr(), it->second.first.ptr(), it->second.second.ptr(),
                           p->size(), static_cast<T>(lr), static_cast<T>(beta1),
                           static_cast<T>(beta2), static_cast<T>(eps), static_cast<T>(wdecay), t_);
    }
}

Tensor<float> bridge_collab(const Tensor<float>& collab, int out_h, int out_w, int out_c,
                            uint64_t seed) {
    require(collab.rank() == 4, "bridge_collab: want [N,H,W,C], got " + shape_str(collab.shape));
    const int n = collab.dim(0), c_in = collab.dim(3);
    Tensor<float> resized({n, out_h, out_w, c_in});
    kernels::bilinear_fwd(collab.ptr(), resized.ptr(), n, collab.dim(1), collab.dim(2), out_h,
                          out_w, c_in);
    if (c_in == out_c) return resized;

    std::mt19937_64 eng(seed);
    std::vector<int> pick(out_c);
    if (c_in > out_c) {
        std::vector<int> all(c_in);
        std::iota(all.begin(), all.end(), 0);
        std::sample(all.begin(), all.end(), pick.begin(), out_c, eng);
    } else {
        std::iota(pick.begin(), pick.begin() + c_in, 0);
        std::uniform_int_distribution<int> d(0, c_in - 1);
        for (int i = c_in; i < out_c; ++i) pick[i] = d(eng);
    }
    Tensor<float> out({n, out_h, out_w, out_c});
    const int64_t px_count = static_cast<int64_t>(n) * out_h * out_w;
    for (int64_t px = 0; px < px_count; ++px) {
        const float* src = resized.ptr() + px * c_in;
        float* dst = out.ptr() + px * out_c;
        for (int ch = 0; ch < out_c; ++ch) dst[ch] = src[pick[ch]];
    }
    return out;
}

template <typename T>
TrainResult<T> train_model(const TrainConfig& cfg) {
    cfg.validate();
    TrainResult<T> out;
    Pipeline<T>& model = out.model;
    model.init(cfg.scenario, cfg.method, cfg.seed);
    const ScenarioDomains doms = scenario_domains(cfg.scenario);

    std::vector<SceneSample<T>> samples;
    samples.reserve(cfg.train_scenes);
    for (int i = 0; i < cfg.train_scenes; ++i) {
        SceneSample<T> s;
        s.scene = gen_scene(mix_seed(cfg.seed, kTrainSceneSalt, i));
        s.ego = to_precision<T>(extract_features(s.scene, doms.ego, 0).data);
        if (cfg.method == Method::mpda)
            s.collab = to_precision<T>(stack_views(s.scene, doms.collab_train));
        else if (cfg.method == Method::naive)
            // the naive baseline learns fusion on same-domain collaborators
            s.collab = to_precision<T>(stack_views(s.scene, doms.ego));
        samples.push_back(std::move(s));
    }

    std::vector<Tensor<T>*> params;
    std::vector<bool> is_clf;
    model.visit([&](const std::string& name, Tensor<T>& t) {
        if (cfg.method != Method::mpda && (owned_by(name, "adapter.") || owned_by(name, "clf.")))
            return;
        params.push_back(&t);
        is_clf.push_back(owned_by(name, "clf."));
    });
    std::vector<Tensor<T>> gsum;
    gsum.reserve(params.size());
    for (Tensor<T>* p : params) gsum.emplace_back(p->shape);

    // two time-scale updates: the classifier runs faster than the generator
    // so it stays near-optimal and the reversed gradient points at the
    // distribution gap instead of at a stale decision boundary
    constexpr double kClfLrRatio = 4.0;
    AdamOpt<T> opt;
    AdamOpt<T> opt_clf;
    // bounds the classifier's attainable confidence so its loss never
    // saturates and the reversed gradient keeps flowing
    opt_clf.wdecay = 1e-3;
    double lr = cfg.lr;
    int64_t gstep = 0;
    const auto steps_per_epoch =
        static_cast<int64_t>((samples.size() + cfg.batch - 1) / cfg.batch);
    // ramp the reversal in over the first two epochs: the classifier learns a
    // real boundary first, so the adapter's counter-pressure starts out aimed
    // at the distribution gap rather than at a random init
    model.grl.warmup_steps = static_cast<int>(2 * steps_per_epoch);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (epoch > 0 && epoch % cfg.decay_every == 0) lr *= cfg.lr_decay;
        out.report.lr_per_epoch.push_back(lr);

        std::vector<int> order(samples.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 shuf(mix_seed(cfg.seed, kShuffleSalt, epoch));
        std::shuffle(order.begin(), order.end(), shuf);

        for (size_t start = 0; start < order.size(); start += cfg.batch) {
            const size_t stop = std::min(order.size(), start + cfg.batch);
            const int bsz = static_cast<int>(stop - start);
            for (Tensor<T>& g : gsum) g.fill(T(0));
            double acc_det = 0, acc_dom = 0;

            for (size_t bi = start; bi < stop; ++bi) {
                const SceneSample<T>& s = samples[order[bi]];
                Tape<T> tp;
                const uint64_t align_seed = mix_seed(mix_seed(cfg.seed, kAlignSalt, gstep), bi);
                TaskForward<T> fw = forward_task(tp, model, s.ego, s.collab, align_seed);
                DetLoss det = detection_loss(tp, fw.pred, s.scene.boxes);
                acc_det += static_cast<double>(tp.val(det.total).data[0]);
                // backward objective: alpha * det + unscaled domain loss; the
                // reversal node already folds beta into the generator's slope
                VarId obj = tp.scale(det.total, static_cast<T>(cfg.alpha));
                if (cfg.method == Method::mpda) {
                    const double lam = model.grl.effective(gstep) * cfg.beta;
                    const uint64_t nz = mix_seed(mix_seed(cfg.seed, kInstSalt, gstep), bi);
                    // classifier update: smoothed labels on detached inputs.
                    // A shared minimax loss stalls where the classifier
                    // rests, so each player gets its own term.
                    VarId dt = jitter(tp, ln_fixed(tp, tp.leaf(tp.val(fw.adapted))),
                                      mix_seed(nz, 1));
                    VarId ds = jitter(tp, ln_fixed(tp, tp.leaf(tp.val(fw.f_s))),
                                      mix_seed(nz, 2));
                    VarId dloss = domain_loss(tp, classify_domain(tp, ds, model.clf),
                                              classify_domain(tp, dt, model.clf), kLabelSmooth);
                    acc_dom += static_cast<double>(tp.val(dloss).data[0]);
                    obj = tp.add(obj, dloss);
                    // adapter update: drive the live features toward a
                    // 'source' verdict from a frozen copy of the classifier.
                    // The reversal flips the enclosed maximization back into
                    // the descent direction; the signal scales with how
                    // source-unlike the features still look, so winning
                    // positions get the gentlest push.
                    VarId rev = tp.grad_reverse(fw.adapted, static_cast<T>(lam));
                    VarId gt = jitter(tp, ln_fixed(tp, rev), mix_seed(nz, 3));
                    VarId gloss = tp.bce_mean(classify_frozen(tp, gt, model.clf), 0.0);
                    obj = tp.add(obj, tp.scale(gloss, T(-1)));
                }
                tp.backward(obj);
                for (size_t pi = 0; pi < params.size(); ++pi) {
                    const VarId id = tp.find_param(*params[pi]);
                    if (id != kNoVar && tp.grad_touched(id))
                        kernels::axpy(T(1), tp.grad(id).ptr(), gsum[pi].ptr(), gsum[pi].size());
                }
            }

            std::vector<std::pair<Tensor<T>*, const Tensor<T>*>> pg, pg_clf;
            pg.reserve(params.size());
            double norm2 = 0;
            for (size_t pi = 0; pi < params.size(); ++pi) {
                kernels::scale(gsum[pi].ptr(), T(1.0 / bsz), gsum[pi].ptr(), gsum[pi].size());
                for (int64_t i = 0; i < gsum[pi].size(); ++i) {
                    const double g = static_cast<double>(gsum[pi].data[i]);
                    norm2 += g * g;
                }
                (is_clf[pi] ? pg_clf : pg).emplace_back(params[pi], &gsum[pi]);
            }
            const double norm = std::sqrt(norm2);
            if (norm > kGradClip) {
                const T s = static_cast<T>(kGradClip / norm);
                for (Tensor<T>& g : gsum) kernels::scale(g.ptr(), s, g.ptr(), g.size());
            }
            opt.step(lr, pg);
            if (!pg_clf.empty()) opt_clf.step(lr * kClfLrRatio, pg_clf);

            StepLoss sl;
            sl.det = acc_det / bsz;
            sl.domain = acc_dom / bsz;
            sl.total = cfg.alpha * sl.det + cfg.beta * sl.domain;
            if (!std::isfinite(sl.total))
                throw std::runtime_error("training diverged: non-finite loss at step " +
                                         std::to_string(gstep));
            out.report.steps.push_back(sl);
            ++gstep;
        }

        if (cfg.method == Method::mpda)
            out.report.probe_acc_per_epoch.push_back(linear_probe_acc(model, cfg.seed, doms));
    }
    return out;
}

template <typename T>
EvalReport evaluate_model(Pipeline<T>& model, Scenario sc, uint64_t split_seed, int n_scenes) {
    require(n_scenes > 0, "evaluate_model: n_scenes must be positive");
    const ScenarioDomains doms = scenario_domains(sc);
    std::vector<ScoredMatch> m50, m70;
    EvalReport r;
    for (int i = 0; i < n_scenes; ++i) {
        SceneSpec scene = gen_scene(mix_seed(split_seed, kEvalSceneSalt, i));
        Tensor<T> ego = to_precision<T>(extract_features(scene, doms.ego, 0).data);
        Tensor<T> collab;
        if (model.method == Method::mpda)
            collab = to_precision<T>(stack_views(scene, doms.collab_test));
        else if (model.method == Method::naive)
            collab = to_precision<T>(
                bridge_collab(stack_views(scene, doms.collab_test), model.rcfg.target_h,
                              model.rcfg.target_w, model.rcfg.target_c,
                              mix_seed(split_seed, kBridgeSalt, i)));
        Tape<T> tp;
        TaskForward<T> fw =
            forward_task(tp, model, ego, collab, mix_seed(split_seed, kAlignSalt, i));
        BoxSet dets = detect(tp.val(fw.pred), kScoreThr, kNmsIou);
        match_detections(dets, scene.boxes, 0.5, m50);
        match_detections(dets, scene.boxes, 0.7, m70);
        r.num_gt += static_cast<int64_t>(scene.boxes.size());
        r.num_det += static_cast<int64_t>(dets.size());
    }
    r.ap50 = ap_from_matches(std::move(m50), r.num_gt);
    r.ap70 = ap_from_matches(std::move(m70), r.num_gt);
    return r;
}

template <typename T>
ProbeReport probe_invariance(Pipeline<T>& model, uint64_t seed, int n_scenes, int train_scenes,
                             int epochs) {
    require(model.method == Method::mpda, "probe_invariance: model has no adapter");
    require(n_scenes > train_scenes && train_scenes > 0, "probe_invariance: bad split");
    const ScenarioDomains doms = scenario_domains(model.scenario);

    std::vector<ProbeSlice> adapted, raw;
    for (int i = 0; i < n_scenes; ++i) {
        SceneSpec scene = gen_scene(mix_seed(seed, kProbeSceneSalt, i));
        Tensor<float> ego_f = extract_features(scene, doms.ego, 0).data;
        Tensor<float> collab_raw = stack_views(scene, doms.collab_train);

        Tape<T> tp;
        VarId fs = tp.leaf(to_precision<T>(ego_f));
        VarId ft = tp.leaf(to_precision<T>(collab_raw));
        VarId ftp = resize_features(tp, ft, model.adapter, model.rcfg, mix_seed(seed, kAlignSalt, i));
        VarId ft2 = cross_domain_transform(tp, ftp, fs, model.adapter, model.rcfg.fax);
        // the probe sees the same fixed normalization the in-loop branch does
        Tensor<float> ad = ln_rows(tp.val(ft2).template cast<float>());
        Tensor<float> ego_n = ln_rows(ego_f);

        adapted.push_back({ego_n, 0, i});
        for (int a = 0; a < ad.dim(0); ++a) adapted.push_back({agent_slice(ad, a), 1, i});

        Tensor<float> bridged = ln_rows(
            bridge_collab(collab_raw, model.rcfg.target_h, model.rcfg.target_w,
                          model.rcfg.target_c, mix_seed(seed, kBridgeSalt, i)));
        raw.push_back({ego_n, 0, i});
        for (int a = 0; a < bridged.dim(0); ++a) raw.push_back({agent_slice(bridged, a), 1, i});
    }

    ProbeReport r;
    r.acc_adapted = probe_run(adapted, train_scenes, mix_seed(seed, kProbeClfSalt, 1), epochs);
    r.acc_raw = probe_run(raw, train_scenes, mix_seed(seed, kProbeClfSalt, 2), epochs);
    return r;
}

template <typename T>
std::vector<BenchRow> bench_inference(Pipeline<T>& model, const std::vector<int>& agent_counts,
                                      int iters, int warmup) {
    require(iters > 0 && !agent_counts.empty(), "bench_inference: empty benchmark");
    const ScenarioDomains doms = scenario_domains(model.scenario);
    const DomainSpec& collab_dom =
        model.method == Method::mpda ? doms.collab_test : doms.ego;

    std::vector<BenchRow> rows;
    for (int n : agent_counts) {
        require(n >= 1, "bench_inference: agent count must be >= 1");
        Tensor<T> ego({1, doms.ego.h, doms.ego.w, doms.ego.c});
        fill_normal(ego, mix_seed(kBenchSalt, n, 0), 1.0);
        Tensor<T> collab;
        if (n > 1 && model.method != Method::no_fusion) {
            collab = Tensor<T>({n - 1, collab_dom.h, collab_dom.w, collab_dom.c});
            fill_normal(collab, mix_seed(kBenchSalt, n, 1), 1.0);
        }
        std::vector<double> fps;
        fps.reserve(iters);
        for (int it = -warmup; it < iters; ++it) {
            const auto t0 = std::chrono::steady_clock::now();
            Tape<T> tp;
            forward_task(tp, model, ego, collab, mix_seed(kBenchSalt, n, 100 + it));
            const auto t1 = std::chrono::steady_clock::now();
            if (it >= 0)
                fps.push_back(1.0 / std::chrono::duration<double>(t1 - t0).count());
        }
        BenchRow row;
        row.agents = n;
        for (double f : fps) row.fps_mean += f;
        row.fps_mean /= fps.size();
        for (double f : fps) row.fps_std += (f - row.fps_mean) * (f - row.fps_mean);
        row.fps_std = std::sqrt(row.fps_std / fps.size());
        rows.push_back(row);
    }
    return rows;
}

template <typename T>
Checkpoint to_checkpoint(Pipeline<T>& model) {
    Checkpoint ck;
    ck.dtype = std::is_same_v<T, float> ? 0 : 1;
    nlohmann::json meta;
    meta["scenario"] = to_string(model.scenario);
    meta["method"] = to_string(model.method);
    meta["precision"] = std::is_same_v<T, float> ? "f32" : "f64";
    meta["grl_lambda"] = model.grl.lambda;
    meta["grl_warmup"] = model.grl.warmup_steps;
    meta["rng_seed"] = model.rcfg.rng_seed;
    meta["n_repeats"] = model.rcfg.n_repeats;
    meta["r_blocks"] = model.rcfg.r_blocks;
    ck.meta = meta.dump();
    model.visit([&](const std::string& name, Tensor<T>& t) {
        CheckpointSection s;
        s.name = name;
        s.shape = t.shape;
        s.data.assign(t.data.begin(), t.data.end());
        ck.sections.push_back(std::move(s));
    });
    return ck;
}

CheckpointMeta parse_checkpoint_meta(const Checkpoint& ck) {
    nlohmann::json j = nlohmann::json::parse(ck.meta);
    CheckpointMeta m;
    m.scenario = parse_scenario(j.at("scenario").get<std::string>());
    m.method = parse_method(j.at("method").get<std::string>());
    m.precision = parse_precision(j.at("precision").get<std::string>());
    return m;
}

template <typename T>
Pipeline<T> pipeline_from_checkpoint(const Checkpoint& ck) {
    const CheckpointMeta meta = parse_checkpoint_meta(ck);
    const int want = std::is_same_v<T, float> ? 0 : 1;
    require(ck.dtype == want, "checkpoint dtype does not match the requested precision");

    nlohmann::json j = nlohmann::json::parse(ck.meta);
    Pipeline<T> model;
    model.init(meta.scenario, meta.method, 0);
    model.grl.lambda = j.value("grl_lambda", model.grl.lambda);
    model.grl.warmup_steps = j.value("grl_warmup", model.grl.warmup_steps);
    model.rcfg.rng_seed = j.value("rng_seed", model.rcfg.rng_seed);

    size_t filled = 0;
    model.visit([&](const std::string& name, Tensor<T>& t) {
        const CheckpointSection* s = ck.find(name);
        require(s != nullptr, "checkpoint is missing section " + name);
        require(s->shape == t.shape, "checkpoint shape mismatch in section " + name);
        std::transform(s->data.begin(), s->data.end(), t.data.begin(),
                       [](double v) { return static_cast<T>(v); });
        ++filled;
    });
    require(filled == ck.sections.size(), "checkpoint holds sections this model does not use");
    return model;
}

template struct Pipeline<float>;
template struct Pipeline<double>;
template class AdamOpt<float>;
template class AdamOpt<double>;
template TrainResult<float> train_model<float>(const TrainConfig&);
template TrainResult<double> train_model<double>(const TrainConfig&);
template EvalReport evaluate_model<float>(Pipeline<float>&, Scenario, uint64_t, int);
template EvalReport evaluate_model<double>(Pipeline<double>&, Scenario, uint64_t, int);
template ProbeReport probe_invariance<float>(Pipeline<float>&, uint64_t, int, int, int);
template ProbeReport probe_invariance<double>(Pipeline<double>&, uint64_t, int, int, int);
template std::vector<BenchRow> bench_inference<float>(Pipeline<float>&, const std::vector<int>&,
                                                      int, int);
template std::vector<BenchRow> bench_inference<double>(Pipeline<double>&, const std::vector<int>&,
                                                       int, int);
template Checkpoint to_checkpoint<float>(Pipeline<float>&);
template Checkpoint to_checkpoint<double>(Pipeline<double>&);
template Pipeline<float> pipeline_from_checkpoint<float>(const Checkpoint&);
template Pipeline<double> pipeline_from_checkpoint<double>(const Checkpoint&);

}  // namespace mpda
