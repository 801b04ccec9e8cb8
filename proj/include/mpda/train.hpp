#pragma once

#include <unordered_map>
#include <vector>

#include "mpda/adapter.hpp"
#include "mpda/adversary.hpp"
#include "mpda/checkpoint.hpp"
#include "mpda/config.hpp"
#include "mpda/detection.hpp"
#include "mpda/fusion.hpp"
#include "mpda/synth.hpp"

namespace mpda {

// Everything learnable plus the wiring metadata needed to rebuild it from a
// checkpoint. The adapter and classifier only train under Method::mpda; they
// are kept in every bundle so checkpoints have one layout.
template <typename T>
struct Pipeline {
    Scenario scenario = Scenario::hetero1;
    Method method = Method::mpda;
    ResizerConfig rcfg;
    AdapterParams<T> adapter;
    DomainClassifier<T> clf;
    FusionModel<T> fusion;
    DetectionHead<T> head;
    GrlSetting grl;

    void init(Scenario sc, Method m, uint64_t seed);

    template <typename F>
    void visit(F&& f) {
        adapter.visit([&](const std::string& n, Tensor<T>& t) { f("adapter." + n, t); });
        clf.visit("clf", f);
        fusion.visit("fusion", f);
        head.visit("head", f);
    }
};

struct StepLoss {
    double total = 0, det = 0, domain = 0;
};

struct LossReport {
    std::vector<StepLoss> steps;
    std::vector<double> lr_per_epoch;
    std::vector<double> probe_acc_per_epoch;  // light pooled-feature probe
};

template <typename T>
struct TrainResult {
    Pipeline<T> model;
    LossReport report;
};

// adaptive-moment updates with decoupled weight decay; states keyed by
// parameter address, stepped in registration order
template <typename T>
class AdamOpt {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, wdecay = 0.0;

    void step(double lr, const std::vector<std::pair<Tensor<T>*, const Tensor<T>*>>& pg);
    int64_t steps_taken() const { return t_; }

private:
    int64_t t_ = 0;
    std::unordered_map<Tensor<T>*, std::pair<Tensor<T>, Tensor<T>>> state_;
};

// one scene's cached inputs
template <typename T>
struct SceneSample {
    SceneSpec scene;
    Tensor<T> ego;     // [1,H_S,W_S,C_S]
    Tensor<T> collab;  // [N,h,w,c]; empty when the method ignores collaborators
};

// bilinear resize plus seeded channel drop/pad: the crude bridge the naive
// baseline uses in place of a learned adapter
Tensor<float> bridge_collab(const Tensor<float>& collab, int out_h, int out_w, int out_c,
                            uint64_t seed);

template <typename T>
TrainResult<T> train_model(const TrainConfig& cfg);

struct EvalReport {
    double ap50 = 0, ap70 = 0;
    int64_t num_gt = 0, num_det = 0;
};

template <typename T>
EvalReport evaluate_model(Pipeline<T>& model, Scenario sc, uint64_t split_seed, int n_scenes);

struct ProbeReport {
    double acc_adapted = 0, acc_raw = 0;
};

// Trains a fresh two-conv classifier on frozen features: source slices vs
// the model's adapted train-domain collaborator slices (acc_adapted), and
// vs bridged raw collaborator slices (acc_raw). Held-out scene accuracy.
template <typename T>
ProbeReport probe_invariance(Pipeline<T>& model, uint64_t seed, int n_scenes = 18,
                             int train_scenes = 12, int epochs = 30);

struct BenchRow {
    int agents = 0;
    double fps_mean = 0, fps_std = 0;
};

template <typename T>
std::vector<BenchRow> bench_inference(Pipeline<T>& model, const std::vector<int>& agent_counts,
                                      int iters = 20, int warmup = 3);

template <typename T>
Checkpoint to_checkpoint(Pipeline<T>& model);
template <typename T>
Pipeline<T> pipeline_from_checkpoint(const Checkpoint& ck);

// scenario/method/precision parsed from a checkpoint's meta block
struct CheckpointMeta {
    Scenario scenario;
    Method method;
    Precision precision;
};
CheckpointMeta parse_checkpoint_meta(const Checkpoint& ck);

}  // namespace mpda
