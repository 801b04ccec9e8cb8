#pragma once

#include <algorithm>
#include <string>

#include "mpda/rng.hpp"
#include "mpda/tape.hpp"

namespace mpda {

// Two 3x3 convolutions with a spatial-mean pool: one logit per agent slice.
// Sits behind a gradient-reversal node during adversarial training.
template <typename T>
struct DomainClassifier {
    Tensor<T> w1, b1;  // [3,3,C,C/2]
    Tensor<T> w2, b2;  // [3,3,C/2,1]
    int channels = 0;

    void init(int c, uint64_t seed);

    template <typename F>
    void visit(const std::string& pre, F&& f) {
        f(pre + ".w1", w1);
        f(pre + ".b1", b1);
        f(pre + ".w2", w2);
        f(pre + ".b2", b2);
    }
};

struct GrlSetting {
    double lambda = 1.0;
    int warmup_steps = 0;  // 0 disables the linear warmup

    double effective(int64_t step) const {
        if (warmup_steps <= 0) return lambda;
        return lambda * std::min(1.0, static_cast<double>(step) / warmup_steps);
    }
};

// x [A,H,W,C] -> logits [A,1]
template <typename T>
VarId classify_domain(Tape<T>& tp, VarId x, DomainClassifier<T>& clf);

// mean BCE(source logits, label 0) + mean BCE(target logits, label 1);
// pass kNoVar for a missing group (at least one must be present).
// smooth > 0 replaces the labels with smooth / 1-smooth, which puts the
// per-logit optimum at a finite value so confidence cannot run away.
template <typename T>
VarId domain_loss(Tape<T>& tp, VarId logits_s, VarId logits_t, double smooth = 0.0);

}  // namespace mpda
