#pragma once

#include <string>
#include <vector>

#include "mpda/rng.hpp"
#include "mpda/tape.hpp"

namespace mpda {

// axis-aligned box in map-cell units
struct Box {
    double cx = 0, cy = 0, w = 0, h = 0;
    double score = 1.0;
};
using BoxSet = std::vector<Box>;

double iou(const Box& a, const Box& b);

// 1x1 convolution to 5 channels per cell: objectness logit, dcx, dcy,
// log w, log h. Bias starts at a low-objectness, mid-size prior.
template <typename T>
struct DetectionHead {
    Tensor<T> w, b;

    void init(int c, uint64_t seed);

    template <typename F>
    void visit(const std::string& pre, F&& f) {
        f(pre + ".w", w);
        f(pre + ".b", b);
    }
};

template <typename T>
VarId head_forward(Tape<T>& tp, VarId v, DetectionHead<T>& head);

// decode + threshold + greedy NMS on raw head output [1,H,W,5];
// cx = cell_x + sigmoid(dcx), w = exp(log w), score = sigmoid(logit)
template <typename T>
BoxSet detect(const Tensor<T>& head_out, double score_thr, double nms_iou);

// focal objectness (balance 0.25, gamma 2) averaged over all cells, plus
// smooth L1 over the 4 regression channels averaged over positive cells
// (cells holding a ground-truth center). `focal`/`reg` mirror the two parts
// for logging only.
struct DetLoss {
    VarId total = kNoVar;
    double focal = 0, reg = 0;
};

template <typename T>
DetLoss detection_loss(Tape<T>& tp, VarId head_out, const BoxSet& gts);

// score-sorted greedy matching at iou_thr; AP is the raw step area under the
// precision-recall points. Empty gts with detections present -> 0; both
// empty -> 1.
double average_precision(const BoxSet& dets, const BoxSet& gts, double iou_thr);

// pooled multi-scene AP: per-scene matching, one global score sort
struct ScoredMatch {
    double score;
    bool tp;
};
void match_detections(const BoxSet& dets, const BoxSet& gts, double iou_thr,
                      std::vector<ScoredMatch>& out);
double ap_from_matches(std::vector<ScoredMatch> matches, int64_t total_gt);

}  // namespace mpda
