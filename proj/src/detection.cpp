#include "mpda/detection.hpp"

#include <algorithm>
#include <cmath>

namespace mpda {

namespace {

constexpr double kFocalAlpha = 0.25;
constexpr double kFocalGamma = 2.0;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double smooth_l1(double r) {
    const double a = std::abs(r);
    return a < 1.0 ? 0.5 * r * r : a - 0.5;
}
double smooth_l1_grad(double r) { return std::abs(r) < 1.0 ? r : (r > 0 ? 1.0 : -1.0); }

// focal objectness value and d/dlogit for one cell
void focal_cell(double z, bool pos, double& val, double& dz) {
    const double p = sigmoid(z);
    const double log_p = -softplus(-z);
    const double log_q = -softplus(z);
    if (pos) {
        const double q = 1.0 - p;
        val = -kFocalAlpha * std::pow(q, kFocalGamma) * log_p;
        dz = kFocalAlpha * std::pow(q, kFocalGamma) * (kFocalGamma * p * log_p - q);
    } else {
        const double a0 = 1.0 - kFocalAlpha;
        val = -a0 * std::pow(p, kFocalGamma) * log_q;
        dz = a0 * std::pow(p, kFocalGamma) * (p - kFocalGamma * (1.0 - p) * log_q);
    }
}

struct CellTarget {
    bool pos = false;
    double ox = 0, oy = 0, logw = 0, logh = 0;
};

}  // namespace

double iou(const Box& a, const Box& b) {
    require(a.w > 0 && a.h > 0 && b.w > 0 && b.h > 0, "iou: boxes need positive sizes");
    const double ix = std::min(a.cx + a.w / 2, b.cx + b.w / 2) -
                      std::max(a.cx - a.w / 2, b.cx - b.w / 2);
    const double iy = std::min(a.cy + a.h / 2, b.cy + b.h / 2) -
                      std::max(a.cy - a.h / 2, b.cy - b.h / 2);
    if (ix <= 0 || iy <= 0) return 0.0;
    const double inter = ix * iy;
    return inter / (a.w * a.h + b.w * b.h - inter);
}

template <typename T>
void DetectionHead<T>::init(int c, uint64_t seed) {
    w = Tensor<T>({c, 5});
    fill_normal(w, mix_seed(seed, 1), 0.01);
    b = Tensor<T>({5});
    b.data[0] = T(-2);  // start with low objectness everywhere
    b.data[3] = static_cast<T>(std::log(4.5));
    b.data[4] = static_cast<T>(std::log(4.5));
}

template <typename T>
VarId head_forward(Tape<T>& tp, VarId v, DetectionHead<T>& head) {
    return tp.linear(v, tp.param(head.w), tp.param(head.b));
}

template <typename T>
BoxSet detect(const Tensor<T>& head_out, double score_thr, double nms_iou) {
    require(head_out.shape.size() == 4 && head_out.shape[0] == 1 && head_out.shape[3] == 5,
            "detect: head output must be [1,H,W,5]");
    const int h = head_out.shape[1], w = head_out.shape[2];
    BoxSet cand;
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            const T* cell = head_out.data.data() + (static_cast<int64_t>(i) * w + j) * 5;
            const double score = sigmoid(static_cast<double>(cell[0]));
            if (score < score_thr) continue;
            Box b;
            b.cx = j + sigmoid(static_cast<double>(cell[1]));
            b.cy = i + sigmoid(static_cast<double>(cell[2]));
            b.w = std::exp(static_cast<double>(cell[3]));
            b.h = std::exp(static_cast<double>(cell[4]));
            b.score = score;
            cand.push_back(b);
        }
    }
    std::stable_sort(cand.begin(), cand.end(),
                     [](const Box& a, const Box& b) { return a.score > b.score; });
    BoxSet kept;
    for (const Box& b : cand) {
        bool suppressed = false;
        for (const Box& k : kept)
            if (iou(b, k) > nms_iou) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(b);
    }
    return kept;
}

template <typename T>
DetLoss detection_loss(Tape<T>& tp, VarId head_out, const BoxSet& gts) {
    const auto& s = tp.val(head_out).shape;
    require(s.size() == 4 && s[0] == 1 && s[3] == 5, "detection_loss: head output [1,H,W,5]");
    const int h = s[1], w = s[2];
    const int64_t cells = static_cast<int64_t>(h) * w;

    auto targets = std::make_shared<std::vector<CellTarget>>(cells);
    int64_t npos = 0;
    for (const Box& g : gts) {
        require(g.w > 0 && g.h > 0, "detection_loss: ground truth needs positive sizes");
        const int row = std::min(h - 1, std::max(0, static_cast<int>(g.cy)));
        const int col = std::min(w - 1, std::max(0, static_cast<int>(g.cx)));
        CellTarget& t = (*targets)[static_cast<int64_t>(row) * w + col];
        if (!t.pos) ++npos;
        t.pos = true;
        t.ox = g.cx - col;
        t.oy = g.cy - row;
        t.logw = std::log(g.w);
        t.logh = std::log(g.h);
    }

    const Tensor<T>& pred = tp.val(head_out);
    double focal_sum = 0, reg_sum = 0;
    for (int64_t cl = 0; cl < cells; ++cl) {
        const T* cell = pred.data.data() + cl * 5;
        const CellTarget& t = (*targets)[cl];
        double fv, fd;
        focal_cell(static_cast<double>(cell[0]), t.pos, fv, fd);
        focal_sum += fv;
        if (t.pos) {
            reg_sum += smooth_l1(sigmoid(static_cast<double>(cell[1])) - t.ox);
            reg_sum += smooth_l1(sigmoid(static_cast<double>(cell[2])) - t.oy);
            reg_sum += smooth_l1(static_cast<double>(cell[3]) - t.logw);
            reg_sum += smooth_l1(static_cast<double>(cell[4]) - t.logh);
        }
    }
    DetLoss out;
    out.focal = focal_sum / static_cast<double>(cells);
    out.reg = npos > 0 ? reg_sum / static_cast<double>(npos) : 0.0;

    Tensor<T> val({1});
    val.data[0] = static_cast<T>(out.focal + out.reg);
    out.total = tp.make_node(std::move(val), [head_out, targets, cells, npos](Tape<T>& t) {
        const T g = t.grad(t.cursor_).data[0];
        const Tensor<T>& pred = t.val(head_out);
        Tensor<T>& gp = t.grad(head_out);
        const double wf = 1.0 / static_cast<double>(cells);
        const double wr = npos > 0 ? 1.0 / static_cast<double>(npos) : 0.0;
        for (int64_t cl = 0; cl < cells; ++cl) {
            const T* cell = pred.data.data() + cl * 5;
            T* gc = gp.data.data() + cl * 5;
            const CellTarget& tg = (*targets)[cl];
            double fv, fd;
            focal_cell(static_cast<double>(cell[0]), tg.pos, fv, fd);
            gc[0] += g * static_cast<T>(fd * wf);
            if (tg.pos) {
                const double px = sigmoid(static_cast<double>(cell[1]));
                const double py = sigmoid(static_cast<double>(cell[2]));
                gc[1] += g * static_cast<T>(smooth_l1_grad(px - tg.ox) * px * (1 - px) * wr);
                gc[2] += g * static_cast<T>(smooth_l1_grad(py - tg.oy) * py * (1 - py) * wr);
                gc[3] += g * static_cast<T>(
                                 smooth_l1_grad(static_cast<double>(cell[3]) - tg.logw) * wr);
                gc[4] += g * static_cast<T>(
                                 smooth_l1_grad(static_cast<double>(cell[4]) - tg.logh) * wr);
            }
        }
    });
    return out;
}

void match_detections(const BoxSet& dets, const BoxSet& gts, double iou_thr,
                      std::vector<ScoredMatch>& out) {
    BoxSet sorted = dets;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const Box& a, const Box& b) { return a.score > b.score; });
    std::vector<bool> used(gts.size(), false);
    for (const Box& d : sorted) {
        int best = -1;
        double best_iou = 0;
        for (size_t i = 0; i < gts.size(); ++i) {
            if (used[i]) continue;
            const double v = iou(d, gts[i]);
            if (v >= iou_thr && v > best_iou) {
                best = static_cast<int>(i);
                best_iou = v;
            }
        }
        if (best >= 0) used[static_cast<size_t>(best)] = true;
        out.push_back({d.score, best >= 0});
    }
}

double ap_from_matches(std::vector<ScoredMatch> matches, int64_t total_gt) {
    if (total_gt == 0) return matches.empty() ? 1.0 : 0.0;
    std::stable_sort(matches.begin(), matches.end(),
                     [](const ScoredMatch& a, const ScoredMatch& b) { return a.score > b.score; });
    double ap = 0;
    int64_t tp = 0, seen = 0;
    for (const ScoredMatch& m : matches) {
        ++seen;
        if (!m.tp) continue;
        ++tp;
        ap += (static_cast<double>(tp) / static_cast<double>(seen)) /
              static_cast<double>(total_gt);
    }
    return ap;
}

double average_precision(const BoxSet& dets, const BoxSet& gts, double iou_thr) {
    std::vector<ScoredMatch> matches;
    match_detections(dets, gts, iou_thr, matches);
    return ap_from_matches(std::move(matches), static_cast<int64_t>(gts.size()));
}

#define MPDA_DET_INSTANTIATE(T)                                             \
    template struct DetectionHead<T>;                                       \
    template VarId head_forward<T>(Tape<T>&, VarId, DetectionHead<T>&);     \
    template BoxSet detect<T>(const Tensor<T>&, double, double);            \
    template DetLoss detection_loss<T>(Tape<T>&, VarId, const BoxSet&);

MPDA_DET_INSTANTIATE(float)
MPDA_DET_INSTANTIATE(double)

#undef MPDA_DET_INSTANTIATE

}  // namespace mpda
