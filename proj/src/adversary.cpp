#include "mpda/adversary.hpp"

namespace mpda {

template <typename T>
void DomainClassifier<T>::init(int c, uint64_t seed) {
    require(c >= 2 && c % 2 == 0, "domain classifier: channel count must be even");
    channels = c;
    w1 = Tensor<T>({3, 3, c, c / 2});
    fill_normal(w1, mix_seed(seed, 1), std::sqrt(2.0 / (9.0 * c)));
    b1 = Tensor<T>({c / 2});
    w2 = Tensor<T>({3, 3, c / 2, 1});
    fill_normal(w2, mix_seed(seed, 2), std::sqrt(2.0 / (9.0 * (c / 2))));
    b2 = Tensor<T>({1});
}

template <typename T>
VarId classify_domain(Tape<T>& tp, VarId x, DomainClassifier<T>& clf) {
    const auto& s = tp.val(x).shape;
    require(s.size() == 4, "classify_domain: rank 4 expected");
    require(s[3] == clf.channels, "classify_domain: channel mismatch, got " + shape_str(s) +
                                      " want C=" + std::to_string(clf.channels));
    VarId h1 = tp.gelu(tp.conv3x3(x, tp.param(clf.w1), tp.param(clf.b1)));
    VarId h2 = tp.conv3x3(h1, tp.param(clf.w2), tp.param(clf.b2));
    return tp.mean_hw(h2);
}

template <typename T>
VarId domain_loss(Tape<T>& tp, VarId logits_s, VarId logits_t, double smooth) {
    require(logits_s != kNoVar || logits_t != kNoVar, "domain_loss: both groups empty");
    require(smooth >= 0.0 && smooth < 0.5, "domain_loss: smoothing outside [0, 0.5)");
    if (logits_s == kNoVar) return tp.bce_mean(logits_t, 1.0 - smooth);
    if (logits_t == kNoVar) return tp.bce_mean(logits_s, smooth);
    return tp.add(tp.bce_mean(logits_s, smooth), tp.bce_mean(logits_t, 1.0 - smooth));
}

#define MPDA_ADV_INSTANTIATE(T)                                           \
    template struct DomainClassifier<T>;                                  \
    template VarId classify_domain<T>(Tape<T>&, VarId, DomainClassifier<T>&); \
    template VarId domain_loss<T>(Tape<T>&, VarId, VarId, double);

MPDA_ADV_INSTANTIATE(float)
MPDA_ADV_INSTANTIATE(double)

#undef MPDA_ADV_INSTANTIATE

}  // namespace mpda
