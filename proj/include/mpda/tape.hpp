#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mpda/kernels.hpp"
#include "mpda/tensor.hpp"

namespace mpda {

using VarId = int32_t;
inline constexpr VarId kNoVar = -1;

// Reverse-mode tape. One tape per forward pass; ops append nodes, backward()
// walks them in reverse. Gradients accumulate (+=), so a value consumed twice
// gets the sum of both paths. Parameters are cached by address: registering
// the same tensor twice yields the same node, which is what makes weight
// sharing across branches work.
template <typename T>
class Tape {
public:
    VarId leaf(Tensor<T> value) {
        nodes_.push_back(Node{std::move(value), {}, nullptr});
        return static_cast<VarId>(nodes_.size() - 1);
    }

    VarId param(const Tensor<T>& p) {
        auto it = param_ids_.find(&p);
        if (it != param_ids_.end()) return it->second;
        VarId id = leaf(p);
        param_ids_.emplace(&p, id);
        return id;
    }

    bool has_param(const Tensor<T>& p) const { return param_ids_.count(&p) != 0; }

    // kNoVar when the tensor never entered this tape
    VarId find_param(const Tensor<T>& p) const {
        auto it = param_ids_.find(&p);
        return it == param_ids_.end() ? kNoVar : it->second;
    }

    const Tensor<T>& val(VarId id) const { return nodes_[id].val; }
    Tensor<T>& val_mut(VarId id) { return nodes_[id].val; }

    // zero-filled on first touch
    Tensor<T>& grad(VarId id) {
        Node& n = nodes_[id];
        if (n.grad.data.empty()) n.grad = Tensor<T>(n.val.shape);
        return n.grad;
    }
    bool grad_touched(VarId id) const { return !nodes_[id].grad.data.empty(); }

    // gradient of a registered parameter after backward(); zeros if untouched
    Tensor<T> param_grad(const Tensor<T>& p) const {
        auto it = param_ids_.find(&p);
        require(it != param_ids_.end(), "param_grad: tensor was never registered");
        const Node& n = nodes_[it->second];
        if (n.grad.data.empty()) return Tensor<T>(n.val.shape);
        return n.grad;
    }

    void backward(VarId root) {
        require(nodes_[root].val.data.size() == 1, "backward: root must be a scalar");
        grad(root).data[0] = T(1);
        for (VarId i = root; i >= 0; --i) {
            Node& n = nodes_[i];
            if (!n.bwd || n.grad.data.empty()) continue;
            cursor_ = i;
            n.bwd(*this);
        }
        cursor_ = kNoVar;
    }

    size_t size() const { return nodes_.size(); }

    // ---- generic hook for fused ops defined outside the tape ----
    VarId make_node(Tensor<T> val, std::function<void(Tape&)> bwd) {
        nodes_.push_back(Node{std::move(val), {}, std::move(bwd)});
        return static_cast<VarId>(nodes_.size() - 1);
    }

    // ---- primitive ops ----

    VarId add(VarId a, VarId b) {
        const Tensor<T>&va = val(a), &vb = val(b);
        require(va.same_shape(vb),
                "add: shape mismatch " + shape_str(va.shape) + " vs " + shape_str(vb.shape));
        Tensor<T> out(va.shape);
        kernels::add(va.data.data(), vb.data.data(), out.data.data(), out.size());
        return make_node(std::move(out), [a, b](Tape& t) {
            VarId self = t.cursor_;
            const Tensor<T>& g = t.grad(self);
            kernels::axpy(T(1), g.data.data(), t.grad(a).data.data(), g.size());
            kernels::axpy(T(1), g.data.data(), t.grad(b).data.data(), g.size());
        });
    }

    VarId scale(VarId a, T s) {
        const Tensor<T>& va = val(a);
        Tensor<T> out(va.shape);
        kernels::scale(va.data.data(), s, out.data.data(), out.size());
        return make_node(std::move(out), [a, s](Tape& t) {
            const Tensor<T>& g = t.grad(t.cursor_);
            kernels::axpy(s, g.data.data(), t.grad(a).data.data(), g.size());
        });
    }

    VarId gelu(VarId x) {
        const Tensor<T>& vx = val(x);
        Tensor<T> out(vx.shape);
        kernels::gelu_fwd(vx.data.data(), out.data.data(), out.size());
        return make_node(std::move(out), [x](Tape& t) {
            const Tensor<T>& g = t.grad(t.cursor_);
            kernels::gelu_bwd(t.val(x).data.data(), g.data.data(), t.grad(x).data.data(),
                              g.size());
        });
    }

    VarId tanh(VarId x) {
        const Tensor<T>& vx = val(x);
        Tensor<T> out(vx.shape);
        kernels::tanh_fwd(vx.data.data(), out.data.data(), out.size());
        return make_node(std::move(out), [x](Tape& t) {
            const Tensor<T>& g = t.grad(t.cursor_);
            kernels::tanh_bwd(t.val(x).data.data(), g.data.data(), t.grad(x).data.data(),
                              g.size());
        });
    }

    // x[..., cin] * w[cin, cout] + b[cout]; pass kNoVar to skip the bias
    VarId linear(VarId x, VarId w, VarId b) {
        const Tensor<T>&vx = val(x), &vw = val(w);
        require(vw.shape.size() == 2, "linear: weight must be rank 2");
        const int cin = vw.shape[0], cout = vw.shape[1];
        require(!vx.shape.empty() && vx.shape.back() == cin,
                "linear: input trailing dim " + shape_str(vx.shape) + " != weight rows");
        const int64_t p = vx.size() / cin;
        std::vector<int> oshape = vx.shape;
        oshape.back() = cout;
        Tensor<T> out(oshape);
        const T* bias = (b == kNoVar) ? nullptr : val(b).data.data();
        kernels::linear_fwd(vx.data.data(), vw.data.data(), bias, out.data.data(), p, cin, cout);
        return make_node(std::move(out), [x, w, b, p, cin, cout](Tape& t) {
            const Tensor<T>& g = t.grad(t.cursor_);
            kernels::linear_bwd_input(g.data.data(), t.val(w).data.data(), t.grad(x).data.data(),
                                      p, cin, cout);
            T* db = (b == kNoVar) ? nullptr : t.grad(b).data.data();
            kernels::linear_bwd_params(t.val(x).data.data(), g.data.data(),
                                       t.grad(w).data.data(), db, p, cin, cout);
        });
    }

    // x[A,H,W,cin], w[3,3,cin,cout], stride 1, zero padding
    VarId conv3x3(VarId x, VarId w, VarId b) {
        const Tensor<T>&vx = val(x), &vw = val(w);
        require(vx.shape.size() == 4, "conv3x3: input must be rank 4");
        require(vw.shape.size() == 4 && vw.shape[0] == 3 && vw.shape[1] == 3,
                "conv3x3: weight must be [3,3,cin,cout]");
        const int a = vx.shape[0], h = vx.shape[1], wd = vx.shape[2];
        const int cin = vw.shape[2], cout = vw.shape[3];
        require(vx.shape[3] == cin, "conv3x3: channel mismatch");
        Tensor<T> out({a, h, wd, cout});
        const T* bias = (b == kNoVar) ? nullptr : val(b).data.data();
        kernels::conv3x3_fwd(vx.data.data(), vw.data.data(), bias, out.data.data(), a, h, wd,
                             cin, cout);
        return make_node(std::move(out), [x, w, b, a, h, wd, cin, cout](Tape& t) {
            const Tensor<T>& g = t.grad(t.cursor_);
            kernels::conv3x3_bwd_input(g.data.data(), t.val(w).data.data(),
                                       t.grad(x).data.data(), a, h, wd, cin, cout);
            T* db = (b == kNoVar) ? nullptr : t.grad(b).data.data();
            kernels::conv3x3_bwd_params(t.val(x).data.data(), g.data.data(),
                                        t.grad(w).data.data(), db, a, h, wd, cin, cout);
        });
    }

    // corner-aligned resize of x[A,Hi,Wi,C] to [A,ho,wo,C]
    VarId bilinear(VarId x, int ho, int wo) {
        const Tensor<T>& vx = val(x);
        require(vx.shape.size() == 4, "bilinear: input must be rank 4");
        const int a = vx.shape[0], hi = vx.shape[1], wi = vx.shape[2], c = vx.shape[3];
        Tensor<T> out({a, ho, wo, c});
        kernels::bilinear_fwd(vx.data.data(), out.data.data(), a, hi, wi, ho, wo, c);
        return make_node(std::move(out), [x, a, hi, wi, ho, wo, c](Tape& t) {
            const Tensor<T>& g = t.grad(t.cursor_);
            kernels::bilinear_bwd(g.data.data(), t.grad(x).data.data(), a, hi, wi, ho, wo, c);
        });
    }

    // normalization over the trailing axis
    VarId layer_norm(VarId x, VarId gamma, VarId beta, T eps = T(1e-5)) {
        const Tensor<T>& vx = val(x);
        const int c = vx.shape.back();
        require(val(gamma).size() == c && val(beta).size() == c, "layer_norm: param size");
        const int64_t p = vx.size() / c;
        Tensor<T> out(vx.shape);
        auto mean = std::make_shared<std::vector<T>>(p);
        auto rstd = std::make_shared<std::vector<T>>(p);
        kernels::layernorm_fwd(vx.data.data(), val(gamma).data.data(), val(beta).data.data(),
                               out.data.data(), mean->data(), rstd->data(), p, c, eps);
        return make_node(std::move(out), [x, gamma, beta, p, c, mean, rstd](Tape& t) {
            const Tensor<T>& g = t.grad(t.cursor_);
            kernels::layernorm_bwd(t.val(x).data.data(), t.val(gamma).data.data(), mean->data(),
                                   rstd->data(), g.data.data(), t.grad(x).data.data(),
                                   t.grad(gamma).data.data(), t.grad(beta).data.data(), p, c);
        });
    }

    // out[i] = x[idx[i]]; idx is shared between forward and the scatter backward
    VarId gather(VarId x, std::shared_ptr<const std::vector<int64_t>> idx,
                 std::vector<int> out_shape) {
        Tensor<T> out(out_shape);
        require(static_cast<int64_t>(idx->size()) == out.size(), "gather: index count");
        kernels::gather_fwd(val(x).data.data(), idx->data(), out.data.data(), out.size());
        return make_node(std::move(out), [x, idx](Tape& t) {
            const Tensor<T>& g = t.grad(t.cursor_);
            kernels::gather_bwd(g.data.data(), idx->data(), t.grad(x).data.data(), g.size());
        });
    }

    // scaled dot-product attention: q[G,Tq,heads*hd], k/v[G,Tk,heads*hd]
    VarId attention(VarId q, VarId k, VarId v, int heads) {
        const Tensor<T>&vq = val(q), &vk = val(k), &vv = val(v);
        require(vq.shape.size() == 3 && vk.shape.size() == 3, "attention: rank 3 expected");
        require(vk.same_shape(vv), "attention: k/v shape mismatch");
        const int g = vq.shape[0], tq = vq.shape[1], dm = vq.shape[2];
        const int tk = vk.shape[1];
        require(vk.shape[0] == g && vk.shape[2] == dm, "attention: q/k shape mismatch");
        require(dm % heads == 0, "attention: model dim not divisible by heads");
        const int hd = dm / heads;
        Tensor<T> out({g, tq, dm});
        auto probs = std::make_shared<Tensor<T>>(std::vector<int>{g, heads, tq, tk});
        kernels::attn_fwd(vq.data.data(), vk.data.data(), vv.data.data(), out.data.data(),
                          probs->data.data(), g, tq, tk, heads, hd);
        return make_node(std::move(out), [q, k, v, probs, g, tq, tk, heads, hd](Tape& t) {
            const Tensor<T>& go = t.grad(t.cursor_);
            kernels::attn_bwd(t.val(q).data.data(), t.val(k).data.data(), t.val(v).data.data(),
                              probs->data.data(), go.data.data(), t.grad(q).data.data(),
                              t.grad(k).data.data(), t.grad(v).data.data(), g, tq, tk, heads, hd);
        });
    }

    // concatenate along axis 0; trailing dims must agree
    VarId concat0(VarId a, VarId b) {
        const Tensor<T>&va = val(a), &vb = val(b);
        require(va.shape.size() == vb.shape.size(), "concat0: rank mismatch");
        for (size_t i = 1; i < va.shape.size(); ++i)
            require(va.shape[i] == vb.shape[i], "concat0: trailing dim mismatch");
        std::vector<int> oshape = va.shape;
        oshape[0] += vb.shape[0];
        Tensor<T> out(oshape);
        std::copy(va.data.begin(), va.data.end(), out.data.begin());
        std::copy(vb.data.begin(), vb.data.end(), out.data.begin() + va.size());
        const int64_t na = va.size();
        return make_node(std::move(out), [a, b, na](Tape& t) {
            const Tensor<T>& g = t.grad(t.cursor_);
            kernels::axpy(T(1), g.data.data(), t.grad(a).data.data(), na);
            kernels::axpy(T(1), g.data.data() + na, t.grad(b).data.data(), g.size() - na);
        });
    }

    // metadata-only reshape (same element order)
    VarId reshape(VarId x, std::vector<int> shape) {
        Tensor<T> out(shape);
        require(out.size() == val(x).size(), "reshape: element count mismatch");
        out.data = val(x).data;
        return make_node(std::move(out), [x](Tape& t) {
            const Tensor<T>& g = t.grad(t.cursor_);
            kernels::axpy(T(1), g.data.data(), t.grad(x).data.data(), g.size());
        });
    }

    // gradient reversal: identity forward, -lambda * grad backward
    VarId grad_reverse(VarId x, T lambda) {
        Tensor<T> out = val(x);
        return make_node(std::move(out), [x, lambda](Tape& t) {
            const Tensor<T>& g = t.grad(t.cursor_);
            kernels::axpy(-lambda, g.data.data(), t.grad(x).data.data(), g.size());
        });
    }

    // spatial mean: x[A,H,W,C] -> [A,C]
    VarId mean_hw(VarId x) {
        const Tensor<T>& vx = val(x);
        require(vx.shape.size() == 4, "mean_hw: input must be rank 4");
        const int a = vx.shape[0], h = vx.shape[1], w = vx.shape[2], c = vx.shape[3];
        const T inv = T(1) / static_cast<T>(h * w);
        Tensor<T> out({a, c});
        for (int ag = 0; ag < a; ++ag) {
            const T* base = vx.data.data() + static_cast<int64_t>(ag) * h * w * c;
            T* o = out.data.data() + static_cast<int64_t>(ag) * c;
            for (int64_t px = 0; px < static_cast<int64_t>(h) * w; ++px)
                for (int ch = 0; ch < c; ++ch) o[ch] += base[px * c + ch];
            for (int ch = 0; ch < c; ++ch) o[ch] *= inv;
        }
        return make_node(std::move(out), [x, a, h, w, c, inv](Tape& t) {
            const Tensor<T>& g = t.grad(t.cursor_);
            Tensor<T>& gx = t.grad(x);
            for (int ag = 0; ag < a; ++ag) {
                const T* go = g.data.data() + static_cast<int64_t>(ag) * c;
                T* base = gx.data.data() + static_cast<int64_t>(ag) * h * w * c;
                for (int64_t px = 0; px < static_cast<int64_t>(h) * w; ++px)
                    for (int ch = 0; ch < c; ++ch) base[px * c + ch] += go[ch] * inv;
            }
        });
    }

    // mean of binary cross entropy against a constant 0/1 label; z is any shape
    // binary cross-entropy against a (possibly soft) target in [0,1]
    VarId bce_mean(VarId z, double target) {
        const Tensor<T>& vz = val(z);
        const int64_t n = vz.size();
        require(n > 0, "bce_mean: empty logits");
        require(target >= 0.0 && target <= 1.0, "bce_mean: target outside [0,1]");
        const double y = target;
        double acc = 0;
        for (int64_t i = 0; i < n; ++i) {
            const double zi = static_cast<double>(vz.data[i]);
            acc += std::max(zi, 0.0) - zi * y + std::log1p(std::exp(-std::abs(zi)));
        }
        Tensor<T> out({1});
        out.data[0] = static_cast<T>(acc / static_cast<double>(n));
        return make_node(std::move(out), [z, y, n](Tape& t) {
            const T g = t.grad(t.cursor_).data[0];
            const Tensor<T>& vz = t.val(z);
            Tensor<T>& gz = t.grad(z);
            for (int64_t i = 0; i < n; ++i) {
                const double zi = static_cast<double>(vz.data[i]);
                const double sig = 1.0 / (1.0 + std::exp(-zi));
                gz.data[i] += g * static_cast<T>((sig - y) / static_cast<double>(n));
            }
        });
    }

    // internal: id of the node whose bwd lambda is currently running
    VarId cursor_ = kNoVar;

private:
    struct Node {
        Tensor<T> val;
        Tensor<T> grad;
        std::function<void(Tape&)> bwd;
    };

    std::vector<Node> nodes_;
    std::unordered_map<const void*, VarId> param_ids_;
};

}  // namespace mpda
