#pragma once

#include <cstdint>

namespace mpda::kernels {

// Every kernel has a serial reference implementation and an OpenMP variant.
// The two share the same per-element inner routine, so results are bitwise
// identical (parallelism is only over disjoint output slices; no racing
// reductions). Tests compare the backends on random inputs; kernel_bench
// times them against each other.
enum class Backend { serial, openmp };

Backend backend();
void set_backend(Backend b);
bool openmp_compiled();
int max_threads();

// ---- elementwise ----
template <typename T>
void add(const T* a, const T* b, T* out, int64_t n);
template <typename T>
void scale(const T* x, T s, T* out, int64_t n);
template <typename T>
void axpy(T alpha, const T* x, T* y, int64_t n);  // y += alpha * x
template <typename T>
void gelu_fwd(const T* x, T* y, int64_t n);
template <typename T>
void gelu_bwd(const T* x, const T* dy, T* dx, int64_t n);  // dx += dy * gelu'(x)
template <typename T>
void tanh_fwd(const T* x, T* y, int64_t n);
template <typename T>
void tanh_bwd(const T* x, const T* dy, T* dx, int64_t n);  // dx += dy * (1 - tanh(x)^2)

// ---- pixel/token linear map (1x1 convolution): x[P,Cin] * w[Cin,Cout] + b ----
template <typename T>
void linear_fwd(const T* x, const T* w, const T* b, T* y, int64_t p, int cin, int cout);
template <typename T>
void linear_bwd_input(const T* dy, const T* w, T* dx, int64_t p, int cin, int cout);  // dx +=
template <typename T>
void linear_bwd_params(const T* x, const T* dy, T* dw, T* db, int64_t p, int cin, int cout);  // +=

// ---- 3x3 convolution, stride 1, zero padding: x[A,H,W,Cin], w[3,3,Cin,Cout] ----
template <typename T>
void conv3x3_fwd(const T* x, const T* w, const T* b, T* y, int a, int h, int wd, int cin, int cout);
template <typename T>
void conv3x3_bwd_input(const T* dy, const T* w, T* dx, int a, int h, int wd, int cin, int cout);
template <typename T>
void conv3x3_bwd_params(const T* x, const T* dy, T* dw, T* db, int a, int h, int wd, int cin,
                        int cout);

// ---- bilinear resize with corner alignment: x[A,Hi,Wi,C] -> y[A,Ho,Wo,C] ----
template <typename T>
void bilinear_fwd(const T* x, T* y, int a, int hi, int wi, int ho, int wo, int c);
template <typename T>
void bilinear_bwd(const T* dy, T* dx, int a, int hi, int wi, int ho, int wo, int c);  // dx +=

// ---- layer norm over the trailing axis: x[P,C] ----
template <typename T>
void layernorm_fwd(const T* x, const T* gamma, const T* beta, T* y, T* mean, T* rstd, int64_t p,
                   int c, T eps);
template <typename T>
void layernorm_bwd(const T* x, const T* gamma, const T* mean, const T* rstd, const T* dy, T* dx,
                   T* dgamma, T* dbeta, int64_t p, int c);

// ---- scaled dot-product attention over token groups ----
// q[G,Tq,heads*hd], k/v[G,Tk,heads*hd]; probs[G,heads,Tq,Tk] is stored for backward.
template <typename T>
void attn_fwd(const T* q, const T* k, const T* v, T* out, T* probs, int g, int tq, int tk,
              int heads, int hd);
template <typename T>
void attn_bwd(const T* q, const T* k, const T* v, const T* probs, const T* dout, T* dq, T* dk,
              T* dv, int g, int tq, int tk, int heads, int hd);

// ---- gather along an index map (partitions, agent permutes, channel gathers) ----
// out[i] = x[idx[i]]; backward scatters dout into dx (+=), serial per plane.
template <typename T>
void gather_fwd(const T* x, const int64_t* idx, T* y, int64_t n);
template <typename T>
void gather_bwd(const T* dy, const int64_t* idx, T* dx, int64_t n);

// ---- adaptive-moment parameter update (decoupled weight decay) ----
template <typename T>
void adam_step(T* p, const T* g, T* m, T* v, int64_t n, T lr, T beta1, T beta2, T eps, T wdecay,
               int64_t t);

}  // namespace mpda::kernels
