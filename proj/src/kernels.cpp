#include "mpda/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mpda::kernels {

namespace {
Backend g_backend =
#ifdef _OPENMP
    Backend::openmp;
#else
    Backend::serial;
#endif
}  // namespace

Backend backend() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }

bool openmp_compiled() {
#ifdef _OPENMP
    return true;
#else
    return false;
#endif
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

// Per-element routines shared by both backends. Parallel loops only split
// disjoint output slices across threads, so serial and OpenMP results are
// bitwise identical.
namespace inner {

template <typename T>
inline T gelu_val(T x) {
    const double xd = static_cast<double>(x);
    return static_cast<T>(0.5 * xd * (1.0 + std::erf(xd * 0.7071067811865475)));
}

template <typename T>
inline T gelu_grad(T x) {
    const double xd = static_cast<double>(x);
    const double cdf = 0.5 * (1.0 + std::erf(xd * 0.7071067811865475));
    const double pdf = 0.3989422804014327 * std::exp(-0.5 * xd * xd);
    return static_cast<T>(cdf + xd * pdf);
}

template <typename T>
inline void linear_pixel(const T* xr, const T* w, const T* b, T* yr, int cin, int cout) {
    for (int co = 0; co < cout; ++co) yr[co] = b ? b[co] : T(0);
    for (int ci = 0; ci < cin; ++ci) {
        const T xv = xr[ci];
        const T* wr = w + static_cast<int64_t>(ci) * cout;
        for (int co = 0; co < cout; ++co) yr[co] += xv * wr[co];
    }
}

template <typename T>
inline void linear_pixel_bwd_input(const T* dyr, const T* w, T* dxr, int cin, int cout) {
    for (int ci = 0; ci < cin; ++ci) {
        const T* wr = w + static_cast<int64_t>(ci) * cout;
        T acc = 0;
        for (int co = 0; co < cout; ++co) acc += dyr[co] * wr[co];
        dxr[ci] += acc;
    }
}

template <typename T>
inline void conv3_pixel(const T* x, const T* w, const T* b, T* yr, int i, int j, int h, int wd,
                        int cin, int cout, int64_t plane) {
    for (int co = 0; co < cout; ++co) yr[co] = b ? b[co] : T(0);
    for (int ky = 0; ky < 3; ++ky) {
        const int ii = i + ky - 1;
        if (ii < 0 || ii >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
            const int jj = j + kx - 1;
            if (jj < 0 || jj >= wd) continue;
            const T* xr = x + plane + (static_cast<int64_t>(ii) * wd + jj) * cin;
            const T* wk = w + (static_cast<int64_t>(ky) * 3 + kx) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
                const T xv = xr[ci];
                const T* wr = wk + static_cast<int64_t>(ci) * cout;
                for (int co = 0; co < cout; ++co) yr[co] += xv * wr[co];
            }
        }
    }
}

template <typename T>
inline void conv3_pixel_bwd_input(const T* dy, const T* w, T* dxr, int i, int j, int h, int wd,
                                  int cin, int cout, int64_t plane) {
    for (int ky = 0; ky < 3; ++ky) {
        const int oi = i - (ky - 1);
        if (oi < 0 || oi >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
            const int oj = j - (kx - 1);
            if (oj < 0 || oj >= wd) continue;
            const T* dyr = dy + plane + (static_cast<int64_t>(oi) * wd + oj) * cout;
            const T* wk = w + (static_cast<int64_t>(ky) * 3 + kx) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
                const T* wr = wk + static_cast<int64_t>(ci) * cout;
                T acc = 0;
                for (int co = 0; co < cout; ++co) acc += dyr[co] * wr[co];
                dxr[ci] += acc;
            }
        }
    }
}

// corner-aligned sample position; src <= in-1 by construction
inline void sample_pos(int oi, int in_dim, int out_dim, int& lo, int& hi, double& frac) {
    if (out_dim > 1 && in_dim > 1) {
        const double src = static_cast<double>(oi) * (in_dim - 1) / (out_dim - 1);
        lo = static_cast<int>(src);
        if (lo > in_dim - 2) lo = in_dim - 2;
        frac = src - lo;
        hi = lo + 1;
    } else {
        lo = hi = 0;
        frac = 0.0;
    }
}

template <typename T>
inline void attn_group_fwd(const T* q, const T* k, const T* v, T* out, T* probs, int g, int h,
                           int tq, int tk, int heads, int hd) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const int dm = heads * hd;
    const int64_t qbase = static_cast<int64_t>(g) * tq * dm + h * hd;
    const int64_t kbase = static_cast<int64_t>(g) * tk * dm + h * hd;
    T* prow = probs + ((static_cast<int64_t>(g) * heads + h) * tq) * tk;
    for (int i = 0; i < tq; ++i) {
        const T* qi = q + qbase + static_cast<int64_t>(i) * dm;
        T* pr = prow + static_cast<int64_t>(i) * tk;
        T mx = 0;
        for (int j = 0; j < tk; ++j) {
            const T* kj = k + kbase + static_cast<int64_t>(j) * dm;
            T s = 0;
            for (int d = 0; d < hd; ++d) s += qi[d] * kj[d];
            s = static_cast<T>(s * scale);
            pr[j] = s;
            if (j == 0 || s > mx) mx = s;
        }
        T denom = 0;
        for (int j = 0; j < tk; ++j) {
            pr[j] = static_cast<T>(std::exp(static_cast<double>(pr[j] - mx)));
            denom += pr[j];
        }
        const T inv = T(1) / denom;
        for (int j = 0; j < tk; ++j) pr[j] *= inv;
        T* oi2 = out + qbase + static_cast<int64_t>(i) * dm;
        for (int d = 0; d < hd; ++d) oi2[d] = 0;
        for (int j = 0; j < tk; ++j) {
            const T* vj = v + kbase + static_cast<int64_t>(j) * dm;
            const T p = pr[j];
            for (int d = 0; d < hd; ++d) oi2[d] += p * vj[d];
        }
    }
}

template <typename T>
inline void attn_group_bwd(const T* q, const T* k, const T* v, const T* probs, const T* dout,
                           T* dq, T* dk, T* dv, T* dsrow, int g, int h, int tq, int tk, int heads,
                           int hd) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const int dm = heads * hd;
    const int64_t qbase = static_cast<int64_t>(g) * tq * dm + h * hd;
    const int64_t kbase = static_cast<int64_t>(g) * tk * dm + h * hd;
    const T* prow = probs + ((static_cast<int64_t>(g) * heads + h) * tq) * tk;
    for (int i = 0; i < tq; ++i) {
        const T* pr = prow + static_cast<int64_t>(i) * tk;
        const T* doi = dout + qbase + static_cast<int64_t>(i) * dm;
        // dv += p^T dout ; dp = dout v^T
        T dpdot = 0;
        for (int j = 0; j < tk; ++j) {
            const T* vj = v + kbase + static_cast<int64_t>(j) * dm;
            T* dvj = dv + kbase + static_cast<int64_t>(j) * dm;
            T dp = 0;
            for (int d = 0; d < hd; ++d) {
                dvj[d] += pr[j] * doi[d];
                dp += doi[d] * vj[d];
            }
            dsrow[j] = dp;
            dpdot += dp * pr[j];
        }
        // softmax backward, then chain into q and k
        const T* qi = q + qbase + static_cast<int64_t>(i) * dm;
        T* dqi = dq + qbase + static_cast<int64_t>(i) * dm;
        for (int j = 0; j < tk; ++j) {
            const T ds = static_cast<T>(pr[j] * (dsrow[j] - dpdot) * scale);
            const T* kj = k + kbase + static_cast<int64_t>(j) * dm;
            T* dkj = dk + kbase + static_cast<int64_t>(j) * dm;
            for (int d = 0; d < hd; ++d) {
                dqi[d] += ds * kj[d];
                dkj[d] += ds * qi[d];
            }
        }
    }
}

}  // namespace inner

// ---------------------------------------------------------------------------
// serial reference implementations
// ---------------------------------------------------------------------------
namespace serial_impl {

template <typename T>
void add(const T* a, const T* b, T* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void scale(const T* x, T s, T* out, int64_t n) {
    for (int64_t i = 0; i < n; ++i) out[i] = x[i] * s;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void gelu_fwd(const T* x, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = inner::gelu_val(x[i]);
}

template <typename T>
void gelu_bwd(const T* x, const T* dy, T* dx, int64_t n) {
    for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * inner::gelu_grad(x[i]);
}

template <typename T>
void tanh_fwd(const T* x, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

template <typename T>
void tanh_bwd(const T* x, const T* dy, T* dx, int64_t n) {
    for (int64_t i = 0; i < n; ++i) {
        const T t = std::tanh(x[i]);
        dx[i] += dy[i] * (T(1) - t * t);
    }
}

template <typename T>
void linear_fwd(const T* x, const T* w, const T* b, T* y, int64_t p, int cin, int cout) {
    for (int64_t i = 0; i < p; ++i)
        inner::linear_pixel(x + i * cin, w, b, y + i * cout, cin, cout);
}

template <typename T>
void linear_bwd_input(const T* dy, const T* w, T* dx, int64_t p, int cin, int cout) {
    for (int64_t i = 0; i < p; ++i)
        inner::linear_pixel_bwd_input(dy + i * cout, w, dx + i * cin, cin, cout);
}

template <typename T>
void linear_bwd_params(const T* x, const T* dy, T* dw, T* db, int64_t p, int cin, int cout) {
    if (db)
        for (int64_t i = 0; i < p; ++i)
            for (int co = 0; co < cout; ++co) db[co] += dy[i * cout + co];
    for (int ci = 0; ci < cin; ++ci) {
        T* dwr = dw + static_cast<int64_t>(ci) * cout;
        for (int64_t i = 0; i < p; ++i) {
            const T xv = x[i * cin + ci];
            const T* dyr = dy + i * cout;
            for (int co = 0; co < cout; ++co) dwr[co] += xv * dyr[co];
        }
    }
}

template <typename T>
void conv3x3_fwd(const T* x, const T* w, const T* b, T* y, int a, int h, int wd, int cin,
                 int cout) {
    const int64_t px = static_cast<int64_t>(h) * wd;
    for (int64_t t = 0; t < a * px; ++t) {
        const int ag = static_cast<int>(t / px);
        const int i = static_cast<int>((t % px) / wd);
        const int j = static_cast<int>(t % wd);
        inner::conv3_pixel(x, w, b, y + t * cout, i, j, h, wd, cin, cout, ag * px * cin);
    }
}

template <typename T>
void conv3x3_bwd_input(const T* dy, const T* w, T* dx, int a, int h, int wd, int cin, int cout) {
    const int64_t px = static_cast<int64_t>(h) * wd;
    for (int64_t t = 0; t < a * px; ++t) {
        const int ag = static_cast<int>(t / px);
        const int i = static_cast<int>((t % px) / wd);
        const int j = static_cast<int>(t % wd);
        inner::conv3_pixel_bwd_input(dy, w, dx + t * cin, i, j, h, wd, cin, cout, ag * px * cout);
    }
}

template <typename T>
void conv3x3_bwd_params(const T* x, const T* dy, T* dw, T* db, int a, int h, int wd, int cin,
                        int cout) {
    const int64_t px = static_cast<int64_t>(h) * wd;
    if (db)
        for (int64_t t = 0; t < a * px; ++t)
            for (int co = 0; co < cout; ++co) db[co] += dy[t * cout + co];
    for (int kk = 0; kk < 9 * cin; ++kk) {
        const int ky = kk / (3 * cin);
        const int kx = (kk / cin) % 3;
        const int ci = kk % cin;
        T* dwr = dw + static_cast<int64_t>(kk) * cout;
        for (int ag = 0; ag < a; ++ag) {
            for (int i = 0; i < h; ++i) {
                const int ii = i + ky - 1;
                if (ii < 0 || ii >= h) continue;
                for (int j = 0; j < wd; ++j) {
                    const int jj = j + kx - 1;
                    if (jj < 0 || jj >= wd) continue;
                    const T xv = x[(ag * px + static_cast<int64_t>(ii) * wd + jj) * cin + ci];
                    const T* dyr = dy + (ag * px + static_cast<int64_t>(i) * wd + j) * cout;
                    for (int co = 0; co < cout; ++co) dwr[co] += xv * dyr[co];
                }
            }
        }
    }
}

template <typename T>
void bilinear_fwd(const T* x, T* y, int a, int hi, int wi, int ho, int wo, int c) {
    const int64_t opx = static_cast<int64_t>(ho) * wo;
    for (int64_t t = 0; t < a * opx; ++t) {
        const int ag = static_cast<int>(t / opx);
        const int oi = static_cast<int>((t % opx) / wo);
        const int oj = static_cast<int>(t % wo);
        int i0, i1, j0, j1;
        double fi, fj;
        inner::sample_pos(oi, hi, ho, i0, i1, fi);
        inner::sample_pos(oj, wi, wo, j0, j1, fj);
        const T w00 = static_cast<T>((1 - fi) * (1 - fj));
        const T w01 = static_cast<T>((1 - fi) * fj);
        const T w10 = static_cast<T>(fi * (1 - fj));
        const T w11 = static_cast<T>(fi * fj);
        const int64_t base = static_cast<int64_t>(ag) * hi * wi * c;
        const T* p00 = x + base + (static_cast<int64_t>(i0) * wi + j0) * c;
        const T* p01 = x + base + (static_cast<int64_t>(i0) * wi + j1) * c;
        const T* p10 = x + base + (static_cast<int64_t>(i1) * wi + j0) * c;
        const T* p11 = x + base + (static_cast<int64_t>(i1) * wi + j1) * c;
        T* yr = y + t * c;
        for (int ch = 0; ch < c; ++ch)
            yr[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
    }
}

template <typename T>
void bilinear_agent_bwd(const T* dy, T* dx, int ag, int hi, int wi, int ho, int wo, int c) {
    const int64_t opx = static_cast<int64_t>(ho) * wo;
    const int64_t ibase = static_cast<int64_t>(ag) * hi * wi * c;
    const int64_t obase = static_cast<int64_t>(ag) * opx * c;
    for (int oi = 0; oi < ho; ++oi) {
        for (int oj = 0; oj < wo; ++oj) {
            int i0, i1, j0, j1;
            double fi, fj;
            inner::sample_pos(oi, hi, ho, i0, i1, fi);
            inner::sample_pos(oj, wi, wo, j0, j1, fj);
            const T w00 = static_cast<T>((1 - fi) * (1 - fj));
            const T w01 = static_cast<T>((1 - fi) * fj);
            const T w10 = static_cast<T>(fi * (1 - fj));
            const T w11 = static_cast<T>(fi * fj);
            const T* dyr = dy + obase + (static_cast<int64_t>(oi) * wo + oj) * c;
            T* p00 = dx + ibase + (static_cast<int64_t>(i0) * wi + j0) * c;
            T* p01 = dx + ibase + (static_cast<int64_t>(i0) * wi + j1) * c;
            T* p10 = dx + ibase + (static_cast<int64_t>(i1) * wi + j0) * c;
            T* p11 = dx + ibase + (static_cast<int64_t>(i1) * wi + j1) * c;
            for (int ch = 0; ch < c; ++ch) {
                p00[ch] += w00 * dyr[ch];
                p01[ch] += w01 * dyr[ch];
                p10[ch] += w10 * dyr[ch];
                p11[ch] += w11 * dyr[ch];
            }
        }
    }
}

template <typename T>
void bilinear_bwd(const T* dy, T* dx, int a, int hi, int wi, int ho, int wo, int c) {
    for (int ag = 0; ag < a; ++ag) bilinear_agent_bwd(dy, dx, ag, hi, wi, ho, wo, c);
}

template <typename T>
void layernorm_fwd(const T* x, const T* gamma, const T* beta, T* y, T* mean, T* rstd, int64_t p,
                   int c, T eps) {
    for (int64_t i = 0; i < p; ++i) {
        const T* xr = x + i * c;
        T mu = 0;
        for (int ch = 0; ch < c; ++ch) mu += xr[ch];
        mu /= static_cast<T>(c);
        T var = 0;
        for (int ch = 0; ch < c; ++ch) {
            const T d = xr[ch] - mu;
            var += d * d;
        }
        var /= static_cast<T>(c);
        const T rs = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var + eps)));
        mean[i] = mu;
        rstd[i] = rs;
        T* yr = y + i * c;
        for (int ch = 0; ch < c; ++ch) yr[ch] = gamma[ch] * ((xr[ch] - mu) * rs) + beta[ch];
    }
}

template <typename T>
void layernorm_bwd_input(const T* x, const T* gamma, const T* mean, const T* rstd, const T* dy,
                         T* dx, int64_t p, int c) {
    for (int64_t i = 0; i < p; ++i) {
        const T* xr = x + i * c;
        const T* dyr = dy + i * c;
        T* dxr = dx + i * c;
        const T mu = mean[i], rs = rstd[i];
        T s1 = 0, s2 = 0;
        for (int ch = 0; ch < c; ++ch) {
            const T xh = (xr[ch] - mu) * rs;
            const T dxh = dyr[ch] * gamma[ch];
            s1 += dxh;
            s2 += dxh * xh;
        }
        s1 /= static_cast<T>(c);
        s2 /= static_cast<T>(c);
        for (int ch = 0; ch < c; ++ch) {
            const T xh = (xr[ch] - mu) * rs;
            const T dxh = dyr[ch] * gamma[ch];
            dxr[ch] += (dxh - s1 - xh * s2) * rs;
        }
    }
}

template <typename T>
void layernorm_bwd_params(const T* x, const T* mean, const T* rstd, const T* dy, T* dgamma,
                          T* dbeta, int64_t p, int c) {
    for (int64_t i = 0; i < p; ++i) {
        const T* xr = x + i * c;
        const T* dyr = dy + i * c;
        const T mu = mean[i], rs = rstd[i];
        for (int ch = 0; ch < c; ++ch) {
            dgamma[ch] += dyr[ch] * ((xr[ch] - mu) * rs);
            dbeta[ch] += dyr[ch];
        }
    }
}

template <typename T>
void attn_fwd(const T* q, const T* k, const T* v, T* out, T* probs, int g, int tq, int tk,
              int heads, int hd) {
    for (int64_t t = 0; t < static_cast<int64_t>(g) * heads; ++t)
        inner::attn_group_fwd(q, k, v, out, probs, static_cast<int>(t / heads),
                              static_cast<int>(t % heads), tq, tk, heads, hd);
}

template <typename T>
void attn_bwd(const T* q, const T* k, const T* v, const T* probs, const T* dout, T* dq, T* dk,
              T* dv, int g, int tq, int tk, int heads, int hd) {
    std::vector<T> ds(static_cast<size_t>(tk));
    for (int64_t t = 0; t < static_cast<int64_t>(g) * heads; ++t)
        inner::attn_group_bwd(q, k, v, probs, dout, dq, dk, dv, ds.data(),
                              static_cast<int>(t / heads), static_cast<int>(t % heads), tq, tk,
                              heads, hd);
}

template <typename T>
void gather_fwd(const T* x, const int64_t* idx, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = x[idx[i]];
}

template <typename T>
void adam_step(T* p, const T* g, T* m, T* v, int64_t n, T lr, T beta1, T beta2, T eps, T wdecay,
               int64_t t) {
    const T bc1 = static_cast<T>(1.0 - std::pow(static_cast<double>(beta1), static_cast<double>(t)));
    const T bc2 = static_cast<T>(1.0 - std::pow(static_cast<double>(beta2), static_cast<double>(t)));
    for (int64_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
        v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
        const T mh = m[i] / bc1;
        const T vh = v[i] / bc2;
        p[i] -= lr * (mh / (static_cast<T>(std::sqrt(static_cast<double>(vh))) + eps) +
                      wdecay * p[i]);
    }
}

}  // namespace serial_impl

// ---------------------------------------------------------------------------
// OpenMP variants: same per-element routines, outer loops split over threads.
// ---------------------------------------------------------------------------
namespace omp_impl {

template <typename T>
void add(const T* a, const T* b, T* out, int64_t n) {
#pragma omp parallel for schedule(static) if (n > 4096)
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void scale(const T* x, T s, T* out, int64_t n) {
#pragma omp parallel for schedule(static) if (n > 4096)
    for (int64_t i = 0; i < n; ++i) out[i] = x[i] * s;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > 4096)
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void gelu_fwd(const T* x, T* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > 2048)
    for (int64_t i = 0; i < n; ++i) y[i] = inner::gelu_val(x[i]);
}

template <typename T>
void gelu_bwd(const T* x, const T* dy, T* dx, int64_t n) {
#pragma omp parallel for schedule(static) if (n > 2048)
    for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * inner::gelu_grad(x[i]);
}

template <typename T>
void tanh_fwd(const T* x, T* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > 2048)
    for (int64_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

template <typename T>
void tanh_bwd(const T* x, const T* dy, T* dx, int64_t n) {
#pragma omp parallel for schedule(static) if (n > 2048)
    for (int64_t i = 0; i < n; ++i) {
        const T t = std::tanh(x[i]);
        dx[i] += dy[i] * (T(1) - t * t);
    }
}

template <typename T>
void linear_fwd(const T* x, const T* w, const T* b, T* y, int64_t p, int cin, int cout) {
#pragma omp parallel for schedule(static) if (p > 64)
    for (int64_t i = 0; i < p; ++i)
        inner::linear_pixel(x + i * cin, w, b, y + i * cout, cin, cout);
}

template <typename T>
void linear_bwd_input(const T* dy, const T* w, T* dx, int64_t p, int cin, int cout) {
#pragma omp parallel for schedule(static) if (p > 64)
    for (int64_t i = 0; i < p; ++i)
        inner::linear_pixel_bwd_input(dy + i * cout, w, dx + i * cin, cin, cout);
}

template <typename T>
void linear_bwd_params(const T* x, const T* dy, T* dw, T* db, int64_t p, int cin, int cout) {
    if (db)
        for (int64_t i = 0; i < p; ++i)
            for (int co = 0; co < cout; ++co) db[co] += dy[i * cout + co];
// each thread owns a disjoint dw row
#pragma omp parallel for schedule(static) if (cin > 4)
    for (int ci = 0; ci < cin; ++ci) {
        T* dwr = dw + static_cast<int64_t>(ci) * cout;
        for (int64_t i = 0; i < p; ++i) {
            const T xv = x[i * cin + ci];
            const T* dyr = dy + i * cout;
            for (int co = 0; co < cout; ++co) dwr[co] += xv * dyr[co];
        }
    }
}

template <typename T>
void conv3x3_fwd(const T* x, const T* w, const T* b, T* y, int a, int h, int wd, int cin,
                 int cout) {
    const int64_t px = static_cast<int64_t>(h) * wd;
    const int64_t n = a * px;
#pragma omp parallel for schedule(static) if (n > 64)
    for (int64_t t = 0; t < n; ++t) {
        const int ag = static_cast<int>(t / px);
        const int i = static_cast<int>((t % px) / wd);
        const int j = static_cast<int>(t % wd);
        inner::conv3_pixel(x, w, b, y + t * cout, i, j, h, wd, cin, cout, ag * px * cin);
    }
}

template <typename T>
void conv3x3_bwd_input(const T* dy, const T* w, T* dx, int a, int h, int wd, int cin, int cout) {
    const int64_t px = static_cast<int64_t>(h) * wd;
    const int64_t n = a * px;
#pragma omp parallel for schedule(static) if (n > 64)
    for (int64_t t = 0; t < n; ++t) {
        const int ag = static_cast<int>(t / px);
        const int i = static_cast<int>((t % px) / wd);
        const int j = static_cast<int>(t % wd);
        inner::conv3_pixel_bwd_input(dy, w, dx + t * cin, i, j, h, wd, cin, cout, ag * px * cout);
    }
}

template <typename T>
void conv3x3_bwd_params(const T* x, const T* dy, T* dw, T* db, int a, int h, int wd, int cin,
                        int cout) {
    const int64_t px = static_cast<int64_t>(h) * wd;
    if (db)
        for (int64_t t = 0; t < a * px; ++t)
            for (int co = 0; co < cout; ++co) db[co] += dy[t * cout + co];
#pragma omp parallel for schedule(static) if (cin > 2)
    for (int kk = 0; kk < 9 * cin; ++kk) {
        const int ky = kk / (3 * cin);
        const int kx = (kk / cin) % 3;
        const int ci = kk % cin;
        T* dwr = dw + static_cast<int64_t>(kk) * cout;
        for (int ag = 0; ag < a; ++ag) {
            for (int i = 0; i < h; ++i) {
                const int ii = i + ky - 1;
                if (ii < 0 || ii >= h) continue;
                for (int j = 0; j < wd; ++j) {
                    const int jj = j + kx - 1;
                    if (jj < 0 || jj >= wd) continue;
                    const T xv = x[(ag * px + static_cast<int64_t>(ii) * wd + jj) * cin + ci];
                    const T* dyr = dy + (ag * px + static_cast<int64_t>(i) * wd + j) * cout;
                    for (int co = 0; co < cout; ++co) dwr[co] += xv * dyr[co];
                }
            }
        }
    }
}

template <typename T>
void bilinear_fwd(const T* x, T* y, int a, int hi, int wi, int ho, int wo, int c) {
    const int64_t opx = static_cast<int64_t>(ho) * wo;
    const int64_t n = a * opx;
#pragma omp parallel for schedule(static) if (n > 128)
    for (int64_t t = 0; t < n; ++t) {
        const int ag = static_cast<int>(t / opx);
        const int oi = static_cast<int>((t % opx) / wo);
        const int oj = static_cast<int>(t % wo);
        int i0, i1, j0, j1;
        double fi, fj;
        inner::sample_pos(oi, hi, ho, i0, i1, fi);
        inner::sample_pos(oj, wi, wo, j0, j1, fj);
        const T w00 = static_cast<T>((1 - fi) * (1 - fj));
        const T w01 = static_cast<T>((1 - fi) * fj);
        const T w10 = static_cast<T>(fi * (1 - fj));
        const T w11 = static_cast<T>(fi * fj);
        const int64_t base = static_cast<int64_t>(ag) * hi * wi * c;
        const T* p00 = x + base + (static_cast<int64_t>(i0) * wi + j0) * c;
        const T* p01 = x + base + (static_cast<int64_t>(i0) * wi + j1) * c;
        const T* p10 = x + base + (static_cast<int64_t>(i1) * wi + j0) * c;
        const T* p11 = x + base + (static_cast<int64_t>(i1) * wi + j1) * c;
        T* yr = y + t * c;
        for (int ch = 0; ch < c; ++ch)
            yr[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
    }
}

template <typename T>
void bilinear_bwd(const T* dy, T* dx, int a, int hi, int wi, int ho, int wo, int c) {
// backward scatters into the input plane; agents are disjoint
#pragma omp parallel for schedule(static) if (a > 1)
    for (int ag = 0; ag < a; ++ag) serial_impl::bilinear_agent_bwd(dy, dx, ag, hi, wi, ho, wo, c);
}

template <typename T>
void layernorm_fwd(const T* x, const T* gamma, const T* beta, T* y, T* mean, T* rstd, int64_t p,
                   int c, T eps) {
#pragma omp parallel for schedule(static) if (p > 128)
    for (int64_t i = 0; i < p; ++i)
        serial_impl::layernorm_fwd(x + i * c, gamma, beta, y + i * c, mean + i, rstd + i, 1, c,
                                   eps);
}

template <typename T>
void layernorm_bwd_input(const T* x, const T* gamma, const T* mean, const T* rstd, const T* dy,
                         T* dx, int64_t p, int c) {
#pragma omp parallel for schedule(static) if (p > 128)
    for (int64_t i = 0; i < p; ++i)
        serial_impl::layernorm_bwd_input(x + i * c, gamma, mean + i, rstd + i, dy + i * c,
                                         dx + i * c, 1, c);
}

template <typename T>
void attn_fwd(const T* q, const T* k, const T* v, T* out, T* probs, int g, int tq, int tk,
              int heads, int hd) {
    const int64_t n = static_cast<int64_t>(g) * heads;
#pragma omp parallel for schedule(static) if (n > 8)
    for (int64_t t = 0; t < n; ++t)
        inner::attn_group_fwd(q, k, v, out, probs, static_cast<int>(t / heads),
                              static_cast<int>(t % heads), tq, tk, heads, hd);
}

template <typename T>
void attn_bwd(const T* q, const T* k, const T* v, const T* probs, const T* dout, T* dq, T* dk,
              T* dv, int g, int tq, int tk, int heads, int hd) {
    const int64_t n = static_cast<int64_t>(g) * heads;
#pragma omp parallel if (n > 8)
    {
        std::vector<T> ds(static_cast<size_t>(tk));
#pragma omp for schedule(static)
        for (int64_t t = 0; t < n; ++t)
            inner::attn_group_bwd(q, k, v, probs, dout, dq, dk, dv, ds.data(),
                                  static_cast<int>(t / heads), static_cast<int>(t % heads), tq,
                                  tk, heads, hd);
    }
}

template <typename T>
void gather_fwd(const T* x, const int64_t* idx, T* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > 4096)
    for (int64_t i = 0; i < n; ++i) y[i] = x[idx[i]];
}

template <typename T>
void adam_step(T* p, const T* g, T* m, T* v, int64_t n, T lr, T beta1, T beta2, T eps, T wdecay,
               int64_t t) {
    const T bc1 = static_cast<T>(1.0 - std::pow(static_cast<double>(beta1), static_cast<double>(t)));
    const T bc2 = static_cast<T>(1.0 - std::pow(static_cast<double>(beta2), static_cast<double>(t)));
#pragma omp parallel for schedule(static) if (n > 4096)
    for (int64_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
        v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
        const T mh = m[i] / bc1;
        const T vh = v[i] / bc2;
        p[i] -= lr * (mh / (static_cast<T>(std::sqrt(static_cast<double>(vh))) + eps) +
                      wdecay * p[i]);
    }
}

}  // namespace omp_impl

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------
#define MPDA_DISPATCH(fn, ...)                    \
    do {                                          \
        if (g_backend == Backend::openmp)         \
            omp_impl::fn(__VA_ARGS__);            \
        else                                      \
            serial_impl::fn(__VA_ARGS__);         \
    } while (0)

template <typename T>
void add(const T* a, const T* b, T* out, int64_t n) { MPDA_DISPATCH(add, a, b, out, n); }
template <typename T>
void scale(const T* x, T s, T* out, int64_t n) { MPDA_DISPATCH(scale, x, s, out, n); }
template <typename T>
void axpy(T alpha, const T* x, T* y, int64_t n) { MPDA_DISPATCH(axpy, alpha, x, y, n); }
template <typename T>
void gelu_fwd(const T* x, T* y, int64_t n) { MPDA_DISPATCH(gelu_fwd, x, y, n); }
template <typename T>
void gelu_bwd(const T* x, const T* dy, T* dx, int64_t n) { MPDA_DISPATCH(gelu_bwd, x, dy, dx, n); }
template <typename T>
void tanh_fwd(const T* x, T* y, int64_t n) { MPDA_DISPATCH(tanh_fwd, x, y, n); }
template <typename T>
void tanh_bwd(const T* x, const T* dy, T* dx, int64_t n) { MPDA_DISPATCH(tanh_bwd, x, dy, dx, n); }
template <typename T>
void linear_fwd(const T* x, const T* w, const T* b, T* y, int64_t p, int cin, int cout) {
    MPDA_DISPATCH(linear_fwd, x, w, b, y, p, cin, cout);
}
template <typename T>
void linear_bwd_input(const T* dy, const T* w, T* dx, int64_t p, int cin, int cout) {
    MPDA_DISPATCH(linear_bwd_input, dy, w, dx, p, cin, cout);
}
template <typename T>
void linear_bwd_params(const T* x, const T* dy, T* dw, T* db, int64_t p, int cin, int cout) {
    MPDA_DISPATCH(linear_bwd_params, x, dy, dw, db, p, cin, cout);
}
template <typename T>
void conv3x3_fwd(const T* x, const T* w, const T* b, T* y, int a, int h, int wd, int cin,
                 int cout) {
    MPDA_DISPATCH(conv3x3_fwd, x, w, b, y, a, h, wd, cin, cout);
}
template <typename T>
void conv3x3_bwd_input(const T* dy, const T* w, T* dx, int a, int h, int wd, int cin, int cout) {
    MPDA_DISPATCH(conv3x3_bwd_input, dy, w, dx, a, h, wd, cin, cout);
}
template <typename T>
void conv3x3_bwd_params(const T* x, const T* dy, T* dw, T* db, int a, int h, int wd, int cin,
                        int cout) {
    MPDA_DISPATCH(conv3x3_bwd_params, x, dy, dw, db, a, h, wd, cin, cout);
}
template <typename T>
void bilinear_fwd(const T* x, T* y, int a, int hi, int wi, int ho, int wo, int c) {
    MPDA_DISPATCH(bilinear_fwd, x, y, a, hi, wi, ho, wo, c);
}
template <typename T>
void bilinear_bwd(const T* dy, T* dx, int a, int hi, int wi, int ho, int wo, int c) {
    MPDA_DISPATCH(bilinear_bwd, dy, dx, a, hi, wi, ho, wo, c);
}
template <typename T>
void layernorm_fwd(const T* x, const T* gamma, const T* beta, T* y, T* mean, T* rstd, int64_t p,
                   int c, T eps) {
    MPDA_DISPATCH(layernorm_fwd, x, gamma, beta, y, mean, rstd, p, c, eps);
}
template <typename T>
void layernorm_bwd(const T* x, const T* gamma, const T* mean, const T* rstd, const T* dy, T* dx,
                   T* dgamma, T* dbeta, int64_t p, int c) {
    if (g_backend == Backend::openmp)
        omp_impl::layernorm_bwd_input(x, gamma, mean, rstd, dy, dx, p, c);
    else
        serial_impl::layernorm_bwd_input(x, gamma, mean, rstd, dy, dx, p, c);
    // parameter reduction stays serial so accumulation order is fixed
    serial_impl::layernorm_bwd_params(x, mean, rstd, dy, dgamma, dbeta, p, c);
}
template <typename T>
void attn_fwd(const T* q, const T* k, const T* v, T* out, T* probs, int g, int tq, int tk,
              int heads, int hd) {
    MPDA_DISPATCH(attn_fwd, q, k, v, out, probs, g, tq, tk, heads, hd);
}
template <typename T>
void attn_bwd(const T* q, const T* k, const T* v, const T* probs, const T* dout, T* dq, T* dk,
              T* dv, int g, int tq, int tk, int heads, int hd) {
    MPDA_DISPATCH(attn_bwd, q, k, v, probs, dout, dq, dk, dv, g, tq, tk, heads, hd);
}
template <typename T>
void gather_fwd(const T* x, const int64_t* idx, T* y, int64_t n) {
    MPDA_DISPATCH(gather_fwd, x, idx, y, n);
}
template <typename T>
void gather_bwd(const T* dy, const int64_t* idx, T* dx, int64_t n) {
    // scatter with possibly repeated indices; serial in both backends
    for (int64_t i = 0; i < n; ++i) dx[idx[i]] += dy[i];
}
template <typename T>
void adam_step(T* p, const T* g, T* m, T* v, int64_t n, T lr, T beta1, T beta2, T eps, T wdecay,
               int64_t t) {
    MPDA_DISPATCH(adam_step, p, g, m, v, n, lr, beta1, beta2, eps, wdecay, t);
}

#undef MPDA_DISPATCH

#define MPDA_INSTANTIATE(T)                                                                       \
    template void add<T>(const T*, const T*, T*, int64_t);                                        \
    template void scale<T>(const T*, T, T*, int64_t);                                             \
    template void axpy<T>(T, const T*, T*, int64_t);                                              \
    template void gelu_fwd<T>(const T*, T*, int64_t);                                             \
    template void gelu_bwd<T>(const T*, const T*, T*, int64_t);                                   \
    template void tanh_fwd<T>(const T*, T*, int64_t);                                             \
    template void tanh_bwd<T>(const T*, const T*, T*, int64_t);                                   \
    template void linear_fwd<T>(const T*, const T*, const T*, T*, int64_t, int, int);             \
    template void linear_bwd_input<T>(const T*, const T*, T*, int64_t, int, int);                 \
    template void linear_bwd_params<T>(const T*, const T*, T*, T*, int64_t, int, int);            \
    template void conv3x3_fwd<T>(const T*, const T*, const T*, T*, int, int, int, int, int);      \
    template void conv3x3_bwd_input<T>(const T*, const T*, T*, int, int, int, int, int);          \
    template void conv3x3_bwd_params<T>(const T*, const T*, T*, T*, int, int, int, int, int);     \
    template void bilinear_fwd<T>(const T*, T*, int, int, int, int, int, int);                    \
    template void bilinear_bwd<T>(const T*, T*, int, int, int, int, int, int);                    \
    template void layernorm_fwd<T>(const T*, const T*, const T*, T*, T*, T*, int64_t, int, T);    \
    template void layernorm_bwd<T>(const T*, const T*, const T*, const T*, const T*, T*, T*, T*,  \
                                   int64_t, int);                                                 \
    template void attn_fwd<T>(const T*, const T*, const T*, T*, T*, int, int, int, int, int);     \
    template void attn_bwd<T>(const T*, const T*, const T*, const T*, const T*, T*, T*, T*, int,  \
                              int, int, int, int);                                                \
    template void gather_fwd<T>(const T*, const int64_t*, T*, int64_t);                           \
    template void gather_bwd<T>(const T*, const int64_t*, T*, int64_t);                           \
    template void adam_step<T>(T*, const T*, T*, T*, int64_t, T, T, T, T, T, int64_t);

MPDA_INSTANTIATE(float)
MPDA_INSTANTIATE(double)

#undef MPDA_INSTANTIATE

}  // namespace mpda::kernels
