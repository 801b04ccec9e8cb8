#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "mpda/kernels.hpp"
#include "mpda/rng.hpp"
#include "mpda/tensor.hpp"

using namespace mpda;
namespace kn = mpda::kernels;

namespace {

double time_ms(const std::function<void()>& fn, int iters) {
    fn();  // warm
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < iters; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;
}

void row(const std::string& name, const std::function<void()>& fn, int iters) {
    kn::set_backend(kn::Backend::serial);
    const double serial = time_ms(fn, iters);
    kn::set_backend(kn::Backend::openmp);
    const double omp = time_ms(fn, iters);
    std::printf("%-18s %10.3f %10.3f %8.2fx\n", name.c_str(), serial, omp, serial / omp);
}

}  // namespace

int main() {
    std::printf("threads %d (openmp %s)\n", kn::max_threads(),
                kn::openmp_compiled() ? "on" : "off");
    std::printf("%-18s %10s %10s %9s\n", "kernel", "serial ms", "omp ms", "speedup");

    const int a = 4, h = 32, w = 88, c = 64;
    Tensor<float> x({a, h, w, c}), y({a, h, w, c});
    fill_normal(x, 1, 1.0);

    Tensor<float> cw({3, 3, c, c}), cb({c});
    fill_normal(cw, 2, 0.05);
    row("conv3x3_fwd", [&] { kn::conv3x3_fwd(x.ptr(), cw.ptr(), cb.ptr(), y.ptr(), a, h, w, c, c); },
        10);

    Tensor<float> lw({c, c}), lb({c});
    fill_normal(lw, 3, 0.1);
    row("linear_fwd",
        [&] { kn::linear_fwd(x.ptr(), lw.ptr(), lb.ptr(), y.ptr(), x.size() / c, c, c); }, 50);

    Tensor<float> small({a, h, w, c});
    row("bilinear_fwd",
        [&] { kn::bilinear_fwd(x.ptr(), small.ptr(), a, h, w, h, w, c); }, 50);

    row("gelu_fwd", [&] { kn::gelu_fwd(x.ptr(), y.ptr(), x.size()); }, 50);

    Tensor<float> gamma({c}, 1.0f), beta({c});
    const int px = static_cast<int>(x.size() / c);
    Tensor<float> mean({px}), rstd({px});
    row("layernorm_fwd",
        [&] {
            kn::layernorm_fwd(x.ptr(), gamma.ptr(), beta.ptr(), y.ptr(), mean.ptr(), rstd.ptr(),
                              x.size() / c, c, 1e-5f);
        },
        50);

    const int g = a * (h / 4) * (w / 4), tq = 16, heads = 4, hd = 16;
    Tensor<float> q({g, tq, heads * hd}), k({g, tq, heads * hd}), v({g, tq, heads * hd});
    Tensor<float> probs({g, heads, tq, tq}), out({g, tq, heads * hd});
    fill_normal(q, 4, 0.5);
    fill_normal(k, 5, 0.5);
    fill_normal(v, 6, 0.5);
    row("attn_fwd",
        [&] {
            kn::attn_fwd(q.ptr(), k.ptr(), v.ptr(), out.ptr(), probs.ptr(), g, tq, tq, heads, hd);
        },
        20);

    return 0;
}
