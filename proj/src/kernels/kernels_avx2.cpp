#include "greentwin/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

#define GT_AVX2 __attribute__((target("avx2")))

namespace greentwin::kernels {
namespace {

GT_AVX2 inline double hsum(__m256d v) {
    alignas(32) double lane[4];
    _mm256_store_pd(lane, v);
    return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

// One 4-lane accumulator: lane k sums the elements i with i % 4 == k.
GT_AVX2 double sum_avx2(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

GT_AVX2 double dot_avx2(const double* x, const double* y, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

GT_AVX2 std::size_t predict_avx2(const double* cpu, const double* gpu, const double* nj,
                                 const double* ngj, const double* rt, const double* c, double* out,
                                 std::size_t n) {
    const __m256d c0 = _mm256_set1_pd(c[0]);
    const __m256d c1 = _mm256_set1_pd(c[1]);
    const __m256d c2 = _mm256_set1_pd(c[2]);
    const __m256d c3 = _mm256_set1_pd(c[3]);
    const __m256d c4 = _mm256_set1_pd(c[4]);
    const __m256d c5 = _mm256_set1_pd(c[5]);
    const __m256d c6 = _mm256_set1_pd(c[6]);
    const __m256d zero = _mm256_setzero_pd();
    std::size_t clamped = 0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d u = _mm256_loadu_pd(cpu + i);
        const __m256d g = _mm256_loadu_pd(gpu + i);
        __m256d p = _mm256_add_pd(c0, _mm256_mul_pd(c1, u));
        p = _mm256_add_pd(p, _mm256_mul_pd(c2, g));
        p = _mm256_add_pd(p, _mm256_mul_pd(c3, _mm256_loadu_pd(nj + i)));
        p = _mm256_add_pd(p, _mm256_mul_pd(c4, _mm256_loadu_pd(ngj + i)));
        p = _mm256_add_pd(p, _mm256_mul_pd(c5, _mm256_loadu_pd(rt + i)));
        p = _mm256_add_pd(p, _mm256_mul_pd(c6, _mm256_mul_pd(u, g)));
        const __m256d neg = _mm256_cmp_pd(p, zero, _CMP_LT_OQ);
        clamped += static_cast<std::size_t>(__builtin_popcount(_mm256_movemask_pd(neg)));
        _mm256_storeu_pd(out + i, _mm256_blendv_pd(p, zero, neg));
    }
    for (; i < n; ++i) {
        double p = c[0] + c[1] * cpu[i];
        p = p + c[2] * gpu[i];
        p = p + c[3] * nj[i];
        p = p + c[4] * ngj[i];
        p = p + c[5] * rt[i];
        p = p + c[6] * (cpu[i] * gpu[i]);
        if (p < 0.0) {
            p = 0.0;
            ++clamped;
        }
        out[i] = p;
    }
    return clamped;
}

GT_AVX2 CenteredMoments moments_avx2(const double* x, const double* y, std::size_t n, double mx,
                                     double my) {
    const __m256d vmx = _mm256_set1_pd(mx);
    const __m256d vmy = _mm256_set1_pd(my);
    __m256d axx = _mm256_setzero_pd();
    __m256d ayy = _mm256_setzero_pd();
    __m256d axy = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d dx = _mm256_sub_pd(_mm256_loadu_pd(x + i), vmx);
        const __m256d dy = _mm256_sub_pd(_mm256_loadu_pd(y + i), vmy);
        axx = _mm256_add_pd(axx, _mm256_mul_pd(dx, dx));
        ayy = _mm256_add_pd(ayy, _mm256_mul_pd(dy, dy));
        axy = _mm256_add_pd(axy, _mm256_mul_pd(dx, dy));
    }
    CenteredMoments m{hsum(axx), hsum(ayy), hsum(axy)};
    for (; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        m.sxx += dx * dx;
        m.syy += dy * dy;
        m.sxy += dx * dy;
    }
    return m;
}

constexpr KernelTable kAvx2{Isa::avx2, sum_avx2, dot_avx2, predict_avx2, moments_avx2};

}  // namespace

namespace detail {
const KernelTable* avx2_table() {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") ? &kAvx2 : nullptr;
}
}  // namespace detail

}  // namespace greentwin::kernels

#else

namespace greentwin::kernels::detail {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace greentwin::kernels::detail

#endif
