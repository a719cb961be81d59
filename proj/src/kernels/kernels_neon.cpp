#include "greentwin/kernels.hpp"

#if defined(__aarch64__)
#include <arm_neon.h>

namespace greentwin::kernels {
namespace {

// Two 2-lane accumulators, so lane k of the pair sums i % 4 == k like the
// AVX2 variant.
inline double hsum(float64x2_t lo, float64x2_t hi) {
    return (vgetq_lane_f64(lo, 0) + vgetq_lane_f64(lo, 1)) +
           (vgetq_lane_f64(hi, 0) + vgetq_lane_f64(hi, 1));
}

double sum_neon(const double* x, std::size_t n) {
    float64x2_t lo = vdupq_n_f64(0.0);
    float64x2_t hi = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        lo = vaddq_f64(lo, vld1q_f64(x + i));
        hi = vaddq_f64(hi, vld1q_f64(x + i + 2));
    }
    double s = hsum(lo, hi);
    for (; i < n; ++i) s += x[i];
    return s;
}

double dot_neon(const double* x, const double* y, std::size_t n) {
    float64x2_t lo = vdupq_n_f64(0.0);
    float64x2_t hi = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        lo = vaddq_f64(lo, vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
        hi = vaddq_f64(hi, vmulq_f64(vld1q_f64(x + i + 2), vld1q_f64(y + i + 2)));
    }
    double s = hsum(lo, hi);
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

std::size_t predict_neon(const double* cpu, const double* gpu, const double* nj,
                         const double* ngj, const double* rt, const double* c, double* out,
                         std::size_t n) {
    const float64x2_t zero = vdupq_n_f64(0.0);
    std::size_t clamped = 0;
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t u = vld1q_f64(cpu + i);
        const float64x2_t g = vld1q_f64(gpu + i);
        float64x2_t p = vaddq_f64(vdupq_n_f64(c[0]), vmulq_f64(vdupq_n_f64(c[1]), u));
        p = vaddq_f64(p, vmulq_f64(vdupq_n_f64(c[2]), g));
        p = vaddq_f64(p, vmulq_f64(vdupq_n_f64(c[3]), vld1q_f64(nj + i)));
        p = vaddq_f64(p, vmulq_f64(vdupq_n_f64(c[4]), vld1q_f64(ngj + i)));
        p = vaddq_f64(p, vmulq_f64(vdupq_n_f64(c[5]), vld1q_f64(rt + i)));
        p = vaddq_f64(p, vmulq_f64(vdupq_n_f64(c[6]), vmulq_f64(u, g)));
        const uint64x2_t neg = vcltq_f64(p, zero);
        clamped += (vgetq_lane_u64(neg, 0) ? 1u : 0u) + (vgetq_lane_u64(neg, 1) ? 1u : 0u);
        vst1q_f64(out + i, vbslq_f64(neg, zero, p));
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

CenteredMoments moments_neon(const double* x, const double* y, std::size_t n, double mx,
                             double my) {
    const float64x2_t vmx = vdupq_n_f64(mx);
    const float64x2_t vmy = vdupq_n_f64(my);
    float64x2_t axx = vdupq_n_f64(0.0), ayy = axx, axy = axx;
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t dx = vsubq_f64(vld1q_f64(x + i), vmx);
        const float64x2_t dy = vsubq_f64(vld1q_f64(y + i), vmy);
        axx = vaddq_f64(axx, vmulq_f64(dx, dx));
        ayy = vaddq_f64(ayy, vmulq_f64(dy, dy));
        axy = vaddq_f64(axy, vmulq_f64(dx, dy));
    }
    CenteredMoments m{vgetq_lane_f64(axx, 0) + vgetq_lane_f64(axx, 1),
                      vgetq_lane_f64(ayy, 0) + vgetq_lane_f64(ayy, 1),
                      vgetq_lane_f64(axy, 0) + vgetq_lane_f64(axy, 1)};
    for (; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        m.sxx += dx * dx;
        m.syy += dy * dy;
        m.sxy += dx * dy;
    }
    return m;
}

constexpr KernelTable kNeon{Isa::neon, sum_neon, dot_neon, predict_neon, moments_neon};

}  // namespace

namespace detail {
const KernelTable* neon_table() { return &kNeon; }
}  // namespace detail

}  // namespace greentwin::kernels

#else

namespace greentwin::kernels::detail {
const KernelTable* neon_table() { return nullptr; }
}  // namespace greentwin::kernels::detail

#endif
