#include "greentwin/kernels.hpp"

namespace greentwin::kernels {
namespace {

double sum_scalar(const double* x, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

std::size_t predict_scalar(const double* cpu, const double* gpu, const double* nj,
                           const double* ngj, const double* rt, const double* c, double* out,
                           std::size_t n) {
    std::size_t clamped = 0;
    for (std::size_t i = 0; i < n; ++i) {
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

CenteredMoments moments_scalar(const double* x, const double* y, std::size_t n, double mx,
                               double my) {
    CenteredMoments m;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        m.sxx += dx * dx;
        m.syy += dy * dy;
        m.sxy += dx * dy;
    }
    return m;
}

constexpr KernelTable kScalar{Isa::scalar, sum_scalar, dot_scalar, predict_scalar, moments_scalar};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

}  // namespace greentwin::kernels
