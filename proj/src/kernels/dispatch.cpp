#include <cassert>
#include <cstdlib>
#include <string_view>

#include "greentwin/kernels.hpp"

namespace greentwin::kernels {

std::string_view to_string(Isa isa) {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
        case Isa::neon: return "neon";
    }
    return "scalar";
}

const KernelTable* table_for(Isa isa) {
    switch (isa) {
        case Isa::scalar: return &scalar_table();
        case Isa::avx2: return detail::avx2_table();
        case Isa::neon: return detail::neon_table();
    }
    return nullptr;
}

namespace {

const KernelTable& select() {
    if (const char* env = std::getenv("GREENTWIN_SIMD"); env && std::string_view{env} == "scalar") {
        return scalar_table();
    }
    if (const auto* t = detail::avx2_table()) return *t;
    if (const auto* t = detail::neon_table()) return *t;
    return scalar_table();
}

}  // namespace

const KernelTable& active() {
    static const KernelTable& table = select();
    return table;
}

double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }

double dot(std::span<const double> x, std::span<const double> y) {
    assert(x.size() == y.size());
    return active().dot(x.data(), y.data(), x.size());
}

std::size_t predict_power(const FeatureBlock& f, const PowerCoefficients& coeffs,
                          std::span<double> out) {
    assert(out.size() == f.size());
    return active().predict_power(f.cpu_util.data(), f.gpu_util.data(), f.n_jobs.data(),
                                  f.n_gpu_jobs.data(), f.gpu_job_runtime_s.data(), coeffs.data(),
                                  out.data(), f.size());
}

CenteredMoments centered_moments(std::span<const double> x, std::span<const double> y, double mx,
                                 double my) {
    assert(x.size() == y.size());
    return active().centered_moments(x.data(), y.data(), x.size(), mx, my);
}

}  // namespace greentwin::kernels
