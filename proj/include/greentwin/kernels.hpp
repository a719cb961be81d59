#pragma once

// Data-parallel inner loops of the power pipeline. Every kernel has a scalar
// reference implementation; vector variants (AVX2 on x86-64, NEON on
// AArch64) are selected once at startup from the CPU's capabilities.
//
// Elementwise kernels are bit-identical across variants (no FMA
// contraction, same operation order). Reductions associate in lane blocks
// and match the scalar reference to rounding.

#include <array>
#include <cstddef>
#include <span>
#include <string_view>

namespace greentwin::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view to_string(Isa isa);

/// Column-major batch of power-model features.
struct FeatureBlock {
    std::span<const double> cpu_util;
    std::span<const double> gpu_util;
    std::span<const double> n_jobs;
    std::span<const double> n_gpu_jobs;
    std::span<const double> gpu_job_runtime_s;

    std::size_t size() const { return cpu_util.size(); }
};

/// intercept, cpu, gpu, n_jobs, n_gpu_jobs, gpu_job_runtime, cpu*gpu
using PowerCoefficients = std::array<double, 7>;

struct CenteredMoments {
    double sxx = 0.0;
    double syy = 0.0;
    double sxy = 0.0;
};

struct KernelTable {
    Isa isa;
    double (*sum)(const double* x, std::size_t n);
    double (*dot)(const double* x, const double* y, std::size_t n);
    /// out[i] = max(0, model(features[i])); returns how many were clamped.
    std::size_t (*predict_power)(const double* cpu, const double* gpu, const double* nj,
                                 const double* ngj, const double* rt, const double* coeffs,
                                 double* out, std::size_t n);
    CenteredMoments (*centered_moments)(const double* x, const double* y, std::size_t n, double mx,
                                        double my);
};

const KernelTable& scalar_table();
/// Table for `isa`, or nullptr when this build/CPU cannot run it.
const KernelTable* table_for(Isa isa);

/// Best available variant; `GREENTWIN_SIMD=scalar` forces the reference path.
const KernelTable& active();

double sum(std::span<const double> x);
double dot(std::span<const double> x, std::span<const double> y);
std::size_t predict_power(const FeatureBlock& features, const PowerCoefficients& coeffs,
                          std::span<double> out);
CenteredMoments centered_moments(std::span<const double> x, std::span<const double> y, double mx,
                                 double my);

namespace detail {
// Entry points of the per-ISA translation units.
const KernelTable* avx2_table();
const KernelTable* neon_table();
}  // namespace detail

}  // namespace greentwin::kernels
