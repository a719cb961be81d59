#pragma once

// Occupancy-to-power model. The baseline is a per-machine least-squares
// model over the feature vector below plus a CPU x GPU interaction term;
// any other regressor can be plugged in through ExternalPowerModel.

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "greentwin/common.hpp"
#include "greentwin/kernels.hpp"

namespace greentwin {

struct PowerFeatures {
    std::string machine_id;
    double avg_cpu_util = 0.0;       // fraction of machine cores
    double avg_gpu_util = 0.0;       // fraction of machine GPUs
    double n_jobs = 0.0;
    double n_gpu_jobs = 0.0;
    double gpu_job_runtime_s = 0.0;  // summed age of the GPU-using jobs
};

struct PowerSample {
    PowerFeatures features;
    double measured_power_w = 0.0;
};

/// A job seen by the feature extractor: its constant usage, its reservation
/// and when it started.
struct ActiveJob {
    UsageVector used;
    ResourceVector reserved;
    Timestamp start_time = 0.0;

    bool uses_gpu() const { return reserved.gpus > 0 || used.avg_gpu_util > 0.0; }
};

PowerFeatures extract_features(const std::string& machine_id, const ResourceVector& capacity,
                               std::span<const ActiveJob> running, Timestamp t);

// --- training data ---------------------------------------------------------

struct PreprocessOptions {
    std::uint64_t seed = 0;
    double idle_keep_fraction = 0.1;
    double train_fraction = 0.8;
    double validation_fraction = 0.1;
    /// Unmonitored machine -> hardware-identical monitored machine.
    std::map<std::string, std::string> aliases;
    /// Machines that must be predictable afterwards; empty skips the check.
    std::vector<std::string> inventory;
};

struct TrainingSet {
    std::vector<PowerSample> train;
    std::vector<PowerSample> validation;
    std::vector<PowerSample> test;
    std::map<std::string, std::string> aliases;
    std::size_t idle_discarded = 0;
    std::size_t unmonitored_dropped = 0;
    std::uint64_t seed = 0;
};

/// Downsamples zero-utilisation rows, drops unmonitored machines and splits
/// the rest train/validation/test.
TrainingSet preprocess(std::span<const PowerSample> samples, const PreprocessOptions& options);

std::vector<PowerSample> parse_power_training(std::istream& in,
                                              const std::string& source = "power_training.csv");
std::vector<PowerSample> load_power_training(const std::filesystem::path& path);
void write_power_training(std::ostream& out, std::span<const PowerSample> samples);

// --- models ------------------------------------------------------------------

class PowerModel {
public:
    PowerModel() = default;
    PowerModel(const PowerModel& other) : clamps_(other.clamps_.load()) {}
    PowerModel& operator=(const PowerModel& other) {
        clamps_ = other.clamps_.load();
        return *this;
    }
    virtual ~PowerModel() = default;

    virtual std::string kind() const = 0;
    virtual bool knows(const std::string& machine_id) const = 0;
    /// Non-negative watts; throws Error for unknown machines.
    virtual double predict(const PowerFeatures& features) const = 0;
    /// Predicts a column-major batch for one machine into `out`.
    virtual void predict_batch(const std::string& machine_id, const kernels::FeatureBlock& block,
                               std::span<double> out) const;

    std::size_t clamp_events() const { return clamps_.load(); }

protected:
    void count_clamps(std::size_t n) const { clamps_ += n; }

private:
    mutable std::atomic<std::size_t> clamps_{0};
};

struct MachineCoefficients {
    kernels::PowerCoefficients coeffs{};
    std::size_t samples = 0;
    bool ridge = false;
};

class LinearPowerModel final : public PowerModel {
public:
    std::map<std::string, MachineCoefficients> machines;
    std::map<std::string, std::string> aliases;
    std::size_t sample_count = 0;
    std::uint64_t split_seed = 0;

    std::string kind() const override { return "baseline"; }
    bool knows(const std::string& machine_id) const override;
    double predict(const PowerFeatures& features) const override;
    void predict_batch(const std::string& machine_id, const kernels::FeatureBlock& block,
                       std::span<double> out) const override;

    /// Coefficients for `machine_id`, following hardware aliases.
    const MachineCoefficients& coefficients(const std::string& machine_id) const;
};

/// Predictions produced elsewhere, given as a table of feature rows with
/// their predicted power; queries answer with the nearest row of the same
/// machine (features normalised per column).
class ExternalPowerModel final : public PowerModel {
public:
    explicit ExternalPowerModel(std::vector<PowerSample> table,
                                std::map<std::string, std::string> aliases = {});

    std::string kind() const override { return "external"; }
    bool knows(const std::string& machine_id) const override;
    double predict(const PowerFeatures& features) const override;

private:
    const std::string& resolve(const std::string& machine_id) const;

    std::map<std::string, std::vector<PowerSample>> rows_;
    std::map<std::string, std::string> aliases_;
    std::array<double, 5> scale_{1, 1, 1, 1, 1};
};

struct FitOptions {
    double ridge_lambda = 1e-6;
};

struct FitReport {
    std::vector<std::string> ridge_machines;  // rank-deficient designs
    std::optional<double> validation_pearson_r;
    std::optional<double> validation_aggregate_error;
};

LinearPowerModel fit(const TrainingSet& set, const FitOptions& options = {},
                     FitReport* report = nullptr);

struct ModelMetrics {
    std::optional<double> pearson_r;
    std::optional<double> aggregate_error;
    std::size_t samples = 0;
};

ModelMetrics evaluate(const PowerModel& model, std::span<const PowerSample> test);

/// Pearson correlation of two equally sized series; nullopt if either is constant.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

void save_model(const std::filesystem::path& path, const LinearPowerModel& model);
LinearPowerModel load_linear_model(const std::filesystem::path& path);
/// `model.json` or `external:<predictions.csv>`.
std::unique_ptr<PowerModel> load_power_model(const std::string& spec);

// --- integration -------------------------------------------------------------

/// Per-step features of one machine over the simulated timeline, with its
/// power state (suspended steps draw nothing).
struct MachineOccupancy {
    std::string machine_id;
    std::vector<double> cpu_util;
    std::vector<double> gpu_util;
    std::vector<double> n_jobs;
    std::vector<double> n_gpu_jobs;
    std::vector<double> gpu_job_runtime_s;
    std::vector<std::uint8_t> powered;

    std::size_t steps() const { return cpu_util.size(); }
    void resize(std::size_t n);
    kernels::FeatureBlock block() const;
};

struct OccupancyTrace {
    Timestamp start = 0.0;
    Duration step_s = 60.0;       // simulated seconds per step
    double acceleration = 1.0;    // real seconds per simulated second
    std::vector<MachineOccupancy> machines;

    std::size_t steps() const { return machines.empty() ? 0 : machines.front().steps(); }
    Timestamp real_time_of(std::size_t k) const {
        return start + static_cast<double>(k) * step_s * acceleration;
    }
};

struct PowerTrace {
    Timestamp start = 0.0;
    Duration step_s = 60.0;
    double acceleration = 1.0;
    std::vector<std::string> machine_ids;
    std::vector<std::vector<double>> watts;  // [machine][step]
};

struct EnergyReport {
    std::map<std::string, Energy> per_machine;
    Energy total;
    PowerTrace power;
};

/// Left Riemann sum of predicted power, rescaled to real time.
EnergyReport integrate_energy(const PowerModel& model, const OccupancyTrace& trace);

}  // namespace greentwin
