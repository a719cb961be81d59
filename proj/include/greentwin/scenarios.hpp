#pragma once

// Built-in workloads: the controlled "academic" day and a generated
// low-utilisation multi-day replay, with their grid data and a synthetic
// power-measurement corpus drawn from a known per-machine power law.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "greentwin/cluster_twin.hpp"
#include "greentwin/grid_signal.hpp"
#include "greentwin/power_model.hpp"
#include "greentwin/trace_store.hpp"

namespace greentwin {

struct ScenarioBundle {
    ScenarioConfig config;
    std::vector<JobRecord> jobs;
    std::vector<TrafficLightStatus> statuses;
    GridSeries grid;
    EmissionFactorTable factors;
    MonthlyReference reference;
    std::map<std::string, std::string> aliases;  // unmonitored -> twin hardware
};

/// Two large, two GPU, five medium and four small workers.
std::vector<MachineSpec> default_inventory();
/// worker-medium-05 has no power meter and borrows worker-medium-01's model.
std::map<std::string, std::string> default_aliases();

/// The example job: 16 cores / 8000 MB / 1 GPU / 8000 MB VRAM requested,
/// 6 cores / 1023 MB / 0.2 GPU / 708 MB VRAM used for 534 s.
JobRecord academic_job(std::string job_id, Timestamp submit);

inline constexpr Timestamp kAcademicStart = 1717372800.0;  // 2024-06-03T00:00:00Z

/// 2000 jobs at t=0, 2000 at t=12 h; red for 3 h, then green; one day.
ScenarioBundle academic_scenario();

/// Grid mixes used by the fixtures ("fossil-heavy" while red).
GridMixSample red_mix(Timestamp t);
GridMixSample green_mix(Timestamp t);
/// Lifecycle emission factors (gCO2e/kWh) per generation source.
EmissionFactorTable default_emission_factors();

struct RealisticOptions {
    int days = 11;
    std::uint64_t seed = 7;
    Timestamp start = 1753315200.0;  // 2025-07-24T00:00:00Z
    int min_bursts_per_day = 8;
    int max_bursts_per_day = 14;
    int min_burst_jobs = 6;
    int max_burst_jobs = 30;
};

/// Bursty, mostly CPU-bound jobs leaving machines idle most of the time.
ScenarioBundle realistic_scenario(const RealisticOptions& options = {});

/// Ground-truth power law of a machine (coefficients in PowerCoefficients order).
kernels::PowerCoefficients ground_truth_coefficients(const std::string& machine_id);
double ground_truth_power(const PowerFeatures& features);

struct SyntheticTrainingOptions {
    std::size_t samples_per_machine = 2000;
    double idle_fraction = 0.2;   // share of all-zero utilisation rows
    double noise = 0.05;          // multiplicative, Gaussian
    std::uint64_t seed = 42;
};

/// Measurements for every monitored machine (aliased machines are skipped).
std::vector<PowerSample> synthetic_power_training(const std::vector<MachineSpec>& inventory,
                                                  const std::map<std::string, std::string>& aliases,
                                                  const SyntheticTrainingOptions& options = {});

/// Preprocesses and fits the synthetic corpus for `bundle`'s inventory.
LinearPowerModel fit_default_model(const ScenarioBundle& bundle, std::uint64_t seed = 42);

/// Writes scenario.toml, jobs.jsonl, traffic_light.json, gridmix.csv,
/// emission_factors.csv, monthly_reference.csv and aliases.csv into `dir`.
void write_bundle(const std::filesystem::path& dir, const ScenarioBundle& bundle);

/// Reverse of write_bundle; missing optional files are left empty.
ScenarioBundle load_bundle(const std::filesystem::path& dir);

}  // namespace greentwin
