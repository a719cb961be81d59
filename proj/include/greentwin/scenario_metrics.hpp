#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "greentwin/cluster_twin.hpp"
#include "greentwin/grid_signal.hpp"
#include "greentwin/power_model.hpp"
#include "greentwin/trace_store.hpp"

namespace greentwin {

/// Lower median of the waits of started jobs; nullopt when none started.
std::optional<double> median_wait(const SimulationResult& result);
std::optional<double> lower_median(std::vector<double> values);

/// kg CO2e of a power trace weighted by the grid intensity at each step.
/// Throws Error naming the first uncovered interval.
double total_co2e_kg(const PowerTrace& power, const GridSeries& grid, const EmissionFactorTable& factors);

/// Fraction of (machine, step) cells in which no job runs.
double idle_fraction(const OccupancyTrace& occupancy);

struct ScenarioMetrics {
    std::string label;
    std::optional<double> median_wait_s;
    double energy_kwh = 0.0;
    double co2e_kg = 0.0;
    std::size_t started = 0;
    std::size_t unstarted = 0;
    std::size_t infeasible = 0;
};

struct EvaluationInputs {
    std::span<const JobRecord> jobs;
    std::span<const TrafficLightStatus> statuses;
    const GridSeries* grid = nullptr;
    const EmissionFactorTable* factors = nullptr;
    const PowerModel* model = nullptr;
};

struct ScenarioRun {
    SimulationResult simulation;
    EnergyReport energy;
    ScenarioMetrics metrics;
};

ScenarioRun run_and_measure(const ScenarioConfig& config, const EvaluationInputs& inputs);

struct ScenarioComparison {
    std::vector<ScenarioMetrics> rows;  // matrix order, baseline first

    const ScenarioMetrics& at(const std::string& label) const;
    bool contains(const std::string& label) const;
};

/// The eight measure combinations of `base` (its own measure settings are
/// ignored; C uses `c_mode`).
std::vector<ScenarioConfig> matrix_configs(const ScenarioConfig& base,
                                           MeasureCMode c_mode = MeasureCMode::strict_green);

/// Runs all eight combinations concurrently. A failing scenario aborts the
/// matrix with an Error carrying its label.
ScenarioComparison run_matrix(const ScenarioConfig& base, const EvaluationInputs& inputs,
                              MeasureCMode c_mode = MeasureCMode::strict_green,
                              std::vector<ScenarioRun>* runs = nullptr);

void write_comparison_csv(std::ostream& out, const ScenarioComparison& comparison);
std::string render_comparison_table(const ScenarioComparison& comparison);

}  // namespace greentwin
