#include "greentwin/scenario_metrics.hpp"

#include <algorithm>
#include <future>
#include <ostream>

#include <fmt/format.h>

namespace greentwin {

std::optional<double> lower_median(std::vector<double> values) {
    if (values.empty()) return std::nullopt;
    const auto mid = values.begin() + static_cast<std::ptrdiff_t>((values.size() - 1) / 2);
    std::nth_element(values.begin(), mid, values.end());
    return *mid;
}

std::optional<double> median_wait(const SimulationResult& result) {
    std::vector<double> waits;
    waits.reserve(result.started.size());
    for (const auto& o : result.started) waits.push_back(o.wait_s());
    return lower_median(std::move(waits));
}

double total_co2e_kg(const PowerTrace& power, const GridSeries& grid, const EmissionFactorTable& factors) {
    const std::size_t n = power.watts.empty() ? 0 : power.watts.front().size();
    if (n == 0) return 0.0;
    const Duration real_step = power.step_s * power.acceleration;
    const Timestamp end = power.start + static_cast<double>(n) * real_step;
    if (auto gap = grid.first_gap(power.start, end)) {
        throw Error(fmt::format("grid history does not cover [{}, {}) of the simulated horizon",
                                gap->first, gap->second));
    }
    std::vector<double> intensity(n);
    for (std::size_t k = 0; k < n; ++k) {
        intensity[k] = intensity_at(power.start + static_cast<double>(k) * real_step, grid, factors).gco2e_per_kwh;
    }
    double weighted = 0.0;  // W * g/kWh summed over steps
    for (const auto& w : power.watts) weighted += kernels::dot(w, intensity);
    return weighted * real_step / 3.6e6 / 1000.0;
}

double idle_fraction(const OccupancyTrace& occupancy) {
    std::size_t cells = 0;
    std::size_t idle = 0;
    for (const auto& m : occupancy.machines) {
        cells += m.steps();
        idle += static_cast<std::size_t>(std::count(m.n_jobs.begin(), m.n_jobs.end(), 0.0));
    }
    return cells == 0 ? 0.0 : static_cast<double>(idle) / static_cast<double>(cells);
}

ScenarioRun run_and_measure(const ScenarioConfig& config, const EvaluationInputs& inputs) {
    if (!inputs.model) throw Error("no power model given");
    ScenarioRun run;
    run.simulation = run_scenario(config, {inputs.jobs, inputs.statuses});
    run.energy = integrate_energy(*inputs.model, run.simulation.occupancy);
    auto& m = run.metrics;
    m.label = run.simulation.label;
    m.median_wait_s = median_wait(run.simulation);
    m.energy_kwh = run.energy.total.in_kwh();
    if (inputs.grid && inputs.factors) {
        m.co2e_kg = total_co2e_kg(run.energy.power, *inputs.grid, *inputs.factors);
    }
    m.started = run.simulation.started.size();
    m.unstarted = run.simulation.unstarted.size();
    m.infeasible = run.simulation.infeasible.size();
    return run;
}

const ScenarioMetrics& ScenarioComparison::at(const std::string& label) const {
    for (const auto& r : rows) {
        if (r.label == label) return r;
    }
    throw Error(fmt::format("no scenario '{}' in comparison", label));
}

bool ScenarioComparison::contains(const std::string& label) const {
    return std::any_of(rows.begin(), rows.end(), [&](const auto& r) { return r.label == label; });
}

std::vector<ScenarioConfig> matrix_configs(const ScenarioConfig& base, MeasureCMode c_mode) {
    static const char* kCombos[] = {"", "a", "b", "c", "a,b", "a,c", "b,c", "a,b,c"};
    std::vector<ScenarioConfig> out;
    for (const char* combo : kCombos) {
        ScenarioConfig c = base;
        set_measures(c, combo, c_mode);
        out.push_back(std::move(c));
    }
    return out;
}

ScenarioComparison run_matrix(const ScenarioConfig& base, const EvaluationInputs& inputs,
                              MeasureCMode c_mode, std::vector<ScenarioRun>* runs) {
    const auto configs = matrix_configs(base, c_mode);
    std::vector<std::future<ScenarioRun>> futures;
    for (const auto& c : configs) {
        futures.push_back(std::async(std::launch::async, [&c, &inputs] { return run_and_measure(c, inputs); }));
    }
    ScenarioComparison out;
    std::optional<std::string> failure;
    for (std::size_t i = 0; i < futures.size(); ++i) {
        try {
            auto run = futures[i].get();
            out.rows.push_back(run.metrics);
            if (runs) runs->push_back(std::move(run));
        } catch (const std::exception& e) {
            if (!failure) failure = fmt::format("scenario {}: {}", configs[i].label(), e.what());
        }
    }
    if (failure) throw Error(*failure);
    return out;
}

void write_comparison_csv(std::ostream& out, const ScenarioComparison& comparison) {
    out << "scenario,median_wait_s,energy_kwh,co2e_kg\n";
    for (const auto& r : comparison.rows) {
        out << fmt::format("{},{},{},{}\n", r.label,
                           r.median_wait_s ? fmt::format("{}", *r.median_wait_s) : std::string{},
                           r.energy_kwh, r.co2e_kg);
    }
}

std::string render_comparison_table(const ScenarioComparison& comparison) {
    const ScenarioMetrics* base = comparison.contains("baseline") ? &comparison.at("baseline") : nullptr;
    auto delta = [](double v, double ref) {
        return ref != 0.0 ? fmt::format("{:+.1f}%", 100.0 * (v - ref) / ref) : std::string{"-"};
    };
    std::string out = fmt::format("{:<10} {:>16} {:>12} {:>8} {:>12} {:>8}\n", "scenario", "median wait", "energy kWh",
                                  "", "CO2e kg", "");
    out += std::string(71, '-') + '\n';
    for (const auto& r : comparison.rows) {
        const std::string wait = r.median_wait_s ? fmt::format("{:.1f} min", *r.median_wait_s / 60.0) : "undefined";
        out += fmt::format("{:<10} {:>16} {:>12.3f} {:>8} {:>12.3f} {:>8}\n", r.label, wait, r.energy_kwh,
                           base ? delta(r.energy_kwh, base->energy_kwh) : "", r.co2e_kg,
                           base ? delta(r.co2e_kg, base->co2e_kg) : "");
        if (r.infeasible + r.unstarted > 0) {
            out += fmt::format("{:<10} ({} infeasible, {} never started)\n", "", r.infeasible, r.unstarted);
        }
    }
    return out;
}

}  // namespace greentwin
