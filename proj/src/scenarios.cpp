#include "greentwin/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <fmt/format.h>

namespace greentwin {

namespace {

// Distribution objects in <random> are implementation-defined; these are not.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
    return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

double normal(std::mt19937_64& rng) {
    const double u1 = 1.0 - uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

GridMixSample mix(Timestamp t, std::initializer_list<std::pair<const char*, double>> shares, double renewable) {
    GridMixSample s;
    s.timestamp = t;
    for (const auto& [name, v] : shares) {
        for (std::size_t k = 0; k < kGridSources.size(); ++k) {
            if (std::string_view(kGridSources[k]) == name) s.shares[k] = v;
        }
    }
    s.renewable_share_of_load = renewable;
    return s;
}

MonthlyReference default_reference() {
    MonthlyReference ref;
    const double shares[12] = {0.52, 0.55, 0.56, 0.58, 0.60, 0.58, 0.55, 0.54, 0.52, 0.50, 0.51, 0.50};
    for (int m = 0; m < 12; ++m) ref.set(std::to_string(m + 1), shares[m]);
    return ref;
}

}  // namespace

std::vector<MachineSpec> default_inventory() {
    std::vector<MachineSpec> out;
    auto add = [&](const char* group, int count, ResourceVector cap) {
        for (int i = 1; i <= count; ++i) out.push_back({fmt::format("worker-{}-{:02}", group, i), cap});
    };
    add("large", 2, {128, 48000, 24, 264000});
    add("gpu", 2, {96, 384000, 11, 44000});
    add("medium", 5, {160, 640000, 30, 330000});
    add("small", 4, {96, 384000, 16, 176000});
    return out;
}

std::map<std::string, std::string> default_aliases() { return {{"worker-medium-05", "worker-medium-01"}}; }

JobRecord academic_job(std::string job_id, Timestamp submit) {
    JobRecord j;
    j.job_id = std::move(job_id);
    j.user = "student";
    j.project = "academic";
    j.submit_time = submit;
    j.requested = {16, 8000, 1, 8000};
    j.used = {6.0, 1023.0, 0.2, 708.0, 534.0};
    j.command = "python job.py";
    j.executable = "python";
    j.args = {"job.py"};
    return j;
}

GridMixSample red_mix(Timestamp t) {
    return mix(t, {{"solar", 0.04}, {"wind", 0.12}, {"hydro", 0.03}, {"biomass", 0.08}, {"gas", 0.18},
                   {"coal", 0.42}, {"oil", 0.01}, {"other", 0.12}},
               0.27);
}

GridMixSample green_mix(Timestamp t) {
    return mix(t, {{"solar", 0.38}, {"wind", 0.34}, {"hydro", 0.04}, {"biomass", 0.08}, {"gas", 0.08},
                   {"coal", 0.05}, {"other", 0.03}},
               0.84);
}

EmissionFactorTable default_emission_factors() {
    return {{"solar", 41.0}, {"wind", 11.0},  {"hydro", 24.0}, {"biomass", 230.0}, {"nuclear", 12.0},
            {"gas", 490.0},  {"coal", 820.0}, {"oil", 650.0},  {"other", 300.0}};
}

ScenarioBundle academic_scenario() {
    ScenarioBundle b;
    b.config.name = "academic";
    b.config.machines = default_inventory();
    b.config.start = kAcademicStart;
    b.config.horizon_s = 86400.0;
    b.aliases = default_aliases();
    for (int i = 0; i < 4000; ++i) {
        const Timestamp submit = kAcademicStart + (i < 2000 ? 0.0 : 43200.0);
        b.jobs.push_back(academic_job(fmt::format("job-{:05}", i), submit));
    }
    b.statuses = {{Color::red, kAcademicStart, kAcademicStart + 3 * 3600.0, 0.27, 0.58},
                  {Color::green, kAcademicStart + 3 * 3600.0, kAcademicStart + 86400.0, 0.84, 0.58}};
    std::vector<GridMixSample> samples;
    for (int h = 0; h < 24; ++h) {
        const Timestamp t = kAcademicStart + h * 3600.0;
        samples.push_back(h < 3 ? red_mix(t) : green_mix(t));
    }
    b.grid = GridSeries(std::move(samples));
    b.factors = default_emission_factors();
    b.reference = default_reference();
    return b;
}

ScenarioBundle realistic_scenario(const RealisticOptions& o) {
    ScenarioBundle b;
    b.config.name = "realistic";
    b.config.machines = default_inventory();
    b.config.start = o.start;
    b.config.horizon_s = o.days * 86400.0;
    b.config.seed = o.seed;
    b.config.measure_c_mode = MeasureCMode::off;
    b.aliases = default_aliases();
    b.factors = default_emission_factors();
    b.reference = default_reference();

    std::mt19937_64 rng(o.seed);
    std::vector<GridMixSample> samples;
    double wind = 0.2;
    for (int h = 0; h < o.days * 24; ++h) {
        const Timestamp t = o.start + h * 3600.0;
        const int hour = h % 24;
        const double solar = hour >= 6 && hour <= 19 ? 0.45 * std::sin(std::numbers::pi * (hour - 5.5) / 14.5) : 0.0;
        wind = std::clamp(wind + 0.05 * normal(rng), 0.03, 0.45);
        const double renew = std::min(0.95, solar + wind + 0.04 + 0.08);
        const double fossil = 1.0 - renew;
        samples.push_back(mix(t, {{"solar", solar}, {"wind", wind}, {"hydro", 0.04}, {"biomass", 0.08},
                                  {"gas", 0.4 * fossil}, {"coal", 0.5 * fossil}, {"other", 0.1 * fossil}},
                              renew));
    }
    b.grid = GridSeries(std::move(samples));
    b.statuses = status_series(b.grid, b.reference);

    static const char* kProjects[] = {"PaperXY", "thesis-ml", "lecture-ds", "exotic-search"};
    static const char* kScripts[] = {"train.py", "analysis.py", "skim.py", "fit.py"};
    int counter = 0;
    for (int d = 0; d < o.days; ++d) {
        const int bursts = uniform_int(rng, o.min_bursts_per_day, o.max_bursts_per_day);
        for (int k = 0; k < bursts; ++k) {
            const Timestamp burst = o.start + d * 86400.0 + uniform(rng, 0.0, 86400.0 - 3 * 3600.0);
            const int n = uniform_int(rng, o.min_burst_jobs, o.max_burst_jobs);
            const int user = uniform_int(rng, 1, 12);
            const int project = uniform_int(rng, -1, 3);
            const int script = uniform_int(rng, 0, 3);
            const bool gpu = uniform01(rng) < 0.1;
            const bool green = uniform01(rng) < 0.3;
            for (int i = 0; i < n; ++i) {
                JobRecord j;
                j.job_id = fmt::format("r{:06}", counter++);
                j.user = fmt::format("user{:02}", user);
                if (project >= 0) j.project = kProjects[project];
                j.submit_time = burst + uniform(rng, 0.0, 300.0);
                j.used.avg_cpu_cores = uniform(rng, 0.2, 1.2);
                j.used.peak_memory_mb = std::round(uniform(rng, 400.0, 4000.0));
                j.used.runtime_s = std::round(uniform(rng, 900.0, 5400.0));
                j.requested.cpus = static_cast<std::int64_t>(std::ceil(j.used.avg_cpu_cores)) + uniform_int(rng, 0, 3);
                j.requested.memory_mb =
                    static_cast<std::int64_t>(std::ceil(j.used.peak_memory_mb * uniform(rng, 1.2, 4.0) / 1000.0) * 1000.0);
                if (gpu) {
                    j.used.avg_gpu_util = uniform(rng, 0.02, 0.1);
                    j.used.peak_vram_mb = std::round(uniform(rng, 500.0, 3000.0));
                    j.requested.gpus = 1;
                    j.requested.vram_mb = 8000;
                }
                if (green) {
                    j.sustainability_flag = Color::green;
                    j.maxwait_h = 16.0;
                }
                j.executable = "python";
                const int epochs = uniform_int(rng, 1, 50);
                j.args = {kScripts[script], "--epochs", std::to_string(epochs)};
                j.command = fmt::format("python {} --epochs {}", kScripts[script], epochs);
                b.jobs.push_back(std::move(j));
            }
        }
    }
    sort_for_replay(b.jobs);
    return b;
}

kernels::PowerCoefficients ground_truth_coefficients(const std::string& machine_id) {
    if (machine_id.find("large") != std::string::npos) return {320, 380, 1100, 1.2, 6.0, 2e-4, -40};
    if (machine_id.find("gpu") != std::string::npos) return {260, 300, 1800, 1.0, 8.0, 2e-4, -60};
    if (machine_id.find("small") != std::string::npos) return {180, 260, 900, 1.0, 5.0, 2e-4, -30};
    return {300, 450, 2200, 1.2, 6.0, 2e-4, -70};
}

double ground_truth_power(const PowerFeatures& f) {
    const auto c = ground_truth_coefficients(f.machine_id);
    return c[0] + c[1] * f.avg_cpu_util + c[2] * f.avg_gpu_util + c[3] * f.n_jobs + c[4] * f.n_gpu_jobs +
           c[5] * f.gpu_job_runtime_s + c[6] * f.avg_cpu_util * f.avg_gpu_util;
}

std::vector<PowerSample> synthetic_power_training(const std::vector<MachineSpec>& inventory,
                                                  const std::map<std::string, std::string>& aliases,
                                                  const SyntheticTrainingOptions& o) {
    std::mt19937_64 rng(o.seed);
    std::vector<PowerSample> out;
    for (const auto& m : inventory) {
        if (aliases.contains(m.machine_id)) continue;
        for (std::size_t i = 0; i < o.samples_per_machine; ++i) {
            PowerSample s;
            s.features.machine_id = m.machine_id;
            if (uniform01(rng) >= o.idle_fraction) {
                auto& f = s.features;
                f.n_jobs = uniform_int(rng, 1, 30);
                const int max_gpu_jobs = static_cast<int>(std::min<std::int64_t>(m.capacity.gpus, static_cast<std::int64_t>(f.n_jobs)));
                f.n_gpu_jobs = max_gpu_jobs > 0 ? uniform_int(rng, 0, max_gpu_jobs) : 0;
                f.avg_cpu_util = uniform01(rng);
                f.avg_gpu_util = f.n_gpu_jobs > 0 ? uniform(rng, 0.0, std::min(1.0, f.n_gpu_jobs / static_cast<double>(m.capacity.gpus))) : 0.0;
                f.gpu_job_runtime_s = f.n_gpu_jobs * uniform(rng, 0.0, 7200.0);
            }
            s.measured_power_w = ground_truth_power(s.features) * (1.0 + o.noise * normal(rng));
            out.push_back(std::move(s));
        }
    }
    return out;
}

LinearPowerModel fit_default_model(const ScenarioBundle& bundle, std::uint64_t seed) {
    SyntheticTrainingOptions to;
    to.seed = seed;
    const auto samples = synthetic_power_training(bundle.config.machines, bundle.aliases, to);
    PreprocessOptions po;
    po.seed = seed;
    po.aliases = bundle.aliases;
    for (const auto& m : bundle.config.machines) po.inventory.push_back(m.machine_id);
    return fit(preprocess(samples, po));
}

void write_bundle(const std::filesystem::path& dir, const ScenarioBundle& b) {
    std::filesystem::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream out(dir / name);
        if (!out) throw Error(fmt::format("cannot write '{}'", (dir / name).string()));
        return out;
    };
    {
        auto out = open("scenario.toml");
        write_scenario_config(out, b.config);
    }
    {
        auto out = open("jobs.jsonl");
        write_job_trace(out, b.jobs);
    }
    save_traffic_light(dir / "traffic_light.json", b.statuses);
    {
        auto out = open("gridmix.csv");
        write_grid_history(out, b.grid);
    }
    {
        auto out = open("emission_factors.csv");
        write_emission_factors(out, b.factors);
    }
    {
        auto out = open("monthly_reference.csv");
        out << "month,reference_share\n";
        for (const auto& [k, v] : b.reference.values()) out << fmt::format("{},{}\n", k, v);
    }
    {
        auto out = open("aliases.csv");
        out << "machine_id,alias_of\n";
        for (const auto& [k, v] : b.aliases) out << k << ',' << v << '\n';
    }
}

ScenarioBundle load_bundle(const std::filesystem::path& dir) {
    ScenarioBundle b;
    b.config = load_scenario_config(dir / "scenario.toml");
    auto jobs = load_job_trace(dir / "jobs.jsonl");
    b.jobs = std::move(jobs.records);
    if (std::filesystem::exists(dir / "traffic_light.json")) b.statuses = load_traffic_light(dir / "traffic_light.json");
    if (std::filesystem::exists(dir / "gridmix.csv")) b.grid = load_grid_history(dir / "gridmix.csv");
    if (std::filesystem::exists(dir / "emission_factors.csv")) {
        b.factors = load_emission_factors(dir / "emission_factors.csv");
    }
    if (std::filesystem::exists(dir / "monthly_reference.csv")) {
        b.reference = load_monthly_reference(dir / "monthly_reference.csv");
    }
    if (std::ifstream in(dir / "aliases.csv"); in) {
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            const auto comma = line.find(',');
            if (comma == std::string::npos) continue;
            b.aliases[line.substr(0, comma)] = line.substr(comma + 1);
        }
    }
    return b;
}

}  // namespace greentwin
