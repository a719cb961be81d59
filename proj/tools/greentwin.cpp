// greentwin: attribution, power-model fitting, traffic lights and the
// cluster twin from the command line.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "greentwin/cluster_twin.hpp"
#include "greentwin/energy_attribution.hpp"
#include "greentwin/grid_signal.hpp"
#include "greentwin/power_model.hpp"
#include "greentwin/scenario_metrics.hpp"
#include "greentwin/scenarios.hpp"
#include "greentwin/trace_store.hpp"

namespace fs = std::filesystem;
using namespace greentwin;

namespace {

double now_s() {
    return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

Duration parse_duration(const std::string& text) {
    if (text.empty()) throw Error("empty duration");
    double scale = 1.0;
    std::string num = text;
    switch (text.back()) {
        case 's': num.pop_back(); break;
        case 'm': scale = 60.0; num.pop_back(); break;
        case 'h': scale = 3600.0; num.pop_back(); break;
        case 'd': scale = 86400.0; num.pop_back(); break;
        default: break;
    }
    try {
        std::size_t used = 0;
        const double v = std::stod(num, &used);
        if (used != num.size() || !(v > 0.0)) throw Error("");
        return v * scale;
    } catch (const std::exception&) {
        throw Error(fmt::format("invalid duration '{}' (use e.g. 3600, 90m, 24h, 11d)", text));
    }
}

std::map<std::string, std::string> load_aliases(const fs::path& path) {
    std::map<std::string, std::string> out;
    std::ifstream in(path);
    if (!in) throw Error(fmt::format("cannot open '{}'", path.string()));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        const auto comma = line.find(',');
        if (comma != std::string::npos) out[line.substr(0, comma)] = line.substr(comma + 1);
    }
    return out;
}

template <class T>
void report_rejected(const LoadResult<T>& r, const std::string& what) {
    for (const auto& d : r.rejected) std::cerr << fmt::format("{}: line {}: rejected: {}\n", what, d.line, d.message);
}

struct TwinOptions {
    std::string bundle;
    std::string config;
    std::string jobs;
    std::string lights;
    std::string grid;
    std::string factors;
    std::string model;
    std::string measures;
    std::string c_mode = "strict_green";
    std::string horizon;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string events;
};

void add_twin_options(CLI::App* cmd, TwinOptions& o, bool with_measures) {
    cmd->add_option("--scenario-dir", o.bundle, "directory written by 'greentwin generate'");
    cmd->add_option("--config", o.config, "scenario.toml");
    cmd->add_option("--jobs", o.jobs, "jobs.jsonl");
    cmd->add_option("--lights", o.lights, "traffic_light.json");
    cmd->add_option("--grid", o.grid, "gridmix.csv");
    cmd->add_option("--factors", o.factors, "emission_factors.csv");
    cmd->add_option("--model", o.model, "model.json or external:<predictions.csv>");
    if (with_measures) cmd->add_option("--measures", o.measures, "comma list of a, b, c");
    cmd->add_option("--c-mode", o.c_mode, "strict_green or flag_with_maxwait");
    cmd->add_option("--horizon", o.horizon, "simulated span, e.g. 24h");
    cmd->add_option("--seed", o.seed);
    cmd->add_option("--out-dir", o.out_dir);
}

struct LoadedTwin {
    ScenarioBundle bundle;
    std::unique_ptr<PowerModel> model;
    MeasureCMode c_mode = MeasureCMode::strict_green;
};

LoadedTwin load_twin(const TwinOptions& o) {
    LoadedTwin t;
    if (!o.bundle.empty()) {
        t.bundle = load_bundle(o.bundle);
    } else if (o.config.empty() || o.jobs.empty()) {
        throw Error("give --scenario-dir, or --config and --jobs");
    }
    auto& b = t.bundle;
    if (!o.config.empty()) b.config = load_scenario_config(o.config);
    if (!o.jobs.empty()) {
        auto jobs = load_job_trace(o.jobs);
        report_rejected(jobs, o.jobs);
        b.jobs = std::move(jobs.records);
    }
    if (!o.lights.empty()) b.statuses = load_traffic_light(o.lights);
    if (!o.grid.empty()) b.grid = load_grid_history(o.grid);
    if (!o.factors.empty()) b.factors = load_emission_factors(o.factors);
    if (!o.horizon.empty()) b.config.horizon_s = parse_duration(o.horizon);
    if (o.seed) b.config.seed = *o.seed;
    auto mode = parse_measure_c_mode(o.c_mode);
    if (!mode || *mode == MeasureCMode::off) throw Error("--c-mode must be strict_green or flag_with_maxwait");
    t.c_mode = *mode;

    fs::path model_path = o.model;
    if (model_path.empty() && !o.bundle.empty() && fs::exists(fs::path(o.bundle) / "model.json")) {
        model_path = fs::path(o.bundle) / "model.json";
    }
    if (!model_path.empty()) {
        t.model = load_power_model(model_path.string());
    } else {
        std::cerr << "no --model given; fitting the built-in synthetic power model\n";
        t.model = std::make_unique<LinearPowerModel>(fit_default_model(b, b.config.seed));
    }
    if (!b.grid.empty() && !b.factors.empty()) check_factor_coverage(b.grid, b.factors);
    return t;
}

EvaluationInputs inputs_of(const LoadedTwin& t) {
    const bool co2 = !t.bundle.grid.empty() && !t.bundle.factors.empty();
    return {t.bundle.jobs, t.bundle.statuses, co2 ? &t.bundle.grid : nullptr, co2 ? &t.bundle.factors : nullptr,
            t.model.get()};
}

void write_outputs(const std::string& out_dir, const ScenarioComparison& cmp) {
    if (out_dir.empty()) return;
    fs::create_directories(out_dir);
    std::ofstream csv(fs::path(out_dir) / "comparison.csv");
    write_comparison_csv(csv, cmp);
    std::ofstream txt(fs::path(out_dir) / "comparison.txt");
    txt << render_comparison_table(cmp);
}

int cmd_simulate(const TwinOptions& o) {
    auto t = load_twin(o);
    auto config = t.bundle.config;
    if (!o.measures.empty()) set_measures(config, o.measures, t.c_mode);
    auto run = run_and_measure(config, inputs_of(t));
    const auto& m = run.metrics;
    std::cout << fmt::format("scenario      {}\n", m.label);
    std::cout << fmt::format("jobs          {} started, {} queued at the horizon, {} infeasible\n", m.started,
                             m.unstarted, m.infeasible);
    std::cout << fmt::format("median wait   {}\n", m.median_wait_s ? fmt::format("{:.1f} s", *m.median_wait_s)
                                                                   : std::string{"undefined (no job started)"});
    std::cout << fmt::format("energy        {:.3f} kWh\n", m.energy_kwh);
    std::cout << fmt::format("CO2e          {:.3f} kg\n", m.co2e_kg);
    if (t.model->clamp_events() > 0) {
        std::cerr << fmt::format("power model clamped {} negative predictions to 0 W\n", t.model->clamp_events());
    }
    for (const auto& id : run.simulation.infeasible) std::cerr << "infeasible: " << id << '\n';
    if (!o.events.empty()) {
        std::ofstream ev(o.events);
        write_events(ev, run.simulation.events);
    }
    ScenarioComparison cmp;
    cmp.rows.push_back(m);
    write_outputs(o.out_dir, cmp);
    return 0;
}

int cmd_matrix(const TwinOptions& o) {
    auto t = load_twin(o);
    const auto cmp = run_matrix(t.bundle.config, inputs_of(t), t.c_mode);
    std::cout << render_comparison_table(cmp);
    write_outputs(o.out_dir, cmp);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"greentwin: job energy attribution and sustainability scenarios"};
    app.require_subcommand(1);

    TwinOptions sim;
    auto* simulate = app.add_subcommand("simulate", "run one scenario through the cluster twin");
    add_twin_options(simulate, sim, true);
    simulate->add_option("--events", sim.events, "write the event log (events.jsonl)");

    TwinOptions mat;
    auto* matrix = app.add_subcommand("matrix", "run all eight measure combinations");
    add_twin_options(matrix, mat, false);

    std::string tel_path, att_jobs, att_out;
    auto* attribute = app.add_subcommand("attribute", "split telemetry energy among jobs");
    attribute->add_option("--telemetry", tel_path)->required();
    attribute->add_option("--jobs", att_jobs);
    attribute->add_option("--out", att_out, "breakdowns.jsonl")->required();

    std::string fit_training, fit_aliases, fit_out;
    std::uint64_t fit_seed = 42;
    auto* fitcmd = app.add_subcommand("fit", "fit the per-machine power model");
    fitcmd->add_option("--training", fit_training, "power_training.csv")->required();
    fitcmd->add_option("--aliases", fit_aliases, "aliases.csv (machine_id,alias_of)");
    fitcmd->add_option("--seed", fit_seed);
    fitcmd->add_option("--out", fit_out, "model.json")->required();

    std::string li_grid, li_ref, li_out;
    bool li_relative = false;
    auto* lights = app.add_subcommand("lights", "classify a grid history into traffic-light windows");
    lights->add_option("--grid", li_grid)->required();
    lights->add_option("--reference", li_ref, "monthly_reference.csv")->required();
    lights->add_flag("--relative", li_relative, "read the 10% band as relative to the reference");
    lights->add_option("--out", li_out, "traffic_light.json");

    std::string po_source, po_cache, po_interval = "2h";
    bool po_watch = false;
    auto* poll = app.add_subcommand("poll", "fetch the traffic-light feed (with cache fallback)");
    poll->add_option("--source", po_source, "URL or snapshot file")->required();
    poll->add_option("--cache", po_cache)->required();
    poll->add_option("--interval", po_interval);
    poll->add_flag("--watch", po_watch, "keep polling on the interval");

    std::string gen_kind, gen_out;
    std::uint64_t gen_seed = 42;
    auto* generate = app.add_subcommand("generate", "write a built-in scenario with training data and model");
    generate->add_option("kind", gen_kind, "academic or realistic")->required()->check(CLI::IsMember({"academic", "realistic"}));
    generate->add_option("--out-dir", gen_out)->required();
    generate->add_option("--seed", gen_seed);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*simulate) return cmd_simulate(sim);
        if (*matrix) return cmd_matrix(mat);
        if (*attribute) {
            auto tel = load_telemetry(tel_path);
            report_rejected(tel, tel_path);
            std::vector<JobRecord> jobs;
            if (!att_jobs.empty()) {
                auto j = load_job_trace(att_jobs);
                report_rejected(j, att_jobs);
                jobs = std::move(j.records);
                for (const auto& id : dangling_job_refs(jobs, tel.records)) {
                    std::cerr << "telemetry references unknown job " << id << '\n';
                }
            }
            const auto att = attribute_all(tel.records);
            std::ofstream out(att_out);
            write_breakdowns(out, att.breakdowns);
            Energy unattributed;
            std::size_t lower = 0, clamped = 0;
            for (const auto& d : att.diagnostics) {
                unattributed += d.unattributed;
                lower += d.lower_bound;
                clamped += d.clamped;
            }
            std::cout << fmt::format("{} breakdowns from {} intervals; unattributed {:.3f} kWh; {} lower-bound and "
                                     "{} clamped intervals\n",
                                     att.breakdowns.size(), tel.records.size(), unattributed.in_kwh(), lower, clamped);
            return 0;
        }
        if (*fitcmd) {
            const auto samples = load_power_training(fit_training);
            PreprocessOptions po;
            po.seed = fit_seed;
            if (!fit_aliases.empty()) po.aliases = load_aliases(fit_aliases);
            const auto set = preprocess(samples, po);
            FitReport report;
            const auto model = fit(set, {}, &report);
            save_model(fit_out, model);
            const auto test = evaluate(model, set.test);
            std::cout << fmt::format("{} machines, {} train / {} validation / {} test rows ({} idle rows dropped)\n",
                                     model.machines.size(), set.train.size(), set.validation.size(), set.test.size(),
                                     set.idle_discarded);
            auto show = [](const std::optional<double>& v, double scale) {
                return v ? fmt::format("{:.4f}", *v * scale) : std::string{"n/a"};
            };
            std::cout << fmt::format("test: pearson r {}, aggregate error {}%\n", show(test.pearson_r, 1.0),
                                     show(test.aggregate_error, 100.0));
            for (const auto& m : report.ridge_machines) {
                std::cerr << "rank-deficient design for " << m << ", used ridge regression\n";
            }
            return 0;
        }
        if (*lights) {
            const auto grid = load_grid_history(li_grid);
            const auto ref = load_monthly_reference(li_ref);
            const auto statuses =
                status_series(grid, ref, li_relative ? ThresholdMode::relative : ThresholdMode::absolute);
            if (li_out.empty()) {
                std::cout << traffic_light_json(statuses);
            } else {
                save_traffic_light(li_out, statuses);
                std::cout << fmt::format("{} windows written to {}\n", statuses.size(), li_out);
            }
            return 0;
        }
        if (*poll) {
            FeedPoller poller({po_source, po_cache, parse_duration(po_interval)});
            do {
                const auto r = poller.poll(now_s());
                if (!r.warning.empty()) std::cerr << "warning: " << r.warning << '\n';
                std::cout << fmt::format("{} windows{}\n", r.statuses.size(), r.stale ? " (stale, from cache)" : "");
                if (po_watch) std::this_thread::sleep_for(std::chrono::duration<double>(poller.config().poll_interval));
            } while (po_watch);
            return 0;
        }
        if (*generate) {
            const auto bundle = gen_kind == "academic" ? academic_scenario() : realistic_scenario();
            write_bundle(gen_out, bundle);
            SyntheticTrainingOptions to;
            to.seed = gen_seed;
            const auto samples = synthetic_power_training(bundle.config.machines, bundle.aliases, to);
            {
                std::ofstream out(fs::path(gen_out) / "power_training.csv");
                write_power_training(out, samples);
            }
            save_model(fs::path(gen_out) / "model.json", fit_default_model(bundle, gen_seed));
            std::cout << fmt::format("{} scenario written to {} ({} jobs, {} machines)\n", gen_kind, gen_out,
                                     bundle.jobs.size(), bundle.config.machines.size());
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "greentwin: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
