#include <algorithm>
#include <map>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "doctest.h"
#include "greentwin/cluster_twin.hpp"
#include "greentwin/scenario_metrics.hpp"
#include "greentwin/scenarios.hpp"
#include "json.hpp"

using namespace greentwin;

namespace {

constexpr Timestamp kT0 = 1717372800.0;

JobRecord job(const std::string& id, Timestamp submit, ResourceVector req, double runtime, double cores = 1.0) {
    JobRecord j;
    j.job_id = id;
    j.user = "u";
    j.submit_time = submit;
    j.requested = req;
    j.used = {cores, static_cast<double>(req.memory_mb) / 2, 0.0, 0.0, runtime};
    j.command = "python job.py";
    j.executable = "python";
    return j;
}

MachineState machine(const std::string& id, ResourceVector cap, Color light = Color::green) {
    MachineState m;
    m.spec = {id, cap};
    m.current_light = light;
    return m;
}

ScenarioConfig config_with(std::vector<MachineSpec> machines) {
    ScenarioConfig c;
    c.machines = std::move(machines);
    c.start = kT0;
    return c;
}

std::vector<TrafficLightStatus> all_day(Color c, int days = 40) {
    return {{c, kT0 - 86400, kT0 + days * 86400.0, 0, 0}};
}

// Replays job_match / job_finish and checks reservations against capacity.
void check_capacity(const SimulationResult& r) {
    std::map<std::string, ResourceVector> cap, used;
    for (const auto& m : r.config.machines) cap[m.machine_id] = m.capacity;
    std::map<std::string, ResourceVector> reserved;
    for (const auto& o : r.started) reserved[o.job_id] = o.reserved;
    for (const auto& e : r.events) {
        if (e.kind == "job_match") {
            used[e.machine_id] += reserved.at(e.job_id);
            REQUIRE(used[e.machine_id].fits_within(cap.at(e.machine_id)));
        } else if (e.kind == "job_finish") {
            used[e.machine_id] -= reserved.at(e.job_id);
            REQUIRE(used[e.machine_id].non_negative());
        }
    }
}

const PowerStateSpan* state_at(const SimulationResult& r, const std::string& id, Timestamp t) {
    for (const auto& s : r.power_states) {
        if (s.machine_id == id && s.from <= t && t < s.to) return &s;
    }
    return nullptr;
}

std::vector<JobRecord> random_jobs(std::size_t n, std::uint64_t seed, Duration span) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<JobRecord> jobs;
    for (std::size_t i = 0; i < n; ++i) {
        const ResourceVector req{1 + static_cast<std::int64_t>(u(rng) * 8), 500 + static_cast<std::int64_t>(u(rng) * 8000),
                                 u(rng) < 0.2 ? 1 : 0, 0};
        auto j = job("j" + std::to_string(i), kT0 + std::floor(u(rng) * span), req, 60 + std::floor(u(rng) * 3600),
                     0.5 * static_cast<double>(req.cpus));
        if (u(rng) < 0.4) j.sustainability_flag = Color::green;
        if (u(rng) < 0.5) j.maxwait_h = 0.5 + u(rng) * 4;
        jobs.push_back(std::move(j));
    }
    return jobs;
}

}  // namespace

TEST_CASE("matchmake: flags against machine lights") {
    auto green_job = job("g", kT0, {1, 100, 0, 0}, 60);
    green_job.sustainability_flag = Color::green;
    std::vector<MachineState> yellow{machine("m", {8, 8000, 0, 0}, Color::yellow)};
    CHECK_FALSE(matchmake(green_job, yellow, kT0, MeasureCMode::flag_with_maxwait, false));

    const auto red_job = job("r", kT0, {1, 100, 0, 0}, 60);
    for (Color c : {Color::red, Color::yellow, Color::green}) {
        std::vector<MachineState> ms{machine("m", {8, 8000, 0, 0}, c)};
        CHECK(matchmake(red_job, ms, kT0, MeasureCMode::flag_with_maxwait, false) == std::optional<std::size_t>(0));
    }

    green_job.maxwait_h = 16;
    CHECK_FALSE(matchmake(green_job, yellow, kT0 + 15 * 3600.0, MeasureCMode::flag_with_maxwait, false));
    CHECK(matchmake(green_job, yellow, kT0 + 17 * 3600.0, MeasureCMode::flag_with_maxwait, false));
    // strict mode ignores maxwait
    CHECK_FALSE(matchmake(green_job, yellow, kT0 + 17 * 3600.0, MeasureCMode::strict_green, false));
}

TEST_CASE("matchmake: most-loaded fit, then machine id") {
    const auto j = job("x", kT0, {4, 1000, 0, 0}, 60);
    std::vector<MachineState> ms{machine("a", {16, 16000, 0, 0}), machine("b", {8, 8000, 0, 0}),
                                 machine("c", {8, 8000, 0, 0})};
    CHECK(matchmake(j, ms, kT0, MeasureCMode::off, false) == std::optional<std::size_t>(1));
    ms[2].reserved = {2, 2000, 0, 0};
    CHECK(matchmake(j, ms, kT0, MeasureCMode::off, false) == std::optional<std::size_t>(2));
    ms[2].reserved = {6, 2000, 0, 0};
    CHECK(matchmake(j, ms, kT0, MeasureCMode::off, false) == std::optional<std::size_t>(1));
    const auto big = job("y", kT0, {12, 1000, 0, 0}, 60);
    CHECK(matchmake(big, ms, kT0, MeasureCMode::off, false) == std::optional<std::size_t>(0));
    const auto huge = job("z", kT0, {64, 1000, 0, 0}, 60);
    CHECK_FALSE(matchmake(huge, ms, kT0, MeasureCMode::off, false));
}

TEST_CASE("matchmake: suspended machines only with dynamic shutdown") {
    const auto j = job("x", kT0, {1, 100, 0, 0}, 60);
    std::vector<MachineState> ms{machine("a", {8, 8000, 0, 0})};
    ms[0].power_state = PowerState::suspended;
    CHECK_FALSE(matchmake(j, ms, kT0, MeasureCMode::off, false));
    CHECK(matchmake(j, ms, kT0, MeasureCMode::off, true));
}

TEST_CASE("measure A: requests follow usage") {
    const auto a = apply_measure_a(academic_job("j", kT0));
    CHECK(a.requested == ResourceVector{6, 1023, 1, 708});

    auto exact = job("e", kT0, {3, 500, 0, 0}, 60, 3.0);
    exact.used.peak_memory_mb = 500;
    CHECK(apply_measure_a(exact).requested == exact.requested);
    CHECK(apply_measure_a(apply_measure_a(a)).requested == a.requested);
    CHECK(apply_measure_a(job("c", kT0, {4, 800, 0, 0}, 60, 2.5)).requested.gpus == 0);
}

TEST_CASE("negotiation: empty queue, cycle wait, single machine") {
    auto cfg = config_with({{"m", {8, 8000, 0, 0}}});
    const auto empty = run_scenario(cfg, {});
    CHECK(empty.started.empty());
    CHECK(std::none_of(empty.events.begin(), empty.events.end(),
                       [](const LoggedEvent& e) { return e.kind == "job_match"; }));

    const std::vector<JobRecord> jobs{job("late", kT0 + 1, {1, 100, 0, 0}, 120),
                                      job("on_cycle", kT0 + 120, {1, 100, 0, 0}, 120)};
    const auto r = run_scenario(cfg, {jobs, {}});
    REQUIRE(r.started.size() == 2);
    CHECK(r.started[0].job_id == "late");
    CHECK(r.started[0].start_time == kT0 + 60);
    CHECK(r.started[0].wait_s() == 59);
    CHECK(r.started[1].wait_s() == 0);
    for (const auto& o : r.started) CHECK(o.wait_s() <= cfg.negotiation_cycle_s);
    CHECK(r.end >= r.started[1].end_time);
}

TEST_CASE("negotiation: identical jobs pack up to the resource bound") {
    const auto inventory = default_inventory();
    auto cfg = config_with(inventory);
    cfg.horizon_s = 3600;
    std::vector<JobRecord> jobs;
    for (int i = 0; i < 4000; ++i) jobs.push_back(academic_job(fmt::format("j{:05}", i), kT0));
    const auto req = jobs[0].requested;
    const auto r = run_scenario(cfg, {jobs, {}});
    for (const auto& m : inventory) {
        const auto& c = m.capacity;
        std::int64_t bound = std::min({c.cpus / req.cpus, c.memory_mb / req.memory_mb});
        if (req.gpus > 0) bound = std::min(bound, c.gpus / req.gpus);
        if (req.vram_mb > 0) bound = std::min(bound, c.vram_mb / req.vram_mb);
        CHECK(r.peak_concurrency.at(m.machine_id) == static_cast<std::size_t>(bound));
    }
    check_capacity(r);
}

TEST_CASE("shutdown: five idle minutes suspend, four do not") {
    auto cfg = config_with({{"m", {8, 8000, 0, 0}}});
    cfg.measure_b = true;
    cfg.horizon_s = 1200;

    const std::vector<JobRecord> five{job("a", kT0, {1, 100, 0, 0}, 30)};
    const auto r5 = run_scenario(cfg, {five, {}});
    REQUIRE(state_at(r5, "m", kT0 + 299));
    CHECK(state_at(r5, "m", kT0 + 299)->state == PowerState::on);
    CHECK(state_at(r5, "m", kT0 + 300)->state == PowerState::suspended);

    const std::vector<JobRecord> four{job("a", kT0 + 60, {1, 100, 0, 0}, 30)};
    const auto r4 = run_scenario(cfg, {four, {}});
    CHECK(state_at(r4, "m", kT0 + 300)->state == PowerState::on);
    CHECK(state_at(r4, "m", kT0 + 600)->state == PowerState::suspended);

    cfg.measure_b = false;
    const auto off = run_scenario(cfg, {five, {}});
    for (const auto& s : off.power_states) CHECK(s.state == PowerState::on);
}

TEST_CASE("shutdown: busy machines stay on") {
    auto cfg = config_with({{"m", {8, 8000, 0, 0}}});
    cfg.measure_b = true;
    cfg.horizon_s = 3600;
    const std::vector<JobRecord> long_job{job("a", kT0, {1, 100, 0, 0}, 2000)};
    const auto r = run_scenario(cfg, {long_job, {}});
    CHECK(state_at(r, "m", kT0 + 1900)->state == PowerState::on);
    CHECK(state_at(r, "m", kT0 + 2400)->state == PowerState::suspended);
}

TEST_CASE("wake: suspended machine starts the job after the wake latency") {
    auto cfg = config_with({{"m", {8, 8000, 0, 0}}});
    cfg.measure_b = true;
    cfg.wake_latency_s = 90;
    const std::vector<JobRecord> jobs{job("a", kT0 + 1000, {1, 100, 0, 0}, 60)};
    const auto r = run_scenario(cfg, {jobs, {}});
    REQUIRE(r.started.size() == 1);
    CHECK(state_at(r, "m", kT0 + 900)->state == PowerState::suspended);
    CHECK(r.started[0].start_time == kT0 + 1020 + 90);
    CHECK(state_at(r, "m", kT0 + 1020)->state == PowerState::on);
    const bool woke = std::any_of(r.events.begin(), r.events.end(), [](const LoggedEvent& e) {
        return e.kind == "machine_wake" && e.time == kT0 + 1020;
    });
    CHECK(woke);
}

TEST_CASE("wake: strict green does not wake into a red window") {
    auto cfg = config_with({{"m", {8, 8000, 0, 0}}});
    cfg.measure_b = true;
    cfg.wake_latency_s = 90;
    cfg.measure_c_mode = MeasureCMode::strict_green;
    const std::vector<TrafficLightStatus> lights{{Color::green, kT0, kT0 + 1800, 0, 0},
                                                 {Color::red, kT0 + 1800, kT0 + 3600, 0, 0},
                                                 {Color::green, kT0 + 3600, kT0 + 86400, 0, 0}};
    const std::vector<JobRecord> jobs{job("late", kT0 + 1740, {1, 100, 0, 0}, 60)};
    const auto r = run_scenario(cfg, {jobs, lights});
    REQUIRE(r.started.size() == 1);
    CHECK(r.started[0].start_time == kT0 + 3600 + 90);
    CHECK(status_at(r.started[0].start_time, lights)->color == Color::green);
}

TEST_CASE("run: infeasible jobs are listed, feasible ones all start") {
    auto cfg = config_with({{"a", {8, 8000, 0, 0}}, {"b", {16, 4000, 1, 4000}}});
    auto jobs = random_jobs(300, 4, 6 * 3600);
    jobs.push_back(job("too_big", kT0, {32, 100, 0, 0}, 60));
    jobs.push_back(job("two_gpus", kT0, {1, 100, 2, 0}, 60));
    const auto r = run_scenario(cfg, {jobs, {}});
    std::vector<std::string> expected;
    for (const auto& j : jobs) {
        if (!j.requested.fits_within(cfg.machines[0].capacity) && !j.requested.fits_within(cfg.machines[1].capacity))
            expected.push_back(j.job_id);
    }
    std::sort(expected.begin(), expected.end());
    CHECK(r.infeasible == expected);
    CHECK(std::find(expected.begin(), expected.end(), "too_big") != expected.end());
    CHECK(r.unstarted.empty());
    CHECK(r.started.size() == jobs.size() - expected.size());
    for (const auto& o : r.started) CHECK(o.wait_s() >= 0);
    check_capacity(r);
}

TEST_CASE("run: capacity safety and determinism on random workloads") {
    for (std::uint64_t seed : {1, 2, 3}) {
        auto cfg = config_with(default_inventory());
        cfg.measure_b = seed % 2 == 1;
        cfg.measure_c_mode = MeasureCMode::flag_with_maxwait;
        const auto jobs = random_jobs(1500, seed, 2 * 86400);
        std::vector<TrafficLightStatus> lights;
        for (int h = 0; h < 24 * 10; ++h) {
            lights.push_back({h % 5 < 2 ? Color::green : (h % 5 == 2 ? Color::yellow : Color::red),
                              kT0 + h * 3600.0, kT0 + (h + 1) * 3600.0, 0, 0});
        }
        const auto a = run_scenario(cfg, {jobs, lights});
        const auto b = run_scenario(cfg, {jobs, lights});
        CHECK(a.events == b.events);
        CHECK(a.started.size() == b.started.size());
        check_capacity(a);
    }
}

TEST_CASE("run: strict green starts only in green, maxwait bounds the wait") {
    // Ample capacity: every delay comes from the light.
    auto cfg = config_with({{"a", {4096, 4096000, 64, 8000}}, {"b", {4096, 4096000, 0, 0}}});
    std::vector<TrafficLightStatus> lights{{Color::red, kT0, kT0 + 4 * 3600, 0, 0},
                                           {Color::green, kT0 + 4 * 3600, kT0 + 6 * 3600, 0, 0},
                                           {Color::yellow, kT0 + 6 * 3600, kT0 + 30 * 86400.0, 0, 0}};
    auto jobs = random_jobs(200, 8, 8 * 3600);
    cfg.measure_c_mode = MeasureCMode::strict_green;
    const auto strict = run_scenario(cfg, {jobs, lights});
    for (const auto& o : strict.started) {
        const auto* s = status_at(o.start_time, lights);
        REQUIRE(s);
        CHECK(s->color == Color::green);
    }
    CHECK_FALSE(strict.unstarted.empty());

    cfg.measure_c_mode = MeasureCMode::flag_with_maxwait;
    for (auto& j : jobs) {
        j.sustainability_flag = Color::green;
        j.maxwait_h = 1.0;
    }
    const auto relaxed = run_scenario(cfg, {jobs, lights});
    CHECK(relaxed.unstarted.empty());
    for (const auto& o : relaxed.started) {
        CHECK(o.wait_s() <= 3600 + cfg.negotiation_cycle_s + cfg.wake_latency_s);
    }
}

TEST_CASE("measure A never lowers per-node concurrency for identical jobs") {
    const auto bundle = academic_scenario();
    auto cfg = bundle.config;
    const auto base = run_scenario(cfg, {bundle.jobs, bundle.statuses});
    cfg.measure_a = true;
    const auto a = run_scenario(cfg, {bundle.jobs, bundle.statuses});
    for (const auto& [id, peak] : base.peak_concurrency) {
        CHECK(a.peak_concurrency.at(id) >= peak);
        const double ratio = static_cast<double>(a.peak_concurrency.at(id)) / static_cast<double>(peak);
        CHECK(ratio >= 2.2);
        CHECK(ratio <= 4.0);
    }
}

TEST_CASE("academic day: strict green delays by about 90 minutes, shutdown leaves waits alone") {
    const auto bundle = academic_scenario();
    auto cfg = bundle.config;
    const auto base = run_scenario(cfg, {bundle.jobs, bundle.statuses});
    cfg.measure_c_mode = MeasureCMode::strict_green;
    const auto c = run_scenario(cfg, {bundle.jobs, bundle.statuses});
    cfg.measure_c_mode = MeasureCMode::off;
    cfg.measure_b = true;
    const auto b = run_scenario(cfg, {bundle.jobs, bundle.statuses});
    const double m0 = *median_wait(base);
    CHECK(std::abs(*median_wait(c) - m0 - 5400) <= 1200);
    CHECK(std::abs(*median_wait(b) - m0) <= cfg.negotiation_cycle_s);
    CHECK(base.started.size() == 4000);
}

TEST_CASE("scenario config: parse, write, reject") {
    const std::string text = R"(# pool
[scenario]
name = "pool"   # comment
measure_b = true
measure_c_mode = "flag_with_maxwait"
negotiation_cycle_s = 30
time_acceleration = 10
start = "2024-06-03"
horizon_s = 86_400
seed = 5

[[machine]]
id = "worker-01"
cpus = 24
memory_mb = 64000
gpus = 2
vram_mb = 24_000

[[machine]]
id = "worker-02"
cpus = 8
memory_mb = 16000
)";
    std::istringstream in(text);
    const auto cfg = parse_scenario_config(in);
    CHECK(cfg.name == "pool");
    CHECK(cfg.measure_b);
    CHECK_FALSE(cfg.measure_a);
    CHECK(cfg.measure_c_mode == MeasureCMode::flag_with_maxwait);
    CHECK(cfg.negotiation_cycle_s == 30);
    CHECK(cfg.start == std::optional<double>(kT0));
    CHECK(cfg.horizon_s == std::optional<double>(86400));
    CHECK(cfg.seed == 5);
    REQUIRE(cfg.machines.size() == 2);
    CHECK(cfg.machines[0].capacity == ResourceVector{24, 64000, 2, 24000});
    CHECK(cfg.machines[1].capacity == ResourceVector{8, 16000, 0, 0});
    CHECK(cfg.label() == "B+C");

    std::ostringstream out;
    write_scenario_config(out, cfg);
    std::istringstream again(out.str());
    const auto back = parse_scenario_config(again);
    std::ostringstream out2;
    write_scenario_config(out2, back);
    CHECK(out2.str() == out.str());

    std::istringstream unknown("[scenario]\nname = \"x\"\nbogus = 1\n[[machine]]\nid = \"m\"\ncpus = 1\n");
    CHECK_THROWS_WITH_AS(parse_scenario_config(unknown), doctest::Contains("bogus"), Error);
    std::istringstream bad_cycle("[scenario]\nnegotiation_cycle_s = 0\n[[machine]]\nid = \"m\"\n");
    CHECK_THROWS_WITH_AS(parse_scenario_config(bad_cycle), doctest::Contains("negotiation_cycle_s"), Error);
    std::istringstream slow("[scenario]\ntime_acceleration = 0.5\n[[machine]]\nid = \"m\"\n");
    CHECK_THROWS_AS(parse_scenario_config(slow), Error);
    std::istringstream dup("[[machine]]\nid = \"m\"\n[[machine]]\nid = \"m\"\n");
    CHECK_THROWS_WITH_AS(parse_scenario_config(dup), doctest::Contains("duplicate"), Error);
}

TEST_CASE("measure lists and labels") {
    ScenarioConfig c;
    set_measures(c, "a,c");
    CHECK(c.label() == "A+C");
    CHECK(c.measure_c_mode == MeasureCMode::strict_green);
    set_measures(c, "b", MeasureCMode::flag_with_maxwait);
    CHECK(c.label() == "B");
    set_measures(c, "a,b,c", MeasureCMode::flag_with_maxwait);
    CHECK(c.label() == "A+B+C");
    CHECK(c.measure_c_mode == MeasureCMode::flag_with_maxwait);
    set_measures(c, "none");
    CHECK(c.label() == "baseline");
    CHECK_THROWS_AS(set_measures(c, "a,d"), Error);
}

TEST_CASE("event log export") {
    auto cfg = config_with({{"m", {8, 8000, 0, 0}}});
    const std::vector<JobRecord> jobs{job("a", kT0 + 5, {1, 100, 0, 0}, 60)};
    const auto r = run_scenario(cfg, {jobs, all_day(Color::green)});
    std::ostringstream out;
    write_events(out, r.events);
    std::istringstream in(out.str());
    std::vector<std::string> kinds;
    for (std::string line; std::getline(in, line);) {
        const auto o = nlohmann::json::parse(line);
        kinds.push_back(o.at("kind").get<std::string>());
        CHECK(o.contains("time"));
    }
    CHECK(kinds == std::vector<std::string>{"light_change", "job_submit", "job_match", "job_finish"});
}
