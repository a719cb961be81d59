#pragma once

// Discrete-event twin of an HTCondor-style pool. Time is virtual: the loop
// jumps from event to event and never sleeps.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "greentwin/common.hpp"
#include "greentwin/grid_signal.hpp"
#include "greentwin/power_model.hpp"
#include "greentwin/trace_store.hpp"

namespace greentwin {

struct MachineSpec {
    std::string machine_id;
    ResourceVector capacity;
};

enum class MeasureCMode { off, strict_green, flag_with_maxwait };

std::string_view to_string(MeasureCMode mode);
std::optional<MeasureCMode> parse_measure_c_mode(std::string_view text);

struct ScenarioConfig {
    std::string name = "scenario";
    bool measure_a = false;
    bool measure_b = false;
    MeasureCMode measure_c_mode = MeasureCMode::off;
    Duration negotiation_cycle_s = 60.0;
    Duration shutdown_idle_s = 300.0;
    Duration shutdown_check_s = 300.0;
    Duration wake_latency_s = 0.0;
    double time_acceleration = 10.0;
    Duration integration_step_s = 60.0;
    std::optional<Timestamp> start;
    std::optional<Duration> horizon_s;
    std::uint64_t seed = 0;
    std::vector<MachineSpec> machines;

    /// Throws Error on non-positive durations, acceleration < 1, duplicate
    /// or empty machine ids and negative capacities.
    void validate() const;
    /// "baseline", "A", "B+C", ...
    std::string label() const;
};

/// Enables exactly the measures named in a list such as "a,b,c" (empty or
/// "none" disables all). `c_mode` is used when c is present.
void set_measures(ScenarioConfig& config, std::string_view measures,
                  MeasureCMode c_mode = MeasureCMode::strict_green);

/// Reads the `[scenario]` table and `[[machine]]` array of a scenario.toml.
ScenarioConfig parse_scenario_config(std::istream& in, const std::string& source = "scenario.toml");
ScenarioConfig load_scenario_config(const std::filesystem::path& path);
void write_scenario_config(std::ostream& out, const ScenarioConfig& config);

/// Requests sized to the observed usage (cores, GPUs rounded up).
JobRecord apply_measure_a(JobRecord job);

enum class PowerState : std::uint8_t { on, suspended };

struct RunningJob {
    std::string job_id;
    ResourceVector reserved;
};

struct MachineState {
    MachineSpec spec;
    PowerState power_state = PowerState::on;
    Timestamp last_assignment_time = -std::numeric_limits<double>::infinity();
    std::vector<RunningJob> running;
    ResourceVector reserved;
    Color current_light = Color::red;

    ResourceVector free() const;
};

/// Flag a job must satisfy at `t` under the given measure-C mode.
Color effective_flag(const JobRecord& job, Timestamp t, MeasureCMode mode);

/// Best machine for `job` at `t`: of the machines where the request fits
/// and the light satisfies the job's effective flag, the one left with the
/// smallest normalised residual capacity, then the smallest machine_id.
/// Suspended machines take part only when `allow_suspended`.
std::optional<std::size_t> matchmake(const JobRecord& job, std::span<const MachineState> machines,
                                     Timestamp t, MeasureCMode mode, bool allow_suspended);

enum class EventKind : std::uint8_t {
    job_finish = 0,
    light_change = 1,
    job_submit = 2,
    shutdown_check = 3,
    negotiation_cycle = 4,
};

std::string_view to_string(EventKind kind);

/// One line of events.jsonl.
struct LoggedEvent {
    Timestamp time = 0.0;
    std::string kind;  // event kinds plus job_match, machine_suspend, machine_wake
    std::string job_id;
    std::string machine_id;
    std::string detail;

    friend bool operator==(const LoggedEvent&, const LoggedEvent&) = default;
};

void write_events(std::ostream& out, std::span<const LoggedEvent> events);

struct JobOutcome {
    std::string job_id;
    std::string machine_id;
    Timestamp submit_time = 0.0;
    Timestamp start_time = 0.0;
    Timestamp end_time = 0.0;
    ResourceVector reserved;
    UsageVector used;

    Duration wait_s() const { return start_time - submit_time; }
};

struct PowerStateSpan {
    std::string machine_id;
    PowerState state = PowerState::on;
    Timestamp from = 0.0;
    Timestamp to = 0.0;
};

struct SimulationResult {
    std::string label;
    ScenarioConfig config;
    Timestamp start = 0.0;
    Timestamp end = 0.0;
    std::vector<JobOutcome> started;     // sorted by job_id
    std::vector<std::string> unstarted;  // feasible, still queued at the horizon
    std::vector<std::string> infeasible; // fit no machine at all
    std::vector<PowerStateSpan> power_states;
    std::map<std::string, std::size_t> peak_concurrency;
    std::vector<LoggedEvent> events;
    OccupancyTrace occupancy;
};

struct TwinInputs {
    std::span<const JobRecord> jobs;
    std::span<const TrafficLightStatus> statuses;
};

/// Replays `jobs` through the twin until the horizon (or, without one, 30
/// days after the last submission or status). Deterministic.
SimulationResult run_scenario(const ScenarioConfig& config, const TwinInputs& inputs);

/// Per-step machine features sampled from the placements and power states.
OccupancyTrace build_occupancy(const ScenarioConfig& config, Timestamp start, Timestamp end,
                               std::span<const JobOutcome> started,
                               std::span<const PowerStateSpan> power_states);

}  // namespace greentwin
