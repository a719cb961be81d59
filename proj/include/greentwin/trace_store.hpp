#pragma once

// Flat-file data model: job traces, machine telemetry, grid-mix history and
// emission factors. Loaders validate every record and return time-ordered,
// immutable values.

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "greentwin/common.hpp"

namespace greentwin {

struct JobRecord {
    std::string job_id;
    std::string user;
    std::optional<std::string> project;
    Timestamp submit_time = 0.0;
    std::optional<Timestamp> start_time;
    std::optional<Timestamp> end_time;
    ResourceVector requested;
    UsageVector used;
    Color sustainability_flag = Color::red;
    std::optional<double> maxwait_h;
    std::string command;
    std::string executable;
    std::vector<std::string> args;

    /// Pseudo-record standing in for a job id that telemetry references but
    /// the trace does not contain.
    bool unknown = false;

    friend bool operator==(const JobRecord&, const JobRecord&) = default;
};

struct TelemetryInterval {
    std::string machine_id;
    Timestamp t_begin = 0.0;
    Timestamp t_end = 0.0;
    Energy e_machine;
    Energy e_cpu;
    Energy e_gpu;
    std::map<std::string, double> job_cpu_util;    // R_i, average while running
    std::map<std::string, Energy> job_gpu_energy;  // pre-accumulated per-job GPU energy
    std::map<std::string, double> job_overlap_s;   // runtime inside the window

    Duration length() const { return t_end - t_begin; }
    std::string interval_id() const;
};

/// One NVML-style sample: the device power reading and one process's SM
/// utilisation at that tick. Several samples may share a timestamp.
struct GpuUtilSample {
    Timestamp timestamp = 0.0;
    std::string job_id;
    double sm_util = 0.0;
    double gpu_power_w = 0.0;
};

inline constexpr std::array<const char*, 9> kGridSources = {
    "solar", "wind", "hydro", "biomass", "nuclear", "gas", "coal", "oil", "other"};

struct GridMixSample {
    Timestamp timestamp = 0.0;
    std::array<double, kGridSources.size()> shares{};
    double renewable_share_of_load = 0.0;

    double share_sum() const;
};

using EmissionFactorTable = std::map<std::string, double>;  // source -> gCO2e/kWh

struct Diagnostic {
    std::size_t line = 0;  // 1-based; 0 when not tied to a line
    std::string message;
};

template <class T>
struct LoadResult {
    std::vector<T> records;
    std::vector<Diagnostic> rejected;
};

/// Step-interpolated grid history. Each sample holds until the next one; a
/// spacing larger than twice the series resolution is a gap.
class GridSeries {
public:
    GridSeries() = default;
    explicit GridSeries(std::vector<GridMixSample> samples);

    const std::vector<GridMixSample>& samples() const { return samples_; }
    bool empty() const { return samples_.empty(); }
    std::size_t size() const { return samples_.size(); }
    Duration resolution() const { return resolution_; }

    /// End of the interval covered by sample `i`.
    Timestamp covered_until(std::size_t i) const;
    Timestamp begin() const;
    Timestamp end() const;

    /// Sample in force at `t`, or nullptr when `t` is not covered.
    const GridMixSample* at(Timestamp t) const;

    /// First uncovered sub-interval of [from, to), if any.
    std::optional<std::pair<Timestamp, Timestamp>> first_gap(Timestamp from, Timestamp to) const;

private:
    std::vector<GridMixSample> samples_;
    Duration resolution_ = 3600.0;
};

// Loading. Malformed content throws Error naming the line and field.
LoadResult<JobRecord> parse_job_trace(std::istream& in, const std::string& source = "jobs.jsonl");
LoadResult<JobRecord> load_job_trace(const std::filesystem::path& path);
LoadResult<TelemetryInterval> parse_telemetry(std::istream& in,
                                              const std::string& source = "telemetry.jsonl");
LoadResult<TelemetryInterval> load_telemetry(const std::filesystem::path& path);
GridSeries parse_grid_history(std::istream& in, const std::string& source = "gridmix.csv");
GridSeries load_grid_history(const std::filesystem::path& path);
EmissionFactorTable parse_emission_factors(std::istream& in,
                                           const std::string& source = "emission_factors.csv");
EmissionFactorTable load_emission_factors(const std::filesystem::path& path);
std::vector<GpuUtilSample> parse_gpu_samples(std::istream& in,
                                             const std::string& source = "gpu_samples.csv");

/// Throws if some source with a nonzero share has no factor.
void check_factor_coverage(const GridSeries& grid, const EmissionFactorTable& factors);

// Canonical writers; `load(write(x)) == x` for validated input.
void write_job_trace(std::ostream& out, const std::vector<JobRecord>& jobs);
void write_telemetry(std::ostream& out, const std::vector<TelemetryInterval>& intervals);
void write_grid_history(std::ostream& out, const GridSeries& grid);
void write_emission_factors(std::ostream& out, const EmissionFactorTable& factors);

/// Job ids referenced by telemetry but absent from the trace, sorted.
std::vector<std::string> dangling_job_refs(const std::vector<JobRecord>& jobs,
                                           const std::vector<TelemetryInterval>& telemetry);

/// The trace plus one `unknown` pseudo-record per dangling telemetry reference.
std::vector<JobRecord> with_unknown_jobs(std::vector<JobRecord> jobs,
                                         const std::vector<TelemetryInterval>& telemetry);

/// Sort key for replay: submit time, then job id.
void sort_for_replay(std::vector<JobRecord>& jobs);

}  // namespace greentwin
