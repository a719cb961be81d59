#pragma once

// Per-job energy from machine telemetry. A job's energy is its GPU share,
// its CPU share (proportional to time-weighted CPU utilisation) and a share
// of the machine overhead (the remainder after CPU and GPU), the latter
// either split by runtime or charged in full to every job.

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "greentwin/common.hpp"
#include "greentwin/trace_store.hpp"

namespace greentwin {

struct EnergyBreakdown {
    std::string job_id;
    std::string interval_id;
    std::string machine_id;
    Timestamp interval_begin = 0.0;
    Timestamp interval_end = 0.0;
    Energy gpu;
    Energy cpu;
    Energy overhead_shared;  // runtime-proportional share of the overhead
    Energy overhead_full;    // the whole interval overhead
    Energy total_shared;     // gpu + cpu + overhead_shared
    Energy total_full;       // gpu + cpu + overhead_full

    Timestamp midpoint() const { return 0.5 * (interval_begin + interval_end); }
};

struct AttributionDiagnostics {
    std::string interval_id;
    Energy raw_overhead;  // may be negative before clamping
    bool clamped = false;
    Energy unattributed;
    bool lower_bound = false;  // per-job GPU energy falls short of the device total
};

struct IntervalAttribution {
    std::vector<EnergyBreakdown> breakdowns;
    AttributionDiagnostics diagnostics;
};

struct GpuAccumulation {
    std::map<std::string, Energy> per_job;
    Energy device;
    Energy unattributed;
};

/// Apportions device energy between consecutive samples to jobs by their SM
/// utilisation at the earlier sample. Samples must be sorted by timestamp.
GpuAccumulation accumulate_gpu_energy(std::span<const GpuUtilSample> samples, Timestamp begin,
                                      Timestamp end);

/// Fraction of the window during which `job_id` ran.
double overlap_fraction(const TelemetryInterval& interval, const std::string& job_id);

Energy cpu_share(const TelemetryInterval& interval, const std::string& job_id);

struct Overhead {
    Energy value;  // clamped at zero
    Energy raw;
    bool clamped = false;
};

Overhead overhead(const TelemetryInterval& interval);

/// Runtime-proportional overhead share; zero when no job ran in the window.
Energy overhead_share(const TelemetryInterval& interval, const std::string& job_id);

IntervalAttribution attribute_interval(const TelemetryInterval& interval);

struct Attribution {
    std::vector<EnergyBreakdown> breakdowns;
    std::vector<AttributionDiagnostics> diagnostics;
};

Attribution attribute_all(std::span<const TelemetryInterval> telemetry);

enum class AggregateKey { user, project, job, day };

struct EnergyTotals {
    Energy gpu;
    Energy cpu;
    Energy overhead_shared;
    Energy overhead_full;
    Energy total_shared;
    Energy total_full;
    std::size_t breakdowns = 0;
};

inline constexpr const char* kUnlabeledProject = "unlabeled";
inline constexpr const char* kUnknownJob = "unknown";

/// Totals per key. Jobs missing from `jobs` count under "unknown"; jobs
/// without a project label under "unlabeled". Day keys use the UTC date of
/// the interval midpoint.
std::map<std::string, EnergyTotals> aggregate(std::span<const EnergyBreakdown> breakdowns,
                                              AggregateKey key, std::span<const JobRecord> jobs);

void write_breakdowns(std::ostream& out, std::span<const EnergyBreakdown> breakdowns);
std::vector<EnergyBreakdown> parse_breakdowns(std::istream& in,
                                              const std::string& source = "breakdowns.jsonl");
std::vector<EnergyBreakdown> load_breakdowns(const std::filesystem::path& path);

}  // namespace greentwin
