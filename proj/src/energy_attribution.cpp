#include "greentwin/energy_attribution.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include <fmt/format.h>

#include "greentwin/time_util.hpp"
#include "json.hpp"

namespace greentwin {

namespace {

constexpr double kRelTol = 1e-9;

}  // namespace

GpuAccumulation accumulate_gpu_energy(std::span<const GpuUtilSample> samples, Timestamp begin,
                                      Timestamp end) {
    for (std::size_t i = 1; i < samples.size(); ++i) {
        if (samples[i].timestamp < samples[i - 1].timestamp) {
            throw Error(fmt::format("GPU samples not sorted: t={} follows t={}",
                                    samples[i].timestamp, samples[i - 1].timestamp));
        }
    }

    GpuAccumulation acc;
    Energy attributed;
    std::size_t k = 0;
    while (k < samples.size()) {
        // One tick: all samples sharing this timestamp.
        std::size_t next = k;
        while (next < samples.size() && samples[next].timestamp == samples[k].timestamp) ++next;
        const Timestamp tick_end = next < samples.size() ? samples[next].timestamp : end;
        const Timestamp seg_begin = std::max(samples[k].timestamp, begin);
        const Timestamp seg_end = std::min(tick_end, end);
        if (seg_end > seg_begin) {
            const Energy increment = Energy::joules(samples[k].gpu_power_w * (seg_end - seg_begin));
            acc.device += increment;
            double util_sum = 0.0;
            for (std::size_t s = k; s < next; ++s) util_sum += samples[s].sm_util;
            if (util_sum > 0.0) {
                const double scale = 1.0 / std::max(1.0, util_sum);
                for (std::size_t s = k; s < next; ++s) {
                    if (samples[s].sm_util <= 0.0) continue;
                    const Energy share = increment * (samples[s].sm_util * scale);
                    acc.per_job[samples[s].job_id] += share;
                    attributed += share;
                }
            }
        }
        k = next;
    }
    acc.unattributed = std::max(Energy{}, acc.device - attributed);
    return acc;
}

double overlap_fraction(const TelemetryInterval& interval, const std::string& job_id) {
    auto it = interval.job_overlap_s.find(job_id);
    if (it == interval.job_overlap_s.end()) return 0.0;
    return it->second / interval.length();
}

namespace {

double weighted_cpu_denominator(const TelemetryInterval& interval) {
    double den = 0.0;
    for (const auto& [job, r] : interval.job_cpu_util) den += r * overlap_fraction(interval, job);
    return den;
}

}  // namespace

Energy cpu_share(const TelemetryInterval& interval, const std::string& job_id) {
    auto it = interval.job_cpu_util.find(job_id);
    const double r = it == interval.job_cpu_util.end() ? 0.0 : it->second;
    const double num = r * overlap_fraction(interval, job_id);
    if (num == 0.0) return Energy{};
    const double den = weighted_cpu_denominator(interval);
    if (!(den > 0.0)) {
        throw Error(fmt::format("interval {}: job '{}' has CPU usage but the machine total is zero",
                                interval.interval_id(), job_id));
    }
    return interval.e_cpu * (num / den);
}

Overhead overhead(const TelemetryInterval& interval) {
    Overhead o;
    o.raw = interval.e_machine - interval.e_gpu - interval.e_cpu;
    o.clamped = o.raw < Energy{};
    o.value = o.clamped ? Energy{} : o.raw;
    return o;
}

namespace {

double runtime_total(const TelemetryInterval& interval) {
    double total = 0.0;
    for (const auto& [job, t] : interval.job_overlap_s) total += t;
    return total;
}

}  // namespace

Energy overhead_share(const TelemetryInterval& interval, const std::string& job_id) {
    auto it = interval.job_overlap_s.find(job_id);
    if (it == interval.job_overlap_s.end() || it->second <= 0.0) return Energy{};
    const double total = runtime_total(interval);
    return overhead(interval).value * (it->second / total);
}

IntervalAttribution attribute_interval(const TelemetryInterval& interval) {
    IntervalAttribution out;
    auto& diag = out.diagnostics;
    diag.interval_id = interval.interval_id();

    const Overhead oh = overhead(interval);
    diag.raw_overhead = oh.raw;
    diag.clamped = oh.clamped;

    Energy gpu_sum;
    Energy cpu_sum;
    Energy overhead_sum;
    for (const auto& [job, t] : interval.job_overlap_s) {
        if (t <= 0.0) continue;
        EnergyBreakdown b;
        b.job_id = job;
        b.interval_id = diag.interval_id;
        b.machine_id = interval.machine_id;
        b.interval_begin = interval.t_begin;
        b.interval_end = interval.t_end;
        if (auto g = interval.job_gpu_energy.find(job); g != interval.job_gpu_energy.end()) {
            b.gpu = g->second;
        }
        b.cpu = cpu_share(interval, job);
        b.overhead_shared = overhead_share(interval, job);
        b.overhead_full = oh.value;
        b.total_shared = b.gpu + b.cpu + b.overhead_shared;
        b.total_full = b.gpu + b.cpu + b.overhead_full;
        gpu_sum += b.gpu;
        cpu_sum += b.cpu;
        overhead_sum += b.overhead_shared;
        out.breakdowns.push_back(std::move(b));
    }

    const Energy gpu_residual = interval.e_gpu - gpu_sum;
    if (gpu_residual < Energy::joules(-kRelTol * std::max(1.0, interval.e_gpu.in_joules()))) {
        // Per-job GPU energy exceeds the device counter: sensor disagreement.
        diag.clamped = true;
    }
    Energy unattributed = std::max(Energy{}, gpu_residual);
    if (!out.breakdowns.empty() &&
        gpu_residual > Energy::joules(kRelTol * std::max(1.0, interval.e_gpu.in_joules()))) {
        diag.lower_bound = true;
    }
    if (weighted_cpu_denominator(interval) <= 0.0) unattributed += interval.e_cpu;
    if (runtime_total(interval) <= 0.0) unattributed += oh.value;
    diag.unattributed = unattributed;
    return out;
}

Attribution attribute_all(std::span<const TelemetryInterval> telemetry) {
    Attribution all;
    for (const auto& iv : telemetry) {
        auto one = attribute_interval(iv);
        std::move(one.breakdowns.begin(), one.breakdowns.end(), std::back_inserter(all.breakdowns));
        all.diagnostics.push_back(std::move(one.diagnostics));
    }
    return all;
}

std::map<std::string, EnergyTotals> aggregate(std::span<const EnergyBreakdown> breakdowns,
                                              AggregateKey key, std::span<const JobRecord> jobs) {
    std::map<std::string, const JobRecord*> index;
    for (const auto& j : jobs) index.emplace(j.job_id, &j);

    std::map<std::string, EnergyTotals> totals;
    for (const auto& b : breakdowns) {
        auto it = index.find(b.job_id);
        const JobRecord* job = (it == index.end() || it->second->unknown) ? nullptr : it->second;
        std::string k;
        switch (key) {
            case AggregateKey::user: k = job ? job->user : kUnknownJob; break;
            case AggregateKey::project:
                k = !job ? kUnknownJob : job->project ? *job->project : kUnlabeledProject;
                break;
            case AggregateKey::job: k = b.job_id; break;
            case AggregateKey::day: k = format_date(utc_date(b.midpoint())); break;
        }
        auto& t = totals[k];
        t.gpu += b.gpu;
        t.cpu += b.cpu;
        t.overhead_shared += b.overhead_shared;
        t.overhead_full += b.overhead_full;
        t.total_shared += b.total_shared;
        t.total_full += b.total_full;
        ++t.breakdowns;
    }
    return totals;
}

void write_breakdowns(std::ostream& out, std::span<const EnergyBreakdown> breakdowns) {
    for (const auto& b : breakdowns) {
        nlohmann::json o;
        o["job_id"] = b.job_id;
        o["interval_id"] = b.interval_id;
        o["machine_id"] = b.machine_id;
        o["t_begin"] = b.interval_begin;
        o["t_end"] = b.interval_end;
        o["e_gpu_wh"] = b.gpu.in_wh();
        o["e_cpu_wh"] = b.cpu.in_wh();
        o["e_overhead_shared_wh"] = b.overhead_shared.in_wh();
        o["e_overhead_full_wh"] = b.overhead_full.in_wh();
        o["e_total_shared_wh"] = b.total_shared.in_wh();
        o["e_total_full_wh"] = b.total_full.in_wh();
        out << o.dump() << '\n';
    }
}

std::vector<EnergyBreakdown> parse_breakdowns(std::istream& in, const std::string& source) {
    std::vector<EnergyBreakdown> out;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto o = nlohmann::json::parse(text);
            EnergyBreakdown b;
            b.job_id = o.at("job_id").get<std::string>();
            b.interval_id = o.at("interval_id").get<std::string>();
            b.machine_id = o.at("machine_id").get<std::string>();
            b.interval_begin = o.at("t_begin").get<double>();
            b.interval_end = o.at("t_end").get<double>();
            b.gpu = Energy::watt_hours(o.at("e_gpu_wh").get<double>());
            b.cpu = Energy::watt_hours(o.at("e_cpu_wh").get<double>());
            b.overhead_shared = Energy::watt_hours(o.at("e_overhead_shared_wh").get<double>());
            b.overhead_full = Energy::watt_hours(o.at("e_overhead_full_wh").get<double>());
            b.total_shared = b.gpu + b.cpu + b.overhead_shared;
            b.total_full = b.gpu + b.cpu + b.overhead_full;
            out.push_back(std::move(b));
        } catch (const nlohmann::json::exception& e) {
            throw Error(fmt::format("{}:{}: {}", source, line, e.what()));
        }
    }
    return out;
}

std::vector<EnergyBreakdown> load_breakdowns(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(fmt::format("cannot open '{}'", path.string()));
    return parse_breakdowns(in, path.filename().string());
}

}  // namespace greentwin
