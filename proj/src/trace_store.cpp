#include "greentwin/trace_store.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "json.hpp"

namespace greentwin {

using nlohmann::json;

namespace {

[[noreturn]] void field_error(const std::string& source, std::size_t line, std::string_view field,
                              std::string_view what) {
    throw Error(fmt::format("{}:{}: field '{}': {}", source, line, field, what));
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(fmt::format("cannot open '{}'", path.string()));
    return in;
}

bool blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_number(const std::string& cell, const std::string& source, std::size_t line,
                    std::string_view field) {
    try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used != cell.size() || !std::isfinite(v)) throw std::invalid_argument(cell);
        return v;
    } catch (const std::exception&) {
        field_error(source, line, field, fmt::format("not a number: '{}'", cell));
    }
}

struct JsonReader {
    const json& obj;
    const std::string& source;
    std::size_t line;

    const json* find(std::string_view key) const {
        auto it = obj.find(std::string{key});
        if (it == obj.end() || it->is_null()) return nullptr;
        return &*it;
    }
    const json& require(std::string_view key) const {
        const json* v = find(key);
        if (!v) field_error(source, line, key, "missing");
        return *v;
    }
    std::string string(std::string_view key) const {
        const json& v = require(key);
        if (!v.is_string()) field_error(source, line, key, "expected a string");
        return v.get<std::string>();
    }
    double number(std::string_view key) const {
        const json& v = require(key);
        if (!v.is_number()) field_error(source, line, key, "expected a number");
        return v.get<double>();
    }
    std::optional<double> optional_number(std::string_view key) const {
        const json* v = find(key);
        if (!v) return std::nullopt;
        if (!v->is_number()) field_error(source, line, key, "expected a number");
        return v->get<double>();
    }
    double non_negative(const json& sub, std::string_view key, std::string_view path) const {
        auto it = sub.find(std::string{key});
        if (it == sub.end() || it->is_null()) field_error(source, line, path, "missing");
        if (!it->is_number()) field_error(source, line, path, "expected a number");
        const double v = it->get<double>();
        if (!(v >= 0.0)) field_error(source, line, path, "must be >= 0");
        return v;
    }
    std::int64_t count(const json& sub, std::string_view key, std::string_view path) const {
        const double v = non_negative(sub, key, path);
        if (v != std::floor(v)) field_error(source, line, path, "expected an integer");
        return static_cast<std::int64_t>(v);
    }
    std::map<std::string, double> number_map(std::string_view key) const {
        std::map<std::string, double> out;
        const json* v = find(key);
        if (!v) return out;
        if (!v->is_object()) field_error(source, line, key, "expected an object");
        for (const auto& [k, val] : v->items()) {
            const std::string path = fmt::format("{}.{}", key, k);
            if (!val.is_number()) field_error(source, line, path, "expected a number");
            const double d = val.get<double>();
            if (!(d >= 0.0)) field_error(source, line, path, "must be >= 0");
            out.emplace(k, d);
        }
        return out;
    }
};

json parse_json_line(const std::string& text, const std::string& source, std::size_t line) {
    json obj;
    try {
        obj = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(fmt::format("{}:{}: malformed JSON: {}", source, line, e.what()));
    }
    if (!obj.is_object()) throw Error(fmt::format("{}:{}: expected a JSON object", source, line));
    return obj;
}

JobRecord parse_job(const json& obj, const std::string& source, std::size_t line) {
    const JsonReader r{obj, source, line};
    JobRecord job;
    job.job_id = r.string("job_id");
    if (job.job_id.empty()) field_error(source, line, "job_id", "must not be empty");
    job.user = r.string("user");
    if (const json* p = r.find("project")) {
        if (!p->is_string()) field_error(source, line, "project", "expected a string");
        job.project = p->get<std::string>();
    }
    job.submit_time = r.number("submit_time");
    job.start_time = r.optional_number("start_time");
    job.end_time = r.optional_number("end_time");

    const json& req = r.require("requested");
    if (!req.is_object()) field_error(source, line, "requested", "expected an object");
    job.requested.cpus = r.count(req, "cpus", "requested.cpus");
    job.requested.memory_mb = r.count(req, "memory_mb", "requested.memory_mb");
    job.requested.gpus = r.count(req, "gpus", "requested.gpus");
    job.requested.vram_mb = r.count(req, "vram_mb", "requested.vram_mb");
    if (job.requested.memory_mb <= 0) field_error(source, line, "requested.memory_mb", "must be > 0");

    const json& used = r.require("used");
    if (!used.is_object()) field_error(source, line, "used", "expected an object");
    job.used.avg_cpu_cores = r.non_negative(used, "avg_cpu_cores", "used.avg_cpu_cores");
    job.used.peak_memory_mb = r.non_negative(used, "peak_memory_mb", "used.peak_memory_mb");
    job.used.avg_gpu_util = r.non_negative(used, "avg_gpu_util", "used.avg_gpu_util");
    job.used.peak_vram_mb = r.non_negative(used, "peak_vram_mb", "used.peak_vram_mb");
    job.used.runtime_s = r.non_negative(used, "runtime_s", "used.runtime_s");

    if (const json* f = r.find("sustainability_flag")) {
        std::optional<Color> c;
        if (f->is_string()) c = parse_color(f->get<std::string>());
        if (f->is_number_integer()) c = parse_color(std::to_string(f->get<int>()));
        if (!c) field_error(source, line, "sustainability_flag", "expected red, yellow or green");
        job.sustainability_flag = *c;
    }
    job.maxwait_h = r.optional_number("maxwait");
    if (job.maxwait_h && !(*job.maxwait_h > 0.0)) field_error(source, line, "maxwait", "must be > 0");

    job.command = r.string("command");
    job.executable = r.string("executable");
    if (const json* a = r.find("args")) {
        if (!a->is_array()) field_error(source, line, "args", "expected a list of strings");
        for (const auto& item : *a) {
            if (!item.is_string()) field_error(source, line, "args", "expected a list of strings");
            job.args.push_back(item.get<std::string>());
        }
    }
    return job;
}

std::optional<std::string> timestamp_violation(const JobRecord& j) {
    if (j.start_time && *j.start_time < j.submit_time) return "start_time < submit_time";
    if (j.end_time && j.start_time && *j.end_time < *j.start_time) return "end_time < start_time";
    if (j.end_time && *j.end_time < j.submit_time) return "end_time < submit_time";
    return std::nullopt;
}

json job_to_json(const JobRecord& j) {
    json o;
    o["job_id"] = j.job_id;
    o["user"] = j.user;
    o["project"] = j.project ? json(*j.project) : json(nullptr);
    o["submit_time"] = j.submit_time;
    o["start_time"] = j.start_time ? json(*j.start_time) : json(nullptr);
    o["end_time"] = j.end_time ? json(*j.end_time) : json(nullptr);
    o["requested"] = {{"cpus", j.requested.cpus},
                      {"memory_mb", j.requested.memory_mb},
                      {"gpus", j.requested.gpus},
                      {"vram_mb", j.requested.vram_mb}};
    o["used"] = {{"avg_cpu_cores", j.used.avg_cpu_cores},
                 {"peak_memory_mb", j.used.peak_memory_mb},
                 {"avg_gpu_util", j.used.avg_gpu_util},
                 {"peak_vram_mb", j.used.peak_vram_mb},
                 {"runtime_s", j.used.runtime_s}};
    o["sustainability_flag"] = std::string{to_string(j.sustainability_flag)};
    o["maxwait"] = j.maxwait_h ? json(*j.maxwait_h) : json(nullptr);
    o["command"] = j.command;
    o["executable"] = j.executable;
    o["args"] = j.args;
    return o;
}

}  // namespace

double GridMixSample::share_sum() const {
    double s = 0.0;
    for (double v : shares) s += v;
    return s;
}

std::string TelemetryInterval::interval_id() const {
    return fmt::format("{}@{}", machine_id, t_begin);
}

void sort_for_replay(std::vector<JobRecord>& jobs) {
    std::sort(jobs.begin(), jobs.end(), [](const JobRecord& a, const JobRecord& b) {
        if (a.submit_time != b.submit_time) return a.submit_time < b.submit_time;
        return a.job_id < b.job_id;
    });
}

LoadResult<JobRecord> parse_job_trace(std::istream& in, const std::string& source) {
    LoadResult<JobRecord> result;
    std::set<std::string> seen;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (blank(text)) continue;
        JobRecord job = parse_job(parse_json_line(text, source, line), source, line);
        if (!seen.insert(job.job_id).second) {
            field_error(source, line, "job_id", fmt::format("duplicate id '{}'", job.job_id));
        }
        if (auto bad = timestamp_violation(job)) {
            result.rejected.push_back({line, fmt::format("job '{}': {}", job.job_id, *bad)});
            continue;
        }
        result.records.push_back(std::move(job));
    }
    sort_for_replay(result.records);
    return result;
}

LoadResult<JobRecord> load_job_trace(const std::filesystem::path& path) {
    auto in = open_or_throw(path);
    return parse_job_trace(in, path.filename().string());
}

LoadResult<TelemetryInterval> parse_telemetry(std::istream& in, const std::string& source) {
    LoadResult<TelemetryInterval> result;
    std::vector<std::size_t> lines;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (blank(text)) continue;
        const json obj = parse_json_line(text, source, line);
        const JsonReader r{obj, source, line};
        TelemetryInterval iv;
        iv.machine_id = r.string("machine_id");
        iv.t_begin = r.number("t_begin");
        iv.t_end = r.number("t_end");
        if (!(iv.t_end > iv.t_begin)) field_error(source, line, "t_end", "must be > t_begin");
        for (const char* key : {"e_machine_wh", "e_cpu_wh", "e_gpu_wh"}) {
            if (r.number(key) < 0.0) field_error(source, line, key, "negative energy");
        }
        iv.e_machine = Energy::watt_hours(r.number("e_machine_wh"));
        iv.e_cpu = Energy::watt_hours(r.number("e_cpu_wh"));
        iv.e_gpu = Energy::watt_hours(r.number("e_gpu_wh"));
        iv.job_cpu_util = r.number_map("job_cpu_util");
        for (const auto& [job, wh] : r.number_map("job_gpu_energy_wh")) {
            iv.job_gpu_energy.emplace(job, Energy::watt_hours(wh));
        }
        iv.job_overlap_s = r.number_map("job_overlap_s");

        std::optional<std::string> bad;
        for (const auto& [job, t] : iv.job_overlap_s) {
            if (t > iv.length() * (1.0 + 1e-12)) {
                bad = fmt::format("job '{}' overlap {} s exceeds window length {} s", job, t,
                                  iv.length());
                break;
            }
        }
        for (const auto& [job, e] : iv.job_gpu_energy) {
            if (!bad && !iv.job_overlap_s.contains(job))
                bad = fmt::format("job '{}' has GPU energy but no overlap entry", job);
        }
        for (const auto& [job, u] : iv.job_cpu_util) {
            if (!bad && !iv.job_overlap_s.contains(job))
                bad = fmt::format("job '{}' has CPU utilisation but no overlap entry", job);
        }
        if (bad) {
            result.rejected.push_back({line, fmt::format("interval {}: {}", iv.interval_id(), *bad)});
            continue;
        }
        result.records.push_back(std::move(iv));
        lines.push_back(line);
    }

    std::vector<std::size_t> order(result.records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto& recs = result.records;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (recs[a].machine_id != recs[b].machine_id) return recs[a].machine_id < recs[b].machine_id;
        return recs[a].t_begin < recs[b].t_begin;
    });
    for (std::size_t k = 1; k < order.size(); ++k) {
        const auto& prev = recs[order[k - 1]];
        const auto& cur = recs[order[k]];
        if (prev.machine_id == cur.machine_id && cur.t_begin < prev.t_end) {
            throw Error(fmt::format(
                "{}:{}: interval [{}, {}] on machine '{}' overlaps [{}, {}] from line {}", source,
                lines[order[k]], cur.t_begin, cur.t_end, cur.machine_id, prev.t_begin, prev.t_end,
                lines[order[k - 1]]));
        }
    }
    std::sort(recs.begin(), recs.end(), [](const TelemetryInterval& a, const TelemetryInterval& b) {
        if (a.t_begin != b.t_begin) return a.t_begin < b.t_begin;
        return a.machine_id < b.machine_id;
    });
    return result;
}

LoadResult<TelemetryInterval> load_telemetry(const std::filesystem::path& path) {
    auto in = open_or_throw(path);
    return parse_telemetry(in, path.filename().string());
}

GridSeries::GridSeries(std::vector<GridMixSample> samples) : samples_(std::move(samples)) {
    double res = 0.0;
    for (std::size_t i = 1; i < samples_.size(); ++i) {
        const double gap = samples_[i].timestamp - samples_[i - 1].timestamp;
        if (!(gap > 0.0)) throw Error("grid samples must have strictly increasing timestamps");
        if (res == 0.0 || gap < res) res = gap;
    }
    resolution_ = res > 0.0 ? res : 3600.0;
}

Timestamp GridSeries::covered_until(std::size_t i) const {
    const Timestamp t = samples_[i].timestamp;
    if (i + 1 < samples_.size()) {
        const Timestamp next = samples_[i + 1].timestamp;
        if (next - t <= 2.0 * resolution_) return next;
    }
    return t + resolution_;
}

Timestamp GridSeries::begin() const { return samples_.empty() ? 0.0 : samples_.front().timestamp; }
Timestamp GridSeries::end() const { return samples_.empty() ? 0.0 : covered_until(samples_.size() - 1); }

const GridMixSample* GridSeries::at(Timestamp t) const {
    auto it = std::upper_bound(samples_.begin(), samples_.end(), t,
                               [](Timestamp v, const GridMixSample& s) { return v < s.timestamp; });
    if (it == samples_.begin()) return nullptr;
    const std::size_t i = static_cast<std::size_t>(std::distance(samples_.begin(), it)) - 1;
    return t < covered_until(i) ? &samples_[i] : nullptr;
}

std::optional<std::pair<Timestamp, Timestamp>> GridSeries::first_gap(Timestamp from,
                                                                     Timestamp to) const {
    if (!(to > from)) return std::nullopt;
    if (samples_.empty()) return std::pair{from, to};
    if (from < samples_.front().timestamp) {
        return std::pair{from, std::min(to, samples_.front().timestamp)};
    }
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        const Timestamp until = covered_until(i);
        const Timestamp next = i + 1 < samples_.size() ? samples_[i + 1].timestamp : to;
        if (until < next && until < to && next > from) {
            return std::pair{std::max(from, until), std::min(to, next)};
        }
        if (next >= to) break;
    }
    return std::nullopt;
}

GridSeries parse_grid_history(std::istream& in, const std::string& source) {
    std::string text;
    std::size_t line = 0;
    std::vector<std::string> header;
    while (header.empty() && std::getline(in, text)) {
        ++line;
        if (!blank(text)) header = split_csv(text);
    }
    if (header.empty()) return GridSeries{};

    std::vector<std::string> expected{"timestamp"};
    expected.insert(expected.end(), kGridSources.begin(), kGridSources.end());
    expected.emplace_back("renewable_share_of_load");
    if (header != expected) {
        throw Error(fmt::format("{}:{}: header must be '{}'", source, line,
                                fmt::join(expected, ",")));
    }

    std::vector<GridMixSample> samples;
    while (std::getline(in, text)) {
        ++line;
        if (blank(text)) continue;
        const auto cells = split_csv(text);
        if (cells.size() != expected.size()) {
            throw Error(fmt::format("{}:{}: expected {} columns, found {}", source, line,
                                    expected.size(), cells.size()));
        }
        GridMixSample s;
        s.timestamp = parse_number(cells[0], source, line, "timestamp");
        for (std::size_t k = 0; k < kGridSources.size(); ++k) {
            const double v = parse_number(cells[k + 1], source, line, kGridSources[k]);
            if (!(v >= 0.0 && v <= 1.0)) field_error(source, line, kGridSources[k], "share outside [0, 1]");
            s.shares[k] = v;
        }
        s.renewable_share_of_load =
            parse_number(cells.back(), source, line, "renewable_share_of_load");
        if (!(s.renewable_share_of_load >= 0.0)) {
            field_error(source, line, "renewable_share_of_load", "must be >= 0");
        }
        if (s.share_sum() > 1.0 + 1e-6) {
            throw Error(fmt::format("{}:{}: generation shares sum to {} > 1", source, line,
                                    s.share_sum()));
        }
        if (!samples.empty() && !(s.timestamp > samples.back().timestamp)) {
            field_error(source, line, "timestamp", "timestamps must be strictly increasing");
        }
        samples.push_back(s);
    }
    return GridSeries{std::move(samples)};
}

GridSeries load_grid_history(const std::filesystem::path& path) {
    auto in = open_or_throw(path);
    return parse_grid_history(in, path.filename().string());
}

EmissionFactorTable parse_emission_factors(std::istream& in, const std::string& source) {
    EmissionFactorTable table;
    std::string text;
    std::size_t line = 0;
    bool header_seen = false;
    while (std::getline(in, text)) {
        ++line;
        if (blank(text)) continue;
        const auto cells = split_csv(text);
        if (!header_seen) {
            if (cells != std::vector<std::string>{"source", "gco2e_per_kwh"}) {
                throw Error(fmt::format("{}:{}: header must be 'source,gco2e_per_kwh'", source, line));
            }
            header_seen = true;
            continue;
        }
        if (cells.size() != 2) throw Error(fmt::format("{}:{}: expected 2 columns", source, line));
        const double v = parse_number(cells[1], source, line, "gco2e_per_kwh");
        if (v < 0.0) field_error(source, line, "gco2e_per_kwh", "must be >= 0");
        if (!table.emplace(cells[0], v).second) {
            field_error(source, line, "source", fmt::format("duplicate source '{}'", cells[0]));
        }
    }
    return table;
}

EmissionFactorTable load_emission_factors(const std::filesystem::path& path) {
    auto in = open_or_throw(path);
    return parse_emission_factors(in, path.filename().string());
}

std::vector<GpuUtilSample> parse_gpu_samples(std::istream& in, const std::string& source) {
    std::vector<GpuUtilSample> out;
    std::string text;
    std::size_t line = 0;
    bool header_seen = false;
    while (std::getline(in, text)) {
        ++line;
        if (blank(text)) continue;
        const auto cells = split_csv(text);
        if (!header_seen) {
            if (cells != std::vector<std::string>{"timestamp", "job_id", "sm_util", "gpu_power_w"}) {
                throw Error(fmt::format("{}:{}: header must be 'timestamp,job_id,sm_util,gpu_power_w'",
                                        source, line));
            }
            header_seen = true;
            continue;
        }
        if (cells.size() != 4) throw Error(fmt::format("{}:{}: expected 4 columns", source, line));
        GpuUtilSample s;
        s.timestamp = parse_number(cells[0], source, line, "timestamp");
        s.job_id = cells[1];
        s.sm_util = parse_number(cells[2], source, line, "sm_util");
        s.gpu_power_w = parse_number(cells[3], source, line, "gpu_power_w");
        if (!(s.sm_util >= 0.0 && s.sm_util <= 1.0)) field_error(source, line, "sm_util", "outside [0, 1]");
        if (s.gpu_power_w < 0.0) field_error(source, line, "gpu_power_w", "must be >= 0");
        out.push_back(std::move(s));
    }
    return out;
}

void check_factor_coverage(const GridSeries& grid, const EmissionFactorTable& factors) {
    for (const auto& s : grid.samples()) {
        for (std::size_t k = 0; k < kGridSources.size(); ++k) {
            if (s.shares[k] > 0.0 && !factors.contains(kGridSources[k])) {
                throw Error(fmt::format("no emission factor for source '{}' (share {} at t={})",
                                        kGridSources[k], s.shares[k], s.timestamp));
            }
        }
    }
}

void write_job_trace(std::ostream& out, const std::vector<JobRecord>& jobs) {
    for (const auto& j : jobs) {
        if (j.unknown) continue;
        out << job_to_json(j).dump() << '\n';
    }
}

void write_telemetry(std::ostream& out, const std::vector<TelemetryInterval>& intervals) {
    for (const auto& iv : intervals) {
        json o;
        o["machine_id"] = iv.machine_id;
        o["t_begin"] = iv.t_begin;
        o["t_end"] = iv.t_end;
        o["e_machine_wh"] = iv.e_machine.in_wh();
        o["e_cpu_wh"] = iv.e_cpu.in_wh();
        o["e_gpu_wh"] = iv.e_gpu.in_wh();
        o["job_cpu_util"] = iv.job_cpu_util;
        json gpu = json::object();
        for (const auto& [job, e] : iv.job_gpu_energy) gpu[job] = e.in_wh();
        o["job_gpu_energy_wh"] = gpu;
        o["job_overlap_s"] = iv.job_overlap_s;
        out << o.dump() << '\n';
    }
}

void write_grid_history(std::ostream& out, const GridSeries& grid) {
    out << "timestamp";
    for (const char* s : kGridSources) out << ',' << s;
    out << ",renewable_share_of_load\n";
    for (const auto& s : grid.samples()) {
        out << fmt::format("{}", s.timestamp);
        for (double v : s.shares) out << fmt::format(",{}", v);
        out << fmt::format(",{}\n", s.renewable_share_of_load);
    }
}

void write_emission_factors(std::ostream& out, const EmissionFactorTable& factors) {
    out << "source,gco2e_per_kwh\n";
    for (const auto& [source, g] : factors) out << fmt::format("{},{}\n", source, g);
}

std::vector<std::string> dangling_job_refs(const std::vector<JobRecord>& jobs,
                                           const std::vector<TelemetryInterval>& telemetry) {
    std::set<std::string> known;
    for (const auto& j : jobs) known.insert(j.job_id);
    std::set<std::string> dangling;
    for (const auto& iv : telemetry) {
        for (const auto& [job, t] : iv.job_overlap_s) {
            if (!known.contains(job)) dangling.insert(job);
        }
    }
    return {dangling.begin(), dangling.end()};
}

std::vector<JobRecord> with_unknown_jobs(std::vector<JobRecord> jobs,
                                         const std::vector<TelemetryInterval>& telemetry) {
    for (const auto& id : dangling_job_refs(jobs, telemetry)) {
        JobRecord pseudo;
        pseudo.job_id = id;
        pseudo.user = "unknown";
        pseudo.unknown = true;
        jobs.push_back(std::move(pseudo));
    }
    return jobs;
}

}  // namespace greentwin
