#include "greentwin/cluster_twin.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <queue>
#include <set>
#include <sstream>
#include <tuple>
#include <variant>

#include <fmt/format.h>

#include "greentwin/time_util.hpp"
#include "json.hpp"

namespace greentwin {

std::string_view to_string(MeasureCMode mode) {
    switch (mode) {
        case MeasureCMode::off: return "off";
        case MeasureCMode::strict_green: return "strict_green";
        case MeasureCMode::flag_with_maxwait: return "flag_with_maxwait";
    }
    return "off";
}

std::optional<MeasureCMode> parse_measure_c_mode(std::string_view text) {
    if (text == "off") return MeasureCMode::off;
    if (text == "strict_green") return MeasureCMode::strict_green;
    if (text == "flag_with_maxwait") return MeasureCMode::flag_with_maxwait;
    return std::nullopt;
}

std::string_view to_string(EventKind kind) {
    switch (kind) {
        case EventKind::job_finish: return "job_finish";
        case EventKind::light_change: return "light_change";
        case EventKind::job_submit: return "job_submit";
        case EventKind::shutdown_check: return "shutdown_check";
        case EventKind::negotiation_cycle: return "negotiation_cycle";
    }
    return "?";
}

void ScenarioConfig::validate() const {
    const std::pair<const char*, double> positive[] = {
        {"negotiation_cycle_s", negotiation_cycle_s},
        {"shutdown_idle_s", shutdown_idle_s},
        {"shutdown_check_s", shutdown_check_s},
        {"integration_step_s", integration_step_s},
    };
    for (const auto& [name, v] : positive) {
        if (!(v > 0.0)) throw Error(fmt::format("scenario: '{}' must be > 0", name));
    }
    if (!(wake_latency_s >= 0.0)) throw Error("scenario: 'wake_latency_s' must be >= 0");
    if (!(time_acceleration >= 1.0)) throw Error("scenario: 'time_acceleration' must be >= 1");
    if (horizon_s && !(*horizon_s > 0.0)) throw Error("scenario: 'horizon_s' must be > 0");
    if (machines.empty()) throw Error("scenario: no machines");
    std::set<std::string> ids;
    for (const auto& m : machines) {
        if (m.machine_id.empty()) throw Error("scenario: machine without id");
        if (!ids.insert(m.machine_id).second) {
            throw Error(fmt::format("scenario: duplicate machine '{}'", m.machine_id));
        }
        if (!m.capacity.non_negative()) {
            throw Error(fmt::format("scenario: machine '{}' has negative capacity", m.machine_id));
        }
    }
}

std::string ScenarioConfig::label() const {
    std::string out;
    auto add = [&](const char* s) {
        if (!out.empty()) out += '+';
        out += s;
    };
    if (measure_a) add("A");
    if (measure_b) add("B");
    if (measure_c_mode != MeasureCMode::off) add("C");
    return out.empty() ? "baseline" : out;
}

void set_measures(ScenarioConfig& config, std::string_view measures, MeasureCMode c_mode) {
    config.measure_a = false;
    config.measure_b = false;
    config.measure_c_mode = MeasureCMode::off;
    if (measures.empty() || measures == "none") return;
    std::size_t pos = 0;
    while (pos <= measures.size()) {
        const auto comma = measures.find(',', pos);
        auto token = measures.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
        if (token == "a" || token == "A") {
            config.measure_a = true;
        } else if (token == "b" || token == "B") {
            config.measure_b = true;
        } else if (token == "c" || token == "C") {
            config.measure_c_mode = c_mode == MeasureCMode::off ? MeasureCMode::strict_green : c_mode;
        } else {
            throw Error(fmt::format("unknown measure '{}' (expected a, b, c)", token));
        }
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
}

// --- scenario.toml -----------------------------------------------------------

namespace {

using TomlValue = std::variant<std::string, double, bool>;

struct TomlTable {
    std::size_t line = 0;
    std::map<std::string, std::pair<TomlValue, std::size_t>> values;
};

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return std::string(s.substr(b, e - b + 1));
}

std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
        if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
}

TomlValue parse_toml_value(const std::string& text, const std::string& where) {
    if (text.size() >= 2 && text.front() == '"' && text.back() == '"') {
        return text.substr(1, text.size() - 2);
    }
    if (text == "true") return true;
    if (text == "false") return false;
    std::string digits;
    for (char c : text) {
        if (c != '_') digits += c;
    }
    try {
        std::size_t used = 0;
        const double v = std::stod(digits, &used);
        if (used == digits.size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(fmt::format("{}: cannot parse value '{}'", where, text));
}

struct TomlReader {
    const TomlTable& table;
    const std::string& source;
    std::set<std::string> seen;

    template <class T>
    std::optional<T> get(const std::string& key) {
        auto it = table.values.find(key);
        if (it == table.values.end()) return std::nullopt;
        seen.insert(key);
        const auto* v = std::get_if<T>(&it->second.first);
        if (!v) {
            throw Error(fmt::format("{}:{}: field '{}': wrong type", source, it->second.second, key));
        }
        return *v;
    }

    std::optional<std::int64_t> get_int(const std::string& key) {
        auto v = get<double>(key);
        if (!v) return std::nullopt;
        if (std::floor(*v) != *v) {
            throw Error(fmt::format("{}:{}: field '{}': expected an integer", source,
                                    table.values.at(key).second, key));
        }
        return static_cast<std::int64_t>(*v);
    }

    void reject_unknown() const {
        for (const auto& [key, value] : table.values) {
            if (!seen.contains(key)) {
                throw Error(fmt::format("{}:{}: unknown field '{}'", source, value.second, key));
            }
        }
    }
};

}  // namespace

ScenarioConfig parse_scenario_config(std::istream& in, const std::string& source) {
    TomlTable scenario;
    std::vector<TomlTable> machines;
    TomlTable* current = nullptr;
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const std::string text = trim(strip_comment(raw));
        if (text.empty()) continue;
        if (text == "[scenario]") {
            current = &scenario;
            scenario.line = line;
            continue;
        }
        if (text == "[[machine]]") {
            machines.push_back({line, {}});
            current = &machines.back();
            continue;
        }
        if (text.front() == '[') throw Error(fmt::format("{}:{}: unknown table {}", source, line, text));
        const auto eq = text.find('=');
        if (eq == std::string::npos) throw Error(fmt::format("{}:{}: expected key = value", source, line));
        if (!current) throw Error(fmt::format("{}:{}: key outside of a table", source, line));
        const std::string key = trim(std::string_view(text).substr(0, eq));
        const std::string value = trim(std::string_view(text).substr(eq + 1));
        const std::string where = fmt::format("{}:{}", source, line);
        if (!current->values.emplace(key, std::pair{parse_toml_value(value, where), line}).second) {
            throw Error(fmt::format("{}: duplicate field '{}'", where, key));
        }
    }

    ScenarioConfig config;
    TomlReader r{scenario, source, {}};
    if (auto v = r.get<std::string>("name")) config.name = *v;
    if (auto v = r.get<bool>("measure_a")) config.measure_a = *v;
    if (auto v = r.get<bool>("measure_b")) config.measure_b = *v;
    if (auto v = r.get<std::string>("measure_c_mode")) {
        auto mode = parse_measure_c_mode(*v);
        if (!mode) {
            throw Error(fmt::format("{}: field 'measure_c_mode': expected off, strict_green or "
                                    "flag_with_maxwait, got '{}'", source, *v));
        }
        config.measure_c_mode = *mode;
    }
    if (auto v = r.get<double>("negotiation_cycle_s")) config.negotiation_cycle_s = *v;
    if (auto v = r.get<double>("shutdown_idle_s")) config.shutdown_idle_s = *v;
    if (auto v = r.get<double>("shutdown_check_s")) config.shutdown_check_s = *v;
    if (auto v = r.get<double>("wake_latency_s")) config.wake_latency_s = *v;
    if (auto v = r.get<double>("time_acceleration")) config.time_acceleration = *v;
    if (auto v = r.get<double>("integration_step_s")) config.integration_step_s = *v;
    if (auto v = r.get<double>("horizon_s")) config.horizon_s = *v;
    if (auto v = r.get_int("seed")) config.seed = static_cast<std::uint64_t>(*v);
    if (auto it = scenario.values.find("start"); it != scenario.values.end()) {
        if (const auto* date = std::get_if<std::string>(&it->second.first)) {
            config.start = midnight_utc(parse_date(*date));
            r.seen.insert("start");
        } else {
            config.start = r.get<double>("start");
        }
    }
    r.reject_unknown();

    for (const auto& table : machines) {
        TomlReader m{table, source, {}};
        MachineSpec spec;
        auto id = m.get<std::string>("id");
        if (!id) throw Error(fmt::format("{}:{}: machine without 'id'", source, table.line));
        spec.machine_id = *id;
        spec.capacity.cpus = m.get_int("cpus").value_or(0);
        spec.capacity.memory_mb = m.get_int("memory_mb").value_or(0);
        spec.capacity.gpus = m.get_int("gpus").value_or(0);
        spec.capacity.vram_mb = m.get_int("vram_mb").value_or(0);
        m.reject_unknown();
        config.machines.push_back(std::move(spec));
    }
    config.validate();
    return config;
}

ScenarioConfig load_scenario_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(fmt::format("cannot open '{}'", path.string()));
    return parse_scenario_config(in, path.filename().string());
}

void write_scenario_config(std::ostream& out, const ScenarioConfig& c) {
    out << "[scenario]\n";
    out << fmt::format("name = \"{}\"\n", c.name);
    out << fmt::format("measure_a = {}\n", c.measure_a);
    out << fmt::format("measure_b = {}\n", c.measure_b);
    out << fmt::format("measure_c_mode = \"{}\"\n", to_string(c.measure_c_mode));
    out << fmt::format("negotiation_cycle_s = {}\n", c.negotiation_cycle_s);
    out << fmt::format("shutdown_idle_s = {}\n", c.shutdown_idle_s);
    out << fmt::format("shutdown_check_s = {}\n", c.shutdown_check_s);
    out << fmt::format("wake_latency_s = {}\n", c.wake_latency_s);
    out << fmt::format("time_acceleration = {}\n", c.time_acceleration);
    out << fmt::format("integration_step_s = {}\n", c.integration_step_s);
    if (c.start) out << fmt::format("start = {}\n", *c.start);
    if (c.horizon_s) out << fmt::format("horizon_s = {}\n", *c.horizon_s);
    out << fmt::format("seed = {}\n", c.seed);
    for (const auto& m : c.machines) {
        out << fmt::format("\n[[machine]]\nid = \"{}\"\ncpus = {}\nmemory_mb = {}\ngpus = {}\nvram_mb = {}\n",
                           m.machine_id, m.capacity.cpus, m.capacity.memory_mb, m.capacity.gpus,
                           m.capacity.vram_mb);
    }
}

// --- matchmaking -------------------------------------------------------------

JobRecord apply_measure_a(JobRecord job) {
    const auto& u = job.used;
    job.requested.cpus = static_cast<std::int64_t>(std::ceil(u.avg_cpu_cores));
    job.requested.memory_mb = static_cast<std::int64_t>(std::ceil(u.peak_memory_mb));
    job.requested.gpus = static_cast<std::int64_t>(std::ceil(u.avg_gpu_util));
    job.requested.vram_mb = static_cast<std::int64_t>(std::ceil(u.peak_vram_mb));
    return job;
}

ResourceVector MachineState::free() const {
    ResourceVector f = spec.capacity;
    f -= reserved;
    return f;
}

Color effective_flag(const JobRecord& job, Timestamp t, MeasureCMode mode) {
    switch (mode) {
        case MeasureCMode::off: return Color::red;
        case MeasureCMode::strict_green: return Color::green;
        case MeasureCMode::flag_with_maxwait:
            if (job.maxwait_h && t - job.submit_time > *job.maxwait_h * 3600.0) return Color::red;
            return job.sustainability_flag;
    }
    return Color::red;
}

namespace {

double residual_after(const MachineState& m, const ResourceVector& request) {
    const auto& cap = m.spec.capacity;
    const auto free = m.free();
    const std::int64_t caps[] = {cap.cpus, cap.memory_mb, cap.gpus, cap.vram_mb};
    const std::int64_t left[] = {free.cpus - request.cpus, free.memory_mb - request.memory_mb,
                                 free.gpus - request.gpus, free.vram_mb - request.vram_mb};
    double r = 0.0;
    for (int k = 0; k < 4; ++k) {
        if (caps[k] > 0) r += static_cast<double>(left[k]) / static_cast<double>(caps[k]);
    }
    return r;
}

}  // namespace

std::optional<std::size_t> matchmake(const JobRecord& job, std::span<const MachineState> machines,
                                     Timestamp t, MeasureCMode mode, bool allow_suspended) {
    const Color need = effective_flag(job, t, mode);
    std::optional<std::size_t> best;
    double best_residual = 0.0;
    for (std::size_t i = 0; i < machines.size(); ++i) {
        const auto& m = machines[i];
        if (m.power_state == PowerState::suspended && !allow_suspended) continue;
        if (need > m.current_light) continue;
        if (!(m.reserved + job.requested).fits_within(m.spec.capacity)) continue;
        const double r = residual_after(m, job.requested);
        if (!best || r < best_residual ||
            (r == best_residual && m.spec.machine_id < machines[*best].spec.machine_id)) {
            best = i;
            best_residual = r;
        }
    }
    return best;
}

void write_events(std::ostream& out, std::span<const LoggedEvent> events) {
    for (const auto& e : events) {
        nlohmann::ordered_json o;
        o["time"] = e.time;
        o["kind"] = e.kind;
        if (!e.job_id.empty()) o["job_id"] = e.job_id;
        if (!e.machine_id.empty()) o["machine_id"] = e.machine_id;
        if (!e.detail.empty()) o["detail"] = e.detail;
        out << o.dump() << '\n';
    }
}

// --- event loop ----------------------------------------------------------------

namespace {

struct QueuedEvent {
    Timestamp time;
    EventKind kind;
    std::uint64_t seq;
    std::size_t payload;

    bool operator>(const QueuedEvent& o) const {
        return std::tie(time, kind, seq) > std::tie(o.time, o.kind, o.seq);
    }
};

Duration runtime_of(const JobRecord& job) {
    if (job.used.runtime_s > 0.0) return job.used.runtime_s;
    if (job.start_time && job.end_time) return *job.end_time - *job.start_time;
    return 0.0;
}

class Twin {
public:
    Twin(const ScenarioConfig& config, const TwinInputs& inputs) : config_(config), statuses_(inputs.statuses) {
        config_.validate();
        jobs_.assign(inputs.jobs.begin(), inputs.jobs.end());
        sort_for_replay(jobs_);
        if (config_.measure_a) {
            for (auto& j : jobs_) j = apply_measure_a(std::move(j));
        }
        auto specs = config_.machines;
        std::sort(specs.begin(), specs.end(),
                  [](const auto& a, const auto& b) { return a.machine_id < b.machine_id; });
        for (auto& s : specs) {
            MachineState m;
            m.spec = std::move(s);
            machines_.push_back(std::move(m));
        }
        wake_done_.assign(machines_.size(), -std::numeric_limits<double>::infinity());
        state_since_.assign(machines_.size(), 0.0);
        peak_.assign(machines_.size(), 0);

        Timestamp first = jobs_.empty() ? 0.0 : jobs_.front().submit_time;
        if (jobs_.empty() && !statuses_.empty()) first = statuses_.front().valid_from;
        start_ = config_.start.value_or(floor_to_grid(first, config_.negotiation_cycle_s));
        if (config_.horizon_s) {
            end_ = start_ + *config_.horizon_s;
            fixed_end_ = true;
        } else {
            Timestamp last = start_;
            if (!jobs_.empty()) last = std::max(last, jobs_.back().submit_time);
            if (!statuses_.empty()) last = std::max(last, statuses_.back().valid_to);
            end_ = last + 30.0 * 86400.0;
        }
    }

    SimulationResult run() {
        result_.label = config_.label();
        result_.config = config_;
        for (std::size_t i = 0; i < jobs_.size(); ++i) push(jobs_[i].submit_time, EventKind::job_submit, i);
        pending_submits_ = jobs_.size();
        push(start_, EventKind::negotiation_cycle, 0);
        if (config_.measure_b) push(start_, EventKind::shutdown_check, 0);
        const Color initial = machine_status_at(start_, statuses_);
        for (std::size_t m = 0; m < machines_.size(); ++m) {
            machines_[m].current_light = initial;
            state_since_[m] = start_;
        }
        last_light_ = initial;
        log(start_, "light_change", "", "", std::string{to_string(initial)});
        const Timestamp next_light = floor_to_grid(start_, kMachineUpdatePeriod) + kMachineUpdatePeriod;
        if (next_light < end_) push(next_light, EventKind::light_change, 0);

        Timestamp finished_at = start_;
        while (!events_.empty()) {
            const QueuedEvent e = events_.top();
            if (e.time >= end_) break;
            events_.pop();
            switch (e.kind) {
                case EventKind::job_submit: on_submit(e); break;
                case EventKind::job_finish: on_finish(e); break;
                case EventKind::negotiation_cycle: on_cycle(e); break;
                case EventKind::shutdown_check: on_shutdown_check(e); break;
                case EventKind::light_change: on_light_change(e); break;
            }
            if (!fixed_end_ && pending_submits_ == 0 && queue_.empty() && running_ == 0) {
                finished_at = e.time;
                break;
            }
        }
        if (!fixed_end_) {
            const Duration step = config_.integration_step_s;
            const double steps = std::max(1.0, std::ceil((finished_at - start_) / step));
            end_ = start_ + steps * step;
        }
        finish();
        return std::move(result_);
    }

private:
    void push(Timestamp t, EventKind kind, std::size_t payload) {
        events_.push({t, kind, seq_++, payload});
    }

    void log(Timestamp t, std::string kind, std::string job, std::string machine, std::string detail = {}) {
        result_.events.push_back({t, std::move(kind), std::move(job), std::move(machine), std::move(detail)});
    }

    void set_power_state(std::size_t m, PowerState state, Timestamp t) {
        auto& machine = machines_[m];
        if (machine.power_state == state) return;
        if (t > state_since_[m]) {
            result_.power_states.push_back({machine.spec.machine_id, machine.power_state, state_since_[m], t});
        }
        machine.power_state = state;
        state_since_[m] = t;
        log(t, state == PowerState::on ? "machine_wake" : "machine_suspend", "", machine.spec.machine_id);
    }

    void on_submit(const QueuedEvent& e) {
        --pending_submits_;
        const auto& job = jobs_[e.payload];
        log(e.time, "job_submit", job.job_id, "");
        const bool feasible = std::any_of(machines_.begin(), machines_.end(), [&](const MachineState& m) {
            return job.requested.fits_within(m.spec.capacity);
        });
        if (!feasible || !job.requested.non_negative()) {
            result_.infeasible.push_back(job.job_id);
            log(e.time, "job_infeasible", job.job_id, "");
            return;
        }
        queue_.push_back(e.payload);
    }

    void on_finish(const QueuedEvent& e) {
        const std::size_t outcome_index = e.payload;
        const auto& outcome = outcomes_[outcome_index];
        auto& m = machines_[machine_of_[outcome_index]];
        auto it = std::find_if(m.running.begin(), m.running.end(),
                               [&](const RunningJob& r) { return r.job_id == outcome.job_id; });
        m.reserved -= it->reserved;
        m.running.erase(it);
        --running_;
        log(e.time, "job_finish", outcome.job_id, m.spec.machine_id);
    }

    void on_cycle(const QueuedEvent& e) {
        const Timestamp t = e.time;
        using Key = std::tuple<std::int64_t, std::int64_t, std::int64_t, std::int64_t, Color>;
        std::set<Key> failed;
        std::vector<std::size_t> still_queued;
        still_queued.reserve(queue_.size());
        for (std::size_t q : queue_) {
            const auto& job = jobs_[q];
            const Key key{job.requested.cpus, job.requested.memory_mb, job.requested.gpus,
                          job.requested.vram_mb, effective_flag(job, t, config_.measure_c_mode)};
            if (failed.contains(key)) {
                still_queued.push_back(q);
                continue;
            }
            auto m = matchmake(job, machines_, t, config_.measure_c_mode, config_.measure_b && light_holds_after_wake(job, t));
            if (!m) {
                failed.insert(key);
                still_queued.push_back(q);
                continue;
            }
            assign(q, *m, t);
        }
        queue_ = std::move(still_queued);
        const Timestamp next = t + config_.negotiation_cycle_s;
        if (next < end_) push(next, EventKind::negotiation_cycle, 0);
    }

    // A job sent to a suspended machine starts only once the wake completes;
    // the forecast light must still admit it then.
    bool light_holds_after_wake(const JobRecord& job, Timestamp t) const {
        if (config_.wake_latency_s <= 0.0) return true;
        const Timestamp begin = t + config_.wake_latency_s;
        return effective_flag(job, begin, config_.measure_c_mode) <= machine_status_at(begin, statuses_);
    }

    void assign(std::size_t q, std::size_t m, Timestamp t) {
        const auto& job = jobs_[q];
        auto& machine = machines_[m];
        if (machine.power_state == PowerState::suspended) {
            set_power_state(m, PowerState::on, t);
            wake_done_[m] = t + config_.wake_latency_s;
        }
        const Timestamp begin = std::max(t, wake_done_[m]);
        machine.reserved += job.requested;
        machine.running.push_back({job.job_id, job.requested});
        machine.last_assignment_time = t;
        peak_[m] = std::max(peak_[m], machine.running.size());
        ++running_;

        JobOutcome o;
        o.job_id = job.job_id;
        o.machine_id = machine.spec.machine_id;
        o.submit_time = job.submit_time;
        o.start_time = begin;
        o.end_time = begin + runtime_of(job);
        o.reserved = job.requested;
        o.used = job.used;
        outcomes_.push_back(o);
        machine_of_.push_back(m);
        log(t, "job_match", job.job_id, machine.spec.machine_id, fmt::format("start={}", begin));
        push(o.end_time, EventKind::job_finish, outcomes_.size() - 1);
    }

    void on_shutdown_check(const QueuedEvent& e) {
        const Timestamp t = e.time;
        for (std::size_t m = 0; m < machines_.size(); ++m) {
            const auto& machine = machines_[m];
            if (machine.power_state == PowerState::on && machine.running.empty() &&
                t - machine.last_assignment_time >= config_.shutdown_idle_s) {
                set_power_state(m, PowerState::suspended, t);
            }
        }
        const Timestamp next = t + config_.shutdown_check_s;
        if (next < end_) push(next, EventKind::shutdown_check, 0);
    }

    void on_light_change(const QueuedEvent& e) {
        const Color c = machine_status_at(e.time, statuses_);
        for (auto& m : machines_) m.current_light = c;
        if (c != last_light_) {
            log(e.time, "light_change", "", "", std::string{to_string(c)});
            last_light_ = c;
        }
        const Timestamp next = e.time + kMachineUpdatePeriod;
        if (next < end_) push(next, EventKind::light_change, 0);
    }

    void finish() {
        result_.start = start_;
        result_.end = end_;
        for (std::size_t m = 0; m < machines_.size(); ++m) {
            if (end_ > state_since_[m]) {
                result_.power_states.push_back(
                    {machines_[m].spec.machine_id, machines_[m].power_state, state_since_[m], end_});
            }
            result_.peak_concurrency[machines_[m].spec.machine_id] = peak_[m];
        }
        std::sort(result_.power_states.begin(), result_.power_states.end(), [](const auto& a, const auto& b) {
            return std::tie(a.machine_id, a.from) < std::tie(b.machine_id, b.from);
        });
        for (std::size_t q : queue_) result_.unstarted.push_back(jobs_[q].job_id);
        std::sort(result_.unstarted.begin(), result_.unstarted.end());
        std::sort(result_.infeasible.begin(), result_.infeasible.end());
        result_.started = std::move(outcomes_);
        std::sort(result_.started.begin(), result_.started.end(),
                  [](const auto& a, const auto& b) { return a.job_id < b.job_id; });
        result_.occupancy = build_occupancy(config_, start_, end_, result_.started, result_.power_states);
    }

    ScenarioConfig config_;
    std::span<const TrafficLightStatus> statuses_;
    std::vector<JobRecord> jobs_;
    std::vector<MachineState> machines_;
    std::vector<Timestamp> wake_done_;
    std::vector<Timestamp> state_since_;
    std::vector<std::size_t> peak_;
    std::vector<std::size_t> queue_;
    std::vector<JobOutcome> outcomes_;
    std::vector<std::size_t> machine_of_;
    std::priority_queue<QueuedEvent, std::vector<QueuedEvent>, std::greater<>> events_;
    std::uint64_t seq_ = 0;
    std::size_t pending_submits_ = 0;
    std::size_t running_ = 0;
    Color last_light_ = Color::red;
    Timestamp start_ = 0.0;
    Timestamp end_ = 0.0;
    bool fixed_end_ = false;
    SimulationResult result_;
};

}  // namespace

SimulationResult run_scenario(const ScenarioConfig& config, const TwinInputs& inputs) {
    return Twin(config, inputs).run();
}

OccupancyTrace build_occupancy(const ScenarioConfig& config, Timestamp start, Timestamp end,
                               std::span<const JobOutcome> started,
                               std::span<const PowerStateSpan> power_states) {
    OccupancyTrace trace;
    trace.start = start;
    trace.acceleration = config.time_acceleration;
    trace.step_s = config.integration_step_s / config.time_acceleration;
    const Duration step = config.integration_step_s;
    const auto n = static_cast<std::size_t>(std::max(0.0, std::ceil((end - start) / step)));

    std::map<std::string, std::vector<const JobOutcome*>> by_machine;
    for (const auto& o : started) by_machine[o.machine_id].push_back(&o);
    std::map<std::string, std::vector<const PowerStateSpan*>> spans;
    for (const auto& s : power_states) spans[s.machine_id].push_back(&s);

    std::vector<MachineSpec> specs = config.machines;
    std::sort(specs.begin(), specs.end(), [](const auto& a, const auto& b) { return a.machine_id < b.machine_id; });
    for (const auto& spec : specs) {
        MachineOccupancy occ;
        occ.machine_id = spec.machine_id;
        occ.resize(n);
        for (const auto* s : spans[spec.machine_id]) {
            if (s->state != PowerState::suspended) continue;
            const auto first = static_cast<std::size_t>(std::max(0.0, std::ceil((s->from - start) / step)));
            for (std::size_t k = first; k < n; ++k) {
                const Timestamp tau = start + static_cast<double>(k) * step;
                if (tau >= s->to) break;
                if (tau >= s->from) occ.powered[k] = 0;
            }
        }
        auto jobs = by_machine[spec.machine_id];
        std::sort(jobs.begin(), jobs.end(), [](const auto* a, const auto* b) {
            return std::tie(a->start_time, a->job_id) < std::tie(b->start_time, b->job_id);
        });
        std::size_t next = 0;
        std::vector<const JobOutcome*> active;
        std::vector<ActiveJob> view;
        for (std::size_t k = 0; k < n; ++k) {
            const Timestamp tau = start + static_cast<double>(k) * step;
            while (next < jobs.size() && jobs[next]->start_time <= tau) active.push_back(jobs[next++]);
            std::erase_if(active, [&](const JobOutcome* o) { return o->end_time <= tau; });
            if (active.empty()) continue;
            view.clear();
            for (const auto* o : active) view.push_back({o->used, o->reserved, o->start_time});
            const auto f = extract_features(spec.machine_id, spec.capacity, view, tau);
            occ.cpu_util[k] = f.avg_cpu_util;
            occ.gpu_util[k] = f.avg_gpu_util;
            occ.n_jobs[k] = f.n_jobs;
            occ.n_gpu_jobs[k] = f.n_gpu_jobs;
            occ.gpu_job_runtime_s[k] = f.gpu_job_runtime_s;
        }
        trace.machines.push_back(std::move(occ));
    }
    return trace;
}

}  // namespace greentwin
