#include "greentwin/user_tools.hpp"

#include <poll.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>
#include <tuple>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "greentwin/time_util.hpp"

namespace greentwin {

namespace {

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string tok; in >> tok;) out.push_back(tok);
    return out;
}

std::string join(const std::vector<std::string>& v, std::size_t from = 0) {
    std::string out;
    for (std::size_t i = from; i < v.size(); ++i) {
        if (!out.empty()) out += ' ';
        out += v[i];
    }
    return out;
}

}  // namespace

std::string submit_usage() {
    return "usage: submit [--sustainable red|yellow|green] [--maxwait HOURS] [--project LABEL]\n"
           "              [--cpus N] [--memory MB] [--gpus N] [--vram MB] [--no-advisor]\n"
           "              COMMAND [ARGS...]\n";
}

SubmitRequest parse_submit(const std::vector<std::string>& args) {
    CLI::App app{"submit a batch job", "submit"};
    app.prefix_command();
    std::string flag = "red";
    std::optional<double> maxwait;
    std::optional<std::string> project;
    SubmitRequest req;
    ResourceVector& r = req.job.requested;
    r = {1, 2000, 0, 0};
    app.add_option("--sustainable", flag);
    app.add_option("--maxwait", maxwait);
    app.add_option("--project", project);
    app.add_option("--cpus", r.cpus);
    std::string memory = "2000";
    std::string vram = "0";
    app.add_option("--memory", memory);
    app.add_option("--gpus", r.gpus);
    app.add_option("--vram", vram);
    app.add_flag("--no-advisor", req.no_advisor);

    std::vector<const char*> argv{"submit"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        throw Error(fmt::format("submit: {}\n{}", e.what(), submit_usage()));
    }

    auto color = parse_color(flag);
    if (!color || flag == "0" || flag == "1" || flag == "2") {
        throw Error(fmt::format("submit: --sustainable must be one of red, yellow, green (got '{}')\n{}", flag,
                                submit_usage()));
    }
    for (auto [text, field, name] : {std::tuple{&memory, &r.memory_mb, "--memory"}, {&vram, &r.vram_mb, "--vram"}}) {
        const auto mb = *text == "0" ? std::optional<std::int64_t>(0) : parse_memory_mb(*text);
        if (!mb) throw Error(fmt::format("submit: {} expects MB or a size like 4G (got '{}')\n{}", name, *text,
                                         submit_usage()));
        *field = *mb;
    }
    if (maxwait && !(*maxwait > 0.0)) {
        throw Error(fmt::format("submit: --maxwait must be a positive number of hours\n{}", submit_usage()));
    }
    if (r.cpus < 0 || r.memory_mb <= 0 || r.gpus < 0 || r.vram_mb < 0) {
        throw Error(fmt::format("submit: resource requests must be non-negative, memory positive\n{}",
                                submit_usage()));
    }
    auto rest = app.remaining();
    if (!rest.empty() && rest.front() == "--") rest.erase(rest.begin());
    if (rest.empty()) throw Error(fmt::format("submit: missing command\n{}", submit_usage()));
    if (rest.front().starts_with("-")) {
        throw Error(fmt::format("submit: unknown option '{}'\n{}", rest.front(), submit_usage()));
    }
    auto& job = req.job;
    job.sustainability_flag = *color;
    job.maxwait_h = maxwait;
    job.project = project;
    job.executable = rest.front();
    job.args.assign(rest.begin() + 1, rest.end());
    job.command = join(rest);
    return req;
}

std::pair<std::string, std::string> similarity_key(const std::string& command) {
    const auto tokens = split_ws(command);
    if (tokens.empty()) return {};
    for (std::size_t i = 1; i < tokens.size(); ++i) {
        if (!tokens[i].starts_with("-")) return {tokens.front(), tokens[i]};
    }
    return {tokens.front(), {}};
}

std::int64_t suggested_memory_mb(double max_peak_mb) {
    const double padded = std::ceil(max_peak_mb * 1.2);
    return static_cast<std::int64_t>(std::ceil(padded / 256.0)) * 256;
}

namespace {

PeakStats stats_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return {v.front(), v[(v.size() - 1) / 2], v.back()};
}

}  // namespace

std::optional<SimilarJobStats> find_similar(std::span<const JobRecord> history, const std::string& command,
                                            const std::string& executable) {
    auto key = similarity_key(command);
    if (!executable.empty()) key.first = executable;
    std::vector<const JobRecord*> matches;
    for (const auto& j : history) {
        auto k = similarity_key(j.command);
        if (!j.executable.empty()) k.first = j.executable;
        if (k == key) matches.push_back(&j);
    }
    if (matches.empty()) return std::nullopt;
    std::vector<double> mem;
    std::vector<double> vram;
    const JobRecord* last = matches.front();
    for (const auto* j : matches) {
        mem.push_back(j->used.peak_memory_mb);
        vram.push_back(j->used.peak_vram_mb);
        if (std::tie(j->submit_time, j->job_id) > std::tie(last->submit_time, last->job_id)) last = j;
    }
    SimilarJobStats s;
    s.match_count = matches.size();
    s.peak_memory_mb = stats_of(mem);
    s.peak_vram_mb = stats_of(vram);
    s.last_requested = last->requested;
    s.suggestion = last->requested;
    s.suggestion.memory_mb = suggested_memory_mb(s.peak_memory_mb.max);
    if (s.peak_vram_mb.max > 0.0) s.suggestion.vram_mb = suggested_memory_mb(s.peak_vram_mb.max);
    return s;
}

// --- timed input ------------------------------------------------------------------

FdLineSource::FdLineSource(int fd) : fd_(fd) {}

bool FdLineSource::interactive() const { return ::isatty(fd_) == 1; }

std::optional<std::string> FdLineSource::read_line(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
        if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
            std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            return line;
        }
        if (eof_) return std::nullopt;
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) return std::nullopt;
        pollfd p{fd_, POLLIN, 0};
        const int rc = ::poll(&p, 1, static_cast<int>(left.count()));
        if (rc == 0) return std::nullopt;
        if (rc < 0) {
            if (errno == EINTR) continue;
            return std::nullopt;
        }
        char chunk[256];
        const auto n = ::read(fd_, chunk, sizeof chunk);
        if (n <= 0) {
            eof_ = true;
            continue;
        }
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

std::optional<std::string> ScriptedLineSource::read_line(std::chrono::milliseconds) {
    ++reads_;
    if (lines_.empty()) return std::nullopt;
    auto line = std::move(lines_.front());
    lines_.pop_front();
    return line;
}

std::string_view to_string(AdvisorDecision d) {
    switch (d) {
        case AdvisorDecision::disabled: return "disabled";
        case AdvisorDecision::no_history: return "no_history";
        case AdvisorDecision::timeout: return "timeout";
        case AdvisorDecision::confirmed: return "confirmed";
        case AdvisorDecision::suggestion: return "suggestion";
        case AdvisorDecision::override: return "override";
    }
    return "?";
}

std::optional<std::int64_t> parse_memory_mb(std::string_view text) {
    std::string t;
    for (char c : text) {
        if (!std::isspace(static_cast<unsigned char>(c))) t += c;
    }
    if (t.empty()) return std::nullopt;
    double scale = 1.0;
    const char last = static_cast<char>(std::toupper(static_cast<unsigned char>(t.back())));
    if (last == 'M' || last == 'G') {
        scale = last == 'G' ? 1024.0 : 1.0;
        t.pop_back();
        if (!t.empty() && std::toupper(static_cast<unsigned char>(t.back())) == 'B') t.pop_back();
    }
    try {
        std::size_t used = 0;
        const double v = std::stod(t, &used);
        if (used != t.size() || !(v > 0.0)) return std::nullopt;
        return static_cast<std::int64_t>(std::ceil(v * scale));
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

AdvisorOutcome advisor_flow(const std::optional<SimilarJobStats>& stats, const ResourceVector& current,
                            LineSource& input, std::ostream& out, const AdvisorOptions& options) {
    AdvisorOutcome result{current, AdvisorDecision::disabled, {}};
    if (options.disabled || !input.interactive()) return result;
    if (!stats) {
        result.decision = AdvisorDecision::no_history;
        return result;
    }
    const auto& s = *stats;
    out << fmt::format("Found {} similar job{} in your history.\n", s.match_count, s.match_count == 1 ? "" : "s");
    out << fmt::format("  peak memory  min {:.0f} MB  median {:.0f} MB  max {:.0f} MB\n", s.peak_memory_mb.min,
                       s.peak_memory_mb.median, s.peak_memory_mb.max);
    if (s.peak_vram_mb.max > 0.0) {
        out << fmt::format("  peak VRAM    min {:.0f} MB  median {:.0f} MB  max {:.0f} MB\n", s.peak_vram_mb.min,
                           s.peak_vram_mb.median, s.peak_vram_mb.max);
    }
    out << fmt::format("  last request {} MB, this request {} MB, suggested {} MB\n", s.last_requested.memory_mb,
                       current.memory_mb, s.suggestion.memory_mb);
    out << "Enter submits as is, 's' takes the suggestion, or type a memory request (MB).\n";

    for (int left = options.countdown_s; left > 0; --left) {
        out << fmt::format("\rsubmitting in {:2d} s ", left) << std::flush;
        auto line = input.read_line(std::chrono::seconds(1));
        if (!line) continue;
        out << '\n';
        const std::string answer = [&] {
            const auto b = line->find_first_not_of(" \t");
            const auto e = line->find_last_not_of(" \t");
            return b == std::string::npos ? std::string{} : line->substr(b, e - b + 1);
        }();
        if (answer.empty()) {
            result.decision = AdvisorDecision::confirmed;
            return result;
        }
        if (answer == "s" || answer == "S") {
            result.request.memory_mb = s.suggestion.memory_mb;
            result.decision = AdvisorDecision::suggestion;
            return result;
        }
        if (auto mb = parse_memory_mb(answer)) {
            result.request.memory_mb = *mb;
            result.decision = AdvisorDecision::override;
            if (static_cast<double>(*mb) < s.peak_memory_mb.max) {
                result.warnings.push_back(fmt::format(
                    "requested {} MB is below the largest observed peak of {:.0f} MB; the job may run out of memory",
                    *mb, s.peak_memory_mb.max));
                out << "warning: " << result.warnings.back() << '\n';
            }
            return result;
        }
        out << fmt::format("could not read '{}' as a memory amount\n", answer);
    }
    out << "\n";
    result.decision = AdvisorDecision::timeout;
    return result;
}

// --- reports -------------------------------------------------------------------

std::optional<ReportGrouping> parse_grouping(std::string_view text) {
    if (text == "day") return ReportGrouping::day;
    if (text == "job") return ReportGrouping::job;
    if (text == "project") return ReportGrouping::project;
    return std::nullopt;
}

std::optional<OverheadView> parse_view(std::string_view text) {
    if (text == "shared") return OverheadView::shared;
    if (text == "full") return OverheadView::full;
    if (text == "both") return OverheadView::both;
    return std::nullopt;
}

std::vector<ReportRow> report_rows(const ReportRequest& request, std::span<const EnergyBreakdown> breakdowns,
                                   std::span<const JobRecord> jobs) {
    std::map<std::string, const JobRecord*> index;
    for (const auto& j : jobs) index.emplace(j.job_id, &j);
    std::vector<EnergyBreakdown> selected;
    for (const auto& b : breakdowns) {
        const Timestamp mid = b.midpoint();
        if (mid < request.since || mid >= request.until) continue;
        if (!request.user.empty()) {
            auto it = index.find(b.job_id);
            if (it == index.end() || it->second->user != request.user) continue;
        }
        selected.push_back(b);
    }
    const AggregateKey key = request.grouping == ReportGrouping::day   ? AggregateKey::day
                             : request.grouping == ReportGrouping::job ? AggregateKey::job
                                                                       : AggregateKey::project;
    std::vector<ReportRow> rows;
    for (auto& [label, totals] : aggregate(selected, key, jobs)) rows.push_back({label, totals});
    if (request.grouping == ReportGrouping::project) {
        std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
            return a.totals.total_shared > b.totals.total_shared;
        });
    }
    return rows;
}

std::string petra_report(const ReportRequest& request, std::span<const EnergyBreakdown> breakdowns,
                         std::span<const JobRecord> jobs) {
    const auto rows = report_rows(request, breakdowns, jobs);
    const std::string who = request.user.empty() ? "all users" : request.user;
    const std::string since = request.since > 0.0 ? format_date(utc_date(request.since)) : "the beginning";
    if (rows.empty()) return fmt::format("no data for {} since {}\n", who, since);

    static const char* kGroup[] = {"day", "job", "project"};
    static const char* kView[] = {"shared", "full", "both"};
    auto bar_value = [&](const EnergyTotals& t) {
        return request.view == OverheadView::shared ? t.total_shared : t.total_full;
    };
    Energy largest;
    for (const auto& r : rows) largest = std::max(largest, bar_value(r.totals));
    const double wh_per_char = largest.in_wh() > 0.0 ? largest.in_wh() / kBarWidth : 1.0;
    auto chars = [&](Energy e) { return static_cast<int>(std::lround(e.in_wh() / wh_per_char)); };

    std::size_t label_width = 5;
    std::vector<std::string> labels;
    for (const auto& r : rows) {
        std::string label = r.label;
        if (request.grouping == ReportGrouping::day) {
            const auto date = parse_date(r.label);
            label = fmt::format("{} {}", weekday_name(date), r.label);
        }
        label_width = std::max(label_width, label.size());
        labels.push_back(std::move(label));
    }

    std::string out = fmt::format("Energy report for {} by {} since {} (overhead view: {})\n", who,
                                  kGroup[static_cast<int>(request.grouping)], since,
                                  kView[static_cast<int>(request.view)]);
    out += fmt::format("scale: one '#' = {:.2f} Wh", wh_per_char);
    if (request.view == OverheadView::both) out += ", '+' = extra when the whole overhead is charged";
    out += "\n\n";

    EnergyTotals sum;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& t = rows[i].totals;
        std::string bar;
        std::string value;
        if (request.view == OverheadView::both) {
            const int shared = chars(t.total_shared);
            const int full = std::max(shared, chars(t.total_full));
            bar = std::string(static_cast<std::size_t>(shared), '#') + std::string(static_cast<std::size_t>(full - shared), '+');
            value = fmt::format("{:9.3f} kWh  (full {:.3f} kWh)", t.total_shared.in_kwh(), t.total_full.in_kwh());
        } else {
            bar = std::string(static_cast<std::size_t>(chars(bar_value(t))), '#');
            value = fmt::format("{:9.3f} kWh", bar_value(t).in_kwh());
        }
        out += fmt::format("{:<{}} |{:<{}}| {}\n", labels[i], label_width, bar, kBarWidth, value);
        sum.total_shared += t.total_shared;
        sum.total_full += t.total_full;
        sum.gpu += t.gpu;
        sum.cpu += t.cpu;
    }
    out += "\n";
    if (request.view == OverheadView::both) {
        out += fmt::format("{:<{}}  {:9.3f} kWh  (full {:.3f} kWh)\n", "total", label_width + kBarWidth + 1,
                           sum.total_shared.in_kwh(), sum.total_full.in_kwh());
    } else {
        out += fmt::format("{:<{}}  {:9.3f} kWh\n", "total", label_width + kBarWidth + 1, bar_value(sum).in_kwh());
    }
    out += fmt::format("  of which GPU {:.3f} kWh, CPU {:.3f} kWh\n", sum.gpu.in_kwh(), sum.cpu.in_kwh());
    out += "Figures are lower bounds: components without a per-job meter are split by runtime or not at all.\n";
    return out;
}

std::string petra_daily_status(std::span<const TrafficLightStatus> statuses, std::chrono::year_month_day date) {
    const Timestamp day = midnight_utc(date);
    std::string hours;
    std::string strip;
    int missing = 0;
    for (int h = 0; h < 24; ++h) {
        const auto* s = status_at(day + h * 3600.0, statuses);
        char c = '?';
        if (s) c = s->color == Color::green ? 'G' : s->color == Color::yellow ? 'Y' : 'R';
        if (!s) ++missing;
        hours += fmt::format("{:02} ", h);
        strip += fmt::format(" {} ", c);
    }
    std::string out = fmt::format("Renewable traffic light for {} {} (UTC)\n", weekday_name(date), format_date(date));
    out += hours + "\n" + strip + "\n";

    std::vector<std::pair<Timestamp, Timestamp>> green;
    for (const auto& s : statuses) {
        if (s.color != Color::green) continue;
        const Timestamp a = std::max(s.valid_from, day);
        const Timestamp b = std::min(s.valid_to, day + 86400.0);
        if (a >= b) continue;
        if (!green.empty() && green.back().second >= a) {
            green.back().second = std::max(green.back().second, b);
        } else {
            green.emplace_back(a, b);
        }
    }
    auto clock = [&](Timestamp t) {
        const auto m = static_cast<long>(std::lround((t - day) / 60.0));
        return fmt::format("{:02}:{:02}", m / 60, m % 60);
    };
    if (green.empty()) {
        out += "no green window\n";
    } else {
        out += "green windows:";
        for (const auto& [a, b] : green) out += fmt::format(" {}-{}", clock(a), clock(b));
        out += "\n";
    }
    if (missing > 0) out += fmt::format("no signal for {} of 24 hours ('?')\n", missing);
    return out;
}

std::size_t ratio_bin(double used, double requested) {
    const double pct = 100.0 * used / requested;
    if (pct >= 100.0) return UsageHistogram::kBins - 1;
    return static_cast<std::size_t>(std::max(0.0, std::floor(pct / 10.0)));
}

UsageHistogram usage_ratio_histogram(std::span<const JobRecord> jobs) {
    UsageHistogram h;
    for (const auto& j : jobs) {
        if (j.unknown) continue;
        if (j.requested.memory_mb > 0) {
            const auto bin = ratio_bin(j.used.peak_memory_mb, static_cast<double>(j.requested.memory_mb));
            ++h.ram[bin];
            ++h.ram_counted;
            if (bin < 5) ++h.ram_below_half;
        } else {
            ++h.ram_excluded;
        }
        if (j.requested.vram_mb > 0) {
            const auto bin = ratio_bin(j.used.peak_vram_mb, static_cast<double>(j.requested.vram_mb));
            ++h.vram[bin];
            ++h.vram_counted;
            if (bin < 5) ++h.vram_below_half;
        } else {
            ++h.vram_excluded;
        }
    }
    return h;
}

std::string render_histogram(const UsageHistogram& h) {
    std::string out = "used / requested      RAM jobs   VRAM jobs\n";
    for (std::size_t b = 0; b < UsageHistogram::kBins; ++b) {
        const std::string range = b + 1 < UsageHistogram::kBins ? fmt::format("[{:3}%, {:3}%)", b * 10, b * 10 + 10)
                                                                : std::string{"[100%,  inf)"};
        out += fmt::format("{:<18} {:>11} {:>11}\n", range, h.ram[b], h.vram[b]);
    }
    auto pct = [](std::size_t part, std::size_t whole) {
        return whole ? fmt::format("{:.1f}%", 100.0 * static_cast<double>(part) / static_cast<double>(whole))
                     : std::string{"n/a"};
    };
    out += fmt::format("below 50% of request: RAM {} of {} jobs ({}), VRAM {} of {} jobs ({})\n", h.ram_below_half,
                       h.ram_counted, pct(h.ram_below_half, h.ram_counted), h.vram_below_half, h.vram_counted,
                       pct(h.vram_below_half, h.vram_counted));
    if (h.ram_excluded + h.vram_excluded > 0) {
        out += fmt::format("excluded (nothing requested): RAM {}, VRAM {}\n", h.ram_excluded, h.vram_excluded);
    }
    return out;
}

}  // namespace greentwin
