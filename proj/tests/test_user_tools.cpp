#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "greentwin/user_tools.hpp"

using namespace greentwin;
using namespace std::chrono;

namespace {

constexpr Timestamp kMon = 1717372800.0;  // 2024-06-03 00:00 UTC
const std::string kData = GREENTWIN_TEST_DATA;

std::vector<std::string> split(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string t; in >> t;) out.push_back(t);
    return out;
}

JobRecord past_job(std::string id, std::string command, double peak_mb, std::int64_t requested_mb, Timestamp submit) {
    JobRecord j;
    j.job_id = std::move(id);
    j.user = "ana";
    j.command = command;
    j.executable = split(command).front();
    j.submit_time = submit;
    j.requested.cpus = 4;
    j.requested.memory_mb = requested_mb;
    j.used.peak_memory_mb = peak_mb;
    return j;
}

std::vector<JobRecord> history() {
    return {past_job("h1", "python train.py --lr 3", 900, 4000, 100), past_job("h2", "python train.py", 1023, 8000, 300),
            past_job("h3", "python train.py --small", 1100, 6000, 200), past_job("h4", "python other.py", 50000, 64000, 400),
            past_job("h5", "bash train.py", 70000, 90000, 500)};
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::size_t bar_length(const std::string& report, const std::string& label) {
    std::istringstream in(report);
    for (std::string line; std::getline(in, line);) {
        if (line.rfind(label + " ", 0) != 0) continue;
        const auto a = line.find('|');
        const auto b = line.find('|', a + 1);
        const auto bar = line.substr(a + 1, b - a - 1);
        return static_cast<std::size_t>(std::count_if(bar.begin(), bar.end(), [](char c) { return c != ' '; }));
    }
    FAIL("no row " << label);
    return 0;
}

struct Fixture {
    std::vector<EnergyBreakdown> breakdowns = load_breakdowns(kData + "/petra/breakdowns.jsonl");
    std::vector<JobRecord> jobs = load_job_trace(kData + "/petra/jobs.jsonl").records;
};

TrafficLightStatus light(Color c, Timestamp from, Timestamp to) { return {c, from, to, 0, 0}; }

}  // namespace

TEST_CASE("submit: green job with a 16 hour maxwait") {
    const auto r = parse_submit(split("--sustainable green --maxwait 16 python job.py"));
    CHECK(r.job.sustainability_flag == Color::green);
    CHECK(r.job.maxwait_h == std::optional<double>(16));
    CHECK(r.job.executable == "python");
    CHECK(r.job.args == std::vector<std::string>{"job.py"});
    CHECK(r.job.command == "python job.py");
    CHECK_FALSE(r.no_advisor);
}

TEST_CASE("submit: defaults and rejected flags") {
    const auto r = parse_submit(split("python job.py"));
    CHECK(r.job.sustainability_flag == Color::red);
    CHECK_FALSE(r.job.maxwait_h);
    CHECK_FALSE(r.job.project);
    CHECK(r.job.requested.cpus == 1);
    CHECK(r.job.requested.memory_mb == 2000);

    CHECK_THROWS_WITH_AS(parse_submit(split("--sustainable blue python job.py")),
                         doctest::Contains("must be one of red, yellow, green"), Error);
    CHECK_THROWS_AS(parse_submit(split("--maxwait -1 python job.py")), Error);
    CHECK_THROWS_AS(parse_submit({}), Error);
}

TEST_CASE("submit: project label, options after the command pass through") {
    const auto r = parse_submit(split("--project PaperXY --no-advisor --memory 4G python job.py --sustainable green"));
    CHECK(r.job.project == std::optional<std::string>("PaperXY"));
    CHECK(r.no_advisor);
    CHECK(r.job.requested.memory_mb == 4096);
    CHECK(r.job.sustainability_flag == Color::red);
    CHECK(r.job.command == "python job.py --sustainable green");
}

TEST_CASE("submit: option order does not matter") {
    const std::vector<std::vector<std::string>> options{
        {"--sustainable", "yellow"}, {"--maxwait", "3"}, {"--project", "P"}, {"--cpus", "8"}};
    std::vector<std::size_t> perm{0, 1, 2, 3};
    const auto tail = split("./run.sh a b");
    std::optional<SubmitRequest> first;
    do {
        std::vector<std::string> args;
        for (auto i : perm) args.insert(args.end(), options[i].begin(), options[i].end());
        args.insert(args.end(), tail.begin(), tail.end());
        const auto r = parse_submit(args);
        if (!first) first = r;
        CHECK(r.job.sustainability_flag == first->job.sustainability_flag);
        CHECK(r.job.maxwait_h == first->job.maxwait_h);
        CHECK(r.job.project == first->job.project);
        CHECK(r.job.requested == first->job.requested);
        CHECK(r.job.command == first->job.command);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(first->job.requested.cpus == 8);
}

TEST_CASE("similar jobs: peaks, suggestion, last request") {
    const auto h = history();
    const auto s = find_similar(h, "python train.py --epochs 5");
    REQUIRE(s);
    CHECK(s->match_count == 3);
    CHECK(s->peak_memory_mb.min == 900);
    CHECK(s->peak_memory_mb.median == 1023);
    CHECK(s->peak_memory_mb.max == 1100);
    CHECK(s->suggestion.memory_mb == 1536);
    CHECK(s->last_requested.memory_mb == 8000);  // h2 is the latest submission

    CHECK_FALSE(find_similar(h, "julia train.jl"));
    CHECK_FALSE(find_similar({}, "python train.py"));
}

TEST_CASE("similarity key and memory suggestion") {
    CHECK(similarity_key("python -u train.py --x") == std::pair<std::string, std::string>{"python", "train.py"});
    CHECK(similarity_key("./a.out") == std::pair<std::string, std::string>{"./a.out", ""});
    for (double peak : {0.0, 1.0, 255.0, 1100.0, 4000.0, 123456.7}) {
        const auto m = suggested_memory_mb(peak);
        CHECK(m % 256 == 0);
        CHECK(static_cast<double>(m) >= peak * 1.2);
        CHECK(static_cast<double>(m) < peak * 1.2 + 256);
    }
    // every job is similar to itself
    for (const auto& j : history()) CHECK(find_similar(std::vector<JobRecord>{j}, j.command));
}

TEST_CASE("memory amounts") {
    CHECK(parse_memory_mb("2048") == std::optional<std::int64_t>(2048));
    CHECK(parse_memory_mb("2048M") == std::optional<std::int64_t>(2048));
    CHECK(parse_memory_mb("4G") == std::optional<std::int64_t>(4096));
    CHECK_FALSE(parse_memory_mb("lots"));
    CHECK_FALSE(parse_memory_mb(""));
}

TEST_CASE("advisor: countdown, confirm, suggestion, override") {
    const auto h = history();
    const auto stats = find_similar(h, "python train.py");
    const ResourceVector current{4, 8000, 0, 0};
    std::ostringstream out;

    SUBCASE("no answer within ten seconds submits unchanged") {
        ScriptedLineSource in({});
        const auto r = advisor_flow(stats, current, in, out);
        CHECK(r.decision == AdvisorDecision::timeout);
        CHECK(r.request == current);
        CHECK(in.reads() == 10);
        CHECK(out.str().find("median 1023 MB") != std::string::npos);
        CHECK(out.str().find("suggested 1536 MB") != std::string::npos);
    }
    SUBCASE("enter confirms at once") {
        ScriptedLineSource in({std::nullopt, std::nullopt, ""});
        const auto r = advisor_flow(stats, current, in, out);
        CHECK(r.decision == AdvisorDecision::confirmed);
        CHECK(r.request == current);
        CHECK(in.reads() == 3);
    }
    SUBCASE("s takes the suggestion") {
        ScriptedLineSource in({"s"});
        const auto r = advisor_flow(stats, current, in, out);
        CHECK(r.decision == AdvisorDecision::suggestion);
        CHECK(r.request.memory_mb == 1536);
        CHECK(r.request.cpus == 4);
        CHECK(r.warnings.empty());
    }
    SUBCASE("an override below the observed peak warns") {
        ScriptedLineSource in({"1000"});
        const auto r = advisor_flow(stats, current, in, out);
        CHECK(r.decision == AdvisorDecision::override);
        CHECK(r.request.memory_mb == 1000);
        REQUIRE(r.warnings.size() == 1);
        CHECK(r.warnings[0].find("1100 MB") != std::string::npos);
    }
    SUBCASE("garbage is reported and the countdown continues") {
        ScriptedLineSource in({"lots", "2G"});
        const auto r = advisor_flow(stats, current, in, out);
        CHECK(out.str().find("could not read 'lots'") != std::string::npos);
        CHECK(r.decision == AdvisorDecision::override);
        CHECK(r.request.memory_mb == 2048);
        CHECK(r.warnings.empty());
    }
    SUBCASE("non-interactive, disabled, no history") {
        ScriptedLineSource piped({"s"}, false);
        CHECK(advisor_flow(stats, current, piped, out).decision == AdvisorDecision::disabled);
        CHECK(piped.reads() == 0);
        ScriptedLineSource tty({"s"});
        CHECK(advisor_flow(stats, current, tty, out, {.disabled = true}).decision == AdvisorDecision::disabled);
        const auto r = advisor_flow(std::nullopt, current, tty, out);
        CHECK(r.decision == AdvisorDecision::no_history);
        CHECK(r.request == current);
        CHECK(tty.reads() == 0);
    }
}

TEST_CASE("report: golden output by project") {
    const Fixture fx;
    ReportRequest req;
    req.user = "ana";
    req.grouping = ReportGrouping::project;
    req.since = kMon - 2 * 86400;
    CHECK(petra_report(req, fx.breakdowns, fx.jobs) == slurp(kData + "/petra/report_project_shared.txt"));
    req.view = OverheadView::both;
    CHECK(petra_report(req, fx.breakdowns, fx.jobs) == slurp(kData + "/petra/report_project_both.txt"));
}

TEST_CASE("report: bars proportional to energy, rows match aggregate") {
    const Fixture fx;
    ReportRequest req;
    req.user = "ana";
    req.grouping = ReportGrouping::project;
    const auto text = petra_report(req, fx.breakdowns, fx.jobs);
    CHECK(bar_length(text, "PaperXY") == 40);
    CHECK(bar_length(text, "thesis") == 20);
    CHECK(bar_length(text, "unlabeled") == 4);
    CHECK(text.find("3.200 kWh") != std::string::npos);

    const auto rows = report_rows(req, fx.breakdowns, fx.jobs);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].label == "PaperXY");
    CHECK(rows[1].label == "thesis");
    CHECK(rows[2].label == "unlabeled");

    // Every user, grouped by user, equals the aggregate over all breakdowns.
    const auto by_user = aggregate(fx.breakdowns, AggregateKey::user, fx.jobs);
    CHECK(by_user.at("ana").total_shared.in_wh() == doctest::Approx(3200));
    CHECK(by_user.at("bo").total_shared.in_wh() == doctest::Approx(5000));

    req.user.clear();
    const auto all = report_rows(req, fx.breakdowns, fx.jobs);
    const auto totals = aggregate(fx.breakdowns, AggregateKey::project, fx.jobs);
    REQUIRE(all.size() == totals.size());
    for (const auto& row : all) {
        CHECK(row.totals.total_shared.in_joules() == doctest::Approx(totals.at(row.label).total_shared.in_joules()));
    }
}

TEST_CASE("report: by day and empty selections") {
    const Fixture fx;
    ReportRequest req;
    req.user = "ana";
    const auto text = petra_report(req, fx.breakdowns, fx.jobs);
    CHECK(text.find("Mon 2024-06-03 |") != std::string::npos);
    CHECK(text.find("Wed 2024-06-05 |") != std::string::npos);

    req.user = "nobody";
    CHECK(petra_report(req, fx.breakdowns, fx.jobs).find("no data for nobody") != std::string::npos);
    req.user = "ana";
    req.since = kMon + 30 * 86400;
    CHECK(petra_report(req, fx.breakdowns, fx.jobs).find("no data") != std::string::npos);
}

TEST_CASE("daily status strip") {
    const auto day = year_month_day{2024y / June / 3};
    SUBCASE("three red hours then green") {
        const std::vector<TrafficLightStatus> s{light(Color::red, kMon, kMon + 3 * 3600),
                                                light(Color::green, kMon + 3 * 3600, kMon + 86400)};
        const auto text = petra_daily_status(s, day);
        CHECK(text.rfind("Renewable traffic light for Mon 2024-06-03 (UTC)\n", 0) == 0);
        CHECK(text.find(" R  R  R  G  G ") != std::string::npos);
        CHECK(text.find("green windows: 03:00-24:00") != std::string::npos);
        CHECK(text.find('?') == std::string::npos);
    }
    SUBCASE("missing hours") {
        const std::vector<TrafficLightStatus> s{light(Color::yellow, kMon, kMon + 6 * 3600)};
        const auto text = petra_daily_status(s, day);
        CHECK(text.find(" Y  Y  Y  Y  Y  Y  ?  ? ") != std::string::npos);
        CHECK(text.find("no green window") != std::string::npos);
        CHECK(text.find("no signal for 18 of 24 hours") != std::string::npos);
    }
    SUBCASE("two green windows") {
        const std::vector<TrafficLightStatus> s{
            light(Color::green, kMon, kMon + 2 * 3600), light(Color::red, kMon + 2 * 3600, kMon + 12 * 3600),
            light(Color::green, kMon + 12 * 3600, kMon + 13.5 * 3600),
            light(Color::red, kMon + 13.5 * 3600, kMon + 86400)};
        CHECK(petra_daily_status(s, day).find("green windows: 00:00-02:00 12:00-13:30") != std::string::npos);
    }
}

TEST_CASE("usage histogram") {
    CHECK(ratio_bin(1023, 8000) == 1);
    CHECK(ratio_bin(8000, 8000) == 10);
    CHECK(ratio_bin(9000, 8000) == 10);
    CHECK(ratio_bin(0, 8000) == 0);
    CHECK(ratio_bin(7999, 8000) == 9);

    auto jobs = history();
    jobs[0].requested.vram_mb = 1000;
    jobs[0].used.peak_vram_mb = 708;
    const auto h = usage_ratio_histogram(jobs);
    CHECK(h.ram_counted == 5);
    CHECK(h.ram_excluded == 0);
    CHECK(h.vram_counted == 1);
    CHECK(h.vram_excluded == 4);
    CHECK(h.vram[7] == 1);
    std::size_t total = 0;
    for (auto c : h.ram) total += c;
    CHECK(total == h.ram_counted);
    // 900/4000, 1023/8000, 1100/6000 are below half; 50000/64000 and 70000/90000 land in bin 7
    CHECK(h.ram_below_half == 3);
    CHECK(h.ram[7] == 2);
    CHECK_FALSE(render_histogram(h).empty());

    const auto empty = usage_ratio_histogram({});
    CHECK(empty.ram_counted == 0);
    CHECK(empty.vram_counted == 0);
}
