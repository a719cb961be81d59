// petra: terminal energy reports and the daily traffic-light strip.

#include <iostream>

#include "CLI11.hpp"
#include "greentwin/energy_attribution.hpp"
#include "greentwin/grid_signal.hpp"
#include "greentwin/time_util.hpp"
#include "greentwin/trace_store.hpp"
#include "greentwin/user_tools.hpp"

using namespace greentwin;

int main(int argc, char** argv) {
    CLI::App app{"petra: energy reports"};
    app.require_subcommand(1);

    std::string breakdowns_path = "breakdowns.jsonl", jobs_path = "jobs.jsonl", user, group = "day", since, until,
                view = "shared";
    auto* report = app.add_subcommand("report", "energy per day, job or project");
    report->add_option("--breakdowns", breakdowns_path);
    report->add_option("--jobs", jobs_path);
    report->add_option("--user", user, "default: every user");
    report->add_option("--group", group)->check(CLI::IsMember({"day", "job", "project"}));
    report->add_option("--since", since, "YYYY-MM-DD");
    report->add_option("--until", until, "YYYY-MM-DD (exclusive)");
    report->add_option("--view", view)->check(CLI::IsMember({"shared", "full", "both"}));

    std::string lights_path = "traffic_light.json", date;
    auto* status = app.add_subcommand("status", "hour-by-hour traffic light for one day");
    status->add_option("--lights", lights_path);
    status->add_option("--date", date, "YYYY-MM-DD")->required();

    std::string hist_jobs = "jobs.jsonl";
    auto* histogram = app.add_subcommand("histogram", "used / requested memory ratios");
    histogram->add_option("--jobs", hist_jobs);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*report) {
            ReportRequest req;
            req.user = user;
            req.grouping = *parse_grouping(group);
            req.view = *parse_view(view);
            if (!since.empty()) req.since = midnight_utc(parse_date(since));
            if (!until.empty()) req.until = midnight_utc(parse_date(until));
            if (req.until <= req.since) throw Error("--until must be after --since");
            const auto breakdowns = load_breakdowns(breakdowns_path);
            std::vector<JobRecord> jobs;
            if (std::filesystem::exists(jobs_path)) jobs = load_job_trace(jobs_path).records;
            std::cout << petra_report(req, breakdowns, jobs);
        } else if (*status) {
            std::cout << petra_daily_status(load_traffic_light(lights_path), parse_date(date));
        } else if (*histogram) {
            const auto jobs = load_job_trace(hist_jobs).records;
            std::cout << render_histogram(usage_ratio_histogram(jobs));
        }
    } catch (const std::exception& e) {
        std::cerr << "petra: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
