// submit: batch front-end with sustainability flags and the memory advisor.
// Prints the job skeleton as one JSON line on stdout; prompts go to stderr.

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "greentwin/trace_store.hpp"
#include "greentwin/user_tools.hpp"

using namespace greentwin;

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (!args.empty() && (args.front() == "-h" || args.front() == "--help")) {
        std::cout << submit_usage();
        return 0;
    }
    try {
        auto req = parse_submit(args);
        const char* env = std::getenv("GREENTWIN_NO_ADVISOR");
        AdvisorOptions options;
        options.disabled = req.no_advisor || (env && std::string_view(env) == "1");

        std::vector<JobRecord> history;
        const char* history_path = std::getenv("GREENTWIN_HISTORY");
        if (!options.disabled && history_path && std::filesystem::exists(history_path)) {
            history = load_job_trace(history_path).records;
            if (const char* user = std::getenv("USER")) {
                std::erase_if(history, [&](const JobRecord& j) { return j.user != user; });
            }
        }
        FdLineSource input(0);
        const auto stats = options.disabled ? std::nullopt : find_similar(history, req.job.command, req.job.executable);
        const auto outcome = advisor_flow(stats, req.job.requested, input, std::cerr, options);
        for (const auto& w : outcome.warnings) std::cerr << "warning: " << w << '\n';
        req.job.requested = outcome.request;
        if (const char* user = std::getenv("USER")) req.job.user = user;
        write_job_trace(std::cout, {req.job});
        return 0;
    } catch (const std::exception& e) {
        std::cerr << e.what();
        if (std::string_view(e.what()).back() != '\n') std::cerr << '\n';
        return 2;
    }
}
