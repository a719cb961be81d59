#pragma once

#include <array>
#include <chrono>
#include <deque>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "greentwin/common.hpp"
#include "greentwin/energy_attribution.hpp"
#include "greentwin/grid_signal.hpp"
#include "greentwin/trace_store.hpp"

namespace greentwin {

// --- submit ------------------------------------------------------------------

struct SubmitRequest {
    JobRecord job;  // skeleton: flag, maxwait, project, request, command
    bool no_advisor = false;
};

/// Parses the arguments after the program name. The first token that is not
/// an option starts the command line; everything from there on is passed
/// through untouched. Throws Error with a usage message on bad input.
SubmitRequest parse_submit(const std::vector<std::string>& args);
std::string submit_usage();

/// Similarity key: the executable and the first non-option token after it.
std::pair<std::string, std::string> similarity_key(const std::string& command);

struct PeakStats {
    double min = 0.0;
    double median = 0.0;
    double max = 0.0;
};

struct SimilarJobStats {
    std::size_t match_count = 0;
    PeakStats peak_memory_mb;
    PeakStats peak_vram_mb;
    ResourceVector last_requested;
    ResourceVector suggestion;
};

/// Stats over `history` jobs sharing the similarity key of `command`;
/// nullopt when nothing matches. `executable` overrides the first token.
std::optional<SimilarJobStats> find_similar(std::span<const JobRecord> history, const std::string& command,
                                            const std::string& executable = {});

/// Observed max peak plus 20%, rounded up to a multiple of 256 MB.
std::int64_t suggested_memory_mb(double max_peak_mb);

/// Line input with a deadline, so the advisor can count down.
class LineSource {
public:
    virtual ~LineSource() = default;
    virtual bool interactive() const = 0;
    /// A line (without newline), or nullopt if `timeout` passed first or the
    /// stream ended.
    virtual std::optional<std::string> read_line(std::chrono::milliseconds timeout) = 0;
};

/// Reads a file descriptor (normally stdin) using poll(2).
class FdLineSource final : public LineSource {
public:
    explicit FdLineSource(int fd = 0);
    bool interactive() const override;
    std::optional<std::string> read_line(std::chrono::milliseconds timeout) override;

private:
    int fd_;
    std::string buffer_;
    bool eof_ = false;
};

/// Canned answers for tests and scripts; nullopt entries time out.
class ScriptedLineSource final : public LineSource {
public:
    explicit ScriptedLineSource(std::deque<std::optional<std::string>> lines, bool interactive = true)
        : lines_(std::move(lines)), interactive_(interactive) {}
    bool interactive() const override { return interactive_; }
    std::optional<std::string> read_line(std::chrono::milliseconds timeout) override;
    std::size_t reads() const { return reads_; }

private:
    std::deque<std::optional<std::string>> lines_;
    bool interactive_;
    std::size_t reads_ = 0;
};

enum class AdvisorDecision { disabled, no_history, timeout, confirmed, suggestion, override };

std::string_view to_string(AdvisorDecision d);

struct AdvisorOutcome {
    ResourceVector request;
    AdvisorDecision decision = AdvisorDecision::disabled;
    std::vector<std::string> warnings;
};

struct AdvisorOptions {
    int countdown_s = 10;
    bool disabled = false;  // --no-advisor / GREENTWIN_NO_ADVISOR=1
};

/// Shows the stats and counts down. Enter submits the current request, "s"
/// takes the suggestion, a number (MB, or with an M/G suffix) replaces the
/// memory request. Only the request can change.
AdvisorOutcome advisor_flow(const std::optional<SimilarJobStats>& stats, const ResourceVector& current,
                            LineSource& input, std::ostream& out, const AdvisorOptions& options = {});

/// Memory amount in MB from "2048", "2048M", "4G"; nullopt if unparsable.
std::optional<std::int64_t> parse_memory_mb(std::string_view text);

// --- reports -------------------------------------------------------------------

enum class ReportGrouping { day, job, project };
enum class OverheadView { shared, full, both };

std::optional<ReportGrouping> parse_grouping(std::string_view text);
std::optional<OverheadView> parse_view(std::string_view text);

struct ReportRequest {
    std::string user;  // empty = every user
    ReportGrouping grouping = ReportGrouping::day;
    Timestamp since = 0.0;
    Timestamp until = 1e18;
    OverheadView view = OverheadView::shared;
};

struct ReportRow {
    std::string label;
    EnergyTotals totals;
};

/// Rows in display order (days chronologically, jobs by id, projects by
/// energy), computed with energy_attribution::aggregate.
std::vector<ReportRow> report_rows(const ReportRequest& request, std::span<const EnergyBreakdown> breakdowns,
                                   std::span<const JobRecord> jobs);

inline constexpr int kBarWidth = 40;

std::string petra_report(const ReportRequest& request, std::span<const EnergyBreakdown> breakdowns,
                         std::span<const JobRecord> jobs);

/// Hour-by-hour strip for one UTC day: G, Y, R, '?' where no status covers
/// the hour.
std::string petra_daily_status(std::span<const TrafficLightStatus> statuses, std::chrono::year_month_day date);

struct UsageHistogram {
    static constexpr std::size_t kBins = 11;  // [0,10) ... [90,100), [100, inf)
    std::array<std::size_t, kBins> ram{};
    std::array<std::size_t, kBins> vram{};
    std::size_t ram_counted = 0;
    std::size_t vram_counted = 0;
    std::size_t ram_excluded = 0;   // nothing requested
    std::size_t vram_excluded = 0;
    std::size_t ram_below_half = 0;
    std::size_t vram_below_half = 0;
};

std::size_t ratio_bin(double used, double requested);
UsageHistogram usage_ratio_histogram(std::span<const JobRecord> jobs);
std::string render_histogram(const UsageHistogram& h);

}  // namespace greentwin
