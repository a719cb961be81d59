#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "greentwin/common.hpp"
#include "greentwin/trace_store.hpp"

namespace greentwin {

struct TrafficLightStatus {
    Color color = Color::red;
    Timestamp valid_from = 0.0;
    Timestamp valid_to = 0.0;
    double renewable_share = 0.0;
    double reference_share = 0.0;

    friend bool operator==(const TrafficLightStatus&, const TrafficLightStatus&) = default;
};

/// How "10% above/below the monthly average" is read: percentage points
/// (share ± 0.10, the default) or relative (share × 1.10 / × 0.90).
enum class ThresholdMode { absolute, relative };

inline constexpr double kGreenShare = 0.95;
inline constexpr double kReferenceBand = 0.10;
/// Differences smaller than this count as equality, so boundary values land
/// in yellow regardless of binary rounding.
inline constexpr double kClassifyEpsilon = 1e-9;

/// Green above 95% or well above the reference, red well below it, yellow
/// otherwise. Thresholds are strict.
Color classify(double renewable_share, double reference_share,
               ThresholdMode mode = ThresholdMode::absolute);

/// Five-year monthly reference shares. Rows keyed `YYYY-MM` apply to that
/// month only; rows keyed by month number (`7`, `07`) apply to every year.
class MonthlyReference {
public:
    void set(std::string month_key, double share);
    std::optional<double> lookup(Timestamp t) const;
    bool empty() const { return values_.empty(); }
    const std::map<std::string, double>& values() const { return values_; }

private:
    std::map<std::string, double> values_;
};

MonthlyReference parse_monthly_reference(std::istream& in,
                                         const std::string& source = "monthly_reference.csv");
MonthlyReference load_monthly_reference(const std::filesystem::path& path);

/// Piecewise-constant statuses over the covered range of `grid`; adjacent
/// windows of equal colour are merged.
std::vector<TrafficLightStatus> status_series(const GridSeries& grid,
                                              const MonthlyReference& references,
                                              ThresholdMode mode = ThresholdMode::absolute);

/// Status in force at `t`, or nullptr outside the covered range.
const TrafficLightStatus* status_at(Timestamp t, std::span<const TrafficLightStatus> statuses);

inline constexpr Duration kMachineUpdatePeriod = 900.0;

/// Colour a machine advertises at `t`: the status at the most recent
/// 15-minute boundary, red where no status covers it.
Color machine_status_at(Timestamp t, std::span<const TrafficLightStatus> statuses,
                        Duration update_period = kMachineUpdatePeriod);

struct CarbonIntensity {
    Timestamp timestamp = 0.0;
    double gco2e_per_kwh = 0.0;
};

/// Share-weighted mean emission factor of one grid sample.
double mix_intensity(const GridMixSample& sample, const EmissionFactorTable& factors);

CarbonIntensity intensity_at(Timestamp t, const GridSeries& grid, const EmissionFactorTable& factors);

// Traffic-light snapshot files: a JSON list of
// {"begin", "end", "color", "share", "reference"}; the poller's cache wraps
// that list as {"fetched_at": t, "statuses": [...]}.
std::vector<TrafficLightStatus> parse_traffic_light_json(const std::string& payload);
std::string traffic_light_json(std::span<const TrafficLightStatus> statuses);
std::vector<TrafficLightStatus> load_traffic_light(const std::filesystem::path& path);
void save_traffic_light(const std::filesystem::path& path,
                        std::span<const TrafficLightStatus> statuses);

/// Returns the body on success and nullopt when the source is unreachable.
using FeedFetcher = std::function<std::optional<std::string>(const std::string& url)>;

/// Plain HTTP(S) GET.
std::optional<std::string> http_fetch(const std::string& url);

struct FeedConfig {
    std::string source;  // URL or snapshot file
    std::filesystem::path cache;
    Duration poll_interval = 2.0 * 3600.0;
};

struct FeedResult {
    std::vector<TrafficLightStatus> statuses;
    bool from_cache = false;
    bool stale = false;
    std::string warning;
};

/// The only stateful part of the signal: fetches the feed on its cadence and
/// owns the cache file. Cache writes are serialised.
class FeedPoller {
public:
    explicit FeedPoller(FeedConfig config, FeedFetcher fetch = http_fetch);

    bool due(Timestamp now) const;
    FeedResult poll(Timestamp now);
    const FeedConfig& config() const { return config_; }

private:
    FeedResult read_cache(Timestamp now, std::string warning) const;

    FeedConfig config_;
    FeedFetcher fetch_;
    std::optional<Timestamp> last_poll_;
    mutable std::mutex cache_mutex_;
};

/// One-shot convenience wrapper around FeedPoller.
FeedResult poll_feed(const FeedConfig& config, Timestamp now, const FeedFetcher& fetch = http_fetch);

}  // namespace greentwin
