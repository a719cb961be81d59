#include "greentwin/grid_signal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

#include <fmt/format.h>

#include "greentwin/time_util.hpp"
#include "json.hpp"

namespace greentwin {

using nlohmann::json;

Color classify(double share, double reference, ThresholdMode mode) {
    const double upper = mode == ThresholdMode::absolute ? reference + kReferenceBand
                                                         : reference * (1.0 + kReferenceBand);
    const double lower = mode == ThresholdMode::absolute ? reference - kReferenceBand
                                                         : reference * (1.0 - kReferenceBand);
    if (share > kGreenShare + kClassifyEpsilon || share > upper + kClassifyEpsilon) {
        return Color::green;
    }
    if (share < lower - kClassifyEpsilon) return Color::red;
    return Color::yellow;
}

void MonthlyReference::set(std::string month_key, double share) {
    values_[std::move(month_key)] = share;
}

std::optional<double> MonthlyReference::lookup(Timestamp t) const {
    if (auto it = values_.find(format_year_month(t)); it != values_.end()) return it->second;
    const auto month = static_cast<unsigned>(utc_date(t).month());
    if (auto it = values_.find(std::to_string(month)); it != values_.end()) return it->second;
    return std::nullopt;
}

MonthlyReference parse_monthly_reference(std::istream& in, const std::string& source) {
    MonthlyReference ref;
    std::string text;
    std::size_t line = 0;
    bool header = false;
    while (std::getline(in, text)) {
        ++line;
        if (!text.empty() && text.back() == '\r') text.pop_back();
        if (text.find_first_not_of(" \t") == std::string::npos) continue;
        if (!header) {
            if (text != "month,reference_share") {
                throw Error(fmt::format("{}:{}: header must be 'month,reference_share'", source, line));
            }
            header = true;
            continue;
        }
        const auto comma = text.find(',');
        if (comma == std::string::npos) throw Error(fmt::format("{}:{}: expected 2 columns", source, line));
        std::string key = text.substr(0, comma);
        double share = 0.0;
        try {
            share = std::stod(text.substr(comma + 1));
        } catch (const std::exception&) {
            throw Error(fmt::format("{}:{}: field 'reference_share': not a number", source, line));
        }
        if (share < 0.0) throw Error(fmt::format("{}:{}: field 'reference_share': must be >= 0", source, line));
        if (key.size() <= 2) {
            const int m = std::atoi(key.c_str());
            if (m < 1 || m > 12) throw Error(fmt::format("{}:{}: field 'month': invalid '{}'", source, line, key));
            key = std::to_string(m);
        } else if (key.size() != 7 || key[4] != '-') {
            throw Error(fmt::format("{}:{}: field 'month': expected M or YYYY-MM, got '{}'", source,
                                    line, key));
        }
        ref.set(std::move(key), share);
    }
    return ref;
}

MonthlyReference load_monthly_reference(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(fmt::format("cannot open '{}'", path.string()));
    return parse_monthly_reference(in, path.filename().string());
}

std::vector<TrafficLightStatus> status_series(const GridSeries& grid,
                                              const MonthlyReference& references,
                                              ThresholdMode mode) {
    std::vector<TrafficLightStatus> out;
    const auto& samples = grid.samples();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const auto ref = references.lookup(s.timestamp);
        if (!ref) {
            throw Error(fmt::format("no monthly reference share for {}", format_year_month(s.timestamp)));
        }
        const Color c = classify(s.renewable_share_of_load, *ref, mode);
        const Timestamp until = grid.covered_until(i);
        if (!out.empty() && out.back().color == c && out.back().valid_to == s.timestamp) {
            out.back().valid_to = until;
            continue;
        }
        out.push_back({c, s.timestamp, until, s.renewable_share_of_load, *ref});
    }
    return out;
}

const TrafficLightStatus* status_at(Timestamp t, std::span<const TrafficLightStatus> statuses) {
    auto it = std::upper_bound(statuses.begin(), statuses.end(), t,
                               [](Timestamp v, const TrafficLightStatus& s) { return v < s.valid_from; });
    if (it == statuses.begin()) return nullptr;
    --it;
    return t < it->valid_to ? &*it : nullptr;
}

Color machine_status_at(Timestamp t, std::span<const TrafficLightStatus> statuses,
                        Duration update_period) {
    const auto* s = status_at(floor_to_grid(t, update_period), statuses);
    return s ? s->color : Color::red;
}

double mix_intensity(const GridMixSample& sample, const EmissionFactorTable& factors) {
    double weighted = 0.0;
    double total = 0.0;
    for (std::size_t k = 0; k < kGridSources.size(); ++k) {
        const double share = sample.shares[k];
        if (share <= 0.0) continue;
        auto it = factors.find(kGridSources[k]);
        if (it == factors.end()) {
            throw Error(fmt::format("no emission factor for source '{}'", kGridSources[k]));
        }
        weighted += share * it->second;
        total += share;
    }
    if (total <= 0.0) {
        throw Error(fmt::format("grid sample at t={} has no generation shares", sample.timestamp));
    }
    return total < 1.0 ? weighted / total : weighted;
}

CarbonIntensity intensity_at(Timestamp t, const GridSeries& grid, const EmissionFactorTable& factors) {
    const auto* s = grid.at(t);
    if (!s) throw Error(fmt::format("grid history does not cover t={}", t));
    return {t, mix_intensity(*s, factors)};
}

namespace {

std::string excerpt(const std::string& payload) {
    constexpr std::size_t kMax = 80;
    std::string e = payload.substr(0, kMax);
    std::replace(e.begin(), e.end(), '\n', ' ');
    return payload.size() > kMax ? e + "..." : e;
}

TrafficLightStatus status_from_json(const json& o) {
    TrafficLightStatus s;
    s.valid_from = o.at("begin").get<double>();
    s.valid_to = o.at("end").get<double>();
    const auto& c = o.at("color");
    std::optional<Color> color;
    if (c.is_string()) color = parse_color(c.get<std::string>());
    if (c.is_number_integer()) color = parse_color(std::to_string(c.get<int>()));
    if (!color) throw Error("invalid color");
    s.color = *color;
    s.renewable_share = o.value("share", 0.0);
    s.reference_share = o.value("reference", 0.0);
    if (!(s.valid_to > s.valid_from)) throw Error("status window must have end > begin");
    return s;
}

struct CachedFeed {
    std::vector<TrafficLightStatus> statuses;
    std::optional<Timestamp> fetched_at;
};

CachedFeed parse_feed(const std::string& payload) {
    CachedFeed out;
    try {
        const json doc = json::parse(payload);
        const json* list = &doc;
        if (doc.is_object()) {
            if (doc.contains("fetched_at")) out.fetched_at = doc.at("fetched_at").get<double>();
            list = &doc.at("statuses");
        }
        if (!list->is_array()) throw Error("expected a list of status windows");
        for (const auto& item : *list) out.statuses.push_back(status_from_json(item));
    } catch (const std::exception& e) {
        throw Error(fmt::format("malformed traffic-light payload ({}): '{}'", e.what(), excerpt(payload)));
    }
    std::sort(out.statuses.begin(), out.statuses.end(),
              [](const auto& a, const auto& b) { return a.valid_from < b.valid_from; });
    for (std::size_t i = 1; i < out.statuses.size(); ++i) {
        if (out.statuses[i].valid_from < out.statuses[i - 1].valid_to) {
            throw Error(fmt::format("malformed traffic-light payload (overlapping windows at {}): '{}'",
                                    out.statuses[i].valid_from, excerpt(payload)));
        }
    }
    return out;
}

json statuses_json(std::span<const TrafficLightStatus> statuses) {
    json list = json::array();
    for (const auto& s : statuses) {
        list.push_back({{"begin", s.valid_from},
                        {"end", s.valid_to},
                        {"color", std::string{to_string(s.color)}},
                        {"share", s.renewable_share},
                        {"reference", s.reference_share}});
    }
    return list;
}

std::optional<std::string> read_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomically(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw Error(fmt::format("cannot write '{}'", tmp.string()));
        out << text;
    }
    std::filesystem::rename(tmp, path);
}

bool is_url(const std::string& source) {
    return source.rfind("http://", 0) == 0 || source.rfind("https://", 0) == 0;
}

}  // namespace

std::vector<TrafficLightStatus> parse_traffic_light_json(const std::string& payload) {
    return parse_feed(payload).statuses;
}

std::string traffic_light_json(std::span<const TrafficLightStatus> statuses) {
    return statuses_json(statuses).dump(2) + "\n";
}

std::vector<TrafficLightStatus> load_traffic_light(const std::filesystem::path& path) {
    auto text = read_file(path);
    if (!text) throw Error(fmt::format("cannot open '{}'", path.string()));
    return parse_traffic_light_json(*text);
}

void save_traffic_light(const std::filesystem::path& path,
                        std::span<const TrafficLightStatus> statuses) {
    write_file_atomically(path, traffic_light_json(statuses));
}

FeedPoller::FeedPoller(FeedConfig config, FeedFetcher fetch)
    : config_(std::move(config)), fetch_(std::move(fetch)) {
    if (!(config_.poll_interval > 0.0)) throw Error("poll interval must be > 0");
}

bool FeedPoller::due(Timestamp now) const {
    return !last_poll_ || now - *last_poll_ >= config_.poll_interval;
}

FeedResult FeedPoller::read_cache(Timestamp now, std::string warning) const {
    std::lock_guard lock(cache_mutex_);
    auto text = config_.cache.empty() ? std::nullopt : read_file(config_.cache);
    if (!text) {
        throw Error(fmt::format("traffic-light source '{}' unreachable and no cache present",
                                config_.source));
    }
    CachedFeed cached = parse_feed(*text);
    FeedResult r;
    r.statuses = std::move(cached.statuses);
    r.from_cache = true;
    r.stale = true;
    if (cached.fetched_at) {
        const Duration age = now - *cached.fetched_at;
        warning += fmt::format("; cache is {:.1f} h old", age / 3600.0);
        if (age > 2.0 * config_.poll_interval) warning += " (older than two poll intervals)";
    }
    r.warning = std::move(warning);
    return r;
}

FeedResult FeedPoller::poll(Timestamp now) {
    last_poll_ = now;
    std::optional<std::string> payload =
        is_url(config_.source) ? fetch_(config_.source) : read_file(config_.source);
    if (!payload) {
        return read_cache(now, fmt::format("traffic-light source '{}' unreachable, using cache",
                                           config_.source));
    }
    FeedResult r;
    r.statuses = parse_feed(*payload).statuses;
    if (!config_.cache.empty()) {
        json doc{{"fetched_at", now}, {"statuses", statuses_json(r.statuses)}};
        std::lock_guard lock(cache_mutex_);
        write_file_atomically(config_.cache, doc.dump(2) + "\n");
    }
    return r;
}

FeedResult poll_feed(const FeedConfig& config, Timestamp now, const FeedFetcher& fetch) {
    FeedPoller poller(config, fetch);
    return poller.poll(now);
}

}  // namespace greentwin
