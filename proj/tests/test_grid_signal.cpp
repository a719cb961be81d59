#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "greentwin/grid_signal.hpp"
#include "httplib.h"

using namespace greentwin;

namespace {

constexpr Timestamp kDay = 1717372800.0;  // a Monday in June

GridMixSample mix(Timestamp t, double renewable, std::initializer_list<std::pair<int, double>> shares = {{1, 1.0}}) {
    GridMixSample s;
    s.timestamp = t;
    s.renewable_share_of_load = renewable;
    for (auto [k, v] : shares) s.shares[static_cast<std::size_t>(k)] = v;
    return s;
}

MonthlyReference june(double share) {
    MonthlyReference r;
    r.set("6", share);
    return r;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("greentwin_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

const std::string kSnapshot =
    R"([{"begin":0,"end":3600,"color":"red","share":0.3,"reference":0.5},)"
    R"({"begin":3600,"end":7200,"color":"green","share":0.97,"reference":0.5}])";

}  // namespace

TEST_CASE("classify: examples") {
    CHECK(classify(0.96, 0.50) == Color::green);
    CHECK(classify(0.42, 0.42) == Color::yellow);
    CHECK(classify(0.30, 0.45) == Color::red);
    CHECK(classify(0.61, 0.50) == Color::green);
    CHECK(classify(0.55, 0.50) == Color::yellow);
}

TEST_CASE("classify: boundaries are yellow") {
    CHECK(classify(0.95, 0.20) == Color::green);  // 0.95 > 0.20 + 0.10
    CHECK(classify(0.95, 0.90) == Color::yellow);
    CHECK(classify(0.60, 0.50) == Color::yellow);
    CHECK(classify(0.40, 0.50) == Color::yellow);
    CHECK(classify(0.70, 0.80) == Color::yellow);
}

TEST_CASE("classify: relative threshold mode") {
    CHECK(classify(0.56, 0.50, ThresholdMode::relative) == Color::green);
    CHECK(classify(0.56, 0.50, ThresholdMode::absolute) == Color::yellow);
    CHECK(classify(0.44, 0.50, ThresholdMode::relative) == Color::red);
}

TEST_CASE("classify is monotone in share") {
    for (int r = 0; r <= 100; ++r) {
        int prev = 0;
        for (int s = 0; s <= 100; ++s) {
            const int c = static_cast<int>(classify(s / 100.0, r / 100.0));
            CHECK(c >= prev);
            prev = c;
        }
    }
}

TEST_CASE("status series: constant full share is one green window") {
    std::vector<GridMixSample> samples;
    for (int h = 0; h < 24; ++h) samples.push_back(mix(kDay + h * 3600, 1.0));
    const auto st = status_series(GridSeries(samples), june(0.5));
    REQUIRE(st.size() == 1);
    CHECK(st[0].color == Color::green);
    CHECK(st[0].valid_from == kDay);
    CHECK(st[0].valid_to == kDay + 86400);
}

TEST_CASE("status series: red three hours then green") {
    std::vector<GridMixSample> samples;
    for (int h = 0; h < 24; ++h) samples.push_back(mix(kDay + h * 3600, h < 3 ? 0.27 : 0.84));
    const auto st = status_series(GridSeries(samples), june(0.5));
    REQUIRE(st.size() == 2);
    CHECK(st[0].color == Color::red);
    CHECK(st[0].valid_to == kDay + 3 * 3600);
    CHECK(st[1].color == Color::green);
    CHECK(st[1].valid_from == kDay + 3 * 3600);
    CHECK(st[1].valid_to == kDay + 86400);
}

TEST_CASE("status series: alternating hours stay separate and tile the range") {
    std::vector<GridMixSample> samples;
    for (int h = 0; h < 12; ++h) samples.push_back(mix(kDay + h * 3600, h % 2 ? 0.2 : 0.97));
    const auto st = status_series(GridSeries(samples), june(0.5));
    REQUIRE(st.size() == 12);
    for (std::size_t i = 0; i < st.size(); ++i) {
        CHECK(st[i].color == (i % 2 ? Color::red : Color::green));
        CHECK(st[i].valid_to - st[i].valid_from == 3600.0);
        if (i > 0) CHECK(st[i].valid_from == st[i - 1].valid_to);
    }
}

TEST_CASE("status series: missing month reference names the month") {
    std::vector<GridMixSample> samples{mix(kDay, 0.5)};
    MonthlyReference r;
    r.set("7", 0.5);
    CHECK_THROWS_WITH_AS(status_series(GridSeries(samples), r), doctest::Contains("2024-06"), Error);
}

TEST_CASE("monthly reference: year-specific rows win over month numbers") {
    std::istringstream in("month,reference_share\n6,0.40\n2024-06,0.55\n07,0.5\n");
    const auto r = parse_monthly_reference(in);
    CHECK(r.lookup(kDay) == std::optional<double>(0.55));
    CHECK(r.lookup(kDay + 40 * 86400.0) == std::optional<double>(0.5));
    CHECK(r.lookup(kDay + 365 * 86400.0) == std::optional<double>(0.40));
    CHECK_FALSE(r.lookup(kDay - 180 * 86400.0));
}

TEST_CASE("machine status follows the 15-minute grid") {
    const std::vector<TrafficLightStatus> st{{Color::red, kDay, kDay + 420, 0.2, 0.5},
                                             {Color::green, kDay + 420, kDay + 7200, 0.97, 0.5}};
    CHECK(machine_status_at(kDay + 600, st) == Color::red);
    CHECK(machine_status_at(kDay + 899, st) == Color::red);
    CHECK(machine_status_at(kDay + 900, st) == Color::green);
    CHECK(machine_status_at(kDay + 3000, st) == Color::green);
    CHECK(machine_status_at(kDay + 7200, st) == Color::red);
    CHECK(machine_status_at(kDay - 1, st) == Color::red);
}

TEST_CASE("machine status changes only at 15-minute boundaries") {
    std::mt19937 rng(5);
    std::uniform_int_distribution<int> minutes(1, 90);
    std::vector<TrafficLightStatus> st;
    Timestamp t = kDay;
    for (int i = 0; i < 40; ++i) {
        const Timestamp next = t + minutes(rng) * 60.0 + 17.0;
        st.push_back({static_cast<Color>(i % 3), t, next, 0, 0});
        t = next;
    }
    Color prev = machine_status_at(kDay, st);
    for (Timestamp q = kDay; q < t; q += 30.0) {
        const Color c = machine_status_at(q, st);
        if (c != prev) CHECK(std::fmod(q - kDay, 900.0) == 0.0);
        prev = c;
    }
}

TEST_CASE("intensity: single source, weighted mean, renormalised") {
    const EmissionFactorTable f{{"solar", 10}, {"wind", 20}, {"nuclear", 12}, {"coal", 820}};
    GridSeries nuclear({mix(0, 0, {{4, 1.0}})});
    CHECK(intensity_at(10, nuclear, f).gco2e_per_kwh == doctest::Approx(12.0));
    GridSeries half({mix(0, 0, {{4, 0.5}, {6, 0.5}})});
    CHECK(intensity_at(10, half, f).gco2e_per_kwh == doctest::Approx(416.0));
    GridSeries partial({mix(0, 0, {{0, 0.4}, {1, 0.4}})});
    CHECK(intensity_at(10, partial, f).gco2e_per_kwh == doctest::Approx(15.0));
    CHECK_THROWS_AS(intensity_at(-10, partial, f), Error);
    GridSeries hydro({mix(0, 0, {{2, 1.0}})});
    CHECK_THROWS_WITH_AS(intensity_at(10, hydro, f), doctest::Contains("hydro"), Error);
}

TEST_CASE("intensity is a convex combination of factors") {
    const EmissionFactorTable f{{"solar", 41},  {"wind", 11}, {"hydro", 24}, {"biomass", 230}, {"nuclear", 12},
                                {"gas", 490},   {"coal", 820}, {"oil", 650}, {"other", 300}};
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 500; ++i) {
        GridMixSample s;
        double total = 0;
        double lo = 1e9, hi = 0;
        for (std::size_t k = 0; k < kGridSources.size(); ++k) {
            if (u(rng) < 0.4) continue;
            s.shares[k] = u(rng);
            total += s.shares[k];
        }
        if (total == 0) continue;
        const double scale = u(rng) / total;
        for (std::size_t k = 0; k < kGridSources.size(); ++k) {
            s.shares[k] *= scale;
            if (s.shares[k] > 0) {
                lo = std::min(lo, f.at(kGridSources[k]));
                hi = std::max(hi, f.at(kGridSources[k]));
            }
        }
        const double v = mix_intensity(s, f);
        CHECK(v >= lo - 1e-9);
        CHECK(v <= hi + 1e-9);
    }
}

TEST_CASE("traffic-light snapshot: parse, write, malformed") {
    const auto st = parse_traffic_light_json(kSnapshot);
    REQUIRE(st.size() == 2);
    CHECK(st[1].color == Color::green);
    CHECK(parse_traffic_light_json(traffic_light_json(st)) == st);
    CHECK_THROWS_WITH_AS(parse_traffic_light_json("{not json"), doctest::Contains("{not json"), Error);
    CHECK_THROWS_AS(parse_traffic_light_json(R"([{"begin":0,"end":10,"color":"blue"}])"), Error);
}

TEST_CASE("feed poller: snapshot file, cache and staleness") {
    const auto dir = temp_dir("poll");
    const auto snapshot = dir / "feed.json";
    { std::ofstream(snapshot) << kSnapshot; }

    FeedConfig cfg{snapshot.string(), dir / "cache.json"};
    CHECK(cfg.poll_interval == 7200.0);
    FeedPoller poller(cfg);
    CHECK(poller.due(0));
    const auto fresh = poller.poll(1000);
    CHECK(fresh.statuses.size() == 2);
    CHECK_FALSE(fresh.from_cache);
    CHECK_FALSE(fresh.stale);
    CHECK(std::filesystem::exists(cfg.cache));
    CHECK_FALSE(poller.due(1000 + 7199));
    CHECK(poller.due(1000 + 7200));

    std::filesystem::remove(snapshot);
    const auto cached = poller.poll(1000 + 5 * 3600);
    CHECK(cached.from_cache);
    CHECK(cached.stale);
    CHECK(cached.statuses.size() == 2);
    CHECK(cached.warning.find("older than two poll intervals") != std::string::npos);

    FeedConfig nocache{(dir / "missing.json").string(), dir / "nocache.json"};
    CHECK_THROWS_WITH_AS(poll_feed(nocache, 0), doctest::Contains("no cache"), Error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("feed poller: unreachable endpoint falls back to the cache") {
    const auto dir = temp_dir("fetch");
    int calls = 0;
    bool up = true;
    FeedFetcher fake = [&](const std::string&) -> std::optional<std::string> {
        ++calls;
        if (!up) return std::nullopt;
        return kSnapshot;
    };
    FeedPoller poller({"https://feed.invalid/lights", dir / "cache.json"}, fake);
    CHECK(poller.poll(0).statuses.size() == 2);
    up = false;
    const auto r = poller.poll(7200);
    CHECK(calls == 2);
    CHECK(r.from_cache);
    CHECK(r.stale);
    CHECK(r.statuses.size() == 2);

    FeedPoller bad({"http://feed.invalid/x", dir / "bad.json"},
                   [](const std::string&) -> std::optional<std::string> { return "<html>oops</html>"; });
    CHECK_THROWS_WITH_AS(bad.poll(0), doctest::Contains("<html>oops"), Error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("http fetch against a local server") {
    httplib::Server server;
    server.Get("/lights", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(kSnapshot, "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread worker([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    const std::string base = "http://127.0.0.1:" + std::to_string(port);
    const auto body = http_fetch(base + "/lights");
    REQUIRE(body);
    CHECK(parse_traffic_light_json(*body).size() == 2);
    CHECK_FALSE(http_fetch(base + "/missing"));
    server.stop();
    worker.join();
    CHECK_FALSE(http_fetch(base + "/lights"));
}
