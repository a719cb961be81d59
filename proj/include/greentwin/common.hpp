#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace greentwin {

/// Seconds since the Unix epoch, UTC. Fractional parts carry sub-second
/// telemetry resolution.
using Timestamp = double;
using Duration = double;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Traffic-light colour. The numeric values are the ones stored in job
/// attributes, so `job requirement <= machine status` is a plain comparison.
enum class Color : std::uint8_t { red = 0, yellow = 1, green = 2 };

std::string_view to_string(Color c);
std::optional<Color> parse_color(std::string_view text);

/// Energy with joules as the internal unit. Files carry watt-hours.
class Energy {
public:
    constexpr Energy() = default;

    static constexpr Energy joules(double j) { return Energy{j}; }
    static constexpr Energy watt_hours(double wh) { return Energy{wh * 3600.0}; }

    constexpr double in_joules() const { return joules_; }
    constexpr double in_wh() const { return joules_ / 3600.0; }
    constexpr double in_kwh() const { return joules_ / 3.6e6; }

    constexpr Energy& operator+=(Energy o) { joules_ += o.joules_; return *this; }
    constexpr Energy& operator-=(Energy o) { joules_ -= o.joules_; return *this; }
    friend constexpr Energy operator+(Energy a, Energy b) { return Energy{a.joules_ + b.joules_}; }
    friend constexpr Energy operator-(Energy a, Energy b) { return Energy{a.joules_ - b.joules_}; }
    friend constexpr Energy operator*(Energy a, double s) { return Energy{a.joules_ * s}; }
    friend constexpr Energy operator*(double s, Energy a) { return Energy{a.joules_ * s}; }
    friend constexpr double operator/(Energy a, Energy b) { return a.joules_ / b.joules_; }
    friend constexpr auto operator<=>(Energy, Energy) = default;

private:
    constexpr explicit Energy(double j) : joules_(j) {}
    double joules_ = 0.0;
};

struct ResourceVector {
    std::int64_t cpus = 0;
    std::int64_t memory_mb = 0;
    std::int64_t gpus = 0;
    std::int64_t vram_mb = 0;

    friend bool operator==(const ResourceVector&, const ResourceVector&) = default;

    ResourceVector& operator+=(const ResourceVector& o) {
        cpus += o.cpus; memory_mb += o.memory_mb; gpus += o.gpus; vram_mb += o.vram_mb;
        return *this;
    }
    ResourceVector& operator-=(const ResourceVector& o) {
        cpus -= o.cpus; memory_mb -= o.memory_mb; gpus -= o.gpus; vram_mb -= o.vram_mb;
        return *this;
    }
    friend ResourceVector operator+(ResourceVector a, const ResourceVector& b) { return a += b; }

    /// Componentwise `*this <= cap`.
    bool fits_within(const ResourceVector& cap) const {
        return cpus <= cap.cpus && memory_mb <= cap.memory_mb && gpus <= cap.gpus &&
               vram_mb <= cap.vram_mb;
    }
    bool non_negative() const { return cpus >= 0 && memory_mb >= 0 && gpus >= 0 && vram_mb >= 0; }
};

/// Lifetime-average usage of one job; treated as constant while it runs.
struct UsageVector {
    double avg_cpu_cores = 0.0;
    double peak_memory_mb = 0.0;
    double avg_gpu_util = 0.0;
    double peak_vram_mb = 0.0;
    double runtime_s = 0.0;

    friend bool operator==(const UsageVector&, const UsageVector&) = default;
};

}  // namespace greentwin
