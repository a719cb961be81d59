#include "greentwin/power_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "json.hpp"

namespace greentwin {

using nlohmann::json;

PowerFeatures extract_features(const std::string& machine_id, const ResourceVector& capacity,
                               std::span<const ActiveJob> running, Timestamp t) {
    PowerFeatures f;
    f.machine_id = machine_id;
    double cores = 0.0;
    double gpu = 0.0;
    for (const auto& job : running) {
        cores += job.used.avg_cpu_cores;
        gpu += job.used.avg_gpu_util;
        f.n_jobs += 1.0;
        if (job.uses_gpu()) {
            f.n_gpu_jobs += 1.0;
            f.gpu_job_runtime_s += std::max(0.0, t - job.start_time);
        }
    }
    f.avg_cpu_util = capacity.cpus > 0 ? std::min(1.0, cores / static_cast<double>(capacity.cpus)) : 0.0;
    f.avg_gpu_util = capacity.gpus > 0 ? std::min(1.0, gpu / static_cast<double>(capacity.gpus)) : 0.0;
    return f;
}

// --- training data ---------------------------------------------------------

namespace {

bool idle_row(const PowerSample& s) {
    return s.features.avg_cpu_util == 0.0 && s.features.avg_gpu_util == 0.0;
}

// Fisher-Yates over a 64-bit Mersenne twister; std::shuffle's algorithm is
// implementation-defined and would make splits library-dependent.
template <class T>
void seeded_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace

TrainingSet preprocess(std::span<const PowerSample> samples, const PreprocessOptions& options) {
    TrainingSet set;
    set.aliases = options.aliases;
    set.seed = options.seed;
    std::mt19937_64 rng(options.seed);
    const auto keep_threshold = static_cast<std::uint64_t>(
        options.idle_keep_fraction * static_cast<double>(std::numeric_limits<std::uint64_t>::max()));

    std::vector<PowerSample> kept;
    kept.reserve(samples.size());
    for (const auto& s : samples) {
        if (options.aliases.contains(s.features.machine_id)) {
            ++set.unmonitored_dropped;
            continue;
        }
        if (idle_row(s) && rng() > keep_threshold) {
            ++set.idle_discarded;
            continue;
        }
        kept.push_back(s);
    }

    std::set<std::string> with_data;
    for (const auto& s : kept) with_data.insert(s.features.machine_id);
    for (const auto& m : options.inventory) {
        if (with_data.contains(m)) continue;
        auto alias = options.aliases.find(m);
        if (alias == options.aliases.end()) {
            throw Error(fmt::format("machine '{}' has no training data and no hardware mapping", m));
        }
        if (!with_data.contains(alias->second)) {
            throw Error(fmt::format("machine '{}' maps to '{}', which has no training data", m,
                                    alias->second));
        }
    }

    seeded_shuffle(kept, rng);
    const auto n = kept.size();
    const auto n_train = static_cast<std::size_t>(std::floor(options.train_fraction * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::floor(options.validation_fraction * static_cast<double>(n)));
    set.train.assign(kept.begin(), kept.begin() + static_cast<std::ptrdiff_t>(n_train));
    set.validation.assign(kept.begin() + static_cast<std::ptrdiff_t>(n_train),
                          kept.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    set.test.assign(kept.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), kept.end());
    return set;
}

namespace {

const char* kTrainingHeader =
    "machine_id,avg_cpu_util,avg_gpu_util,n_jobs,n_gpu_jobs,gpu_job_runtime_s,measured_power_w";

}  // namespace

std::vector<PowerSample> parse_power_training(std::istream& in, const std::string& source) {
    std::vector<PowerSample> out;
    std::string text;
    std::size_t line = 0;
    bool header = false;
    while (std::getline(in, text)) {
        ++line;
        if (!text.empty() && text.back() == '\r') text.pop_back();
        if (text.find_first_not_of(" \t") == std::string::npos) continue;
        if (!header) {
            if (text != kTrainingHeader) {
                throw Error(fmt::format("{}:{}: header must be '{}'", source, line, kTrainingHeader));
            }
            header = true;
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ss(text);
        for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
        if (cells.size() != 7) throw Error(fmt::format("{}:{}: expected 7 columns", source, line));
        PowerSample s;
        s.features.machine_id = cells[0];
        double* targets[] = {&s.features.avg_cpu_util, &s.features.avg_gpu_util, &s.features.n_jobs,
                             &s.features.n_gpu_jobs, &s.features.gpu_job_runtime_s,
                             &s.measured_power_w};
        static const char* names[] = {"avg_cpu_util", "avg_gpu_util", "n_jobs",
                                      "n_gpu_jobs", "gpu_job_runtime_s", "measured_power_w"};
        for (int k = 0; k < 6; ++k) {
            try {
                *targets[k] = std::stod(cells[static_cast<std::size_t>(k) + 1]);
            } catch (const std::exception&) {
                throw Error(fmt::format("{}:{}: field '{}': not a number", source, line, names[k]));
            }
            if (*targets[k] < 0.0) {
                throw Error(fmt::format("{}:{}: field '{}': must be >= 0", source, line, names[k]));
            }
        }
        if (s.features.avg_cpu_util > 1.0 || s.features.avg_gpu_util > 1.0) {
            throw Error(fmt::format("{}:{}: utilisation outside [0, 1]", source, line));
        }
        if (s.features.n_gpu_jobs > s.features.n_jobs) {
            throw Error(fmt::format("{}:{}: field 'n_gpu_jobs': exceeds n_jobs", source, line));
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<PowerSample> load_power_training(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(fmt::format("cannot open '{}'", path.string()));
    return parse_power_training(in, path.filename().string());
}

void write_power_training(std::ostream& out, std::span<const PowerSample> samples) {
    out << kTrainingHeader << '\n';
    for (const auto& s : samples) {
        const auto& f = s.features;
        out << fmt::format("{},{},{},{},{},{},{}\n", f.machine_id, f.avg_cpu_util, f.avg_gpu_util,
                           f.n_jobs, f.n_gpu_jobs, f.gpu_job_runtime_s, s.measured_power_w);
    }
}

// --- models ------------------------------------------------------------------

void PowerModel::predict_batch(const std::string& machine_id, const kernels::FeatureBlock& block,
                               std::span<double> out) const {
    PowerFeatures f;
    f.machine_id = machine_id;
    for (std::size_t i = 0; i < block.size(); ++i) {
        f.avg_cpu_util = block.cpu_util[i];
        f.avg_gpu_util = block.gpu_util[i];
        f.n_jobs = block.n_jobs[i];
        f.n_gpu_jobs = block.n_gpu_jobs[i];
        f.gpu_job_runtime_s = block.gpu_job_runtime_s[i];
        out[i] = predict(f);
    }
}

bool LinearPowerModel::knows(const std::string& machine_id) const {
    if (machines.contains(machine_id)) return true;
    auto it = aliases.find(machine_id);
    return it != aliases.end() && machines.contains(it->second);
}

const MachineCoefficients& LinearPowerModel::coefficients(const std::string& machine_id) const {
    if (auto it = machines.find(machine_id); it != machines.end()) return it->second;
    if (auto a = aliases.find(machine_id); a != aliases.end()) {
        if (auto it = machines.find(a->second); it != machines.end()) return it->second;
    }
    throw Error(fmt::format("power model has no parameters for machine '{}'", machine_id));
}

double LinearPowerModel::predict(const PowerFeatures& f) const {
    const auto& c = coefficients(f.machine_id).coeffs;
    double out = 0.0;
    count_clamps(kernels::scalar_table().predict_power(&f.avg_cpu_util, &f.avg_gpu_util, &f.n_jobs,
                                                       &f.n_gpu_jobs, &f.gpu_job_runtime_s,
                                                       c.data(), &out, 1));
    return out;
}

void LinearPowerModel::predict_batch(const std::string& machine_id,
                                     const kernels::FeatureBlock& block,
                                     std::span<double> out) const {
    count_clamps(kernels::predict_power(block, coefficients(machine_id).coeffs, out));
}

ExternalPowerModel::ExternalPowerModel(std::vector<PowerSample> table,
                                       std::map<std::string, std::string> aliases)
    : aliases_(std::move(aliases)) {
    std::array<double, 5> maxima{};
    for (auto& s : table) {
        const auto& f = s.features;
        const double v[5] = {f.avg_cpu_util, f.avg_gpu_util, f.n_jobs, f.n_gpu_jobs, f.gpu_job_runtime_s};
        for (int k = 0; k < 5; ++k) maxima[static_cast<std::size_t>(k)] = std::max(maxima[static_cast<std::size_t>(k)], v[k]);
        rows_[f.machine_id].push_back(std::move(s));
    }
    for (std::size_t k = 0; k < 5; ++k) scale_[k] = maxima[k] > 0.0 ? maxima[k] : 1.0;
}

const std::string& ExternalPowerModel::resolve(const std::string& machine_id) const {
    if (rows_.contains(machine_id)) return machine_id;
    if (auto a = aliases_.find(machine_id); a != aliases_.end() && rows_.contains(a->second)) {
        return a->second;
    }
    throw Error(fmt::format("external power model has no predictions for machine '{}'", machine_id));
}

bool ExternalPowerModel::knows(const std::string& machine_id) const {
    if (rows_.contains(machine_id)) return true;
    auto a = aliases_.find(machine_id);
    return a != aliases_.end() && rows_.contains(a->second);
}

double ExternalPowerModel::predict(const PowerFeatures& f) const {
    const auto& rows = rows_.at(resolve(f.machine_id));
    const double q[5] = {f.avg_cpu_util, f.avg_gpu_util, f.n_jobs, f.n_gpu_jobs, f.gpu_job_runtime_s};
    double best = std::numeric_limits<double>::infinity();
    double power = 0.0;
    for (const auto& r : rows) {
        const auto& g = r.features;
        const double v[5] = {g.avg_cpu_util, g.avg_gpu_util, g.n_jobs, g.n_gpu_jobs, g.gpu_job_runtime_s};
        double d = 0.0;
        for (std::size_t k = 0; k < 5; ++k) {
            const double diff = (q[k] - v[k]) / scale_[k];
            d += diff * diff;
        }
        if (d < best) {
            best = d;
            power = r.measured_power_w;
        }
    }
    if (power < 0.0) {
        count_clamps(1);
        return 0.0;
    }
    return power;
}

namespace {

constexpr int kColumns = 7;

Eigen::VectorXd design_row(const PowerFeatures& f) {
    Eigen::VectorXd row(kColumns);
    row << 1.0, f.avg_cpu_util, f.avg_gpu_util, f.n_jobs, f.n_gpu_jobs, f.gpu_job_runtime_s,
        f.avg_cpu_util * f.avg_gpu_util;
    return row;
}

MachineCoefficients fit_machine(const std::vector<const PowerSample*>& rows, double lambda) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd x(n, kColumns);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        x.row(i) = design_row(rows[static_cast<std::size_t>(i)]->features).transpose();
        y(i) = rows[static_cast<std::size_t>(i)]->measured_power_w;
    }
    // Column scaling keeps runtimes (1e5 s) and utilisations (<= 1) comparable.
    Eigen::VectorXd scale = Eigen::VectorXd::Ones(kColumns);
    for (int j = 1; j < kColumns; ++j) {
        const double m = x.col(j).cwiseAbs().maxCoeff();
        if (m > 0.0) scale(j) = m;
    }
    const Eigen::MatrixXd xs = x * scale.cwiseInverse().asDiagonal();

    MachineCoefficients out;
    out.samples = rows.size();
    Eigen::VectorXd beta;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
    qr.setThreshold(1e-10);
    if (qr.rank() == kColumns) {
        beta = qr.solve(y);
    } else {
        out.ridge = true;
        Eigen::MatrixXd gram = xs.transpose() * xs;
        const double ridge = lambda * std::max(1.0, static_cast<double>(n));
        for (int j = 1; j < kColumns; ++j) gram(j, j) += ridge;
        beta = gram.ldlt().solve(xs.transpose() * y);
    }
    for (int j = 0; j < kColumns; ++j) out.coeffs[static_cast<std::size_t>(j)] = beta(j) / scale(j);
    return out;
}

}  // namespace

LinearPowerModel fit(const TrainingSet& set, const FitOptions& options, FitReport* report) {
    std::map<std::string, std::vector<const PowerSample*>> by_machine;
    for (const auto& s : set.train) by_machine[s.features.machine_id].push_back(&s);
    if (by_machine.empty()) throw Error("cannot fit a power model without training samples");

    LinearPowerModel model;
    model.aliases = set.aliases;
    model.sample_count = set.train.size();
    model.split_seed = set.seed;
    FitReport local;
    for (const auto& [machine, rows] : by_machine) {
        auto m = fit_machine(rows, options.ridge_lambda);
        if (m.ridge) local.ridge_machines.push_back(machine);
        model.machines.emplace(machine, m);
    }
    if (!set.validation.empty()) {
        std::vector<PowerSample> known;
        for (const auto& s : set.validation) {
            if (model.knows(s.features.machine_id)) known.push_back(s);
        }
        const auto metrics = evaluate(model, known);
        local.validation_pearson_r = metrics.pearson_r;
        local.validation_aggregate_error = metrics.aggregate_error;
    }
    if (report) *report = std::move(local);
    return model;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) return std::nullopt;
    const auto constant = [](std::span<const double> v) {
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        return *lo == *hi;
    };
    if (constant(x) || constant(y)) return std::nullopt;
    const double n = static_cast<double>(x.size());
    const double mx = kernels::sum(x) / n;
    const double my = kernels::sum(y) / n;
    const auto m = kernels::centered_moments(x, y, mx, my);
    if (!(m.sxx > 0.0) || !(m.syy > 0.0)) return std::nullopt;
    return m.sxy / std::sqrt(m.sxx * m.syy);
}

ModelMetrics evaluate(const PowerModel& model, std::span<const PowerSample> test) {
    ModelMetrics out;
    out.samples = test.size();
    if (test.empty()) return out;
    std::vector<double> truth(test.size());
    std::vector<double> pred(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
        truth[i] = test[i].measured_power_w;
        pred[i] = model.predict(test[i].features);
    }
    out.pearson_r = pearson(pred, truth);
    const double total_truth = kernels::sum(truth);
    if (total_truth > 0.0) {
        out.aggregate_error = std::abs(kernels::sum(pred) - total_truth) / total_truth;
    }
    return out;
}

namespace {

const char* kCoeffNames[kColumns] = {"intercept", "cpu", "gpu", "n_jobs",
                                     "n_gpu_jobs", "gpu_job_runtime", "cpu_x_gpu"};

}  // namespace

void save_model(const std::filesystem::path& path, const LinearPowerModel& model) {
    json doc;
    doc["kind"] = model.kind();
    json machines = json::object();
    for (const auto& [id, m] : model.machines) {
        json c;
        for (int j = 0; j < kColumns; ++j) c[kCoeffNames[j]] = m.coeffs[static_cast<std::size_t>(j)];
        machines[id] = {{"coefficients", c}, {"samples", m.samples}, {"ridge", m.ridge}};
    }
    doc["machines"] = machines;
    doc["aliases"] = model.aliases;
    doc["training"] = {{"samples", model.sample_count}, {"split_seed", model.split_seed}};
    std::ofstream out(path);
    if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
    out << doc.dump(2) << '\n';
}

LinearPowerModel load_linear_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(fmt::format("cannot open '{}'", path.string()));
    LinearPowerModel model;
    try {
        const json doc = json::parse(in);
        if (doc.at("kind").get<std::string>() != "baseline") {
            throw Error("model.json kind must be 'baseline'");
        }
        for (const auto& [id, m] : doc.at("machines").items()) {
            MachineCoefficients mc;
            for (int j = 0; j < kColumns; ++j) {
                mc.coeffs[static_cast<std::size_t>(j)] = m.at("coefficients").at(kCoeffNames[j]).get<double>();
            }
            mc.samples = m.value("samples", std::size_t{0});
            mc.ridge = m.value("ridge", false);
            model.machines.emplace(id, mc);
        }
        if (doc.contains("aliases")) model.aliases = doc.at("aliases").get<std::map<std::string, std::string>>();
        if (doc.contains("training")) {
            model.sample_count = doc["training"].value("samples", std::size_t{0});
            model.split_seed = doc["training"].value("split_seed", std::uint64_t{0});
        }
    } catch (const json::exception& e) {
        throw Error(fmt::format("{}: {}", path.string(), e.what()));
    }
    return model;
}

std::unique_ptr<PowerModel> load_power_model(const std::string& spec) {
    constexpr std::string_view kExternal = "external:";
    if (spec.rfind(kExternal, 0) == 0) {
        return std::make_unique<ExternalPowerModel>(
            load_power_training(spec.substr(kExternal.size())));
    }
    return std::make_unique<LinearPowerModel>(load_linear_model(spec));
}

// --- integration -------------------------------------------------------------

void MachineOccupancy::resize(std::size_t n) {
    cpu_util.assign(n, 0.0);
    gpu_util.assign(n, 0.0);
    n_jobs.assign(n, 0.0);
    n_gpu_jobs.assign(n, 0.0);
    gpu_job_runtime_s.assign(n, 0.0);
    powered.assign(n, 1);
}

kernels::FeatureBlock MachineOccupancy::block() const {
    return {cpu_util, gpu_util, n_jobs, n_gpu_jobs, gpu_job_runtime_s};
}

EnergyReport integrate_energy(const PowerModel& model, const OccupancyTrace& trace) {
    if (!(trace.step_s > 0.0)) throw Error("integration step must be > 0");
    EnergyReport report;
    report.power.start = trace.start;
    report.power.step_s = trace.step_s;
    report.power.acceleration = trace.acceleration;
    const double seconds_per_step = trace.step_s * trace.acceleration;
    for (const auto& m : trace.machines) {
        std::vector<double> watts(m.steps());
        model.predict_batch(m.machine_id, m.block(), watts);
        for (std::size_t k = 0; k < watts.size(); ++k) {
            if (!m.powered[k]) watts[k] = 0.0;
        }
        const Energy e = Energy::joules(kernels::sum(watts) * seconds_per_step);
        report.per_machine[m.machine_id] = e;
        report.total += e;
        report.power.machine_ids.push_back(m.machine_id);
        report.power.watts.push_back(std::move(watts));
    }
    return report;
}

}  // namespace greentwin
