#pragma once

#include <array>
#include <cmath>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "confound_bench/bias.hpp"
#include "confound_bench/dgp.hpp"
#include "confound_bench/estimators.hpp"
#include "confound_bench/format.hpp"
#include "confound_bench/parallel.hpp"

namespace confound_bench {

/// Outcome of one simulate-then-fit cycle. A failed fit keeps its error
/// message instead of a result.
struct ReplicationResult {
    std::array<std::optional<FitResult>, 4> fits;
    std::array<std::string, 4> errors;

    const std::optional<FitResult>& operator[](Method m) const { return fits[static_cast<std::size_t>(m)]; }
    const std::string& error(Method m) const { return errors[static_cast<std::size_t>(m)]; }
};

inline ReplicationResult run_replication(const ScenarioConfig& cfg, ReplicationSeed rep,
                                         const CovariatePolicy& policy = {},
                                         const std::vector<Method>& methods = {kAllMethods.begin(), kAllMethods.end()}) {
    const ClusteredDataset d = simulate_dataset(cfg, rep);
    ReplicationResult out;
    for (Method m : methods) {
        const auto slot = static_cast<std::size_t>(m);
        try {
            out.fits[slot] = fit(m, d, policy);
        } catch (const Error& e) {
            out.errors[slot] = e.what();
        }
    }
    return out;
}

inline ReplicationResult run_replication(const ScenarioConfig& cfg, std::uint64_t rep_index,
                                         const CovariatePolicy& policy = {}) {
    return run_replication(cfg, ReplicationSeed{cfg.seed, rep_index}, policy);
}

struct MonteCarloOptions {
    int reps = 1000;
    double z = 3.0;
    std::vector<Method> methods = {kAllMethods.begin(), kAllMethods.end()};
    unsigned threads = 0;  // 0: default_thread_count()
    CalibrationOptions calibration;
    bool analytic_only = false;
};

/// One (grid point, method) row of a report.
struct MonteCarloCell {
    std::string axis;
    double axis_value = 0.0;
    Method method = Method::OLS;
    double mean_bias = std::numeric_limits<double>::quiet_NaN();
    double mc_se = std::numeric_limits<double>::quiet_NaN();
    double analytic_bias = 0.0;
    std::optional<bool> agreement;  // empty when not evaluated
    int reps = 0;
    int truncations = 0;
    int weak_iv_count = 0;
    int failures = 0;
};

struct FitFailure {
    std::size_t point = 0;
    std::uint64_t replication = 0;
    Method method = Method::OLS;
    std::string message;
};

struct MonteCarloReport {
    std::vector<MonteCarloCell> cells;
    std::vector<FitFailure> failures;
    std::vector<LmmPlimConstants> plims;  // one per grid point
    double z = 3.0;
    bool analytic_only = false;

    /// True when every evaluated cell agrees; unevaluated cells do not count.
    bool all_agree() const {
        for (const auto& c : cells)
            if (c.agreement && !*c.agreement) return false;
        return true;
    }

    /// The cell for the `point`-th grid point and method `m`.
    const MonteCarloCell& cell(std::size_t point, Method m) const {
        std::size_t seen = 0;
        for (const auto& c : cells) {
            if (c.method != m) continue;
            if (seen == point) return c;
            ++seen;
        }
        throw std::out_of_range("no such report cell");
    }
};

namespace detail {

struct RepSummary {
    double beta_hat = 0.0;
    bool ok = false;
    bool truncated = false;
    bool weak = false;
};

inline double diag_or(const FitResult& r, const char* key, double fallback = 0.0) {
    const auto it = r.diagnostics.find(key);
    return it == r.diagnostics.end() ? fallback : it->second;
}

}  // namespace detail

/// Runs `opts.reps` replications at every grid point, fits each requested
/// method, and sets the empirical bias against the analytic value. Sums are
/// taken in replication order after all jobs finish, so the report does not
/// depend on the worker count.
inline MonteCarloReport run_monte_carlo(const ScenarioGrid& grid, const CovariatePolicy& policy,
                                        const MonteCarloOptions& opts) {
    if (!opts.analytic_only && opts.reps < 2) throw InvalidConfig("Monte Carlo needs reps >= 2");
    if (opts.methods.empty()) throw InvalidConfig("no methods requested");
    for (const auto& cfg : grid.configs) cfg.validate();

    MonteCarloReport report;
    report.z = opts.z;
    report.analytic_only = opts.analytic_only;

    const bool need_plims = std::find(opts.methods.begin(), opts.methods.end(), Method::LMM) != opts.methods.end();
    for (const auto& cfg : grid.configs)
        report.plims.push_back(need_plims ? calibrate_lmm_plims(cfg, opts.calibration, policy) : LmmPlimConstants{});

    const std::size_t points = grid.configs.size();
    const std::size_t reps = opts.analytic_only ? 0 : static_cast<std::size_t>(opts.reps);
    const std::size_t n_methods = opts.methods.size();
    std::vector<detail::RepSummary> results(points * reps * n_methods);
    std::vector<std::string> messages(results.size());

    parallel_for(points * reps, opts.threads, [&](std::size_t job) {
        const std::size_t p = job / reps, r = job % reps;
        const ReplicationResult rr = run_replication(grid.configs[p], ReplicationSeed{grid.configs[p].seed, r},
                                                     policy, opts.methods);
        for (std::size_t k = 0; k < n_methods; ++k) {
            auto& slot = results[job * n_methods + k];
            const Method m = opts.methods[k];
            if (const auto& f = rr[m]) {
                slot.ok = true;
                slot.beta_hat = f->beta_hat;
                slot.truncated = detail::diag_or(*f, "varcomp_truncated") != 0.0;
                slot.weak = detail::diag_or(*f, "weak_instrument") != 0.0;
            } else {
                messages[job * n_methods + k] = rr.error(m);
            }
        }
    });

    for (std::size_t p = 0; p < points; ++p) {
        const ScenarioConfig& cfg = grid.configs[p];
        for (std::size_t k = 0; k < n_methods; ++k) {
            MonteCarloCell cell;
            cell.axis = grid.axis;
            cell.axis_value = p < grid.values.size() ? grid.values[p] : static_cast<double>(p);
            cell.method = opts.methods[k];
            cell.analytic_bias = analytic_bias(cell.method, cfg, policy, report.plims[p]);

            double sum = 0.0;
            for (std::size_t r = 0; r < reps; ++r) {
                const std::size_t idx = ((p * reps) + r) * n_methods + k;
                const auto& s = results[idx];
                if (!s.ok) {
                    ++cell.failures;
                    report.failures.push_back({p, r, cell.method, messages[idx]});
                    continue;
                }
                ++cell.reps;
                sum += s.beta_hat - cfg.beta;
                cell.truncations += s.truncated ? 1 : 0;
                cell.weak_iv_count += s.weak ? 1 : 0;
            }
            if (cell.reps > 0) cell.mean_bias = sum / cell.reps;
            if (cell.reps > 1) {
                double ss = 0.0;
                for (std::size_t r = 0; r < reps; ++r) {
                    const auto& s = results[((p * reps) + r) * n_methods + k];
                    if (s.ok) ss += (s.beta_hat - cfg.beta - cell.mean_bias) * (s.beta_hat - cfg.beta - cell.mean_bias);
                }
                cell.mc_se = std::sqrt(ss / (cell.reps - 1)) / std::sqrt(static_cast<double>(cell.reps));
                cell.agreement = std::abs(cell.mean_bias - cell.analytic_bias) <= opts.z * cell.mc_se;
            }
            report.cells.push_back(std::move(cell));
        }
    }
    return report;
}

/// Single-point convenience: the grid axis is reported as "point".
inline MonteCarloReport run_monte_carlo(const std::vector<ScenarioConfig>& configs, const CovariatePolicy& policy,
                                        const MonteCarloOptions& opts) {
    ScenarioGrid grid{"point", {}, configs};
    for (std::size_t i = 0; i < configs.size(); ++i) grid.values.push_back(static_cast<double>(i));
    return run_monte_carlo(grid, policy, opts);
}

inline constexpr const char* kReportHeader =
    "scenario_axis,axis_value,method,mean_bias,mc_se,analytic_bias,agreement,reps,truncations,weak_iv_count";

inline void write_report_csv(std::ostream& os, const MonteCarloReport& report) {
    os << kReportHeader << '\n';
    for (const auto& c : report.cells) {
        os << c.axis << ',' << format_double(c.axis_value) << ',' << to_string(c.method) << ',';
        if (!report.analytic_only && c.reps > 0) os << format_double(c.mean_bias);
        os << ',';
        if (!report.analytic_only && c.reps > 1) os << format_double(c.mc_se);
        os << ',' << format_double(c.analytic_bias) << ',';
        if (c.agreement) os << (*c.agreement ? "true" : "false");
        os << ',' << c.reps << ',' << c.truncations << ',' << c.weak_iv_count << '\n';
    }
}

/// Reads back what write_report_csv produced. Empty numeric fields become NaN.
inline std::vector<MonteCarloCell> read_report_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kReportHeader) throw std::invalid_argument("not a Monte Carlo report CSV");
    std::vector<MonteCarloCell> cells;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) f.push_back(field);
        if (line.back() == ',') f.emplace_back();
        if (f.size() != 10) throw std::invalid_argument("report row has " + std::to_string(f.size()) + " fields");
        auto num = [](const std::string& s) { return s.empty() ? std::nan("") : parse_double(s); };
        MonteCarloCell c;
        c.axis = f[0];
        c.axis_value = parse_double(f[1]);
        const auto m = method_from_string(f[2]);
        if (!m) throw std::invalid_argument("unknown method '" + f[2] + "'");
        c.method = *m;
        c.mean_bias = num(f[3]);
        c.mc_se = num(f[4]);
        c.analytic_bias = parse_double(f[5]);
        if (!f[6].empty()) c.agreement = f[6] == "true";
        c.reps = std::stoi(f[7]);
        c.truncations = std::stoi(f[8]);
        c.weak_iv_count = std::stoi(f[9]);
        cells.push_back(std::move(c));
    }
    return cells;
}

}  // namespace confound_bench
