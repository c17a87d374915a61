#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "confound_bench/bias.hpp"
#include "confound_bench/harness.hpp"
#include "confound_bench/svg.hpp"

namespace confound_bench {

enum class FigurePreset {
    fig2_top_W,
    fig2_mid_B,
    fig2_bottom_WB,
    fig3_top_W_effects,
    fig3_bottom_B_effects,
    fig4_WB_effects,
};

inline constexpr std::array<FigurePreset, 6> kAllPresets = {
    FigurePreset::fig2_top_W,         FigurePreset::fig2_mid_B,           FigurePreset::fig2_bottom_WB,
    FigurePreset::fig3_top_W_effects, FigurePreset::fig3_bottom_B_effects, FigurePreset::fig4_WB_effects};

inline std::string_view to_string(FigurePreset p) {
    switch (p) {
        case FigurePreset::fig2_top_W: return "fig2_top_W";
        case FigurePreset::fig2_mid_B: return "fig2_mid_B";
        case FigurePreset::fig2_bottom_WB: return "fig2_bottom_WB";
        case FigurePreset::fig3_top_W_effects: return "fig3_top_W_effects";
        case FigurePreset::fig3_bottom_B_effects: return "fig3_bottom_B_effects";
        case FigurePreset::fig4_WB_effects: return "fig4_WB_effects";
    }
    return "?";
}

inline std::optional<FigurePreset> preset_from_string(std::string_view s) {
    for (auto p : kAllPresets)
        if (to_string(p) == s) return p;
    return std::nullopt;
}

/// One bias-versus-parameter sweep and where its outputs go.
struct ExperimentSpec {
    std::string name;
    ScenarioConfig base;
    std::string axis;
    std::vector<double> values;
    int reps = 1000;
    std::vector<Method> methods = {kAllMethods.begin(), kAllMethods.end()};
    std::string csv_path;
    std::optional<std::string> svg_path;
    bool analytic_only = false;
    double z = 3.0;
    CovariatePolicy policy;
    CalibrationOptions calibration;
};

/// Cluster sizes swept by the fig2 presets.
inline const std::vector<double> kPresetClusterSizes = {1, 2, 5, 10, 20, 50, 100, 200, 400};

/// Effect sizes swept by the fig3/fig4 presets: -1.5 to 1.5 in steps of 0.25.
inline std::vector<double> preset_effect_values() {
    std::vector<double> v;
    for (int k = -6; k <= 6; ++k) v.push_back(0.25 * k);
    return v;
}

/// Expands a preset into its panels. fig2 presets sweep n with Monte Carlo
/// overlays; fig3/fig4 presets sweep effect sizes at n = 200 from the
/// formulas alone unless `empirical` is set.
inline std::vector<ExperimentSpec> expand_preset(FigurePreset preset, bool empirical = false) {
    auto make = [&](ConfounderMode mode, const std::string& axis, std::vector<double> values, bool analytic) {
        ExperimentSpec s;
        s.base.confounder_mode = mode;
        s.axis = axis;
        s.values = std::move(values);
        s.analytic_only = analytic;
        return s;
    };
    std::vector<ExperimentSpec> specs;
    switch (preset) {
        case FigurePreset::fig2_top_W:
            specs.push_back(make(ConfounderMode::W_only, "n", kPresetClusterSizes, false));
            break;
        case FigurePreset::fig2_mid_B:
            specs.push_back(make(ConfounderMode::B_only, "n", kPresetClusterSizes, false));
            break;
        case FigurePreset::fig2_bottom_WB:
            specs.push_back(make(ConfounderMode::W_and_B, "n", kPresetClusterSizes, false));
            break;
        case FigurePreset::fig3_top_W_effects:
            for (const char* axis : {"alpha_1w", "beta_1w"})
                specs.push_back(make(ConfounderMode::W_only, axis, preset_effect_values(), !empirical));
            break;
        case FigurePreset::fig3_bottom_B_effects:
            for (const char* axis : {"alpha_1b", "beta_1b"})
                specs.push_back(make(ConfounderMode::B_only, axis, preset_effect_values(), !empirical));
            break;
        case FigurePreset::fig4_WB_effects:
            for (const char* axis : {"alpha_1w", "beta_1w", "alpha_1b", "beta_1b"})
                specs.push_back(make(ConfounderMode::W_and_B, axis, preset_effect_values(), !empirical));
            break;
    }
    const bool fig2 = preset == FigurePreset::fig2_top_W || preset == FigurePreset::fig2_mid_B ||
                      preset == FigurePreset::fig2_bottom_WB;
    for (auto& s : specs) {
        if (!fig2) s.base.n = 200;
        s.name = std::string(to_string(preset)) + (fig2 ? "" : "_" + s.axis);
        s.csv_path = s.name + ".csv";
        s.svg_path = s.name + ".svg";
    }
    return specs;
}

namespace detail {

using nlohmann::json;

inline std::pair<std::size_t, std::size_t> line_and_column(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

/// Collects violations instead of stopping at the first one.
class SchemaReader {
public:
    std::vector<std::string> violations;

    void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
        for (const auto& [key, _] : obj.items()) {
            bool ok = false;
            for (const char* a : allowed) ok = ok || key == a;
            if (!ok) violations.push_back(where + ": unknown key '" + key + "'");
        }
    }

    bool object(const json& j, const std::string& where) {
        if (j.is_object()) return true;
        violations.push_back(where + ": expected an object");
        return false;
    }

    std::optional<double> number(const json& j, const std::string& where) {
        if (j.is_number()) return j.get<double>();
        violations.push_back(where + ": expected a number");
        return std::nullopt;
    }

    std::optional<long long> integer(const json& j, const std::string& where, long long min) {
        if (j.is_number_integer() || (j.is_number_float() && j.get<double>() == std::floor(j.get<double>()))) {
            const auto v = j.is_number_unsigned() ? static_cast<long long>(j.get<unsigned long long>())
                                                  : j.get<long long>();
            if (v >= min) return v;
            violations.push_back(where + ": must be >= " + std::to_string(min));
            return std::nullopt;
        }
        violations.push_back(where + ": expected an integer");
        return std::nullopt;
    }

    std::optional<bool> boolean(const json& j, const std::string& where) {
        if (j.is_boolean()) return j.get<bool>();
        violations.push_back(where + ": expected true or false");
        return std::nullopt;
    }

    std::optional<std::string> string(const json& j, const std::string& where) {
        if (j.is_string()) return j.get<std::string>();
        violations.push_back(where + ": expected a string");
        return std::nullopt;
    }

    std::optional<VectorXd> vector(const json& j, const std::string& where) {
        if (!j.is_array()) {
            violations.push_back(where + ": expected an array of numbers");
            return std::nullopt;
        }
        VectorXd v(static_cast<Eigen::Index>(j.size()));
        for (std::size_t i = 0; i < j.size(); ++i) {
            if (!j[i].is_number()) {
                violations.push_back(where + "[" + std::to_string(i) + "]: expected a number");
                return std::nullopt;
            }
            v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
        }
        return v;
    }

    std::optional<MatrixXd> matrix(const json& j, const std::string& where) {
        if (!j.is_array()) {
            violations.push_back(where + ": expected an array of rows");
            return std::nullopt;
        }
        const std::size_t rows = j.size();
        MatrixXd M(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(rows));
        for (std::size_t r = 0; r < rows; ++r) {
            const auto row = vector(j[r], where + "[" + std::to_string(r) + "]");
            if (!row) return std::nullopt;
            if (static_cast<std::size_t>(row->size()) != rows) {
                violations.push_back(where + ": must be square");
                return std::nullopt;
            }
            M.row(static_cast<Eigen::Index>(r)) = row->transpose();
        }
        return M;
    }

    void model(const json& j, ScenarioConfig& cfg) {
        if (!object(j, "model")) return;
        reject_unknown(j, "model",
                       {"m", "n", "beta", "intercept_t", "intercept_y", "covariates", "alpha_c", "beta_c", "alpha_w",
                        "beta_w", "alpha_b", "beta_b", "sigma_a2", "sigma_b2", "sigma_et2", "sigma_ey2", "V_w", "V_b",
                        "mean_w", "mean_b", "confounder_mode", "seed"});
        auto set_int = [&](const char* key, int& dst, long long min) {
            if (j.contains(key))
                if (auto v = integer(j[key], std::string("model.") + key, min)) dst = static_cast<int>(*v);
        };
        auto set_num = [&](const char* key, double& dst) {
            if (j.contains(key))
                if (auto v = number(j[key], std::string("model.") + key)) dst = *v;
        };
        auto set_vec = [&](const char* key, VectorXd& dst) {
            if (j.contains(key))
                if (auto v = vector(j[key], std::string("model.") + key)) dst = *v;
        };
        auto set_mat = [&](const char* key, MatrixXd& dst) {
            if (j.contains(key))
                if (auto v = matrix(j[key], std::string("model.") + key)) dst = *v;
        };
        set_int("m", cfg.m, 2);
        set_int("n", cfg.n, 1);
        set_num("beta", cfg.beta);
        set_num("intercept_t", cfg.intercept_t);
        set_num("intercept_y", cfg.intercept_y);
        set_num("sigma_a2", cfg.sigma_a2);
        set_num("sigma_b2", cfg.sigma_b2);
        set_num("sigma_et2", cfg.sigma_et2);
        set_num("sigma_ey2", cfg.sigma_ey2);
        set_vec("alpha_c", cfg.alpha_c);
        set_vec("beta_c", cfg.beta_c);
        set_vec("alpha_w", cfg.alpha_w);
        set_vec("beta_w", cfg.beta_w);
        set_vec("alpha_b", cfg.alpha_b);
        set_vec("beta_b", cfg.beta_b);
        set_vec("mean_w", cfg.mean_w);
        set_vec("mean_b", cfg.mean_b);
        set_mat("V_w", cfg.V_w);
        set_mat("V_b", cfg.V_b);
        if (j.contains("seed")) {
            if (j["seed"].is_number_unsigned())
                cfg.seed = j["seed"].get<std::uint64_t>();
            else
                violations.push_back("model.seed: expected a nonnegative integer");
        }
        if (j.contains("confounder_mode")) {
            if (auto s = string(j["confounder_mode"], "model.confounder_mode")) {
                if (auto mode = confounder_mode_from_string(*s))
                    cfg.confounder_mode = *mode;
                else
                    violations.push_back("model.confounder_mode: expected none, W_only, B_only or W_and_B");
            }
        }
        if (j.contains("covariates")) {
            const json& cs = j["covariates"];
            if (!cs.is_array()) {
                violations.push_back("model.covariates: expected an array");
            } else {
                cfg.covariates.clear();
                for (std::size_t k = 0; k < cs.size(); ++k) {
                    const std::string where = "model.covariates[" + std::to_string(k) + "]";
                    if (!object(cs[k], where)) continue;
                    reject_unknown(cs[k], where, {"level", "mean", "variance"});
                    MeasuredCovariate mc;
                    if (cs[k].contains("level")) {
                        const auto lv = string(cs[k]["level"], where + ".level");
                        if (lv == "within")
                            mc.level = CovariateLevel::within;
                        else if (lv == "between")
                            mc.level = CovariateLevel::between;
                        else if (lv)
                            violations.push_back(where + ".level: expected within or between");
                    }
                    if (cs[k].contains("mean"))
                        if (auto v = number(cs[k]["mean"], where + ".mean")) mc.mean = *v;
                    if (cs[k].contains("variance"))
                        if (auto v = number(cs[k]["variance"], where + ".variance")) mc.variance = *v;
                    cfg.covariates.push_back(mc);
                }
            }
        }
    }

    void policy(const json& j, CovariatePolicy& p) {
        if (!object(j, "policy")) return;
        reject_unknown(j, "policy", {"include_measured", "include_latent_w", "include_latent_b"});
        for (auto [key, dst] : {std::pair{"include_measured", &p.include_measured},
                                std::pair{"include_latent_w", &p.include_latent_w},
                                std::pair{"include_latent_b", &p.include_latent_b}})
            if (j.contains(key))
                if (auto v = boolean(j[key], std::string("policy.") + key)) *dst = *v;
    }
};

}  // namespace detail

/// Parses an experiment config from JSON text. Plain experiments yield one
/// spec; a preset reference yields its panels, with any overrides applied.
inline std::vector<ExperimentSpec> parse_config_text(const std::string& text) {
    using detail::json;
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        const auto [line, col] = detail::line_and_column(text, e.byte > 0 ? e.byte - 1 : 0);
        throw ParseError("config parse error at line " + std::to_string(line) + ", column " + std::to_string(col) +
                             ": " + e.what(),
                         line, col);
    }

    detail::SchemaReader rd;
    if (!root.is_object()) throw SchemaError({"top level: expected an object"});
    rd.reject_unknown(root, "top level",
                      {"name", "preset", "axis", "values", "reps", "methods", "outputs", "analytic_only", "empirical",
                       "z", "model", "policy", "calibration"});

    std::vector<ExperimentSpec> specs;
    const bool is_preset = root.contains("preset");
    if (is_preset) {
        for (const char* k : {"axis", "values"})
            if (root.contains(k)) rd.violations.push_back(std::string(k) + ": not allowed together with a preset");
        bool empirical = false;
        if (root.contains("empirical"))
            if (auto v = rd.boolean(root["empirical"], "empirical")) empirical = *v;
        if (auto name = rd.string(root["preset"], "preset")) {
            if (auto p = preset_from_string(*name))
                specs = expand_preset(*p, empirical);
            else
                rd.violations.push_back("preset: unknown preset '" + *name + "'");
        }
    } else {
        ExperimentSpec s;
        for (const char* k : {"name", "axis", "values", "reps"})
            if (!root.contains(k)) rd.violations.push_back(std::string(k) + ": required");
        if (root.contains("empirical")) rd.violations.push_back("empirical: only meaningful with a preset");
        if (root.contains("name"))
            if (auto v = rd.string(root["name"], "name")) s.name = *v;
        if (root.contains("axis"))
            if (auto v = rd.string(root["axis"], "axis")) {
                s.axis = *v;
                if (!is_known_axis(s.axis)) rd.violations.push_back("axis: unknown axis '" + s.axis + "'");
            }
        if (root.contains("values"))
            if (auto v = rd.vector(root["values"], "values")) {
                if (v->size() == 0) rd.violations.push_back("values: must not be empty");
                s.values.assign(v->data(), v->data() + v->size());
            }
        s.csv_path = s.name + ".csv";
        specs.push_back(std::move(s));
    }

    for (auto& s : specs) {
        if (root.contains("reps"))
            if (auto v = rd.integer(root["reps"], "reps", 2)) s.reps = static_cast<int>(*v);
        if (root.contains("z"))
            if (auto v = rd.number(root["z"], "z")) {
                if (*v > 0.0)
                    s.z = *v;
                else
                    rd.violations.push_back("z: must be positive");
            }
        if (root.contains("analytic_only"))
            if (auto v = rd.boolean(root["analytic_only"], "analytic_only")) s.analytic_only = *v;
        if (root.contains("methods")) {
            const json& ms = root["methods"];
            if (!ms.is_array() || ms.empty()) {
                rd.violations.push_back("methods: expected a nonempty array of IV, OLS, FE, LMM");
            } else {
                s.methods.clear();
                for (const auto& mj : ms) {
                    const auto name = mj.is_string() ? mj.get<std::string>() : std::string();
                    const auto m = method_from_string(name);
                    if (!m)
                        rd.violations.push_back("methods: unknown method '" + (mj.is_string() ? name : mj.dump()) + "'");
                    else if (std::find(s.methods.begin(), s.methods.end(), *m) == s.methods.end())
                        s.methods.push_back(*m);
                }
            }
        }
        if (root.contains("model")) rd.model(root["model"], s.base);
        if (root.contains("policy")) rd.policy(root["policy"], s.policy);
        if (root.contains("calibration") && rd.object(root["calibration"], "calibration")) {
            const json& c = root["calibration"];
            rd.reject_unknown(c, "calibration", {"m", "reps"});
            if (c.contains("m"))
                if (auto v = rd.integer(c["m"], "calibration.m", 2)) s.calibration.m_cal = static_cast<int>(*v);
            if (c.contains("reps"))
                if (auto v = rd.integer(c["reps"], "calibration.reps", 2)) s.calibration.reps_cal = static_cast<int>(*v);
        }
        if (root.contains("outputs") && rd.object(root["outputs"], "outputs")) {
            const json& o = root["outputs"];
            rd.reject_unknown(o, "outputs", {"csv", "svg"});
            const std::string suffix = specs.size() > 1 ? "_" + s.axis : "";
            auto with_suffix = [&](const std::string& path) {
                if (suffix.empty()) return path;
                const std::filesystem::path p(path);
                return (p.parent_path() / (p.stem().string() + suffix + p.extension().string())).string();
            };
            if (o.contains("csv"))
                if (auto v = rd.string(o["csv"], "outputs.csv")) s.csv_path = with_suffix(*v);
            if (o.contains("svg"))
                if (auto v = rd.string(o["svg"], "outputs.svg")) s.svg_path = with_suffix(*v);
        }
    }
    if (!rd.violations.empty()) throw SchemaError(std::move(rd.violations));

    // Semantic checks once the shape is right.
    std::vector<std::string> violations;
    for (auto& s : specs) {
        try {
            s.base.validate();
        } catch (const Error& e) {
            violations.push_back(std::string("model: ") + e.what());
        }
        for (double v : s.values) {
            try {
                ScenarioConfig probe = s.base;
                set_axis_value(probe, s.axis, v);
                probe.validate();
            } catch (const Error& e) {
                violations.push_back("values: " + format_double(v) + ": " + e.what());
            }
        }
        if ((s.policy.include_latent_w && !s.base.generates_w()) ||
            (s.policy.include_latent_b && !s.base.generates_b()))
            violations.push_back("policy: adjusts for a latent confounder that confounder_mode does not generate");
    }
    if (!violations.empty()) throw SchemaError(std::move(violations));
    return specs;
}

inline std::vector<ExperimentSpec> parse_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidConfig("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

/// Writes to a sibling temp file, then renames over the target.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
        out << content;
        if (!out.flush()) throw std::runtime_error("write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

inline std::string method_color(Method m) {
    switch (m) {
        case Method::IV: return "#d62728";
        case Method::OLS: return "#1f77b4";
        case Method::FE: return "#2ca02c";
        case Method::LMM: return "#9467bd";
    }
    return "#333333";
}

/// Analytic lines per method, plus empirical markers unless analytic-only.
inline std::vector<PlotSeries> report_series(const MonteCarloReport& report, const std::vector<Method>& methods) {
    std::vector<PlotSeries> out;
    for (Method m : methods) {
        PlotSeries line{std::string(to_string(m)) + " analytic", {}, {}, SeriesKind::line, method_color(m)};
        PlotSeries dots{std::string(to_string(m)) + " empirical", {}, {}, SeriesKind::markers, method_color(m)};
        for (const auto& c : report.cells) {
            if (c.method != m) continue;
            line.x.push_back(c.axis_value);
            line.y.push_back(c.analytic_bias);
            if (!report.analytic_only && c.reps > 0 && std::isfinite(c.mean_bias)) {
                dots.x.push_back(c.axis_value);
                dots.y.push_back(c.mean_bias);
            }
        }
        out.push_back(std::move(line));
        if (!dots.x.empty()) out.push_back(std::move(dots));
    }
    return out;
}

struct ExperimentOutcome {
    MonteCarloReport report;
    std::filesystem::path csv_path;
    std::optional<std::filesystem::path> svg_path;
    int exit_code = 0;  // 0 ok, 2 agreement failure
};

inline MonteCarloReport run_experiment_report(const ExperimentSpec& spec, unsigned threads = 0) {
    const ScenarioGrid grid = scenario_grid(spec.base, spec.axis, spec.values);
    MonteCarloOptions opts;
    opts.reps = spec.reps;
    opts.z = spec.z;
    opts.methods = spec.methods;
    opts.threads = threads;
    opts.calibration = spec.calibration;
    opts.calibration.threads = threads;
    opts.analytic_only = spec.analytic_only;
    return run_monte_carlo(grid, spec.policy, opts);
}

/// Runs the sweep, writes the CSV (always) and SVG (when requested) under
/// `out_dir` for relative paths, and reports the exit code.
inline ExperimentOutcome run_experiment(const ExperimentSpec& spec, const std::filesystem::path& out_dir = {},
                                        unsigned threads = 0) {
    ExperimentOutcome outcome;
    outcome.report = run_experiment_report(spec, threads);
    auto resolve = [&](const std::string& p) {
        const std::filesystem::path path(p);
        return path.is_absolute() || out_dir.empty() ? path : out_dir / path;
    };

    std::ostringstream csv;
    write_report_csv(csv, outcome.report);
    outcome.csv_path = resolve(spec.csv_path.empty() ? spec.name + ".csv" : spec.csv_path);
    write_file_atomic(outcome.csv_path, csv.str());

    if (spec.svg_path) {
        PlotStyle style{spec.name + (spec.analytic_only ? " (analytic)" : ""), spec.axis, "bias"};
        outcome.svg_path = resolve(*spec.svg_path);
        write_file_atomic(*outcome.svg_path, emit_svg(report_series(outcome.report, spec.methods), style));
    }
    outcome.exit_code = spec.analytic_only || outcome.report.all_agree() ? 0 : 2;
    return outcome;
}

}  // namespace confound_bench
