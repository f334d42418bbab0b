#ifndef QBAT_CLI_HPP
#define QBAT_CLI_HPP

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "experiments.hpp"

namespace qbat
{

/// Bad, missing or conflicting command-line / config-file parameters.
struct UsageError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

/// --help was given; what() holds the help text.
struct HelpRequested : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

namespace detail
{

struct CliValues
{
    std::optional<std::string> preset;
    std::optional<int> n_cells;
    std::optional<double> delta;
    std::optional<double> omega0;
    std::optional<double> coupling;
    std::optional<double> gamma;
    std::optional<double> t_end;
    std::optional<int> samples;
    std::optional<double> dt;
    std::optional<int> realizations;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<std::string> initial;
    std::optional<double> alpha;
    std::optional<bool> fold_abs;
    std::string out = "runs";
};

inline void bind_options(CLI::App& sim, CliValues& v)
{
    sim.add_option("--preset", v.preset, "Figure preset")->check(CLI::IsMember(preset_names()));
    sim.add_option("--n-cells", v.n_cells, "Number of cells N")->check(CLI::Range(1, 12));
    sim.add_option("--delta", v.delta, "Disorder strength (>= 0)")->check(CLI::NonNegativeNumber);
    sim.add_option("--omega0", v.omega0, "Reference Larmor frequency, units of gamma");
    sim.add_option("--coupling", v.coupling, "XX coupling J, units of gamma");
    sim.add_option("--gamma", v.gamma, "Decay rate")->check(CLI::PositiveNumber);
    sim.add_option("--t-end", v.t_end, "End of the time window")->check(CLI::PositiveNumber);
    sim.add_option("--samples", v.samples, "Grid points including t = 0")->check(CLI::Range(2, 100000000));
    sim.add_option("--dt", v.dt, "RK4 step")->check(CLI::PositiveNumber);
    sim.add_option("--realizations", v.realizations, "Disorder realizations")->check(CLI::PositiveNumber);
    sim.add_option("--seed", v.seed, "Master seed (default 2024)");
    sim.add_option("--threads", v.threads, "Worker threads (default: hardware concurrency)")
        ->check(CLI::PositiveNumber);
    sim.add_option("--initial", v.initial, "Initial state of a manual run")
        ->check(CLI::IsMember({"coherent", "classical", "fullyexcited"}));
    sim.add_option("--alpha", v.alpha, "Excited population of the classical state")->check(CLI::Range(0.0, 1.0));
    sim.add_flag("--fold-abs,!--no-fold-abs", v.fold_abs,
                 "Use |field| so every frequency is non-negative (default); --no-fold-abs keeps the sign");
    sim.add_option("--out", v.out, "Output directory")->capture_default_str();
}

inline bool given(const CLI::App& sim, const char* name)
{
    return sim.get_option(name)->count() > 0;
}

inline RunConfig resolve(const CLI::App& sim, const CliValues& v)
{
    RunConfig c;
    if (v.preset) {
        c = preset_config(*v.preset);
        const Preset& p = *find_preset(*v.preset);
        const std::pair<const char*, const char*> sweepable[] = {
            {"--n-cells", "n_cells"}, {"--delta", "delta"}, {"--realizations", "realizations"}, {"--initial", "initial"}};
        for (const auto& [flag, key] : sweepable) {
            if (given(sim, flag) && p.swept.count(key)) {
                throw UsageError(std::string(flag) + ": preset " + p.name + " sets " + key + " itself");
            }
        }
    } else {
        if (!v.n_cells) throw UsageError("--n-cells: required unless --preset is given");
        if (!v.delta) throw UsageError("--delta: required unless --preset is given");
    }

    if (v.n_cells) c.chain.n_cells = *v.n_cells;
    if (v.delta) c.chain.delta = *v.delta;
    if (v.omega0) c.chain.omega0 = *v.omega0;
    if (v.coupling) c.chain.coupling = *v.coupling;
    if (v.gamma) c.chain.gamma = *v.gamma;
    if (v.fold_abs) c.chain.fold_abs = *v.fold_abs;
    if (v.t_end) c.grid.t_end = *v.t_end;
    if (v.samples) c.grid.n_samples = *v.samples;
    if (v.dt) c.dt = *v.dt;
    if (v.realizations) c.realizations = *v.realizations;
    if (v.seed) c.seed = *v.seed;
    c.threads = v.threads ? *v.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (v.alpha) c.alpha = *v.alpha;
    c.output_dir = v.out;

    const std::string initial = v.initial.value_or("coherent");
    if (v.alpha && !v.preset && initial != "classical") {
        throw UsageError("--alpha: only meaningful with --initial classical");
    }
    c.initial = parse_initial(initial, c.alpha);

    if (c.dt > c.grid.spacing() * (1.0 + 1e-12)) {
        throw UsageError("--dt: step " + format_number(c.dt) + " exceeds the sample spacing "
                         + format_number(c.grid.spacing()));
    }
    if (!std::isfinite(c.chain.omega0)) throw UsageError("--omega0: must be finite");
    if (!std::isfinite(c.chain.coupling)) throw UsageError("--coupling: must be finite");
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return c;
}

} // namespace detail

/**
 *  Parses `simulate [options]` (argv without the program name) into a
 *  resolved RunConfig. A --config file uses the same keys as the long flags;
 *  unknown keys are rejected.
 */
inline RunConfig parse_config(const std::vector<std::string>& args)
{
    CLI::App app{"Disordered quantum battery self-discharge simulator", "qbattery"};
    app.set_config("--config", "", "TOML/INI file with option values");
    app.allow_config_extras(CLI::config_extras_mode::error);
    detail::CliValues v;
    detail::bind_options(app, v);
    // Options are owned by the top level so the config file can set them.
    app.add_subcommand("simulate", "Run a figure preset or a manual ensemble")->fallthrough()->set_help_flag();
    app.require_subcommand(1, 1);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        throw HelpRequested(app.get_formatter()->make_help(&app, "qbattery", CLI::AppFormatMode::Normal));
    } catch (const CLI::ParseError& e) {
        throw UsageError(e.what());
    }
    return detail::resolve(app, v);
}

/// Entry point of the qbattery tool; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    RunConfig config;
    try {
        config = parse_config(args);
    } catch (const HelpRequested& h) {
        out << h.what();
        return 0;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return 1;
    }
    try {
        const RunReport rep = run_preset(config, &err);
        for (const auto& f : rep.files) out << (rep.output_dir / f.name).string() << "\n";
        out << (rep.output_dir / "manifest.json").string() << "\n";
        return 0;
    } catch (const NumericalError& e) {
        err << "numerical abort: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        err << "i/o error: " << e.what() << "\n";
        return 3;
    }
}

} // namespace qbat

#endif // QBAT_CLI_HPP
