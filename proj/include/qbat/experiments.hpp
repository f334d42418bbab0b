#ifndef QBAT_EXPERIMENTS_HPP
#define QBAT_EXPERIMENTS_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ensemble.hpp"

#ifndef QBAT_VERSION
#define QBAT_VERSION "0.0.0"
#endif

namespace qbat
{

inline constexpr const char* software_version = QBAT_VERSION;

/// Failure to create the output directory or write a result file.
struct IoError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Presets

enum class PresetKind
{
    Trajectory,  // three initial states at one (N, delta)
    DeltaSweep,  // half-life and eta of three states over the delta grid, plus the fit
    EtaVsCells,  // coherent eta over N
    EtaVsDelta,  // coherent eta over an integer delta grid
    RateTerms,   // internal-energy rate split at a few delta values
    CellScaling, // coherent epsilon(t) for several N, with and without disorder
    InternalEnergy, // u(t) and xi(t) of the three states
};

struct Preset
{
    std::string name;
    PresetKind kind;
    int n_cells;
    double delta;
    int realizations;
    /// Parameters the preset varies itself; overriding them is a usage error.
    std::set<std::string> swept;
    std::vector<double> deltas;
    std::vector<int> cells;
    std::vector<int> cell_realizations;
};

inline std::vector<double> half_step_delta_grid()
{
    std::vector<double> d;
    for (int i = 0; i <= 16; ++i) d.push_back(0.5 * i);
    return d;
}

inline const std::vector<Preset>& presets()
{
    static const std::vector<Preset> all = [] {
        const std::set<std::string> states{"initial"};
        const std::set<std::string> deltaStates{"delta", "initial"};
        std::vector<Preset> p;
        p.push_back({"fig1a", PresetKind::Trajectory, 2, 0.0, 100, states, {}, {}, {}});
        p.push_back({"fig1b", PresetKind::Trajectory, 2, 5.0, 100, states, {}, {}, {}});
        p.push_back({"fig2", PresetKind::DeltaSweep, 2, 0.0, 100, deltaStates, half_step_delta_grid(), {}, {}});
        p.push_back({"fig3a", PresetKind::Trajectory, 7, 0.0, 100, states, {}, {}, {}});
        p.push_back({"fig3b", PresetKind::Trajectory, 7, 5.0, 100, states, {}, {}, {}});
        p.push_back({"new-fig", PresetKind::RateTerms, 7, 0.0, 100, deltaStates, {0.0, 2.5, 5.0}, {}, {}});
        p.push_back({"fig4a", PresetKind::EtaVsCells, 2, 5.0, 100, {"n_cells", "realizations", "initial"}, {},
                     {2, 3, 4, 5, 6, 7}, {100, 5000, 3000, 1000, 500, 100}});
        p.push_back({"fig4b", PresetKind::EtaVsDelta, 7, 0.0, 100, deltaStates, {0, 1, 2, 3, 4, 5, 6, 7, 8}, {}, {}});
        p.push_back({"fig5", PresetKind::DeltaSweep, 7, 0.0, 50, deltaStates, half_step_delta_grid(), {}, {}});
        p.push_back({"app-a1", PresetKind::CellScaling, 3, 0.0, 100, {"n_cells", "delta", "realizations", "initial"},
                     {0.0, 5.0}, {3, 4, 5, 6}, {5000, 3000, 1000, 500}});
        p.push_back({"app-b", PresetKind::InternalEnergy, 7, 0.0, 100, deltaStates, {0.0, 5.0}, {}, {}});
        return p;
    }();
    return all;
}

inline const Preset* find_preset(const std::string& name)
{
    for (const auto& p : presets()) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

inline std::vector<std::string> preset_names()
{
    std::vector<std::string> n;
    for (const auto& p : presets()) n.push_back(p.name);
    return n;
}

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig
{
    std::optional<std::string> preset;
    ChainConfig chain;
    TimeGrid grid;
    double dt = 1e-3;
    int realizations = 100;
    std::uint64_t seed = 2024;
    int threads = 1;
    /// Manual runs only; presets choose their own states.
    InitialStateKind initial = Coherent{};
    /// Excited-state population used for every Classical state in the run.
    double alpha = 0.75;
    std::filesystem::path output_dir = "runs";

    void validate() const
    {
        chain.validate();
        grid.validate();
        if (!(dt > 0.0)) throw std::invalid_argument("RunConfig: dt must be > 0");
        if (realizations < 1) throw std::invalid_argument("RunConfig: realizations must be >= 1");
        if (threads < 1) throw std::invalid_argument("RunConfig: threads must be >= 1");
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("RunConfig: alpha must lie in [0, 1]");
        if (preset && !find_preset(*preset)) throw std::invalid_argument("RunConfig: unknown preset " + *preset);
    }
};

/// Preset defaults for every field the preset fixes.
inline RunConfig preset_config(const std::string& name)
{
    const Preset* p = find_preset(name);
    if (!p) throw std::invalid_argument("unknown preset '" + name + "'");
    RunConfig c;
    c.preset = name;
    c.chain.n_cells = p->n_cells;
    c.chain.delta = p->delta;
    c.realizations = p->realizations;
    return c;
}

inline InitialStateKind parse_initial(const std::string& name, double alpha)
{
    if (name == "coherent") return Coherent{};
    if (name == "classical") return Classical{alpha};
    if (name == "fullyexcited") return FullyExcited{};
    throw std::invalid_argument("unknown initial state '" + name + "'");
}

// ---------------------------------------------------------------------------
// Output helpers

/// Round-trip decimal with 17 significant digits.
inline std::string format_number(double x)
{
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/// Label used in file and column names, e.g. 2.5 -> "2.5".
inline std::string format_label(double x)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", x);
    return buf;
}

inline std::uint64_t fnv1a64(const std::string& bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

class CsvTable
{
public:
    void add_column(const std::string& name, const std::vector<double>& values)
    {
        header_.push_back(name);
        columns_.push_back({});
        for (double v : values) columns_.back().push_back(format_number(v));
    }

    void add_text_column(const std::string& name, std::vector<std::string> values)
    {
        header_.push_back(name);
        columns_.push_back(std::move(values));
    }

    std::size_t rows() const { return columns_.empty() ? 0 : columns_.front().size(); }

    std::string str() const
    {
        for (const auto& c : columns_) {
            if (c.size() != rows()) throw std::logic_error("CsvTable: ragged columns");
        }
        std::string out;
        for (std::size_t i = 0; i < header_.size(); ++i) out += (i ? "," : "") + header_[i];
        out += '\n';
        for (std::size_t r = 0; r < rows(); ++r) {
            for (std::size_t c = 0; c < columns_.size(); ++c) out += (c ? "," : "") + columns_[c][r];
            out += '\n';
        }
        return out;
    }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> columns_;
};

struct WrittenFile
{
    std::string name;
    std::size_t rows = 0;
    std::uint64_t checksum = 0;
};

struct RunReport
{
    std::filesystem::path output_dir;
    std::vector<WrittenFile> files;
    double wall_seconds = 0.0;
    nlohmann::ordered_json manifest;
};

namespace detail
{

inline void write_bytes(const std::filesystem::path& path, const std::string& bytes)
{
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.close();
    if (!f) throw IoError("failed writing " + path.string());
}

class Emitter
{
public:
    explicit Emitter(std::filesystem::path dir)
        : dir_(std::move(dir))
    {
        std::error_code ec;
        std::filesystem::create_directories(dir_, ec);
        if (ec || !std::filesystem::is_directory(dir_)) {
            throw IoError("cannot create output directory " + dir_.string()
                          + (ec ? ": " + ec.message() : std::string()));
        }
    }

    void csv(const std::string& name, const CsvTable& table)
    {
        const std::string bytes = table.str();
        write_bytes(dir_ / name, bytes);
        files_.push_back({name, table.rows(), fnv1a64(bytes)});
    }

    void json(const std::string& name, const nlohmann::ordered_json& doc)
    {
        const std::string bytes = doc.dump(2) + "\n";
        write_bytes(dir_ / name, bytes);
        files_.push_back({name, 0, fnv1a64(bytes)});
    }

    const std::filesystem::path& dir() const { return dir_; }
    const std::vector<WrittenFile>& files() const { return files_; }

private:
    std::filesystem::path dir_;
    std::vector<WrittenFile> files_;
};

inline std::vector<InitialStateKind> all_states(double alpha)
{
    return {Coherent{}, Classical{alpha}, FullyExcited{}};
}

struct Runner
{
    const RunConfig& config;
    std::ostream* log;
    nlohmann::ordered_json ensembles = nlohmann::ordered_json::array();

    EnsembleResult run(int nCells, double delta, int realizations, const InitialStateKind& kind, bool withPassive)
    {
        EnsembleSpec spec;
        spec.config = config.chain;
        spec.config.n_cells = nCells;
        spec.config.delta = delta;
        spec.initial = kind;
        spec.grid = config.grid;
        spec.n_realizations = realizations;
        spec.master_seed = config.seed;
        spec.evolve.dt = config.dt;
        spec.evolve.record_passive_rate = withPassive;
        if (log) {
            *log << "  N=" << nCells << " delta=" << format_label(delta) << " state=" << state_name(kind)
                 << " realizations=" << realizations << " ..." << std::flush;
        }
        const auto t0 = std::chrono::steady_clock::now();
        EnsembleResult r = run_ensemble(spec, config.threads);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (log) *log << " eta=" << r.eta_percent << "% (" << secs << " s)\n";

        int masked = 0;
        for (int m : r.xi_masked) masked += m;
        ensembles.push_back({{"n_cells", nCells},
                             {"delta", delta},
                             {"initial", state_name(kind)},
                             {"realizations", realizations},
                             {"xi_masked_points", masked},
                             {"max_trace_error", r.max_trace_error},
                             {"max_hermiticity_error", r.max_hermiticity_error},
                             {"min_eigenvalue", r.min_eigenvalue}});
        return r;
    }
};

inline std::string tau_text(const std::optional<double>& tau)
{
    return tau ? format_number(*tau) : std::string("not-reached");
}

inline nlohmann::ordered_json fit_json(const std::vector<double>& deltas, const std::vector<std::optional<double>>& taus)
{
    std::vector<double> x, y;
    nlohmann::ordered_json excluded = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        if (taus[i]) {
            x.push_back(deltas[i]);
            y.push_back(*taus[i]);
        } else {
            excluded.push_back(deltas[i]);
        }
    }
    nlohmann::ordered_json j;
    j["model"] = "tau(delta) = alpha + beta * exp(-gamma * delta)";
    j["series"] = "coherent";
    j["points_used"] = x.size();
    j["deltas_not_reached"] = excluded;
    if (x.size() < 4) {
        j["status"] = "insufficient-data";
        return j;
    }
    const HalfLifeFit f = fit_half_life_curve(x, y);
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    j["status"] = f.converged ? "converged" : "max-iterations";
    j["alpha"] = f.alpha;
    j["beta"] = f.beta;
    j["gamma"] = f.gamma;
    j["residual_sum_squares"] = f.residual;
    j["data_sum_squares"] = var;
    j["iterations"] = f.iterations;
    j["gamma_identifiable"] = f.gamma_identifiable;
    return j;
}

inline void emit_trajectory(Runner& run, Emitter& out, int nCells, double delta)
{
    const auto states = all_states(run.config.alpha);
    std::vector<EnsembleResult> res;
    for (const auto& s : states) res.push_back(run.run(nCells, delta, run.config.realizations, s, false));
    CsvTable t;
    t.add_column("t", run.config.grid.times());
    for (std::size_t k = 0; k < states.size(); ++k) t.add_column("eps_" + state_name(states[k]), res[k].epsilon);
    for (std::size_t k = 0; k < states.size(); ++k) {
        t.add_column("stderr_" + state_name(states[k]), res[k].stderr_epsilon);
    }
    out.csv("trajectory.csv", t);

    CsvTable s;
    std::vector<std::string> names, taus;
    std::vector<double> etas;
    for (std::size_t k = 0; k < states.size(); ++k) {
        names.push_back(state_name(states[k]));
        taus.push_back(tau_text(res[k].half_life));
        etas.push_back(res[k].eta_percent);
    }
    s.add_text_column("initial", names);
    s.add_text_column("tau", taus);
    s.add_column("eta", etas);
    out.csv("summary.csv", s);
}

inline void emit_delta_sweep(Runner& run, Emitter& out, const Preset& p)
{
    const auto states = all_states(run.config.alpha);
    std::vector<std::vector<std::string>> taus(states.size());
    std::vector<std::vector<double>> etas(states.size());
    std::vector<std::optional<double>> coherentTaus;
    for (double d : p.deltas) {
        for (std::size_t k = 0; k < states.size(); ++k) {
            const auto r = run.run(run.config.chain.n_cells, d, run.config.realizations, states[k], false);
            taus[k].push_back(tau_text(r.half_life));
            etas[k].push_back(r.eta_percent);
            if (k == 0) coherentTaus.push_back(r.half_life);
        }
    }
    CsvTable t;
    t.add_column("delta", p.deltas);
    for (std::size_t k = 0; k < states.size(); ++k) t.add_text_column("tau_" + state_name(states[k]), taus[k]);
    for (std::size_t k = 0; k < states.size(); ++k) t.add_column("eta_" + state_name(states[k]), etas[k]);
    out.csv("sweep.csv", t);
    out.json("fit.json", fit_json(p.deltas, coherentTaus));
}

inline void emit_eta_vs_cells(Runner& run, Emitter& out, const Preset& p)
{
    std::vector<double> cells, reals, etas;
    for (std::size_t i = 0; i < p.cells.size(); ++i) {
        const auto r = run.run(p.cells[i], run.config.chain.delta, p.cell_realizations[i], Coherent{}, false);
        cells.push_back(p.cells[i]);
        reals.push_back(p.cell_realizations[i]);
        etas.push_back(r.eta_percent);
    }
    CsvTable t;
    t.add_column("n_cells", cells);
    t.add_column("realizations", reals);
    t.add_column("eta_coherent", etas);
    out.csv("eta_vs_cells.csv", t);
}

inline void emit_eta_vs_delta(Runner& run, Emitter& out, const Preset& p)
{
    std::vector<double> etas;
    for (double d : p.deltas) {
        etas.push_back(run.run(run.config.chain.n_cells, d, run.config.realizations, Coherent{}, false).eta_percent);
    }
    CsvTable t;
    t.add_column("delta", p.deltas);
    t.add_column("eta_coherent", etas);
    out.csv("eta_vs_delta.csv", t);
}

inline void emit_rate_terms(Runner& run, Emitter& out, const Preset& p)
{
    for (double d : p.deltas) {
        const auto r = run.run(run.config.chain.n_cells, d, run.config.realizations, Coherent{}, true);
        std::vector<double> internal(r.times.size());
        for (std::size_t i = 0; i < internal.size(); ++i) {
            internal[i] = r.mean_coherent_rate[i] + r.mean_dissipative_rate[i];
        }
        CsvTable t;
        t.add_column("t", r.times);
        t.add_column("coherent_term", r.mean_coherent_rate);
        t.add_column("dissipative_term", r.mean_dissipative_rate);
        t.add_column("internal_rate", internal);
        t.add_column("u0_rate", r.mean_u0_rate);
        out.csv("rates_delta_" + format_label(d) + ".csv", t);
    }
}

inline void emit_cell_scaling(Runner& run, Emitter& out, const Preset& p)
{
    for (double d : p.deltas) {
        CsvTable t;
        t.add_column("t", run.config.grid.times());
        std::vector<EnsembleResult> res;
        for (std::size_t i = 0; i < p.cells.size(); ++i) {
            res.push_back(run.run(p.cells[i], d, p.cell_realizations[i], Coherent{}, false));
        }
        for (std::size_t i = 0; i < p.cells.size(); ++i) {
            t.add_column("eps_n" + std::to_string(p.cells[i]), res[i].epsilon);
        }
        for (std::size_t i = 0; i < p.cells.size(); ++i) {
            t.add_column("stderr_n" + std::to_string(p.cells[i]), res[i].stderr_epsilon);
        }
        out.csv("ergotropy_delta_" + format_label(d) + ".csv", t);
    }
}

inline void emit_internal_energy(Runner& run, Emitter& out, const Preset& p)
{
    const auto states = all_states(run.config.alpha);
    for (double d : p.deltas) {
        std::vector<EnsembleResult> res;
        for (const auto& s : states) res.push_back(run.run(run.config.chain.n_cells, d, run.config.realizations, s, false));
        CsvTable t;
        t.add_column("t", run.config.grid.times());
        for (std::size_t k = 0; k < states.size(); ++k) t.add_column("u_" + state_name(states[k]), res[k].u);
        for (std::size_t k = 0; k < states.size(); ++k) {
            t.add_column("stderr_u_" + state_name(states[k]), res[k].stderr_u);
        }
        for (std::size_t k = 0; k < states.size(); ++k) t.add_column("xi_" + state_name(states[k]), res[k].xi);
        for (std::size_t k = 0; k < states.size(); ++k) {
            std::vector<double> m(res[k].xi_masked.begin(), res[k].xi_masked.end());
            t.add_column("xi_masked_" + state_name(states[k]), m);
        }
        out.csv("internal_delta_" + format_label(d) + ".csv", t);
    }
}

inline void emit_manual(Runner& run, Emitter& out)
{
    const auto r = run.run(run.config.chain.n_cells, run.config.chain.delta, run.config.realizations,
                           run.config.initial, true);
    CsvTable t;
    t.add_column("t", r.times);
    t.add_column("eps", r.epsilon);
    t.add_column("stderr_eps", r.stderr_epsilon);
    t.add_column("u", r.u);
    t.add_column("stderr_u", r.stderr_u);
    t.add_column("xi", r.xi);
    t.add_column("xi_masked", std::vector<double>(r.xi_masked.begin(), r.xi_masked.end()));
    t.add_column("ergotropy", r.mean_ergotropy);
    t.add_column("coherent_term", r.mean_coherent_rate);
    t.add_column("dissipative_term", r.mean_dissipative_rate);
    t.add_column("u0_rate", r.mean_u0_rate);
    out.csv("trajectory.csv", t);

    nlohmann::ordered_json s;
    s["initial"] = state_name(run.config.initial);
    s["eta_percent"] = r.eta_percent;
    if (r.half_life) {
        s["half_life"] = *r.half_life;
    } else {
        s["half_life"] = "not-reached";
    }
    out.json("summary.json", s);
}

inline std::string utc_now()
{
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

} // namespace detail

/// Resolved parameters as recorded in the manifest.
inline nlohmann::ordered_json config_json(const RunConfig& c)
{
    nlohmann::ordered_json j;
    j["preset"] = c.preset ? nlohmann::ordered_json(*c.preset) : nlohmann::ordered_json(nullptr);
    j["n_cells"] = c.chain.n_cells;
    j["omega0"] = c.chain.omega0;
    j["delta"] = c.chain.delta;
    j["coupling"] = c.chain.coupling;
    j["gamma"] = c.chain.gamma;
    j["fold_abs"] = c.chain.fold_abs;
    j["t_end"] = c.grid.t_end;
    j["samples"] = c.grid.n_samples;
    j["dt"] = c.dt;
    j["realizations"] = c.realizations;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["initial"] = c.preset ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(state_name(c.initial));
    j["alpha"] = c.alpha;
    if (c.preset) {
        const Preset& p = *find_preset(*c.preset);
        if (!p.deltas.empty()) j["sweep_delta"] = p.deltas;
        if (!p.cells.empty()) {
            j["sweep_n_cells"] = p.cells;
            j["sweep_realizations"] = p.cell_realizations;
        }
    }
    return j;
}

/**
 *  Runs a preset (or the manual single-ensemble run) and writes its CSV
 *  files plus manifest.json into config.output_dir.
 *
 *  Every ensemble of a run uses config.seed as its master seed. Progress
 *  lines go to `log` when given.
 */
inline RunReport run_preset(const RunConfig& config, std::ostream* log = nullptr)
{
    config.validate();
    const auto started = std::chrono::steady_clock::now();
    const std::string startedUtc = detail::utc_now();

    detail::Emitter out(config.output_dir);
    detail::Runner run{config, log};
    if (log) *log << "qbattery " << (config.preset ? *config.preset : std::string("manual")) << "\n";

    if (!config.preset) {
        detail::emit_manual(run, out);
    } else {
        const Preset& p = *find_preset(*config.preset);
        switch (p.kind) {
        case PresetKind::Trajectory:
            detail::emit_trajectory(run, out, config.chain.n_cells, config.chain.delta);
            break;
        case PresetKind::DeltaSweep: detail::emit_delta_sweep(run, out, p); break;
        case PresetKind::EtaVsCells: detail::emit_eta_vs_cells(run, out, p); break;
        case PresetKind::EtaVsDelta: detail::emit_eta_vs_delta(run, out, p); break;
        case PresetKind::RateTerms: detail::emit_rate_terms(run, out, p); break;
        case PresetKind::CellScaling: detail::emit_cell_scaling(run, out, p); break;
        case PresetKind::InternalEnergy: detail::emit_internal_energy(run, out, p); break;
        }
    }

    RunReport rep;
    rep.output_dir = config.output_dir;
    rep.files = out.files();
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    nlohmann::ordered_json m;
    m["software"] = {{"name", "qbattery"}, {"version", software_version}};
    m["parameters"] = config_json(config);
    m["rng"] = {{"algorithm", rng_algorithm_id},
                {"master_seed", config.seed},
                {"realization_seed", "mix64(master_seed ^ mix64(index + 0x632be59bd9b4e019))"}};
    m["conventions"] = {{"time_unit", "1/gamma"},
                        {"internal_energy_reference", "ground level of each realization's free Hamiltonian"},
                        {"xi_mask_threshold", xi_mask_threshold},
                        {"csv_float_format", "%.17g"}};
    m["ensembles"] = run.ensembles;
    m["started_utc"] = startedUtc;
    m["wall_clock_seconds"] = rep.wall_seconds;
    nlohmann::ordered_json files = nlohmann::ordered_json::object();
    for (const auto& f : rep.files) files[f.name] = {{"fnv1a64", hex64(f.checksum)}, {"rows", f.rows}};
    m["files"] = files;
    detail::write_bytes(config.output_dir / "manifest.json", m.dump(2) + "\n");
    rep.manifest = std::move(m);
    return rep;
}

} // namespace qbat

#endif // QBAT_EXPERIMENTS_HPP
