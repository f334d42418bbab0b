#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "qbat/cli.hpp"

using namespace qbat;
using Catch::Approx;
namespace fs = std::filesystem;

namespace
{

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("qbat_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

std::vector<std::string> lines(const std::string& text)
{
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> out;
    std::istringstream in(line);
    for (std::string cell; std::getline(in, cell, ',');) out.push_back(cell);
    return out;
}

int run(std::vector<std::string> args, std::string* errText = nullptr)
{
    args.insert(args.begin(), "qbattery");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    if (errText) *errText = err.str();
    return code;
}

} // namespace

TEST_CASE("preset parameters resolve from the preset table", "[cli][parse]")
{
    const auto c = parse_config({"simulate", "--preset", "fig1b", "--seed", "42", "--out", "runs/"});
    REQUIRE(c.preset);
    CHECK(*c.preset == "fig1b");
    CHECK(c.chain.n_cells == 2);
    CHECK(c.chain.delta == 5.0);
    CHECK(c.chain.coupling == 10.0);
    CHECK(c.chain.gamma == 1.0);
    CHECK(c.realizations == 100);
    CHECK(c.seed == 42);
    CHECK(c.output_dir == fs::path("runs/"));

    CHECK(parse_config({"simulate", "--preset", "fig5"}).realizations == 50);
    CHECK(parse_config({"simulate", "--preset", "fig3b"}).chain.n_cells == 7);
    CHECK(parse_config({"simulate", "--preset", "fig1a"}).seed == 2024);
}

TEST_CASE("overrides win over preset defaults", "[cli][parse]")
{
    const auto c = parse_config({"simulate", "--preset", "fig1a", "--realizations", "7", "--t-end", "2", "--samples",
                                 "21", "--omega0", "3", "--fold-abs"});
    CHECK(c.realizations == 7);
    CHECK(c.grid.t_end == 2.0);
    CHECK(c.grid.n_samples == 21);
    CHECK(c.chain.omega0 == 3.0);
    CHECK(c.chain.fold_abs);
}

TEST_CASE("manual single-cell run parses", "[cli][parse]")
{
    const auto c = parse_config({"simulate", "--n-cells", "1", "--delta", "0", "--initial", "classical", "--alpha",
                                 "0.6", "--threads", "2"});
    CHECK_FALSE(c.preset);
    CHECK(c.chain.n_cells == 1);
    CHECK(c.threads == 2);
    REQUIRE(std::holds_alternative<Classical>(c.initial));
    CHECK(std::get<Classical>(c.initial).alpha == 0.6);
}

TEST_CASE("usage errors name the offending parameter", "[cli][parse]")
{
    auto message = [](std::vector<std::string> args) {
        try {
            (void)parse_config(args);
        } catch (const UsageError& e) {
            return std::string(e.what());
        }
        return std::string("<no error>");
    };
    CHECK_THAT(message({"simulate", "--n-cells", "1", "--delta", "-1"}), Catch::Matchers::ContainsSubstring("--delta"));
    CHECK_THAT(message({"simulate", "--delta", "1"}), Catch::Matchers::ContainsSubstring("--n-cells"));
    CHECK_THAT(message({"simulate", "--n-cells", "2"}), Catch::Matchers::ContainsSubstring("--delta"));
    CHECK_THAT(message({"simulate", "--preset", "fig2", "--delta", "3"}), Catch::Matchers::ContainsSubstring("--delta"));
    CHECK_THAT(message({"simulate", "--preset", "fig1a", "--initial", "coherent"}),
               Catch::Matchers::ContainsSubstring("--initial"));
    CHECK_THAT(message({"simulate", "--preset", "fig4a", "--n-cells", "3"}),
               Catch::Matchers::ContainsSubstring("--n-cells"));
    CHECK_THAT(message({"simulate", "--preset", "fig9"}), Catch::Matchers::ContainsSubstring("--preset"));
    CHECK_THAT(message({"simulate", "--n-cells", "2", "--delta", "1", "--bogus", "3"}),
               Catch::Matchers::ContainsSubstring("--bogus"));
    CHECK_THAT(message({"simulate", "--n-cells", "2", "--delta", "1", "--alpha", "0.5"}),
               Catch::Matchers::ContainsSubstring("--alpha"));
    CHECK_THAT(message({"simulate", "--n-cells", "2", "--delta", "1", "--samples", "11", "--dt", "2"}),
               Catch::Matchers::ContainsSubstring("--dt"));
    CHECK(message({}) != "<no error>");
}

TEST_CASE("config files use the flag names and reject unknown keys", "[cli][parse]")
{
    const fs::path dir = scratch("config");
    fs::create_directories(dir);
    {
        std::ofstream f(dir / "good.toml");
        f << "preset = \"fig1b\"\nrealizations = 12\nseed = 5\n";
    }
    const auto c = parse_config({"simulate", "--config", (dir / "good.toml").string(), "--seed", "6"});
    CHECK(*c.preset == "fig1b");
    CHECK(c.realizations == 12);
    CHECK(c.seed == 6);

    {
        std::ofstream f(dir / "bad.toml");
        f << "preset = \"fig1b\"\nunknown_key = 1\n";
    }
    CHECK_THROWS_AS(parse_config({"simulate", "--config", (dir / "bad.toml").string()}), UsageError);
}

TEST_CASE("exit codes", "[cli]")
{
    const fs::path dir = scratch("exit");
    std::string err;
    CHECK(run({"simulate", "--n-cells", "1", "--delta", "-1", "--out", dir.string()}, &err) == 1);
    CHECK_THAT(err, Catch::Matchers::ContainsSubstring("usage error"));
    CHECK(run({"simulate", "--help"}) == 0);

    CHECK(run({"simulate", "--n-cells", "1", "--delta", "0", "--t-end", "1", "--samples", "11", "--realizations",
               "1", "--out", (dir / "ok").string()})
          == 0);

    // Zero ergotropy at t = 0 cannot be normalized.
    CHECK(run({"simulate", "--n-cells", "1", "--delta", "0", "--omega0", "0", "--t-end", "1", "--samples", "11",
               "--out", (dir / "num").string()},
              &err)
          == 2);
    CHECK_THAT(err, Catch::Matchers::ContainsSubstring("seed"));

    std::ofstream(dir / "file") << "x";
    CHECK(run({"simulate", "--n-cells", "1", "--delta", "0", "--t-end", "1", "--samples", "11", "--out",
               (dir / "file" / "sub").string()})
          == 3);
}

TEST_CASE("manual run writes a trajectory, a summary and a manifest", "[cli][output]")
{
    const fs::path dir = scratch("manual");
    RunConfig c;
    c.chain.n_cells = 2;
    c.chain.delta = 2.0;
    c.grid = {1.0, 21};
    c.realizations = 3;
    c.output_dir = dir;
    const auto rep = run_preset(c);

    const auto rows = lines(slurp(dir / "trajectory.csv"));
    REQUIRE(rows.size() == 22);
    CHECK(rows.front()
          == "t,eps,stderr_eps,u,stderr_u,xi,xi_masked,ergotropy,coherent_term,dissipative_term,u0_rate");
    CHECK(split(rows[1])[1] == "1");

    const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest["parameters"]["delta"] == 2.0);
    CHECK(manifest["parameters"]["seed"] == 2024);
    CHECK(manifest["rng"]["algorithm"] == rng_algorithm_id);
    CHECK(manifest["software"]["version"] == software_version);
    CHECK(manifest.contains("wall_clock_seconds"));
    for (const auto& f : rep.files) {
        CHECK(manifest["files"][f.name]["fnv1a64"] == hex64(fnv1a64(slurp(dir / f.name))));
    }
    CHECK(nlohmann::json::parse(slurp(dir / "summary.json")).contains("eta_percent"));
}

TEST_CASE("preset runs are byte-identical across thread counts", "[cli][output][determinism]")
{
    const fs::path a = scratch("det_a");
    const fs::path b = scratch("det_b");
    const std::vector<std::string> common{"simulate", "--preset", "fig1b", "--realizations", "9", "--t-end", "1",
                                          "--samples", "51", "--seed", "11"};
    auto with = [&](const fs::path& out, const char* threads) {
        auto args = common;
        args.insert(args.end(), {"--threads", threads, "--out", out.string()});
        return run(args);
    };
    REQUIRE(with(a, "1") == 0);
    REQUIRE(with(b, "3") == 0);
    for (const char* name : {"trajectory.csv", "summary.csv"}) {
        CHECK(slurp(a / name) == slurp(b / name));
        CHECK_FALSE(slurp(a / name).empty());
    }
    const auto rows = lines(slurp(a / "trajectory.csv"));
    CHECK(rows.size() == 52);
    CHECK(rows.front()
          == "t,eps_coherent,eps_classical,eps_fullyexcited,stderr_coherent,stderr_classical,stderr_fullyexcited");
    CHECK(slurp(a / "trajectory.csv").find('\r') == std::string::npos);
}

TEST_CASE("fig1a ordering holds in the written file", "[cli][output]")
{
    const fs::path dir = scratch("fig1a");
    REQUIRE(run({"simulate", "--preset", "fig1a", "--realizations", "2", "--out", dir.string()}) == 0);
    const auto rows = lines(slurp(dir / "trajectory.csv"));
    REQUIRE(rows.size() == 1002);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto cells = split(rows[i]);
        CHECK(std::stod(cells[1]) >= std::stod(cells[2]) - 1e-3);
    }
}

TEST_CASE("delta sweep writes taus, etas and the fit", "[cli][output]")
{
    const fs::path dir = scratch("fig2");
    RunConfig c = preset_config("fig2");
    c.realizations = 2;
    c.grid = {2.0, 201};
    c.chain.fold_abs = true;
    c.output_dir = dir;
    (void)run_preset(c);
    const auto rows = lines(slurp(dir / "sweep.csv"));
    REQUIRE(rows.size() == 18);
    CHECK(rows.front() == "delta,tau_coherent,tau_classical,tau_fullyexcited,eta_coherent,eta_classical,eta_fullyexcited");
    CHECK(split(rows[2])[0] == "0.5");
    // Fully excited half-life is ln(4/3) for non-negative fields.
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(std::stod(split(rows[i])[3]) == Approx(std::log(4.0 / 3.0)).margin(2e-3));
    const auto fit = nlohmann::json::parse(slurp(dir / "fit.json"));
    CHECK(fit["points_used"] == 17);
    CHECK(fit.contains("alpha"));
}

TEST_CASE("unreached half-lives are written as a sentinel", "[cli][output]")
{
    const fs::path dir = scratch("fig2_signed");
    RunConfig c = preset_config("fig2");
    c.realizations = 2;
    c.grid = {0.2, 21};
    c.chain.fold_abs = false;
    c.output_dir = dir;
    (void)run_preset(c);
    const auto rows = lines(slurp(dir / "sweep.csv"));
    CHECK(split(rows.back())[1] == "not-reached");
    const auto fit = nlohmann::json::parse(slurp(dir / "fit.json"));
    CHECK(fit["deltas_not_reached"].size() > 0);
}

TEST_CASE("remaining presets produce their files", "[cli][output]")
{
    struct Case
    {
        const char* preset;
        std::vector<std::string> files;
        int n_cells;
    };
    for (const auto& k : {Case{"fig4b", {"eta_vs_delta.csv"}, 2}, Case{"new-fig", {"rates_delta_0.csv", "rates_delta_2.5.csv", "rates_delta_5.csv"}, 2},
                          Case{"app-b", {"internal_delta_0.csv", "internal_delta_5.csv"}, 2}}) {
        const fs::path dir = scratch(k.preset);
        RunConfig c = preset_config(k.preset);
        c.chain.n_cells = k.n_cells;
        c.realizations = 2;
        c.grid = {0.5, 11};
        c.output_dir = dir;
        const auto rep = run_preset(c);
        for (const auto& f : k.files) {
            CHECK(fs::exists(dir / f));
            const auto rows = lines(slurp(dir / f));
            CHECK(rows.size() == (k.files.size() == 1 ? 10u : 12u));
        }
        CHECK(fs::exists(dir / "manifest.json"));
    }

    // Cell sweeps keep their caption realization counts; only the window shrinks.
    for (const char* preset : {"fig4a", "app-a1"}) {
        const fs::path dir = scratch(preset);
        RunConfig c = preset_config(preset);
        c.grid = {0.02, 3};
        c.dt = 0.002;
        c.output_dir = dir;
        (void)run_preset(c);
    }
    const auto cells = lines(slurp(scratch("fig4a_probe").parent_path() / "qbat_test_fig4a" / "eta_vs_cells.csv"));
    REQUIRE(cells.size() == 7);
    CHECK(cells.front() == "n_cells,realizations,eta_coherent");
    CHECK(split(cells[2])[1] == "5000");
    const auto scaling = lines(slurp(scratch("a1_probe").parent_path() / "qbat_test_app-a1" / "ergotropy_delta_5.csv"));
    REQUIRE(scaling.size() == 4);
    CHECK(scaling.front() == "t,eps_n3,eps_n4,eps_n5,eps_n6,stderr_n3,stderr_n4,stderr_n5,stderr_n6");
}

TEST_CASE("csv number format", "[cli][output]")
{
    CHECK(format_number(0.1) == "0.10000000000000001");
    CHECK(format_number(1.0) == "1");
    CHECK(format_number(std::nan("")) == "nan");
    CHECK(format_label(2.5) == "2.5");
    CHECK(hex64(fnv1a64("")) == "cbf29ce484222325");
    CHECK(hex64(fnv1a64("a")) == "af63dc4c8601ec8c");
}
