#ifndef QBAT_ENSEMBLE_HPP
#define QBAT_ENSEMBLE_HPP

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <vector>

#include "dynamics.hpp"
#include "model.hpp"

namespace qbat
{

struct EnsembleSpec
{
    ChainConfig config;
    InitialStateKind initial = Coherent{};
    TimeGrid grid;
    int n_realizations = 100;
    std::uint64_t master_seed = 2024;
    EvolveOptions evolve;

    void validate() const
    {
        config.validate();
        grid.validate();
        if (n_realizations < 1) throw std::invalid_argument("EnsembleSpec: n_realizations must be >= 1");
    }
};

/// Realization-averaged series. Internal energies entering u and xi are
/// measured from the ground level of each realization's free Hamiltonian.
struct EnsembleResult
{
    std::vector<double> times;
    std::vector<double> epsilon;
    std::vector<double> stderr_epsilon;
    std::vector<double> u;
    std::vector<double> stderr_u;
    /// NaN where every realization was masked.
    std::vector<double> xi;
    /// Realizations excluded from xi at each point (|U| below the mask threshold).
    std::vector<int> xi_masked;
    std::vector<double> mean_ergotropy;
    std::vector<double> mean_coherent_rate;
    std::vector<double> mean_dissipative_rate;
    std::vector<double> mean_u0_rate;

    double eta_percent = 0.0;
    std::optional<double> half_life;

    int n_realizations = 0;
    double max_trace_error = 0.0;
    double max_hermiticity_error = 0.0;
    double min_eigenvalue = std::numeric_limits<double>::infinity();
};

inline constexpr double xi_mask_threshold = 1e-9;

/// (max_t eps / eps[0] - 1) * 100, the maximum including t = 0.
inline double eta(const std::vector<double>& epsilon)
{
    if (epsilon.empty()) throw std::invalid_argument("eta: empty series");
    if (!(epsilon.front() > 0.0)) throw std::invalid_argument("eta: epsilon[0] must be > 0");
    const double mx = *std::max_element(epsilon.begin(), epsilon.end());
    return (mx / epsilon.front() - 1.0) * 100.0;
}

/**
 *  First time the series drops below 1/2, linearly interpolated between the
 *  bracketing samples. Empty when the series stays at or above 1/2.
 */
inline std::optional<double> half_life(const std::vector<double>& epsilon, const TimeGrid& grid)
{
    if (epsilon.size() != static_cast<std::size_t>(grid.n_samples)) {
        throw std::invalid_argument("half_life: series length does not match the grid");
    }
    for (std::size_t i = 0; i < epsilon.size(); ++i) {
        if (epsilon[i] < 0.5) {
            if (i == 0) return 0.0;
            const double t0 = grid.time(static_cast<int>(i - 1));
            const double t1 = grid.time(static_cast<int>(i));
            const double e0 = epsilon[i - 1];
            const double e1 = epsilon[i];
            return t0 + (e0 - 0.5) / (e0 - e1) * (t1 - t0);
        }
    }
    return std::nullopt;
}

namespace detail
{

// Welford running mean / variance, fed in realization order.
class SeriesStats
{
public:
    explicit SeriesStats(std::size_t n)
        : mean_(n, 0.0)
        , m2_(n, 0.0)
    {
    }

    void add(const std::vector<double>& x)
    {
        ++count_;
        const double c = static_cast<double>(count_);
        for (std::size_t i = 0; i < mean_.size(); ++i) {
            const double d = x[i] - mean_[i];
            mean_[i] += d / c;
            m2_[i] += d * (x[i] - mean_[i]);
        }
    }

    const std::vector<double>& mean() const noexcept { return mean_; }

    /// Sample standard deviation over sqrt(count); zero for a single sample.
    std::vector<double> standard_error() const
    {
        std::vector<double> se(mean_.size(), 0.0);
        if (count_ < 2) return se;
        const double c = static_cast<double>(count_);
        for (std::size_t i = 0; i < se.size(); ++i) se[i] = std::sqrt(m2_[i] / (c - 1.0) / c);
        return se;
    }

private:
    std::vector<double> mean_;
    std::vector<double> m2_;
    std::int64_t count_ = 0;
};

struct RealizationOutput
{
    std::vector<double> epsilon;
    std::vector<double> u;
    std::vector<double> xi;
    Trajectory trajectory;
};

inline RealizationOutput simulate_realization(const EnsembleSpec& spec, std::uint64_t seed)
{
    const DisorderRealization real = sample_disorder(spec.config, seed);
    const ComplexMatrix h0 = build_free_hamiltonian(real);
    const ComplexMatrix hInt = build_interaction_hamiltonian(spec.config.n_cells, spec.config.coupling);
    const DensityMatrix rho0 = initial_state(spec.initial, spec.config.n_cells);

    RealizationOutput out;
    out.trajectory = evolve(rho0, h0 + hInt, h0, hInt, spec.config.gamma, spec.grid, spec.evolve);
    const Trajectory& tr = out.trajectory;

    double ground = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < h0.dim(); ++i) ground = std::min(ground, h0(i, i).real());

    const double e0 = tr.ergotropy.front();
    const double u0 = tr.internal_energy.front() - ground;
    if (e0 < 1e-12 || u0 < 1e-12) {
        std::ostringstream os;
        os << "realization with seed " << seed << " starts with ergotropy " << e0
           << " and internal energy " << u0 << " above the ground level; cannot normalize";
        throw NumericalError(os.str());
    }
    const std::size_t n = tr.size();
    out.epsilon.resize(n);
    out.u.resize(n);
    out.xi.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double ui = tr.internal_energy[i] - ground;
        out.epsilon[i] = tr.ergotropy[i] / e0;
        out.u[i] = ui / u0;
        out.xi[i] = std::abs(ui) < xi_mask_threshold ? std::nan("") : tr.ergotropy[i] / ui;
    }
    return out;
}

} // namespace detail

/**
 *  Runs spec.n_realizations independent disorder realizations and averages
 *  their normalized series.
 *
 *  Realizations are computed in batches on `threads` workers; each batch is
 *  then folded into the running statistics in realization order, so the
 *  result is bit-identical for every thread count.
 */
inline EnsembleResult run_ensemble(const EnsembleSpec& spec, int threads = 1)
{
    spec.validate();
    threads = std::max(1, threads);
    const auto ns = static_cast<std::size_t>(spec.grid.n_samples);

    detail::SeriesStats eps(ns), u(ns), ergo(ns), coh(ns), dis(ns), pas(ns);
    std::vector<double> xiSum(ns, 0.0);
    std::vector<int> xiCount(ns, 0);

    EnsembleResult res;
    res.times = spec.grid.times();
    res.n_realizations = spec.n_realizations;

    const int batch = std::max(4 * threads, 16);
    for (int first = 0; first < spec.n_realizations; first += batch) {
        const int count = std::min(batch, spec.n_realizations - first);
        std::vector<detail::RealizationOutput> outputs(static_cast<std::size_t>(count));
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
        std::atomic<int> next{0};

        auto work = [&] {
            for (int j = next++; j < count; j = next++) {
                const auto idx = static_cast<std::size_t>(j);
                const std::uint64_t seed
                    = realization_seed(spec.master_seed, static_cast<std::uint64_t>(first + j));
                try {
                    outputs[idx] = detail::simulate_realization(spec, seed);
                } catch (...) {
                    errors[idx] = std::current_exception();
                }
            }
        };
        if (threads == 1 || count == 1) {
            work();
        } else {
            std::vector<std::jthread> pool;
            for (int t = 0; t < std::min(threads, count); ++t) pool.emplace_back(work);
        }

        for (int j = 0; j < count; ++j) {
            const auto idx = static_cast<std::size_t>(j);
            if (errors[idx]) {
                const std::uint64_t seed
                    = realization_seed(spec.master_seed, static_cast<std::uint64_t>(first + j));
                try {
                    std::rethrow_exception(errors[idx]);
                } catch (const NumericalError& e) {
                    std::ostringstream os;
                    os << "realization " << first + j << " (seed " << seed << "): " << e.what();
                    throw NumericalError(os.str());
                }
            }
            const auto& o = outputs[idx];
            const Trajectory& tr = o.trajectory;
            eps.add(o.epsilon);
            u.add(o.u);
            ergo.add(tr.ergotropy);
            coh.add(tr.coherent_rate_term);
            dis.add(tr.dissipative_rate_term);
            pas.add(tr.u0_rate);
            for (std::size_t i = 0; i < ns; ++i) {
                if (!std::isnan(o.xi[i])) {
                    xiSum[i] += o.xi[i];
                    ++xiCount[i];
                }
            }
            res.max_trace_error = std::max(res.max_trace_error, tr.max_trace_error);
            res.max_hermiticity_error = std::max(res.max_hermiticity_error, tr.max_hermiticity_error);
            res.min_eigenvalue = std::min(res.min_eigenvalue, tr.min_eigenvalue);
        }
    }

    res.epsilon = eps.mean();
    res.stderr_epsilon = eps.standard_error();
    res.u = u.mean();
    res.stderr_u = u.standard_error();
    res.mean_ergotropy = ergo.mean();
    res.mean_coherent_rate = coh.mean();
    res.mean_dissipative_rate = dis.mean();
    res.mean_u0_rate = pas.mean();
    res.xi.resize(ns);
    res.xi_masked.resize(ns);
    for (std::size_t i = 0; i < ns; ++i) {
        res.xi[i] = xiCount[i] > 0 ? xiSum[i] / xiCount[i] : std::nan("");
        res.xi_masked[i] = spec.n_realizations - xiCount[i];
    }
    res.eta_percent = eta(res.epsilon);
    res.half_life = half_life(res.epsilon, spec.grid);
    return res;
}

// ---------------------------------------------------------------------------
// Half-life curve fit tau(delta) = alpha + beta exp(-gamma delta)

struct HalfLifeFit
{
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
    /// Sum of squared residuals.
    double residual = 0.0;
    int iterations = 0;
    bool converged = false;
    /// False when the data carry no information on the decay constant.
    bool gamma_identifiable = true;
};

namespace detail
{

// Solves the 3x3 system a x = b by Gaussian elimination with partial pivoting.
inline std::optional<std::array<double, 3>> solve3(std::array<std::array<double, 3>, 3> a,
                                                   std::array<double, 3> b)
{
    for (int c = 0; c < 3; ++c) {
        int piv = c;
        for (int r = c + 1; r < 3; ++r) {
            if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
        }
        if (std::abs(a[piv][c]) < 1e-300) return std::nullopt;
        std::swap(a[c], a[piv]);
        std::swap(b[c], b[piv]);
        for (int r = c + 1; r < 3; ++r) {
            const double f = a[r][c] / a[c][c];
            for (int k = c; k < 3; ++k) a[r][k] -= f * a[c][k];
            b[r] -= f * b[c];
        }
    }
    std::array<double, 3> x{};
    for (int r = 2; r >= 0; --r) {
        double s = b[r];
        for (int k = r + 1; k < 3; ++k) s -= a[r][k] * x[k];
        x[r] = s / a[r][r];
    }
    return x;
}

inline double fit_ssr(const std::vector<double>& x, const std::vector<double>& y, double a, double b,
                      double g)
{
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = a + b * std::exp(-g * x[i]) - y[i];
        s += r * r;
    }
    return s;
}

} // namespace detail

/**
 *  Levenberg-Marquardt least squares for tau = alpha + beta exp(-gamma delta).
 *
 *  Starts from alpha = last tau, beta = first - last, gamma = 1 and stops
 *  when the relative parameter change drops below 1e-10 or after 200
 *  iterations. Constant data short-circuit to beta = 0 with gamma flagged
 *  unidentifiable.
 */
inline HalfLifeFit fit_half_life_curve(const std::vector<double>& deltas, const std::vector<double>& taus)
{
    if (deltas.size() != taus.size()) throw std::invalid_argument("fit_half_life_curve: size mismatch");
    if (taus.size() < 4) throw std::invalid_argument("fit_half_life_curve: need at least 4 points");
    for (std::size_t i = 0; i < taus.size(); ++i) {
        if (!std::isfinite(taus[i]) || !std::isfinite(deltas[i])) {
            throw std::invalid_argument("fit_half_life_curve: non-finite input");
        }
    }

    HalfLifeFit fit;
    const auto [lo, hi] = std::minmax_element(taus.begin(), taus.end());
    const double scale = std::max(std::abs(*lo), std::abs(*hi));
    if (*hi - *lo <= 1e-12 * std::max(scale, 1.0)) {
        double mean = 0.0;
        for (double t : taus) mean += t;
        fit.alpha = mean / static_cast<double>(taus.size());
        fit.beta = 0.0;
        fit.gamma = 0.0;
        fit.gamma_identifiable = false;
        fit.converged = true;
        fit.residual = detail::fit_ssr(deltas, taus, fit.alpha, 0.0, 0.0);
        return fit;
    }

    std::array<double, 3> p{taus.back(), taus.front() - taus.back(), 1.0};
    double ssr = detail::fit_ssr(deltas, taus, p[0], p[1], p[2]);
    double lambda = 1e-3;
    const int maxIter = 200;
    int it = 0;
    for (; it < maxIter; ++it) {
        std::array<std::array<double, 3>, 3> jtj{};
        std::array<double, 3> jtr{};
        for (std::size_t i = 0; i < deltas.size(); ++i) {
            const double e = std::exp(-p[2] * deltas[i]);
            const std::array<double, 3> jac{1.0, e, -p[1] * deltas[i] * e};
            const double r = p[0] + p[1] * e - taus[i];
            for (int a = 0; a < 3; ++a) {
                jtr[a] += jac[a] * r;
                for (int b = 0; b < 3; ++b) jtj[a][b] += jac[a] * jac[b];
            }
        }
        bool accepted = false;
        std::array<double, 3> step{};
        for (int tries = 0; tries < 60 && !accepted; ++tries) {
            auto m = jtj;
            for (int a = 0; a < 3; ++a) m[a][a] += lambda * std::max(jtj[a][a], 1e-12);
            const auto sol = detail::solve3(m, {-jtr[0], -jtr[1], -jtr[2]});
            if (!sol) {
                lambda *= 10.0;
                continue;
            }
            step = *sol;
            const double trial = detail::fit_ssr(deltas, taus, p[0] + step[0], p[1] + step[1], p[2] + step[2]);
            if (std::isfinite(trial) && trial <= ssr) {
                for (int a = 0; a < 3; ++a) p[a] += step[a];
                ssr = trial;
                lambda = std::max(lambda / 10.0, 1e-15);
                accepted = true;
            } else {
                lambda *= 10.0;
            }
        }
        if (!accepted) {
            // No downhill step at any damping: stationary to machine precision.
            fit.converged = true;
            break;
        }
        double rel = 0.0;
        for (int a = 0; a < 3; ++a) rel = std::max(rel, std::abs(step[a]) / std::max(std::abs(p[a]), 1e-12));
        if (rel < 1e-10) {
            fit.converged = true;
            ++it;
            break;
        }
    }
    fit.alpha = p[0];
    fit.beta = p[1];
    fit.gamma = p[2];
    fit.residual = ssr;
    fit.iterations = it;
    return fit;
}

} // namespace qbat

#endif // QBAT_ENSEMBLE_HPP
