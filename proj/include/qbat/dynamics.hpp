#ifndef QBAT_DYNAMICS_HPP
#define QBAT_DYNAMICS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "ergotropy.hpp"
#include "model.hpp"

namespace qbat
{

/// Uniform sampling of [0, t_end] including both ends. Times are in units of 1/Gamma.
struct TimeGrid
{
    double t_end = 10.0;
    int n_samples = 1001;

    void validate() const
    {
        if (!(t_end > 0.0) || !std::isfinite(t_end)) throw std::invalid_argument("TimeGrid: t_end must be > 0");
        if (n_samples < 2) throw std::invalid_argument("TimeGrid: n_samples must be >= 2");
    }

    double spacing() const { return t_end / (n_samples - 1); }
    double time(int i) const { return i == n_samples - 1 ? t_end : i * spacing(); }

    std::vector<double> times() const
    {
        std::vector<double> t(static_cast<std::size_t>(n_samples));
        for (int i = 0; i < n_samples; ++i) t[static_cast<std::size_t>(i)] = time(i);
        return t;
    }
};

struct Trajectory
{
    TimeGrid grid;
    std::vector<double> ergotropy;
    std::vector<double> internal_energy;
    std::vector<double> passive_energy;
    std::vector<double> coherent_rate_term;
    std::vector<double> dissipative_rate_term;
    /// NaN when the passive-energy rate was not requested.
    std::vector<double> u0_rate;

    // State-validity diagnostics gathered at every grid point.
    double max_trace_error = 0.0;
    double max_hermiticity_error = 0.0;
    double min_eigenvalue = std::numeric_limits<double>::infinity();

    std::size_t size() const noexcept { return ergotropy.size(); }
};

struct EvolveOptions
{
    /// RK4 step in units of 1/Gamma; reduced if needed so it divides the grid spacing.
    double dt = 1e-3;
    bool record_passive_rate = true;
    double micro_step = 1e-5;
    /// Abort thresholds.
    double trace_tolerance = 1e-6;
    double negativity_tolerance = 1e-6;
};

/// Number of RK4 steps per grid interval for the requested step.
inline int steps_per_sample(const TimeGrid& grid, double dt)
{
    if (!(dt > 0.0)) throw std::invalid_argument("evolve: dt must be > 0");
    const double spacing = grid.spacing();
    if (dt > spacing * (1.0 + 1e-12)) {
        throw std::invalid_argument("evolve: dt exceeds the grid spacing");
    }
    return std::max(1, static_cast<int>(std::ceil(spacing / dt - 1e-9)));
}

/// Fixed-step classical RK4 on the density matrix.
class Rk4Stepper
{
public:
    explicit Rk4Stepper(const LindbladGenerator& generator)
        : gen_(generator)
        , k1_(generator.dim())
        , k2_(generator.dim())
        , k3_(generator.dim())
        , k4_(generator.dim())
        , y_(generator.dim())
    {
    }

    void step(ComplexMatrix& rho, double h)
    {
        const std::size_t n = rho.size();
        cplx* r = rho.data();
        cplx* y = y_.data();
        const cplx* k1 = k1_.data();
        const cplx* k2 = k2_.data();
        const cplx* k3 = k3_.data();
        const cplx* k4 = k4_.data();

        gen_.apply(rho, k1_);
        for (std::size_t i = 0; i < n; ++i) y[i] = r[i] + (0.5 * h) * k1[i];
        gen_.apply(y_, k2_);
        for (std::size_t i = 0; i < n; ++i) y[i] = r[i] + (0.5 * h) * k2[i];
        gen_.apply(y_, k3_);
        for (std::size_t i = 0; i < n; ++i) y[i] = r[i] + h * k3[i];
        gen_.apply(y_, k4_);
        const double h6 = h / 6.0;
        for (std::size_t i = 0; i < n; ++i) r[i] += h6 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
    }

private:
    const LindbladGenerator& gen_;
    ComplexMatrix k1_, k2_, k3_, k4_, y_;
};

/**
 *  Integrates the master equation from rho0 and records, at every grid point,
 *  the free ergotropy breakdown and the internal-energy rate terms.
 *
 *  Throws NumericalError when |tr rho - 1| or the most negative eigenvalue
 *  leaves the tolerance in `opts`; this is how an unstable step shows up.
 */
inline Trajectory evolve(const DensityMatrix& rho0, const ComplexMatrix& hTotal, const ComplexMatrix& h0,
                         const ComplexMatrix& hInt, double gamma, const TimeGrid& grid,
                         const EvolveOptions& opts = {})
{
    grid.validate();
    const std::size_t d = rho0.dim();
    if (hTotal.dim() != d || h0.dim() != d || hInt.dim() != d) {
        throw std::invalid_argument("evolve: dimension mismatch");
    }
    const int nCells = std::countr_zero(d);
    if ((std::size_t{1} << nCells) != d) throw std::invalid_argument("evolve: dimension is not a power of 2");

    const int substeps = steps_per_sample(grid, opts.dt);
    const double h = grid.spacing() / substeps;

    const RateEvaluator rates(h0, hInt, gamma, nCells, opts.micro_step);
    const LindbladGenerator generator(hTotal, gamma, nCells);
    Rk4Stepper stepper(generator);

    Trajectory tr;
    tr.grid = grid;
    const auto ns = static_cast<std::size_t>(grid.n_samples);
    for (auto* s : {&tr.ergotropy, &tr.internal_energy, &tr.passive_energy, &tr.coherent_rate_term,
                    &tr.dissipative_rate_term, &tr.u0_rate}) {
        s->resize(ns);
    }

    ComplexMatrix rho = rho0.matrix;
    for (std::size_t i = 0; i < ns; ++i) {
        if (i > 0) {
            for (int s = 0; s < substeps; ++s) stepper.step(rho, h);
        }
        const std::vector<double> spectrum = hermitian_eigenvalues(rho);
        const double traceErr = std::abs(rho.trace() - 1.0);
        const double minEig = spectrum.front();
        if (!(traceErr <= opts.trace_tolerance) || !(minEig >= -opts.negativity_tolerance)) {
            std::ostringstream os;
            os << "evolve: state left the physical region at t = " << grid.time(static_cast<int>(i))
               << " (|tr rho - 1| = " << traceErr << ", min eigenvalue = " << minEig
               << "); reduce the step (dt = " << h << ")";
            throw NumericalError(os.str());
        }
        tr.max_trace_error = std::max(tr.max_trace_error, traceErr);
        tr.min_eigenvalue = std::min(tr.min_eigenvalue, minEig);
        tr.max_hermiticity_error = std::max(tr.max_hermiticity_error, rho.hermiticity_error());

        const double u = rates.reference().internal_energy(rho);
        const double u0 = rates.reference().passive_energy(spectrum);
        tr.internal_energy[i] = u;
        tr.passive_energy[i] = u0;
        tr.ergotropy[i] = u - u0;
        tr.coherent_rate_term[i] = rates.coherent_term(rho);
        tr.dissipative_rate_term[i] = rates.dissipative_term(rho);
        tr.u0_rate[i] = opts.record_passive_rate ? rates.passive_rate(rho) : std::nan("");
    }
    return tr;
}

/// Final-state variant used by tests that need rho(t_end) itself.
inline DensityMatrix evolve_state(const DensityMatrix& rho0, const ComplexMatrix& hTotal, double gamma,
                                  double tEnd, double dt = 1e-3)
{
    const std::size_t d = rho0.dim();
    const int nCells = std::countr_zero(d);
    const LindbladGenerator generator(hTotal, gamma, nCells);
    Rk4Stepper stepper(generator);
    const int steps = std::max(1, static_cast<int>(std::ceil(tEnd / dt - 1e-9)));
    const double h = tEnd / steps;
    ComplexMatrix rho = rho0.matrix;
    for (int s = 0; s < steps; ++s) stepper.step(rho, h);
    return {std::move(rho)};
}

struct ConvergenceReport
{
    bool passed = false;
    bool aborted = false;
    double max_discrepancy = std::numeric_limits<double>::infinity();
    double max_abs_ergotropy = 0.0;
    std::string message;
};

/// Step-halving self-consistency: evolve at dt and dt/2 and compare ergotropy pointwise.
inline ConvergenceReport convergence_check(const DensityMatrix& rho0, const ComplexMatrix& hTotal,
                                           const ComplexMatrix& h0, const ComplexMatrix& hInt, double gamma,
                                           const TimeGrid& grid, double dt)
{
    ConvergenceReport rep;
    EvolveOptions coarse;
    coarse.dt = dt;
    coarse.record_passive_rate = false;
    EvolveOptions fine = coarse;
    fine.dt = dt / 2.0;
    try {
        const Trajectory a = evolve(rho0, hTotal, h0, hInt, gamma, grid, coarse);
        const Trajectory b = evolve(rho0, hTotal, h0, hInt, gamma, grid, fine);
        rep.max_discrepancy = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            rep.max_discrepancy = std::max(rep.max_discrepancy, std::abs(a.ergotropy[i] - b.ergotropy[i]));
            rep.max_abs_ergotropy = std::max(rep.max_abs_ergotropy, std::abs(b.ergotropy[i]));
        }
        rep.passed = rep.max_discrepancy <= 1e-6 * rep.max_abs_ergotropy;
        std::ostringstream os;
        os << "max |E_dt - E_dt/2| = " << rep.max_discrepancy << " vs max |E| = " << rep.max_abs_ergotropy;
        rep.message = os.str();
    } catch (const NumericalError& e) {
        rep.aborted = true;
        rep.message = e.what();
    }
    return rep;
}

} // namespace qbat

#endif // QBAT_DYNAMICS_HPP
