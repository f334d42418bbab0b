#ifndef QBAT_ERGOTROPY_HPP
#define QBAT_ERGOTROPY_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "model.hpp"
#include "operators.hpp"

namespace qbat
{

struct ErgotropyBreakdown
{
    double internal_energy = 0.0;
    double passive_energy = 0.0;
    double ergotropy = 0.0;
};

namespace detail
{

inline double real_trace_product(const ComplexMatrix& a, const ComplexMatrix& b, const char* where)
{
    if (a.dim() != b.dim()) throw std::invalid_argument(std::string(where) + ": dimension mismatch");
    const std::size_t n = a.dim();
    cplx t{};
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) t += a(i, j) * b(j, i);
    }
    const double scale = std::max(1.0, std::abs(t.real()));
    if (std::abs(t.imag()) > 1e-10 * scale) {
        std::ostringstream os;
        os << where << ": imaginary residue " << t.imag() << " in a Hermitian trace";
        throw NumericalError(os.str());
    }
    return t.real();
}

} // namespace detail

/// U(rho, H) = tr(H rho)
inline double internal_energy(const DensityMatrix& rho, const ComplexMatrix& h0)
{
    return detail::real_trace_product(rho.matrix, h0, "internal_energy");
}

/**
 *  Spectral data of a reference Hamiltonian, computed once and reused for
 *  every state along a trajectory. Diagonal Hamiltonians (the free chain
 *  Hamiltonian is one) skip the eigensolver entirely.
 */
class ReferenceHamiltonian
{
public:
    explicit ReferenceHamiltonian(const ComplexMatrix& h)
        : h_(h)
        , diagonal_(h.is_diagonal())
    {
        detail::require_hermitian(h, 1e-10, "ReferenceHamiltonian");
        if (diagonal_) {
            levels_ = h.real_diagonal();
            std::sort(levels_.begin(), levels_.end());
        } else {
            levels_ = hermitian_eigenvalues(h);
        }
    }

    const ComplexMatrix& matrix() const noexcept { return h_; }
    std::size_t dim() const noexcept { return h_.dim(); }
    /// Ascending.
    const std::vector<double>& levels() const noexcept { return levels_; }

    double internal_energy(const ComplexMatrix& rho) const
    {
        if (rho.dim() != h_.dim()) throw std::invalid_argument("internal_energy: dimension mismatch");
        if (!diagonal_) return detail::real_trace_product(rho, h_, "internal_energy");
        double u = 0.0;
        for (std::size_t i = 0; i < h_.dim(); ++i) u += rho(i, i).real() * h_(i, i).real();
        return u;
    }

    /// sum_k p_k e_k with populations descending against levels ascending.
    double passive_energy(std::vector<double> populationsAscending) const
    {
        double u0 = 0.0;
        const std::size_t n = levels_.size();
        for (std::size_t k = 0; k < n; ++k) u0 += populationsAscending[n - 1 - k] * levels_[k];
        return u0;
    }

    double passive_energy(const ComplexMatrix& rho) const
    {
        return passive_energy(hermitian_eigenvalues(rho));
    }

    ErgotropyBreakdown breakdown(const ComplexMatrix& rho) const
    {
        ErgotropyBreakdown b;
        b.internal_energy = internal_energy(rho);
        b.passive_energy = passive_energy(rho);
        b.ergotropy = b.internal_energy - b.passive_energy;
        return b;
    }

private:
    ComplexMatrix h_;
    bool diagonal_;
    std::vector<double> levels_;
};

/// Passive counterpart: the spectrum of rho placed on the eigenbasis of h0,
/// largest population on the lowest level.
inline DensityMatrix passive_state(const DensityMatrix& rho, const ComplexMatrix& h0)
{
    if (rho.dim() != h0.dim()) throw std::invalid_argument("passive_state: dimension mismatch");
    const EigenSystem hs = hermitian_eigensystem(h0);
    std::vector<double> p = hermitian_eigenvalues(rho.matrix);
    std::reverse(p.begin(), p.end());
    const std::size_t n = rho.dim();
    ComplexMatrix out(n);
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            const cplx vik = hs.vectors(i, k) * p[k];
            for (std::size_t j = 0; j < n; ++j) out(i, j) += vik * std::conj(hs.vectors(j, k));
        }
    }
    return {std::move(out)};
}

/**
 *  Ergotropy by the sorted spectral contraction
 *
 *      E = sum_{k,j} p_k e_j (|<p_k|e_j>|^2 - delta_kj),
 *
 *  p descending with eigenvectors |p_k> of rho and e ascending with
 *  eigenvectors |e_j> of h0.
 */
inline double ergotropy(const DensityMatrix& rho, const ComplexMatrix& h0)
{
    if (rho.dim() != h0.dim()) throw std::invalid_argument("ergotropy: dimension mismatch");
    const std::size_t n = rho.dim();
    const EigenSystem rs = hermitian_eigensystem(rho.matrix);
    const EigenSystem hs = hermitian_eigensystem(h0);
    double e = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t kd = n - 1 - k; // descending population index
        const double pk = rs.values[kd];
        for (std::size_t j = 0; j < n; ++j) {
            cplx overlap{};
            for (std::size_t i = 0; i < n; ++i) {
                overlap += std::conj(rs.vectors(i, kd)) * hs.vectors(i, j);
            }
            e += pk * hs.values[j] * (std::norm(overlap) - (k == j ? 1.0 : 0.0));
        }
    }
    return e;
}

/// U(rho) - U(passive_state(rho)); independent route used as a cross-check.
inline double ergotropy_by_passive_state(const DensityMatrix& rho, const ComplexMatrix& h0)
{
    return internal_energy(rho, h0) - internal_energy(passive_state(rho, h0), h0);
}

inline ErgotropyBreakdown ergotropy_breakdown(const DensityMatrix& rho, const ComplexMatrix& h0)
{
    return ReferenceHamiltonian(h0).breakdown(rho.matrix);
}

struct RateTerms
{
    /// -i tr(rho [H0, H_int])
    double coherent = 0.0;
    /// tr(D[rho] H0), D the dissipator
    double dissipative = 0.0;
    /// d U0 / dt, passive-energy rate
    double passive = 0.0;

    double internal() const noexcept { return coherent + dissipative; }
};

/**
 *  Evaluates the internal-energy rate split at arbitrary states of one chain.
 *
 *  The passive-energy rate has no closed form; it is the symmetric difference
 *  of U0 across a forward and a backward micro-step of length `micro_step`
 *  taken with one classical RK4 step each.
 */
class RateEvaluator
{
public:
    RateEvaluator(const ComplexMatrix& h0, const ComplexMatrix& hInt, double gamma, int nCells,
                  double microStep = 1e-5)
        : reference_(h0)
        , generator_(h0 + hInt, gamma, nCells)
        , h0_commutator_(commutator(h0, hInt))
        , micro_step_(microStep)
    {
        if (h0.dim() != hInt.dim()) throw std::invalid_argument("RateEvaluator: dimension mismatch");
        if (!(microStep > 0.0)) throw std::invalid_argument("RateEvaluator: micro step must be > 0");
    }

    const ReferenceHamiltonian& reference() const noexcept { return reference_; }
    const LindbladGenerator& generator() const noexcept { return generator_; }

    double coherent_term(const ComplexMatrix& rho) const
    {
        // -i tr(rho C) with C = [H0, H_int] anti-Hermitian, so the result is real.
        const cplx t = trace_product(rho, h0_commutator_);
        return (-imag_unit * t).real();
    }

    double dissipative_term(const ComplexMatrix& rho) const
    {
        ComplexMatrix d(rho.dim());
        generator_.apply_dissipator(rho, d);
        return reference_.internal_energy(d);
    }

    double passive_rate(const ComplexMatrix& rho) const
    {
        const double h = micro_step_;
        const double up = reference_.passive_energy(rk4_step(rho, h));
        const double um = reference_.passive_energy(rk4_step(rho, -h));
        return (up - um) / (2.0 * h);
    }

    RateTerms terms(const ComplexMatrix& rho, bool withPassive = true) const
    {
        RateTerms t;
        t.coherent = coherent_term(rho);
        t.dissipative = dissipative_term(rho);
        t.passive = withPassive ? passive_rate(rho) : std::nan("");
        return t;
    }

private:
    static cplx trace_product(const ComplexMatrix& a, const ComplexMatrix& b)
    {
        const std::size_t n = a.dim();
        cplx t{};
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) t += a(i, j) * b(j, i);
        }
        return t;
    }

    ComplexMatrix rk4_step(const ComplexMatrix& rho, double h) const
    {
        const std::size_t n = rho.dim();
        ComplexMatrix k1(n), k2(n), k3(n), k4(n), y(n);
        auto axpy = [n](ComplexMatrix& out, const ComplexMatrix& x, double s, const ComplexMatrix& k) {
            for (std::size_t i = 0; i < n * n; ++i) out.data()[i] = x.data()[i] + s * k.data()[i];
        };
        generator_.apply(rho, k1);
        axpy(y, rho, 0.5 * h, k1);
        generator_.apply(y, k2);
        axpy(y, rho, 0.5 * h, k2);
        generator_.apply(y, k3);
        axpy(y, rho, h, k3);
        generator_.apply(y, k4);
        for (std::size_t i = 0; i < n * n; ++i) {
            y.data()[i] = rho.data()[i]
                        + (h / 6.0)
                              * (k1.data()[i] + 2.0 * k2.data()[i] + 2.0 * k3.data()[i] + k4.data()[i]);
        }
        return y;
    }

    ReferenceHamiltonian reference_;
    LindbladGenerator generator_;
    ComplexMatrix h0_commutator_;
    double micro_step_;
};

inline RateTerms ergotropy_rate_terms(const DensityMatrix& rho, const ComplexMatrix& h0,
                                      const ComplexMatrix& hInt, double gamma, int nCells)
{
    if (rho.dim() != h0.dim()) throw std::invalid_argument("ergotropy_rate_terms: dimension mismatch");
    return RateEvaluator(h0, hInt, gamma, nCells).terms(rho.matrix);
}

} // namespace qbat

#endif // QBAT_ERGOTROPY_HPP
