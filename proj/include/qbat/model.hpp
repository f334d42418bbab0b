#ifndef QBAT_MODEL_HPP
#define QBAT_MODEL_HPP

#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "operators.hpp"

namespace qbat
{

/// Static chain parameters. Frequencies and couplings are in units of the decay rate.
struct ChainConfig
{
    int n_cells = 2;
    double omega0 = 1.0;
    double delta = 0.0;
    double coupling = 10.0;
    double gamma = 1.0;
    /// Map sampled fields through |.| so every Larmor frequency is non-negative.
    bool fold_abs = true;

    void validate() const
    {
        if (n_cells < 1) throw std::invalid_argument("ChainConfig: n_cells must be >= 1");
        if (n_cells > 12) throw std::invalid_argument("ChainConfig: n_cells above 12 is not supported");
        if (!(delta >= 0.0) || !std::isfinite(delta)) {
            throw std::invalid_argument("ChainConfig: delta must be finite and >= 0");
        }
        if (!(gamma > 0.0) || !std::isfinite(gamma)) {
            throw std::invalid_argument("ChainConfig: gamma must be finite and > 0");
        }
        if (!std::isfinite(coupling)) throw std::invalid_argument("ChainConfig: coupling must be finite");
        if (!std::isfinite(omega0)) throw std::invalid_argument("ChainConfig: omega0 must be finite");
    }

    std::size_t dim() const { return std::size_t{1} << n_cells; }
};

// ---------------------------------------------------------------------------
// Random numbers

/// Algorithm tag written to run manifests.
inline constexpr const char* rng_algorithm_id = "splitmix64/v1 (Steele-Lea-Flood 2014), u53 doubles";

/// Finalizer of SplitMix64; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class SplitMix64
{
public:
    explicit constexpr SplitMix64(std::uint64_t seed) noexcept
        : state_(seed)
    {
    }

    constexpr std::uint64_t next() noexcept
    {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix64(state_);
    }

    /// Uniform on [0, 1) with 53 random bits.
    constexpr double uniform() noexcept
    {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

private:
    std::uint64_t state_;
};

/// Seed of realization `index` inside an ensemble seeded by `master`.
constexpr std::uint64_t realization_seed(std::uint64_t master, std::uint64_t index) noexcept
{
    return mix64(master ^ mix64(index + 0x632be59bd9b4e019ULL));
}

struct DisorderRealization
{
    std::vector<double> omegas;
    std::uint64_t seed = 0;
};

/// Uniform fields on [omega0 (1 - delta), omega0 (1 + delta)], optionally folded.
inline DisorderRealization sample_disorder(const ChainConfig& config, std::uint64_t seed)
{
    config.validate();
    DisorderRealization r{std::vector<double>(static_cast<std::size_t>(config.n_cells)), seed};
    const double lo = config.omega0 * (1.0 - config.delta);
    const double width = 2.0 * config.omega0 * config.delta;
    SplitMix64 rng(seed);
    for (auto& w : r.omegas) {
        const double u = rng.uniform();
        w = config.delta == 0.0 ? config.omega0 : lo + width * u;
        if (config.fold_abs) w = std::abs(w);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Basis helpers. Basis index bit (N - k) holds site k; 0 = excited, 1 = ground.

constexpr std::uint32_t site_mask(int site, int nCells) noexcept
{
    return std::uint32_t{1} << (nCells - site);
}

constexpr int excitation_count(std::uint32_t index, int nCells) noexcept
{
    return nCells - std::popcount(index);
}

/// H0 = sum_k (omega_k / 2) sigma_k^z, returned as a diagonal matrix.
inline ComplexMatrix build_free_hamiltonian(const DisorderRealization& real)
{
    const int n = static_cast<int>(real.omegas.size());
    if (n < 1) throw std::invalid_argument("build_free_hamiltonian: empty realization");
    const std::size_t d = std::size_t{1} << n;
    std::vector<double> diag(d, 0.0);
    for (std::size_t a = 0; a < d; ++a) {
        double e = 0.0;
        for (int k = 1; k <= n; ++k) {
            const bool ground = (a & site_mask(k, n)) != 0;
            e += 0.5 * real.omegas[static_cast<std::size_t>(k - 1)] * (ground ? -1.0 : 1.0);
        }
        diag[a] = e;
    }
    return ComplexMatrix::diagonal(diag);
}

/**
 *  Open-chain XX coupling sum_k (J/4)(sx_k sx_{k+1} + sy_k sy_{k+1}).
 *
 *  Equivalent to (J/2)(s+_k s-_{k+1} + h.c.): a flip-flop amplitude J/2
 *  between basis states that differ by swapping an adjacent e/g pair.
 */
inline ComplexMatrix build_interaction_hamiltonian(int nCells, double coupling)
{
    if (nCells < 1) throw std::invalid_argument("build_interaction_hamiltonian: nCells must be >= 1");
    const std::size_t d = std::size_t{1} << nCells;
    ComplexMatrix h(d);
    for (std::size_t a = 0; a < d; ++a) {
        for (int k = 1; k < nCells; ++k) {
            const std::uint32_t m1 = site_mask(k, nCells);
            const std::uint32_t m2 = site_mask(k + 1, nCells);
            const bool b1 = (a & m1) != 0;
            const bool b2 = (a & m2) != 0;
            if (b1 != b2) h(a ^ (m1 | m2), a) += 0.5 * coupling;
        }
    }
    return h;
}

// ---------------------------------------------------------------------------
// States

struct FullyExcited
{
};
struct Coherent
{
};
struct Classical
{
    double alpha = 0.75;
};

using InitialStateKind = std::variant<FullyExcited, Coherent, Classical>;

inline std::string state_name(const InitialStateKind& kind)
{
    struct
    {
        std::string operator()(FullyExcited) const { return "fullyexcited"; }
        std::string operator()(Coherent) const { return "coherent"; }
        std::string operator()(Classical) const { return "classical"; }
    } v;
    return std::visit(v, kind);
}

/// Density matrix of dimension 2^N. Validity is checked explicitly via `validate`.
struct DensityMatrix
{
    ComplexMatrix matrix;

    std::size_t dim() const { return matrix.dim(); }

    struct Diagnostics
    {
        double hermiticity_error = 0.0;
        double trace_error = 0.0;
        double min_eigenvalue = 0.0;
    };

    Diagnostics diagnostics() const
    {
        return {matrix.hermiticity_error(), std::abs(matrix.trace() - 1.0),
                hermitian_eigenvalues(matrix).front()};
    }

    bool is_valid(double hermTol = 1e-10, double traceTol = 1e-8, double negTol = 1e-8) const
    {
        if (matrix.hermiticity_error() > hermTol) return false;
        const auto d = diagnostics();
        return d.trace_error <= traceTol && d.min_eigenvalue >= -negTol;
    }
};

inline DensityMatrix initial_state(const InitialStateKind& kind, int nCells)
{
    if (nCells < 1) throw std::invalid_argument("initial_state: nCells must be >= 1");
    ComplexMatrix single(2);
    if (std::holds_alternative<FullyExcited>(kind)) {
        single(0, 0) = 1.0;
    } else if (std::holds_alternative<Coherent>(kind)) {
        single = ComplexMatrix(2, {0.5, 0.5, 0.5, 0.5});
    } else {
        const double alpha = std::get<Classical>(kind).alpha;
        if (!(alpha >= 0.0 && alpha <= 1.0)) {
            throw std::invalid_argument("initial_state: classical alpha must lie in [0, 1], got "
                                        + std::to_string(alpha));
        }
        single(0, 0) = alpha;
        single(1, 1) = 1.0 - alpha;
    }
    ComplexMatrix rho = single;
    for (int k = 2; k <= nCells; ++k) rho = kron(rho, single);
    return {std::move(rho)};
}

// ---------------------------------------------------------------------------
// Master equation

/**
 *  Right-hand side of the decay master equation
 *
 *      d rho/dt = -i [H, rho] + Gamma sum_k (s-_k rho s+_k - {s+_k s-_k, rho} / 2),
 *
 *  exploiting its structure. The diagonal of H and the anticommutator combine
 *  into one elementwise factor, the off-diagonal part of H is held as sparse
 *  rows, and each jump term is a shifted copy of a sub-block of rho. Only the
 *  upper triangle is evaluated; the lower one is its mirror, so the output is
 *  exactly Hermitian whenever the input is.
 */
class LindbladGenerator
{
public:
    LindbladGenerator(const ComplexMatrix& hTotal, double gamma, int nCells)
        : dim_(hTotal.dim())
        , n_cells_(nCells)
        , gamma_(gamma)
        , factor_(hTotal.dim() * hTotal.dim())
        , row_start_(hTotal.dim() + 1, 0)
    {
        if (nCells < 1 || dim_ != (std::size_t{1} << nCells)) {
            throw std::invalid_argument("LindbladGenerator: Hamiltonian dimension does not match 2^nCells");
        }
        if (!std::isfinite(gamma) || gamma < 0.0) {
            throw std::invalid_argument("LindbladGenerator: gamma must be finite and >= 0");
        }
        detail::require_hermitian(hTotal, 1e-10, "LindbladGenerator");
        for (std::size_t a = 0; a < dim_; ++a) {
            const double ha = hTotal(a, a).real();
            const int na = excitation_count(static_cast<std::uint32_t>(a), nCells);
            for (std::size_t b = 0; b < dim_; ++b) {
                const double hb = hTotal(b, b).real();
                const int nb = excitation_count(static_cast<std::uint32_t>(b), nCells);
                factor_[a * dim_ + b] = cplx{-0.5 * gamma * (na + nb), -(ha - hb)};
            }
            for (std::size_t c = 0; c < dim_; ++c) {
                if (c != a && hTotal(a, c) != cplx{}) {
                    cols_.push_back(c);
                    vals_.push_back(hTotal(a, c));
                }
            }
            row_start_[a + 1] = cols_.size();
        }
    }

    std::size_t dim() const noexcept { return dim_; }
    int n_cells() const noexcept { return n_cells_; }
    double gamma() const noexcept { return gamma_; }

    /// out = L[rho]. `out` must not alias `rho`.
    void apply(const ComplexMatrix& rho, ComplexMatrix& out) const
    {
        check(rho, out);
        const std::size_t d = dim_;
        const cplx* r = rho.data();
        cplx* o = out.data();
        for (std::size_t a = 0; a < d; ++a) {
            cplx* orow = o + a * d;
            const cplx* rrow = r + a * d;
            const cplx* frow = factor_.data() + a * d;
            for (std::size_t b = a; b < d; ++b) orow[b] = mul(frow[b], rrow[b]);

            // -i (H_off rho)_{ab}
            for (std::size_t e = row_start_[a]; e < row_start_[a + 1]; ++e) {
                const cplx w = -imag_unit * vals_[e];
                const cplx* src = r + cols_[e] * d;
                for (std::size_t b = a; b < d; ++b) orow[b] += mul(w, src[b]);
            }
            // +i (rho H_off)_{ab} = +i sum_c rho_{ac} H_{cb}
            for (std::size_t c = 0; c < d; ++c) {
                const cplx rac = imag_unit * rrow[c];
                for (std::size_t e = row_start_[c]; e < row_start_[c + 1]; ++e) {
                    const std::size_t b = cols_[e];
                    if (b >= a) orow[b] += mul(rac, vals_[e]);
                }
            }
        }
        add_jumps(r, o);
        mirror_lower(o);
    }

    /// Dissipative part only (the Gamma terms), full matrix.
    void apply_dissipator(const ComplexMatrix& rho, ComplexMatrix& out) const
    {
        check(rho, out);
        const std::size_t d = dim_;
        const cplx* r = rho.data();
        cplx* o = out.data();
        for (std::size_t a = 0; a < d; ++a) {
            const int na = excitation_count(static_cast<std::uint32_t>(a), n_cells_);
            for (std::size_t b = a; b < d; ++b) {
                const int nb = excitation_count(static_cast<std::uint32_t>(b), n_cells_);
                o[a * d + b] = (-0.5 * gamma_ * (na + nb)) * r[a * d + b];
            }
        }
        add_jumps(r, o);
        mirror_lower(o);
    }

    ComplexMatrix operator()(const ComplexMatrix& rho) const
    {
        ComplexMatrix out(dim_);
        apply(rho, out);
        return out;
    }

private:
    static cplx mul(cplx x, cplx y) noexcept
    {
        return {x.real() * y.real() - x.imag() * y.imag(), x.real() * y.imag() + x.imag() * y.real()};
    }

    void check(const ComplexMatrix& rho, const ComplexMatrix& out) const
    {
        if (rho.dim() != dim_ || out.dim() != dim_) {
            throw std::invalid_argument("LindbladGenerator: dimension mismatch");
        }
        if (&rho == &out) throw std::invalid_argument("LindbladGenerator: output aliases input");
    }

    // Gamma * s-_k rho s+_k: entry (a, b) with site k in |g> for both receives rho(a^m, b^m).
    void add_jumps(const cplx* r, cplx* o) const
    {
        if (gamma_ == 0.0) return;
        const std::size_t d = dim_;
        for (int k = 1; k <= n_cells_; ++k) {
            const std::size_t m = site_mask(k, n_cells_);
            for (std::size_t a = m; a < d; ++a) {
                if ((a & m) == 0) continue;
                const cplx* src = r + (a ^ m) * d;
                cplx* orow = o + a * d;
                for (std::size_t b = a; b < d; ++b) {
                    if (b & m) orow[b] += gamma_ * src[b ^ m];
                }
            }
        }
    }

    void mirror_lower(cplx* o) const
    {
        const std::size_t d = dim_;
        for (std::size_t a = 0; a < d; ++a) {
            o[a * d + a] = o[a * d + a].real();
            for (std::size_t b = a + 1; b < d; ++b) o[b * d + a] = std::conj(o[a * d + b]);
        }
    }

    std::size_t dim_;
    int n_cells_;
    double gamma_;
    std::vector<cplx> factor_;
    std::vector<std::size_t> row_start_;
    std::vector<std::size_t> cols_;
    std::vector<cplx> vals_;
};

/// d rho / dt for a Hermitian rho and total Hamiltonian `hTotal`.
inline ComplexMatrix lindblad_rhs(const DensityMatrix& rho, const ComplexMatrix& hTotal,
                                  double gamma, int nCells)
{
    if (rho.dim() != hTotal.dim()) throw std::invalid_argument("lindblad_rhs: dimension mismatch");
    return LindbladGenerator(hTotal, gamma, nCells)(rho.matrix);
}

} // namespace qbat

#endif // QBAT_MODEL_HPP
