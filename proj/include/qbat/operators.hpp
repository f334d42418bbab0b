#ifndef QBAT_OPERATORS_HPP
#define QBAT_OPERATORS_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace qbat
{

using cplx = std::complex<double>;

inline constexpr cplx imag_unit{0.0, 1.0};

/// Thrown when an iterative numerical routine fails or a state drifts outside
/// its validity bounds.
class NumericalError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/**
 *  Dense square complex matrix, row-major.
 *
 *  Basis convention for spin chains: site 1 is the leftmost Kronecker factor
 *  and each site is ordered (|e>, |g>), so sigma_z = diag(1, -1).
 */
class ComplexMatrix
{
public:
    ComplexMatrix() = default;

    explicit ComplexMatrix(std::size_t dim)
        : dim_(dim)
        , data_(dim * dim)
    {
    }

    ComplexMatrix(std::size_t dim, std::initializer_list<cplx> rowMajor)
        : dim_(dim)
        , data_(rowMajor)
    {
        if (data_.size() != dim * dim) {
            throw std::invalid_argument("ComplexMatrix: expected dim*dim entries");
        }
    }

    static ComplexMatrix identity(std::size_t dim)
    {
        ComplexMatrix m(dim);
        for (std::size_t i = 0; i < dim; ++i) m(i, i) = 1.0;
        return m;
    }

    static ComplexMatrix diagonal(std::span<const double> d)
    {
        ComplexMatrix m(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
        return m;
    }

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return data_.size(); }

    cplx& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * dim_ + c]; }
    const cplx& operator()(std::size_t r, std::size_t c) const noexcept
    {
        return data_[r * dim_ + c];
    }

    cplx* data() noexcept { return data_.data(); }
    const cplx* data() const noexcept { return data_.data(); }
    std::span<cplx> values() noexcept { return data_; }
    std::span<const cplx> values() const noexcept { return data_; }

    ComplexMatrix& operator+=(const ComplexMatrix& o)
    {
        require_same_dim(o, "operator+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    ComplexMatrix& operator-=(const ComplexMatrix& o)
    {
        require_same_dim(o, "operator-=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }

    ComplexMatrix& operator*=(cplx s)
    {
        for (auto& v : data_) v *= s;
        return *this;
    }

    friend ComplexMatrix operator+(ComplexMatrix a, const ComplexMatrix& b) { return a += b; }
    friend ComplexMatrix operator-(ComplexMatrix a, const ComplexMatrix& b) { return a -= b; }
    friend ComplexMatrix operator*(ComplexMatrix a, cplx s) { return a *= s; }
    friend ComplexMatrix operator*(cplx s, ComplexMatrix a) { return a *= s; }

    friend ComplexMatrix operator*(const ComplexMatrix& a, const ComplexMatrix& b)
    {
        a.require_same_dim(b, "operator*");
        const std::size_t n = a.dim_;
        ComplexMatrix out(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < n; ++k) {
                const cplx aik = a(i, k);
                if (aik == cplx{}) continue;
                const cplx* brow = b.data() + k * n;
                cplx* orow = out.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
            }
        }
        return out;
    }

    ComplexMatrix adjoint() const
    {
        ComplexMatrix out(dim_);
        for (std::size_t i = 0; i < dim_; ++i) {
            for (std::size_t j = 0; j < dim_; ++j) out(j, i) = std::conj((*this)(i, j));
        }
        return out;
    }

    cplx trace() const noexcept
    {
        cplx t{};
        for (std::size_t i = 0; i < dim_; ++i) t += (*this)(i, i);
        return t;
    }

    /// Largest entry modulus.
    double max_abs() const noexcept
    {
        double m = 0.0;
        for (const auto& v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    /// max |M - M^dagger| entrywise.
    double hermiticity_error() const noexcept
    {
        double m = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) {
            for (std::size_t j = i; j < dim_; ++j) {
                m = std::max(m, std::abs((*this)(i, j) - std::conj((*this)(j, i))));
            }
        }
        return m;
    }

    bool is_diagonal(double tol = 0.0) const noexcept
    {
        for (std::size_t i = 0; i < dim_; ++i) {
            for (std::size_t j = 0; j < dim_; ++j) {
                if (i != j && std::abs((*this)(i, j)) > tol) return false;
            }
        }
        return true;
    }

    std::vector<double> real_diagonal() const
    {
        std::vector<double> d(dim_);
        for (std::size_t i = 0; i < dim_; ++i) d[i] = (*this)(i, i).real();
        return d;
    }

    bool operator==(const ComplexMatrix&) const = default;

private:
    void require_same_dim(const ComplexMatrix& o, const char* where) const
    {
        if (o.dim_ != dim_) {
            throw std::invalid_argument(std::string(where) + ": dimension mismatch ("
                                        + std::to_string(dim_) + " vs "
                                        + std::to_string(o.dim_) + ")");
        }
    }

    std::size_t dim_ = 0;
    std::vector<cplx> data_;
};

/// max_{ij} |a_ij - b_ij|
inline double max_abs_diff(const ComplexMatrix& a, const ComplexMatrix& b)
{
    if (a.dim() != b.dim()) throw std::invalid_argument("max_abs_diff: dimension mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    }
    return m;
}

namespace pauli
{
inline ComplexMatrix identity() { return ComplexMatrix::identity(2); }
inline ComplexMatrix x() { return ComplexMatrix(2, {0.0, 1.0, 1.0, 0.0}); }
inline ComplexMatrix y() { return ComplexMatrix(2, {0.0, -imag_unit, imag_unit, 0.0}); }
inline ComplexMatrix z() { return ComplexMatrix(2, {1.0, 0.0, 0.0, -1.0}); }
/// |e><g|
inline ComplexMatrix raising() { return ComplexMatrix(2, {0.0, 1.0, 0.0, 0.0}); }
/// |g><e|
inline ComplexMatrix lowering() { return ComplexMatrix(2, {0.0, 0.0, 1.0, 0.0}); }
} // namespace pauli

inline ComplexMatrix kron(const ComplexMatrix& a, const ComplexMatrix& b)
{
    const std::size_t na = a.dim();
    const std::size_t nb = b.dim();
    ComplexMatrix out(na * nb);
    for (std::size_t i = 0; i < na; ++i) {
        for (std::size_t j = 0; j < na; ++j) {
            const cplx aij = a(i, j);
            if (aij == cplx{}) continue;
            for (std::size_t k = 0; k < nb; ++k) {
                for (std::size_t l = 0; l < nb; ++l) {
                    out(i * nb + k, j * nb + l) = aij * b(k, l);
                }
            }
        }
    }
    return out;
}

/// `op` acting on site `site` (1-based) of an `nCells` chain, identity elsewhere.
inline ComplexMatrix local_operator(int site, const ComplexMatrix& op, int nCells)
{
    if (nCells < 1) throw std::out_of_range("local_operator: nCells must be >= 1");
    if (site < 1 || site > nCells) {
        throw std::out_of_range("local_operator: site " + std::to_string(site)
                                + " outside 1.." + std::to_string(nCells));
    }
    if (op.dim() != 2) throw std::invalid_argument("local_operator: op must be 2x2");
    ComplexMatrix out = ComplexMatrix::identity(1);
    for (int k = 1; k <= nCells; ++k) {
        out = kron(out, k == site ? op : ComplexMatrix::identity(2));
    }
    return out;
}

inline ComplexMatrix commutator(const ComplexMatrix& a, const ComplexMatrix& b)
{
    if (a.dim() != b.dim()) throw std::invalid_argument("commutator: dimension mismatch");
    return a * b - b * a;
}

inline ComplexMatrix anticommutator(const ComplexMatrix& a, const ComplexMatrix& b)
{
    if (a.dim() != b.dim()) throw std::invalid_argument("anticommutator: dimension mismatch");
    return a * b + b * a;
}

/// Eigenvalues ascending; eigenvectors stored as the columns of `vectors`.
struct EigenSystem
{
    std::vector<double> values;
    ComplexMatrix vectors;

    cplx component(std::size_t row, std::size_t column) const { return vectors(row, column); }
};

namespace detail
{

inline void require_hermitian(const ComplexMatrix& m, double tol, const char* where)
{
    const double err = m.hermiticity_error();
    if (err > tol) {
        std::ostringstream os;
        os << where << ": matrix is not Hermitian (max |M - M^dagger| = " << err << ")";
        throw std::invalid_argument(os.str());
    }
}

// Stable ascending sort of eigenpairs.
inline EigenSystem sorted(std::vector<double> values, const ComplexMatrix& vectors)
{
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    EigenSystem es{std::vector<double>(n), ComplexMatrix(n)};
    for (std::size_t j = 0; j < n; ++j) {
        es.values[j] = values[order[j]];
        for (std::size_t i = 0; i < n; ++i) es.vectors(i, j) = vectors(i, order[j]);
    }
    return es;
}

using EigenRowMajor
    = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const EigenRowMajor> as_eigen(const ComplexMatrix& m)
{
    const auto n = static_cast<Eigen::Index>(m.dim());
    return Eigen::Map<const EigenRowMajor>(m.data(), n, n);
}

} // namespace detail

struct JacobiOptions
{
    int max_sweeps = 100;
    double off_diagonal_tol = 1e-12;
};

/**
 *  Cyclic complex Jacobi eigensolver.
 *
 *  Each rotation zeroes one off-diagonal pair (p, q) with a unitary
 *  [[c, -s e^{i phi}], [s e^{-i phi}, c]] so the accumulated eigenvector
 *  matrix stays orthonormal to rounding. Sweeps stop once the off-diagonal
 *  Frobenius norm falls below `off_diagonal_tol` times the matrix norm.
 */
inline EigenSystem jacobi_eigensystem(const ComplexMatrix& m, JacobiOptions opts = {})
{
    detail::require_hermitian(m, 1e-10, "jacobi_eigensystem");
    const std::size_t n = m.dim();
    ComplexMatrix a = m;
    for (std::size_t i = 0; i < n; ++i) a(i, i) = a(i, i).real();
    ComplexMatrix v = ComplexMatrix::identity(n);

    double scale = 0.0;
    for (const auto& x : a.values()) scale += std::norm(x);
    scale = std::sqrt(scale);
    const double threshold = opts.off_diagonal_tol * std::max(scale, 1e-300);

    auto off_norm = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) s += 2.0 * std::norm(a(i, j));
        }
        return std::sqrt(s);
    };

    int sweep = 0;
    double off = off_norm();
    for (; sweep < opts.max_sweeps && off > threshold; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const cplx apq = a(p, q);
                const double mag = std::abs(apq);
                if (mag < 1e-300) continue;
                const double app = a(p, p).real();
                const double aqq = a(q, q).real();
                const cplx phase = apq / mag;
                // Real symmetric 2x2 problem [[app, mag], [mag, aqq]] after phase removal.
                const double theta = 0.5 * std::atan2(2.0 * mag, aqq - app);
                const double c = std::cos(theta);
                const double s = std::sin(theta);
                // Columns: a' = a J, with J = [[c, s*phase], [-s*conj(phase), c]]
                for (std::size_t k = 0; k < n; ++k) {
                    const cplx akp = a(k, p);
                    const cplx akq = a(k, q);
                    a(k, p) = c * akp - s * std::conj(phase) * akq;
                    a(k, q) = s * phase * akp + c * akq;
                }
                // Rows: a' = J^dagger a
                for (std::size_t k = 0; k < n; ++k) {
                    const cplx apk = a(p, k);
                    const cplx aqk = a(q, k);
                    a(p, k) = c * apk - s * phase * aqk;
                    a(q, k) = s * std::conj(phase) * apk + c * aqk;
                }
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                a(p, p) = a(p, p).real();
                a(q, q) = a(q, q).real();
                for (std::size_t k = 0; k < n; ++k) {
                    const cplx vkp = v(k, p);
                    const cplx vkq = v(k, q);
                    v(k, p) = c * vkp - s * std::conj(phase) * vkq;
                    v(k, q) = s * phase * vkp + c * vkq;
                }
            }
        }
        off = off_norm();
    }
    if (off > threshold) {
        std::ostringstream os;
        os << "jacobi_eigensystem: no convergence after " << sweep
           << " sweeps (off-diagonal norm " << off << ")";
        throw NumericalError(os.str());
    }
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = a(i, i).real();
    return detail::sorted(std::move(values), v);
}

enum class EigenMethod
{
    Jacobi,
    Tridiagonal,
};

/// Householder tridiagonalization followed by implicit QL (Eigen backend).
inline EigenSystem tridiagonal_eigensystem(const ComplexMatrix& m)
{
    detail::require_hermitian(m, 1e-10, "tridiagonal_eigensystem");
    const std::size_t n = m.dim();
    Eigen::SelfAdjointEigenSolver<detail::EigenRowMajor> solver(detail::as_eigen(m));
    if (solver.info() != Eigen::Success) {
        throw NumericalError("tridiagonal_eigensystem: QL iteration did not converge");
    }
    std::vector<double> values(n);
    ComplexMatrix vectors(n);
    for (std::size_t j = 0; j < n; ++j) {
        values[j] = solver.eigenvalues()[static_cast<Eigen::Index>(j)];
        for (std::size_t i = 0; i < n; ++i) {
            vectors(i, j) = solver.eigenvectors()(static_cast<Eigen::Index>(i),
                                                  static_cast<Eigen::Index>(j));
        }
    }
    return detail::sorted(std::move(values), vectors);
}

inline EigenSystem hermitian_eigensystem(const ComplexMatrix& m,
                                         EigenMethod method = EigenMethod::Tridiagonal)
{
    return method == EigenMethod::Jacobi ? jacobi_eigensystem(m) : tridiagonal_eigensystem(m);
}

/// Ascending eigenvalues only. This is the hot path for passive energies.
inline std::vector<double> hermitian_eigenvalues(const ComplexMatrix& m)
{
    const std::size_t n = m.dim();
    if (n == 1) return {m(0, 0).real()};
    Eigen::SelfAdjointEigenSolver<detail::EigenRowMajor> solver(detail::as_eigen(m),
                                                                Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) {
        throw NumericalError("hermitian_eigenvalues: QL iteration did not converge");
    }
    std::vector<double> values(solver.eigenvalues().data(), solver.eigenvalues().data() + n);
    std::sort(values.begin(), values.end());
    return values;
}

} // namespace qbat

#endif // QBAT_OPERATORS_HPP
