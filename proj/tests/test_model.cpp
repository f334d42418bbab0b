#include <catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <set>

#include "qbat/dynamics.hpp"
#include "qbat/model.hpp"

using namespace qbat;
using Catch::Approx;

namespace
{

DensityMatrix random_state(std::size_t d, std::mt19937_64& rng)
{
    std::normal_distribution<double> g;
    ComplexMatrix a(d);
    for (auto& v : a.values()) v = {g(rng), g(rng)};
    ComplexMatrix rho = a * a.adjoint();
    rho *= cplx{1.0 / rho.trace().real()};
    return {rho};
}

ComplexMatrix random_hermitian(std::size_t d, std::mt19937_64& rng)
{
    std::normal_distribution<double> g;
    ComplexMatrix a(d);
    for (auto& v : a.values()) v = {g(rng), g(rng)};
    return (a + a.adjoint()) * cplx{0.5};
}

// Textbook dense evaluation with explicit jump operators, independent of the
// structured generator.
ComplexMatrix dense_lindblad(const ComplexMatrix& rho, const ComplexMatrix& h, double gamma, int n)
{
    ComplexMatrix out = commutator(h, rho) * cplx{0.0, -1.0};
    for (int k = 1; k <= n; ++k) {
        const ComplexMatrix lower = local_operator(k, pauli::lowering(), n);
        const ComplexMatrix raise = lower.adjoint();
        const ComplexMatrix num = raise * lower;
        ComplexMatrix d = lower * rho * raise * cplx{2.0} - anticommutator(num, rho);
        out += d * cplx{gamma / 2.0};
    }
    return out;
}

ComplexMatrix dense_interaction(int n, double j)
{
    ComplexMatrix h(std::size_t{1} << n);
    for (int k = 1; k < n; ++k) {
        h += (local_operator(k, pauli::x(), n) * local_operator(k + 1, pauli::x(), n)
              + local_operator(k, pauli::y(), n) * local_operator(k + 1, pauli::y(), n))
           * cplx{j / 4.0};
    }
    return h;
}

ComplexMatrix total_sigma_z(int n)
{
    ComplexMatrix s(std::size_t{1} << n);
    for (int k = 1; k <= n; ++k) s += local_operator(k, pauli::z(), n);
    return s;
}

} // namespace

TEST_CASE("zero disorder reproduces the reference frequency", "[model][disorder]")
{
    ChainConfig c;
    c.n_cells = 5;
    c.omega0 = 1.7;
    c.delta = 0.0;
    for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
        const auto r = sample_disorder(c, seed);
        for (double w : r.omegas) CHECK(w == 1.7);
        CHECK(r.seed == seed);
    }
}

TEST_CASE("signed sampling stays in the interval", "[model][disorder]")
{
    ChainConfig c;
    c.n_cells = 7;
    c.omega0 = 1.0;
    c.delta = 5.0;
    c.fold_abs = false;
    bool sawNegative = false;
    for (std::uint64_t s = 0; s < 200; ++s) {
        for (double w : sample_disorder(c, s).omegas) {
            CHECK(w >= -4.0);
            CHECK(w <= 6.0);
            sawNegative = sawNegative || w < 0.0;
        }
    }
    CHECK(sawNegative);

    c.fold_abs = true;
    for (std::uint64_t s = 0; s < 200; ++s) {
        for (double w : sample_disorder(c, s).omegas) {
            CHECK(w >= 0.0);
            CHECK(w <= 6.0);
        }
    }
}

TEST_CASE("disorder draws replay from their seed", "[model][disorder]")
{
    ChainConfig c;
    c.n_cells = 4;
    c.delta = 2.0;
    std::set<std::vector<double>> distinct;
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto a = sample_disorder(c, realization_seed(42, s));
        const auto b = sample_disorder(c, realization_seed(42, s));
        CHECK(a.omegas == b.omegas);
        distinct.insert(a.omegas);
    }
    CHECK(distinct.size() == 100);
}

TEST_CASE("disorder draws are uniform (Kolmogorov-Smirnov)", "[model][disorder][property]")
{
    ChainConfig c;
    c.n_cells = 1;
    c.omega0 = 2.0;
    c.delta = 0.5;
    c.fold_abs = false;
    const int n = 10000;
    std::vector<double> u;
    u.reserve(n);
    for (int i = 0; i < n; ++i) {
        const double w = sample_disorder(c, realization_seed(7, static_cast<std::uint64_t>(i))).omegas[0];
        u.push_back((w - 1.0) / 2.0); // map [1, 3] onto [0, 1]
    }
    std::sort(u.begin(), u.end());
    double ks = 0.0;
    for (int i = 0; i < n; ++i) {
        ks = std::max({ks, std::abs((i + 1.0) / n - u[static_cast<std::size_t>(i)]),
                       std::abs(u[static_cast<std::size_t>(i)] - static_cast<double>(i) / n)});
    }
    // 1% critical value of the one-sample KS statistic.
    CHECK(ks < 1.628 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("free Hamiltonian", "[model][hamiltonian]")
{
    CHECK(build_free_hamiltonian({{1.0}, 0}) == ComplexMatrix::diagonal(std::vector<double>{0.5, -0.5}));
    CHECK(build_free_hamiltonian({{1.0, 1.0}, 0}) == ComplexMatrix::diagonal(std::vector<double>{1, 0, 0, -1}));

    ChainConfig c;
    c.delta = 3.0;
    for (int n = 1; n <= 7; ++n) {
        c.n_cells = n;
        const auto r = sample_disorder(c, static_cast<std::uint64_t>(n));
        const auto h0 = build_free_hamiltonian(r);
        CHECK(std::abs(h0.trace()) < 1e-12);
        CHECK(h0.is_diagonal());

        ComplexMatrix oracle(h0.dim());
        for (int k = 1; k <= n; ++k) {
            oracle += local_operator(k, pauli::z(), n) * cplx{r.omegas[static_cast<std::size_t>(k - 1)] / 2.0};
        }
        CHECK(max_abs_diff(h0, oracle) < 1e-13);
    }
}

TEST_CASE("interaction Hamiltonian", "[model][hamiltonian]")
{
    CHECK(build_interaction_hamiltonian(1, 10.0).max_abs() == 0.0);

    const auto h2 = build_interaction_hamiltonian(2, 1.0);
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t col = 0; col < 4; ++col) {
            const bool flip = (r == 1 && col == 2) || (r == 2 && col == 1);
            CHECK(h2(r, col) == cplx{flip ? 0.5 : 0.0});
        }
    }

    for (int n = 2; n <= 5; ++n) {
        CHECK(max_abs_diff(build_interaction_hamiltonian(n, 10.0), dense_interaction(n, 10.0)) < 1e-13);
    }

    const auto h4 = build_interaction_hamiltonian(4, 10.0);
    CHECK(h4.hermiticity_error() == 0.0);
    CHECK(commutator(h4, total_sigma_z(4)).max_abs() < 1e-12);
}

TEST_CASE("uniform fields commute with the flip-flop coupling", "[model][hamiltonian]")
{
    ChainConfig c;
    c.delta = 0.0;
    for (int n = 2; n <= 5; ++n) {
        c.n_cells = n;
        const auto h0 = build_free_hamiltonian(sample_disorder(c, 3));
        CHECK(commutator(h0, build_interaction_hamiltonian(n, c.coupling)).max_abs() < 1e-12);
    }
    c.n_cells = 3;
    c.delta = 5.0;
    const auto h0 = build_free_hamiltonian(sample_disorder(c, 3));
    CHECK(commutator(h0, build_interaction_hamiltonian(3, c.coupling)).max_abs() > 1e-3);
}

TEST_CASE("initial states", "[model][states]")
{
    CHECK(initial_state(FullyExcited{}, 1).matrix == ComplexMatrix::diagonal(std::vector<double>{1, 0}));
    CHECK(initial_state(Coherent{}, 1).matrix == ComplexMatrix(2, {0.5, 0.5, 0.5, 0.5}));
    CHECK(max_abs_diff(initial_state(Classical{0.75}, 2).matrix,
                       ComplexMatrix::diagonal(std::vector<double>{9. / 16, 3. / 16, 3. / 16, 1. / 16}))
          < 1e-15);

    for (int n = 1; n <= 6; ++n) {
        for (InitialStateKind k : {InitialStateKind{FullyExcited{}}, InitialStateKind{Coherent{}},
                                   InitialStateKind{Classical{}}}) {
            CHECK(initial_state(k, n).is_valid());
        }
    }
    CHECK_THROWS_AS(initial_state(Classical{1.5}, 2), std::invalid_argument);
    CHECK_THROWS_AS(initial_state(Classical{-0.1}, 2), std::invalid_argument);
}

TEST_CASE("Lindblad generator against the dense oracle", "[model][lindblad]")
{
    std::mt19937_64 rng(17);
    for (int n = 1; n <= 4; ++n) {
        const std::size_t d = std::size_t{1} << n;
        for (int trial = 0; trial < 5; ++trial) {
            const DensityMatrix rho = random_state(d, rng);
            const ComplexMatrix h = random_hermitian(d, rng);
            const double gamma = 0.3 + trial;
            const ComplexMatrix fast = lindblad_rhs(rho, h, gamma, n);
            CHECK(max_abs_diff(fast, dense_lindblad(rho.matrix, h, gamma, n)) < 1e-12);
            CHECK(std::abs(fast.trace()) < 1e-12);
            CHECK(fast.hermiticity_error() < 1e-12);
        }
    }
}

TEST_CASE("dissipator-only evaluation matches the oracle", "[model][lindblad]")
{
    std::mt19937_64 rng(23);
    const DensityMatrix rho = random_state(8, rng);
    const LindbladGenerator gen(random_hermitian(8, rng), 1.3, 3);
    ComplexMatrix d(8);
    gen.apply_dissipator(rho.matrix, d);
    CHECK(max_abs_diff(d, dense_lindblad(rho.matrix, ComplexMatrix(8), 1.3, 3)) < 1e-13);
}

TEST_CASE("Lindblad special cases", "[model][lindblad]")
{
    // Ground state with a diagonal Hamiltonian is stationary.
    ChainConfig c;
    c.n_cells = 3;
    c.delta = 2.0;
    const auto h0 = build_free_hamiltonian(sample_disorder(c, 1));
    DensityMatrix ground{ComplexMatrix(8)};
    ground.matrix(7, 7) = 1.0;
    CHECK(lindblad_rhs(ground, h0, 1.0, 3).max_abs() < 1e-14);

    // Single excited qubit decays at rate Gamma.
    const DensityMatrix excited = initial_state(FullyExcited{}, 1);
    const auto rhs = lindblad_rhs(excited, pauli::z() * cplx{0.5}, 1.0, 1);
    CHECK(rhs(0, 0).real() == Approx(-1.0));
    CHECK(rhs(1, 1).real() == Approx(1.0));

    CHECK_THROWS_AS(lindblad_rhs(excited, ComplexMatrix(4), 1.0, 1), std::invalid_argument);
}

TEST_CASE("diagonal product states stay diagonal under the flow", "[model][lindblad][property]")
{
    ChainConfig c;
    c.n_cells = 3;
    c.delta = 5.0;
    c.omega0 = 1.0;
    c.fold_abs = false;
    const auto h0 = build_free_hamiltonian(sample_disorder(c, 5));
    const auto hTotal = h0 + build_interaction_hamiltonian(3, c.coupling);
    for (InitialStateKind k : {InitialStateKind{FullyExcited{}}, InitialStateKind{Classical{}}}) {
        const auto rho = evolve_state(initial_state(k, 3), hTotal, 1.0, 1.0);
        double off = 0.0;
        for (std::size_t i = 0; i < 8; ++i) {
            for (std::size_t j = 0; j < 8; ++j) {
                if (i != j) off = std::max(off, std::abs(rho.matrix(i, j)));
            }
        }
        CHECK(off < 1e-8);
    }
}
