import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.linalg import expm

from qstate.errors import DeconvolutionRefused, DimensionMismatch, InvalidSpec, TailTooHeavy
from qstate.states import (
    DEFAULT_GRID,
    Cat,
    Coherent,
    DensityMatrix,
    Fock,
    Grid1D,
    Mixture,
    PhaseSpaceGrid,
    SqueezedVacuum,
    Superposition,
    Thermal,
    build_state,
    characteristic_function,
    compare_states,
    convert_ordering,
    displaced_fock_overlap,
    displaced_number_statistics,
    displacement_matrices,
    exponential_phase_moments,
    fidelity,
    oscillator_eigenfunction,
    phase_space_function,
    positive_p,
    quadrature_distribution,
    spec_from_dict,
    spec_to_dict,
    trace_distance,
    von_neumann_entropy,
)

FIXTURES = [
    Fock(0),
    Fock(3),
    Coherent(1.5),
    Coherent(0.8 - 0.6j),
    SqueezedVacuum(0.5),
    Thermal(0.5),
    Cat(1.5),
    Cat(1.2, -1),
    Superposition((0.6, 0.0, 0.8j)),
    Mixture(((0.3, Fock(1)), (0.7, Coherent(1.0)))),
]


def ladder(dim):
    return np.diag(np.sqrt(np.arange(1, dim)), 1)


@pytest.mark.parametrize("spec", FIXTURES, ids=repr)
def test_built_states_satisfy_invariants(spec):
    rho = build_state(spec, 25)
    assert rho.check() == []
    assert rho.dim == 26


def test_vacuum_is_ground_state():
    rho = build_state(Fock(0), 5)
    expected = np.zeros((6, 6))
    expected[0, 0] = 1
    assert np.array_equal(rho.elements, expected)


def test_thermal_geometric_distribution():
    p = build_state(Thermal(1.0), 30).diag
    # geometric sequence normalized by brute-force sum, truncated at 30
    raw = np.array([1.0**n / 2.0 ** (n + 1) for n in range(31)])
    assert np.allclose(p, raw / raw.sum(), atol=1e-12)
    assert np.allclose(p[:20], 2.0 ** -(np.arange(20) + 1.0), atol=1e-9)


def test_squeezed_vacuum_odd_populations_vanish():
    p = build_state(SqueezedVacuum(0.5), 30).diag
    assert np.all(np.abs(p[1::2]) < 1e-15)


def test_squeezed_vacuum_matches_matrix_exponential():
    dim = 80
    a = ladder(dim)
    xi = 0.4 * np.exp(0.3j)
    S = expm(0.5 * (np.conj(xi) * a @ a - xi * a.T @ a.T))
    psi = S[:, 0][:21]
    rho = build_state(SqueezedVacuum(xi), 20)
    assert np.abs(rho.elements - np.outer(psi, psi.conj()) / np.vdot(psi, psi).real).max() < 1e-10


def test_coherent_tail_too_heavy():
    with pytest.raises(TailTooHeavy) as err:
        build_state(Coherent(4.0), 10)
    assert err.value.tail_weight > 1e-8


@pytest.mark.parametrize(
    "spec",
    [Superposition((1.0, 1.0)), Mixture(((0.5, Fock(0)), (0.6, Fock(1)))), Mixture(((-0.1, Fock(0)), (1.1, Fock(1)))), Cat(0.0, -1)],
    ids=repr,
)
def test_malformed_specs_rejected(spec):
    with pytest.raises(InvalidSpec):
        build_state(spec, 5)


def test_mixture_averages_density_matrices():
    mix = build_state(Mixture(((0.5, Fock(0)), (0.5, Fock(1)))), 3)
    assert np.allclose(mix.elements, np.diag([0.5, 0.5, 0, 0]))


@pytest.mark.parametrize("spec", FIXTURES, ids=repr)
def test_spec_json_round_trip(spec):
    d = spec_to_dict(spec)
    assert build_state(spec_from_dict(d), 12, tail_tol=1e-3).elements.tolist() == build_state(spec, 12, tail_tol=1e-3).elements.tolist()


def test_density_matrix_json_round_trip():
    rho = build_state(Coherent(0.5 + 0.2j), 8)
    back = DensityMatrix.from_dict(rho.to_dict())
    assert np.array_equal(back.elements, rho.elements)


def test_density_matrix_is_immutable():
    rho = build_state(Fock(1), 3)
    with pytest.raises(ValueError):
        rho.elements[0, 0] = 1


def test_grid_requires_two_points():
    with pytest.raises(ValueError):
        Grid1D(0.0, 1.0, 1)


class TestEigenfunctions:
    def test_ground_state_peak(self):
        assert oscillator_eigenfunction(0, 0.0) == pytest.approx(math.pi**-0.25, rel=1e-14)

    def test_odd_parity_node(self):
        assert abs(oscillator_eigenfunction(1, 0.0)) < 1e-15

    def test_psi7_normalized(self):
        val, _ = quad(lambda x: oscillator_eigenfunction(7, x) ** 2, -np.inf, np.inf, epsabs=1e-13)
        assert val == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("n", [50, 120, 200])
    def test_high_order_finite_and_normalized(self, n):
        x = np.linspace(-25, 25, 20001)
        psi = oscillator_eigenfunction(n, x)
        assert np.all(np.isfinite(psi))
        assert np.trapezoid(psi**2, x) == pytest.approx(1.0, abs=1e-8)


class TestQuadratureDistribution:
    def test_vacuum_gaussian(self):
        d = quadrature_distribution(build_state(Fock(0), 4), [0.0, 1.1])
        x = DEFAULT_GRID.x
        assert np.abs(d.values - np.exp(-x * x) / math.sqrt(math.pi)).max() < 1e-14

    def test_single_photon(self):
        d = quadrature_distribution(build_state(Fock(1), 4), [0.4])
        x = DEFAULT_GRID.x
        assert np.abs(d.values[0] - 2 / math.sqrt(math.pi) * x * x * np.exp(-x * x)).max() < 1e-14

    @pytest.mark.parametrize("spec", FIXTURES, ids=repr)
    def test_marginals_normalized_and_symmetric(self, spec):
        rho = build_state(spec, 25)
        phases = np.linspace(0, math.pi, 16, endpoint=False)
        d = quadrature_distribution(rho, phases)
        norms = np.trapezoid(d.values, DEFAULT_GRID.x, axis=1)
        assert np.all(np.abs(norms - 1) < 1e-6)
        shifted = quadrature_distribution(rho, phases + math.pi)
        assert np.abs(shifted.values - d.values[:, ::-1]).max() < 1e-10

    def test_coherent_mean(self):
        alpha = 1.0 + 0.5j
        d = quadrature_distribution(build_state(Coherent(alpha), 20), [0.0, math.pi / 2])
        x = DEFAULT_GRID.x
        means = np.trapezoid(d.values * x, x, axis=1)
        assert means == pytest.approx([math.sqrt(2) * alpha.real, math.sqrt(2) * alpha.imag], abs=1e-10)


class TestCharacteristic:
    def test_normalization(self):
        rho = build_state(Cat(1.2), 20)
        assert characteristic_function(rho, 0.0, 0.7) == pytest.approx(1.0, abs=1e-13)

    def test_vacuum_gaussian(self):
        z = np.linspace(0, 6, 13)
        vals = characteristic_function(build_state(Fock(0), 5), z, 0.3)
        assert np.abs(vals - np.exp(-z * z / 4)).max() < 1e-12

    @pytest.mark.parametrize("spec", [Fock(2), Coherent(1.0 + 0.3j), SqueezedVacuum(0.4j)], ids=repr)
    def test_fourier_duality(self, spec):
        rho = build_state(spec, 25)
        phi = 0.6
        z = np.linspace(0, 6, 25)
        x = DEFAULT_GRID.x
        p = quadrature_distribution(rho, [phi]).values[0]
        numeric = np.trapezoid(np.exp(1j * np.outer(z, x)) * p, x, axis=1)
        assert np.abs(numeric - characteristic_function(rho, z, phi)).max() < 1e-6


class TestPhaseSpace:
    origin = PhaseSpaceGrid(np.array([0.0]), np.array([0.0]))

    def test_vacuum_q_at_origin(self):
        v = phase_space_function(build_state(Fock(0), 5), -1, self.origin).values[0, 0]
        assert v == pytest.approx(1 / math.pi, rel=1e-12)

    def test_vacuum_w_at_origin(self):
        v = phase_space_function(build_state(Fock(0), 5), 0, self.origin).values[0, 0]
        assert v == pytest.approx(2 / math.pi, rel=1e-12)

    def test_fock1_w_negative(self):
        v = phase_space_function(build_state(Fock(1), 5), 0, self.origin).values[0, 0]
        assert v == pytest.approx(-2 / math.pi, rel=1e-12)

    @pytest.mark.parametrize("spec", FIXTURES, ids=repr)
    def test_parity_identity(self, spec):
        rho = build_state(spec, 25)
        v = phase_space_function(rho, 0, self.origin).values[0, 0]
        expected = 2 / math.pi * np.sum((-1.0) ** np.arange(rho.dim) * rho.diag)
        assert abs(v - expected) < 1e-10

    @pytest.mark.parametrize("spec", [Fock(1), Coherent(0.7 - 0.2j), Superposition((0.6, 0.8j))], ids=repr)
    def test_closed_form_wigner_equals_series(self, spec):
        # the s=0 fast path is checked against the general series just below s=0
        rho = build_state(spec, 20)
        ax = np.linspace(-2, 2, 9)
        g = PhaseSpaceGrid(ax, 0.7 * ax[::-1])
        a = phase_space_function(rho, 0, g).values
        b = phase_space_function(rho, -1e-300, g).values
        assert np.abs(a - b).max() < 1e-12

    @pytest.mark.parametrize("spec", [Fock(0), Fock(2), Coherent(1.0), Cat(1.0)], ids=repr)
    def test_ordering_chain(self, spec):
        rho = build_state(spec, 25)
        ax = np.linspace(-6, 6, 121)
        g = PhaseSpaceGrid(ax, ax)
        q_direct = phase_space_function(rho, -1, g).values
        q_conv = convert_ordering(phase_space_function(rho, 0, g), -1).values
        inner = slice(30, 91)
        assert np.abs(q_direct[inner, inner] - q_conv[inner, inner]).max() < 1e-4

    def test_integral_normalized(self):
        ax = np.linspace(-5, 5, 101)
        w = phase_space_function(build_state(Fock(2), 10), 0, PhaseSpaceGrid(ax, ax))
        assert w.integral() == pytest.approx(1.0, abs=0.02)

    @pytest.mark.parametrize("spec", [Fock(2), Cat(1.0, -1), SqueezedVacuum(0.3j)], ids=repr)
    def test_q_closed_form_equals_series(self, spec):
        rho = build_state(spec, 20)
        ax = np.linspace(-2, 2, 7)
        g = PhaseSpaceGrid(ax, 0.5 * ax)
        a = phase_space_function(rho, -1, g).values
        b = phase_space_function(rho, -1 + 1e-13, g).values
        assert np.abs(a - b).max() < 1e-10

    def test_q_function_nonnegative(self):
        ax = np.linspace(-3, 3, 31)
        q = phase_space_function(build_state(Cat(1.5, -1), 25), -1, PhaseSpaceGrid(ax, ax))
        assert q.values.min() >= -1e-10

    def test_convert_identity_and_refusal(self):
        ax = np.linspace(-4, 4, 41)
        w = phase_space_function(build_state(Fock(1), 5), 0, PhaseSpaceGrid(ax, ax))
        assert np.array_equal(convert_ordering(w, 0.0).values, w.values)
        with pytest.raises(DeconvolutionRefused):
            convert_ordering(w, 0.5)

    def test_vacuum_w_to_q(self):
        ax = np.linspace(-5, 5, 101)
        w = phase_space_function(build_state(Fock(0), 3), 0, PhaseSpaceGrid(ax, ax))
        q = convert_ordering(w, -1)
        assert q.values[50, 50] == pytest.approx(1 / math.pi, abs=1e-3)

    def test_coherent_peak_invariant(self):
        ax = np.linspace(-5, 5, 101)
        w = phase_space_function(build_state(Coherent(1.0 - 0.5j), 20), 0, PhaseSpaceGrid(ax, ax))
        q = convert_ordering(w, -1)
        assert np.unravel_index(np.argmax(q.values), q.values.shape) == np.unravel_index(np.argmax(w.values), w.values.shape)


class TestDisplacedFock:
    def test_zero_displacement(self):
        for m in range(4):
            for n in range(4):
                assert displaced_fock_overlap(m, n, 0.0) == pytest.approx(float(m == n), abs=1e-15)

    def test_vacuum_overlap(self):
        a = 0.9 + 0.4j
        assert abs(displaced_fock_overlap(0, 0, a)) ** 2 == pytest.approx(math.exp(-abs(a) ** 2), rel=1e-12)

    def test_matches_matrix_exponential(self):
        dim = 120
        a = ladder(dim)
        alpha = 1.7 - 2.1j
        D = expm(alpha * a.T - np.conj(alpha) * a)
        block = np.array([[displaced_fock_overlap(m, n, alpha) for n in range(21)] for m in range(21)])
        assert np.abs(block - D[:21, :21]).max() < 1e-10
        assert np.abs(displacement_matrices(alpha, 21) - D[:21, :21]).max() < 1e-10

    def test_unitarity_partial_sums(self):
        sums = [np.sum(np.abs(displacement_matrices(1.5, M, 4)) ** 2, axis=0) for M in (10, 20, 40)]
        assert np.all(np.diff([1 - s for s in sums], axis=0) < 0)
        assert np.allclose(sums[-1], 1.0, atol=1e-12)

    def test_statistics_at_zero_is_diagonal(self):
        rho = build_state(Thermal(0.5), 30)
        assert np.allclose(displaced_number_statistics(rho, 0.0)[:31], rho.diag, atol=1e-14)

    def test_vacuum_statistics_poisson(self):
        a = 1.1j
        p = displaced_number_statistics(build_state(Fock(0), 5), a)
        m = np.arange(p.size)
        poisson = np.exp(-abs(a) ** 2) * abs(a) ** (2 * m) / np.array([math.factorial(k) for k in m])
        assert np.abs(p - poisson).max() < 1e-12

    @pytest.mark.parametrize("spec", [Fock(1), SqueezedVacuum(0.3), Cat(1.0)], ids=repr)
    def test_statistics_normalized(self, spec):
        p = displaced_number_statistics(build_state(spec, 20), 0.79)
        assert p.min() >= -1e-12
        assert p.sum() == pytest.approx(1.0, abs=1e-8)


class TestPhaseMoments:
    def test_zero_order(self):
        assert exponential_phase_moments(build_state(Coherent(1.0), 20), 0) == pytest.approx(1.0)

    @pytest.mark.parametrize("n", [0, 1, 4])
    def test_fock_has_no_phase(self, n):
        assert exponential_phase_moments(build_state(Fock(n), 6), 1) == 0

    def test_coherent_phase(self):
        alpha = 2.0 * np.exp(0.4j)
        v = exponential_phase_moments(build_state(Coherent(alpha), 40), 1)
        assert abs(np.angle(v) - 0.4) < 1e-6
        assert 0.9 < abs(v) < 1.0


class TestPositiveP:
    def test_vacuum_origin(self):
        assert positive_p(build_state(Fock(0), 4), 0, 0) == pytest.approx(1 / (4 * math.pi**2), rel=1e-12)

    def test_nonnegative_grid(self):
        rho = build_state(Cat(1.0, -1), 20)
        pts = np.linspace(-1.5, 1.5, 4)
        vals = [positive_p(rho, complex(a, b), complex(c, d)) for a in pts for b in pts for c in pts for d in pts]
        assert min(vals) >= -1e-12

    def test_vacuum_normalization(self):
        ax = np.linspace(-3, 3, 13)
        h = ax[1] - ax[0]
        rho = build_state(Fock(0), 3)
        total = sum(positive_p(rho, complex(a, b), complex(c, d)) for a in ax for b in ax for c in ax for d in ax)
        assert total * h**4 == pytest.approx(1.0, rel=0.05)


class TestCompare:
    def test_identity(self):
        rho = build_state(Coherent(0.5), 10)
        r = compare_states(rho, rho)
        assert r["fidelity"] == pytest.approx(1.0, abs=1e-9)
        assert r["trace_distance"] == pytest.approx(0.0, abs=1e-9)

    def test_orthogonal(self):
        r = compare_states(build_state(Fock(0), 3), build_state(Fock(1), 3))
        assert r["fidelity"] == pytest.approx(0.0, abs=1e-12)
        assert r["trace_distance"] == pytest.approx(1.0, abs=1e-12)

    def test_vacuum_thermal(self):
        vac = build_state(Fock(0), 30)
        th = build_state(Thermal(1.0), 30)
        # Uhlmann fidelity with a pure state is <0|rho|0>, squared-root convention
        assert fidelity(vac, th) == pytest.approx(th.diag[0], rel=1e-9)
        assert trace_distance(vac, th) == pytest.approx(1 - th.diag[0], abs=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            compare_states(build_state(Fock(0), 3), build_state(Fock(0), 4))


@st.composite
def superpositions(draw, dim=6):
    re = draw(st.lists(st.floats(-1, 1), min_size=dim, max_size=dim))
    im = draw(st.lists(st.floats(-1, 1), min_size=dim, max_size=dim))
    c = np.array(re) + 1j * np.array(im)
    norm = np.linalg.norm(c)
    if norm < 1e-3:
        c = np.eye(dim)[0].astype(complex)
        norm = 1.0
    return Superposition(tuple(c / norm))


@settings(max_examples=40, deadline=None)
@given(superpositions(), st.floats(0, 2 * math.pi))
def test_random_superposition_distribution_properties(spec, phi):
    rho = build_state(spec, 8)
    assert rho.check() == []
    d = quadrature_distribution(rho, [phi, phi + math.pi])
    assert d.values.min() >= -1e-12
    assert np.trapezoid(d.values[0], DEFAULT_GRID.x) == pytest.approx(1.0, abs=1e-6)
    assert np.abs(d.values[1] - d.values[0][::-1]).max() < 1e-10


@settings(max_examples=30, deadline=None)
@given(superpositions(), superpositions())
def test_fidelity_and_distance_bounds(a, b):
    ra, rb = build_state(a, 5), build_state(b, 5)
    r = compare_states(ra, rb)
    assert -1e-9 <= r["fidelity"] <= 1 + 1e-9
    assert -1e-9 <= r["trace_distance"] <= 1 + 1e-9
    # Fuchs-van de Graaf
    assert 1 - r["fidelity"] <= r["trace_distance"] + 1e-9


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 3.0))
def test_thermal_entropy_closed_form(nbar):
    rho = build_state(Thermal(nbar), 60, tail_tol=1e-6)
    expected = (nbar + 1) * math.log(nbar + 1) - (nbar * math.log(nbar) if nbar > 0 else 0.0)
    assert von_neumann_entropy(rho) == pytest.approx(expected, abs=1e-5)
