import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_state, random_unitary, seeds
from spdcsim.errors import InvalidInputError, NumericalError
from spdcsim.polcore import (Ket4, PolState, Projector, basis_ket, density_from_ket,
                             entangled_ket, expectation, fidelity, format_matrix,
                             maximally_mixed, parse_matrix, phi_minus, phi_plus, psi_minus,
                             psi_plus, purity, trace_distance)

PROPS = settings(max_examples=200, deadline=None)


class TestDensityFromKet:
    def test_singlet_entries(self):
        m = density_from_ket(psi_minus()).matrix
        expected = np.zeros((4, 4))
        expected[1, 1] = expected[2, 2] = 0.5
        expected[1, 2] = expected[2, 1] = -0.5
        assert np.allclose(m, expected, atol=1e-15)

    def test_basis_state(self):
        assert np.allclose(density_from_ket(basis_ket("HH")).matrix, np.diag([1, 0, 0, 0]))

    def test_phase_lands_on_offdiagonal(self):
        m = density_from_ket(entangled_ket(np.pi / 2)).matrix
        # (|HV> - e^{-i phi}|VH>)/sqrt2 at phi = pi/2
        assert m[1, 2] == pytest.approx(-0.5 * np.exp(1j * np.pi / 2), abs=1e-15)

    def test_unnormalized_ket_rejected(self):
        with pytest.raises(InvalidInputError):
            Ket4(np.array([1, 1, 0, 0], complex))

    def test_pure_state_purity(self):
        assert purity(density_from_ket(psi_plus())) == pytest.approx(1.0, abs=1e-10)


class TestExpectation:
    def test_singlet_values(self):
        rho = density_from_ket(psi_minus())
        assert expectation(rho, Projector.from_ket(basis_ket("HV"))) == pytest.approx(0.5)
        assert expectation(rho, Projector.from_ket(basis_ket("HH"))) == pytest.approx(0.0, abs=1e-15)

    def test_mixed_state_quarter(self):
        p = Projector.from_ket(Ket4.normalized([1, 2j, -1, 0.5]))
        assert expectation(maximally_mixed(), p) == pytest.approx(0.25)

    def test_out_of_range_is_numerical_error(self):
        # bypass constructor validation to emulate a corrupted state
        bad = object.__new__(PolState)
        object.__setattr__(bad, "matrix", 2 * np.eye(4))
        with pytest.raises(NumericalError):
            expectation(bad, Projector.from_ket(basis_ket("HH")))

    def test_projector_must_be_idempotent(self):
        with pytest.raises(InvalidInputError):
            Projector(np.eye(4) * 0.5)


class TestFidelityAndPurity:
    def test_bell_states(self):
        assert fidelity(density_from_ket(psi_minus()), psi_minus()) == pytest.approx(1.0)
        assert fidelity(density_from_ket(psi_plus()), psi_minus()) == pytest.approx(0.0, abs=1e-15)

    def test_dephased_mixture(self):
        # V = 0.96 coherence between |HV> and |VH>
        m = np.diag([0, 0.5, 0.5, 0]).astype(complex)
        m[1, 2] = m[2, 1] = -0.48
        assert fidelity(PolState(m), psi_minus()) == pytest.approx(0.98, abs=1e-12)

    def test_purity_values(self):
        assert purity(maximally_mixed()) == pytest.approx(0.25)
        mix = PolState(np.diag([0, 0.5, 0.5, 0]).astype(complex))
        assert purity(mix) == pytest.approx(0.5)

    def test_trace_distance_orthogonal(self):
        a, b = density_from_ket(phi_plus()), density_from_ket(phi_minus())
        assert trace_distance(a, b) == pytest.approx(1.0)


class TestPolStateValidation:
    def test_non_hermitian_rejected(self):
        m = np.diag([1, 0, 0, 0]).astype(complex)
        m[0, 1] = 0.1
        with pytest.raises(InvalidInputError):
            PolState(m)

    def test_negative_eigenvalue_rejected(self):
        with pytest.raises(InvalidInputError):
            PolState(np.diag([1.1, -0.1, 0, 0]).astype(complex))

    def test_bad_trace_rejected(self):
        with pytest.raises(InvalidInputError):
            PolState(np.eye(4, dtype=complex) / 2)


class TestTextFormat:
    def test_round_trip(self):
        m = random_state(3)
        back = parse_matrix(format_matrix(m))
        assert np.allclose(back, m, atol=1e-11)

    def test_layout(self):
        text = format_matrix(density_from_ket(psi_minus()))
        rows = text.strip().splitlines()
        assert len(rows) == 4 and all(len(r.split()) == 4 for r in rows)
        assert all(tok.endswith("j") for r in rows for tok in r.split())


class TestProperties:
    @PROPS
    @given(st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
                    min_size=4, max_size=4).filter(lambda a: np.linalg.norm(a) > 1e-3))
    def test_self_fidelity_is_one(self, amps):
        k = Ket4.normalized(amps)
        assert fidelity(density_from_ket(k), k) == pytest.approx(1.0, abs=1e-10)

    @PROPS
    @given(seeds, seeds, st.integers(1, 4))
    def test_complete_projectors_sum_to_one(self, s_rho, s_u, rank):
        rho = PolState.from_matrix(random_state(s_rho, rank))
        u = random_unitary(s_u)
        total = sum(expectation(rho, Projector.from_ket(Ket4(u[:, j]))) for j in range(4))
        assert total == pytest.approx(1.0, abs=1e-9)

    @PROPS
    @given(seeds, seeds, st.integers(1, 4))
    def test_purity_unitary_invariant(self, s_rho, s_u, rank):
        rho = PolState.from_matrix(random_state(s_rho, rank))
        u = random_unitary(s_u)
        rotated = PolState.from_matrix(u @ rho.matrix @ u.conj().T)
        assert purity(rotated) == pytest.approx(purity(rho), abs=1e-9)

    @PROPS
    @given(seeds, st.integers(1, 4))
    def test_eigenvalues_sum_to_one(self, s, rank):
        rho = PolState.from_matrix(random_state(s, rank))
        assert np.sum(rho.eigenvalues()) == pytest.approx(1.0, abs=1e-10)
