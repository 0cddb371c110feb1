"""State representations: conversions, invariants, round trips."""

import numpy as np
import pytest

from fluorpair import states as st

from oracles import random_density_matrix, random_pure_state

SQ2 = np.sqrt(2.0)


def test_density_from_pure_basis_state():
    rho = st.density_from_pure(st.pure_state_from_label("ee"))
    assert np.allclose(rho.rho, np.diag([1, 0, 0, 0]), atol=1e-15)


def test_density_from_pure_bell_state():
    rho = st.density_from_pure(st.pure_state_from_label("psi_plus")).rho
    expected = np.zeros((4, 4))
    expected[1:3, 1:3] = 0.5
    assert np.allclose(rho, expected, atol=1e-15)


def test_density_from_pure_product_plus():
    v = np.ones(4) / 2
    rho = st.density_from_pure(st.PureState(v)).rho
    assert np.allclose(rho, np.full((4, 4), 0.25), atol=1e-15)


def test_density_from_pure_rejects_unnormalized():
    with pytest.raises(st.NormalizationError):
        st.density_from_pure(st.PureState([1, 1, 0, 0]))


def test_pure_state_purity_one():
    rng = np.random.default_rng(0)
    for _ in range(20):
        rho = st.density_from_pure(st.PureState(random_pure_state(rng)))
        assert st.purity(rho) == pytest.approx(1.0, abs=1e-12)


class TestBlochCoordinates:
    def test_ee_coordinates(self):
        # oracle: q_i = tr(Gamma_i rho) evaluated by direct matrix multiplication
        q = st.bloch_from_density(st.density_from_pure(st.pure_state_from_label("ee")))
        assert q[1] == pytest.approx(1 / np.sqrt(2), abs=1e-15)
        assert q[2] == pytest.approx(1 / np.sqrt(6), abs=1e-15)
        assert q[3] == pytest.approx(1 / np.sqrt(12), abs=1e-15)
        assert np.allclose(q.q[3:], 0.0, atol=1e-15)

    def test_maximally_mixed(self):
        q = st.bloch_from_density(st.TwoQubitState(np.eye(4) / 4))
        assert np.allclose(q.q, 0.0, atol=1e-15)

    def test_psi_plus_coordinates(self):
        q = st.bloch_from_density(st.density_from_pure(st.pure_state_from_label("psi_plus")))
        assert q[4] == pytest.approx(1 / SQ2, abs=1e-15)
        assert q[1] == pytest.approx(-1 / (2 * SQ2), abs=1e-15)
        assert q[2] == pytest.approx(-1 / (2 * np.sqrt(6)), abs=1e-15)
        assert q[3] == pytest.approx(1 / np.sqrt(12), abs=1e-15)
        others = [q[i] for i in (5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15)]
        assert np.allclose(others, 0.0, atol=1e-15)

    def test_density_from_bloch_zero_is_mixed(self):
        rho = st.density_from_bloch(st.BlochVector15(np.zeros(15)))
        assert np.allclose(rho.rho, np.eye(4) / 4, atol=1e-15)

    def test_round_trip_ee(self):
        rho = st.density_from_pure(st.pure_state_from_label("ee"))
        back = st.density_from_bloch(st.bloch_from_density(rho))
        assert np.max(np.abs(back.rho - rho.rho)) < 1e-12

    def test_phi_minus_via_q7(self):
        # equal |ee>/|gg> mixture plus q7 = -1/sqrt(2) coherence gives |Phi-><Phi-|
        mix = st.TwoQubitState(np.diag([0.5, 0, 0, 0.5]))
        q = st.bloch_from_density(mix).q.copy()
        q[6] = -1 / SQ2
        rho = st.density_from_bloch(st.BlochVector15(q))
        target = st.density_from_pure(st.pure_state_from_label("phi_minus"))
        assert np.max(np.abs(rho.rho - target.rho)) < 1e-12

    def test_density_from_bloch_rejects_nonphysical(self):
        q = np.zeros(15)
        q[0] = 1.2  # far outside the state space
        with pytest.raises(st.NonPhysicalStateError):
            st.density_from_bloch(st.BlochVector15(q))

    def test_round_trip_random_states(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            rho = st.TwoQubitState(random_density_matrix(rng))
            back = st.density_from_bloch(st.bloch_from_density(rho))
            assert np.max(np.abs(back.rho - rho.rho)) < 1e-12

    def test_purity_identity(self):
        rng = np.random.default_rng(43)
        for _ in range(300):
            rho = st.TwoQubitState(random_density_matrix(rng))
            q = st.bloch_from_density(rho)
            assert st.purity(rho) == pytest.approx(0.25 + np.sum(q.q**2), abs=1e-10)

    def test_q_a_q_b_are_populations(self):
        rng = np.random.default_rng(44)
        rho = st.TwoQubitState(random_density_matrix(rng))
        q = st.bloch_from_density(rho)
        assert q.q_a == pytest.approx(np.real(rho.rho[0, 0]), abs=1e-12)
        assert q.q_b == pytest.approx(np.real(rho.rho[1, 1]), abs=1e-12)


class TestBellBasis:
    def test_phi_plus_is_first_basis_vector(self):
        bell = st.bell_from_computational(st.pure_state_from_label("phi_plus"))
        assert np.allclose(bell.as_array(), [1, 0, 0, 0], atol=1e-15)

    def test_ee_decomposition(self):
        bell = st.bell_from_computational(st.pure_state_from_label("ee"))
        assert np.allclose(bell.as_array(), [1 / SQ2, 1 / SQ2, 0, 0], atol=1e-15)

    def test_max_concurrence_form(self):
        # B=0.6, C=0.8, E=0 in the restricted form has A = D = 0
        psi = st.PureState(0.6 * st.pure_state_from_label("phi_minus").amplitudes
                           + 0.8 * st.pure_state_from_label("psi_plus").amplitudes)
        bell = st.bell_from_computational(psi)
        assert abs(bell.a) < 1e-15 and abs(bell.d) < 1e-15
        assert bell.b == pytest.approx(0.6, abs=1e-15)
        assert bell.c == pytest.approx(0.8, abs=1e-15)

    def test_unitarity(self):
        u = st.BELL_BASIS_UNITARY
        assert np.allclose(u @ u.conj().T, np.eye(4), atol=1e-15)
        rng = np.random.default_rng(45)
        for _ in range(1000):
            v = random_pure_state(rng)
            bell = st.bell_from_computational(st.PureState(v))
            assert np.linalg.norm(bell.as_array()) == pytest.approx(1.0, abs=1e-12)
            back = st.computational_from_bell(bell)
            assert np.max(np.abs(back.amplitudes - v)) < 1e-12


class TestStateValidation:
    def test_non_hermitian_rejected(self):
        m = np.diag([1.0, 0, 0, 0]).astype(complex)
        m[0, 1] = 1e-3
        with pytest.raises(st.NonPhysicalStateError):
            st.TwoQubitState(m)

    def test_trace_checked(self):
        with pytest.raises(st.NonPhysicalStateError):
            st.TwoQubitState(np.eye(4) / 2)

    def test_negative_eigenvalue_rejected(self):
        m = np.diag([1.2, 0, 0, -0.2])
        with pytest.raises(st.NonPhysicalStateError):
            st.TwoQubitState(m)

    def test_sanitize_density(self):
        rng = np.random.default_rng(46)
        rho = random_density_matrix(rng)
        drifted = rho * 1.001
        drifted[0, 1] += 1e-6
        clean = st.sanitize_density(drifted)
        assert abs(np.trace(clean) - 1) < 1e-15
        assert np.max(np.abs(clean - clean.conj().T)) < 1e-18


def test_bell_aligned_from_vector_fixes_phase():
    rng = np.random.default_rng(47)
    base = np.array([0.0, 0.6, 0.8 * 1.0, 0.0])
    psi = (0.5 * st.pure_state_from_label("phi_minus").amplitudes
           + 0.5 * st.pure_state_from_label("psi_plus").amplitudes
           + 1j * np.sqrt(0.5) * st.pure_state_from_label("psi_minus").amplitudes)
    for _ in range(10):
        phase = np.exp(2j * np.pi * rng.random())
        t = st.bell_aligned_from_vector(phase * psi)
        assert abs(t[0]) < 1e-12
        assert t[1].real == pytest.approx(0.5, abs=1e-12) and abs(t[1].imag) < 1e-12
        assert t[2].real == pytest.approx(0.5, abs=1e-12)
        assert (t[3] / 1j).real == pytest.approx(np.sqrt(0.5), abs=1e-12)
