"""Trajectory stepping: outcome statistics, conditional updates, determinism."""

import numpy as np
import pytest

from fluorpair import states as st
from fluorpair import trajectory as tj
from fluorpair.entanglement import concurrence_mixed
from fluorpair.kraus import (
    MeasurementSettings,
    inefficient_photodetection_ops,
    photodetection_ops,
)

import oracles

EPS = 0.002
GAMMA = 1.0
DT = EPS / GAMMA


def settings(theta=0.0, vartheta=np.pi / 2, eta3=1.0, eta4=1.0):
    return MeasurementSettings(EPS, theta, vartheta, eta3, eta4)


def state(label):
    return st.density_from_pure(st.pure_state_from_label(label))


def trace_weights(kraus_matrices, rho):
    return np.array([np.real(np.trace(m @ rho.rho @ m.conj().T)) for m in kraus_matrices])


class TestPdWeights:
    def test_ee_closed_form(self):
        w = tj.pd_weights(state("ee"), settings())
        expected = [1 - 2 * EPS + EPS**2, EPS - EPS**2, EPS - EPS**2, EPS**2 / 2, EPS**2 / 2]
        assert np.allclose(w, expected, atol=1e-15)

    def test_gg_dark(self):
        w = tj.pd_weights(state("gg"), settings())
        assert np.allclose(w, [1, 0, 0, 0, 0], atol=1e-15)

    def test_psi_plus_port4_dark(self):
        w = tj.pd_weights(state("psi_plus"), settings())
        assert w[2] == 0.0 and w[4] == 0.0
        w = tj.pd_weights(state("psi_minus"), settings())
        assert w[1] == 0.0 and w[3] == 0.0

    def test_matches_operator_traces(self):
        rng = np.random.default_rng(0)
        mats = photodetection_ops(settings(0.0, 0.0)).matrices()
        for _ in range(50):
            rho = st.TwoQubitState(oracles.random_density_matrix(rng))
            w = tj.pd_weights(rho, settings())
            ref = trace_weights(mats, rho)
            assert np.max(np.abs(w - ref / ref.sum())) < 1e-13
            assert w.sum() == pytest.approx(1.0, abs=1e-12)


class TestInefficientPdWeights:
    def test_ee_example(self):
        # w10 on |ee>: Xi=2, Theta=1, q4=0 -> eps*eta3 - eps^2 eta3^2
        for eta3 in (1.0, 0.75, 0.4):
            w = tj.inefficient_pd_weights(state("ee"), settings(eta3=eta3, eta4=0.9))
            assert w[1] == pytest.approx(EPS * eta3 - EPS**2 * eta3**2, abs=1e-15)

    def test_matches_group_traces(self):
        rng = np.random.default_rng(1)
        s = settings(eta3=0.7, eta4=0.85)
        kset = inefficient_photodetection_ops(s)
        by_label = dict(kset.operators)
        for _ in range(30):
            rho = st.TwoQubitState(oracles.random_density_matrix(rng))
            w = tj.inefficient_pd_weights(rho, s)
            ref = np.array(
                [
                    sum(np.real(np.trace(by_label[lab] @ rho.rho @ by_label[lab].conj().T))
                        for lab in labels)
                    for labels in kset.groups.values()
                ]
            )
            assert np.max(np.abs(w - ref / ref.sum())) < 1e-13

    def test_reduces_to_ideal(self):
        rng = np.random.default_rng(2)
        rho = st.TwoQubitState(oracles.random_density_matrix(rng))
        w_ideal = tj.pd_weights(rho, settings())
        w_eta = tj.inefficient_pd_weights(rho, settings())
        assert np.max(np.abs(w_ideal - w_eta)) < 1e-15


class TestReadoutMeans:
    def test_homodyne_means_examples(self):
        s = settings()
        assert tj.homodyne_means(state("ee"), s, GAMMA) == pytest.approx((0.0, 0.0), abs=1e-15)
        plus = st.TwoQubitState(np.full((4, 4), 0.25))
        m3, _ = tj.homodyne_means(plus, MeasurementSettings(EPS, 0.0, np.pi / 2), GAMMA)
        assert m3 == pytest.approx(np.sqrt(2 * GAMMA), abs=1e-14)
        m3_lost, _ = tj.homodyne_means(plus, settings(eta3=0.0), GAMMA)
        assert m3_lost == 0.0

    def test_homodyne_means_match_bloch_combination(self):
        # chi3 = (q11+q12+q14+q15) sin(theta) + (q5+q6+q8+q9) cos(theta) and the
        # vartheta analogue; means are sqrt(gamma eta) chi
        rng = np.random.default_rng(3)
        for _ in range(30):
            rho = st.TwoQubitState(oracles.random_density_matrix(rng))
            q = st.bloch_from_density(rho)
            th, vt = rng.uniform(0, 2 * np.pi, 2)
            t3, t4 = rng.uniform(0.2, 1.0, 2)
            chi3 = (q[11] + q[12] + q[14] + q[15]) * np.sin(th) + (
                q[5] + q[6] + q[8] + q[9]
            ) * np.cos(th)
            chi4 = -(q[5] - q[6] - q[8] + q[9]) * np.cos(vt) - (
                q[11] - q[12] - q[14] + q[15]
            ) * np.sin(vt)
            m3, m4 = tj.homodyne_means(rho, MeasurementSettings(EPS, th, vt, t3, t4), GAMMA)
            assert m3 == pytest.approx(np.sqrt(GAMMA * t3) * chi3, abs=1e-12)
            assert m4 == pytest.approx(np.sqrt(GAMMA * t4) * chi4, abs=1e-12)

    def test_heterodyne_means_match_bloch_combination(self):
        # at theta = 0, vartheta = 90 deg the four means are sqrt(gamma/2) times
        # (q5+q6+q8+q9), -(q11+q12+q14+q15), (-q11+q12+q14-q15), (-q5+q6+q8-q9)
        rng = np.random.default_rng(4)
        for _ in range(30):
            rho = st.TwoQubitState(oracles.random_density_matrix(rng))
            q = st.bloch_from_density(rho)
            mi, mq, mx, my = tj.heterodyne_means(rho, settings(), GAMMA)
            g = np.sqrt(GAMMA / 2)
            assert mi == pytest.approx(g * (q[5] + q[6] + q[8] + q[9]), abs=1e-12)
            assert mq == pytest.approx(-g * (q[11] + q[12] + q[14] + q[15]), abs=1e-12)
            assert mx == pytest.approx(g * (-q[11] + q[12] + q[14] - q[15]), abs=1e-12)
            assert my == pytest.approx(g * (-q[5] + q[6] + q[8] - q[9]), abs=1e-12)

    def test_heterodyne_means_vanish_from_ee(self):
        assert np.allclose(tj.heterodyne_means(state("ee"), settings(), GAMMA), 0.0, atol=1e-15)


class TestMixedWeights:
    def test_psi_plus_never_clicks(self):
        s = settings(vartheta=0.0)
        w = tj.mixed_weights(state("psi_plus"), s, GAMMA, DT)
        assert w[1] < 1e-15 and w[2] < 1e-15
        assert w.sum() == pytest.approx(1.0, abs=1e-12)

    def test_interference_states_keep_dark_port(self):
        # states N(0, a, a, b) keep the jump weight pinned at zero
        rng = np.random.default_rng(5)
        s = settings(vartheta=0.0)
        for _ in range(20):
            a, b = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            v = np.array([0.0, a, a, b])
            v /= np.linalg.norm(v)
            w = tj.mixed_weights(st.density_from_pure(st.PureState(v)), s, GAMMA, DT)
            assert w[1] + w[2] < 1e-14

    def test_close_to_exact_traces(self):
        # printed weight formulas agree with integrated operator traces to O(eps^2)
        rng = np.random.default_rng(6)
        s = settings(vartheta=0.0)
        for _ in range(20):
            rho = st.TwoQubitState(oracles.random_density_matrix(rng))
            w = tj.mixed_weights(rho, s, GAMMA, DT)
            m = rho.rho
            exact1 = EPS / 2 * np.real(
                2 * (1 - EPS) * m[0, 0] + m[1, 1] + m[2, 2] - m[1, 2] - m[2, 1]
            )
            exact2 = EPS**2 / 2 * np.real(m[0, 0])
            assert abs(w[1] - exact1) < 5 * EPS**2
            # w2 only differs through the O(eps) normalization factor
            assert abs(w[2] - exact2) < 5 * EPS**3 + 1e-12


class TestPdStep:
    def test_forced_click_builds_bell_state(self):
        rng = np.random.default_rng(7)
        rho, out = tj.pd_step(state("ee"), settings(), rng, force_outcome=1)
        assert out.clicks3 == 1 and out.clicks4 == 0
        assert concurrence_mixed(rho) == pytest.approx(1.0, abs=1e-12)

    def test_no_click_keeps_gg(self):
        rng = np.random.default_rng(8)
        rho, _ = tj.pd_step(state("gg"), settings(), rng, force_outcome=0)
        assert np.allclose(rho.rho, state("gg").rho, atol=1e-15)

    def test_second_click_same_detector(self):
        rng = np.random.default_rng(9)
        rho, _ = tj.pd_step(state("ee"), settings(), rng, force_outcome=1)
        w = tj.pd_weights(rho, settings())
        assert w[2] == 0.0  # other detector is dark
        rho2, _ = tj.pd_step(rho, settings(), rng, force_outcome=1)
        assert np.allclose(rho2.rho, state("gg").rho, atol=1e-9)
        assert concurrence_mixed(rho2) == pytest.approx(0.0, abs=1e-12)

    def test_impossible_outcome_raises(self):
        rng = np.random.default_rng(10)
        with pytest.raises(tj.StepError):
            tj.pd_step(state("gg"), settings(), rng, force_outcome=3)


class TestHomodyneStep:
    def test_zero_record_stays_in_ee_gg_plane(self):
        rng = np.random.default_rng(11)
        rho = state("ee")
        s = settings()
        for _ in range(200):
            rho, _ = tj.homodyne_step(rho, s, GAMMA, rng, force_readouts=(0.0, 0.0))
        m = rho.rho
        support = abs(m[1, 1]) + abs(m[2, 2])
        assert support < 1e-12
        assert np.real(m[0, 3]) < 0  # drifting towards |Phi->

    def test_equal_phases_never_entangle(self):
        rng = np.random.default_rng(12)
        rho = state("ee")
        s = settings(vartheta=0.0)
        for _ in range(200):
            rho, _ = tj.homodyne_step(rho, s, GAMMA, rng)
            assert concurrence_mixed(rho) < 1e-6

    def test_lossy_step_loses_purity(self):
        rng = np.random.default_rng(13)
        rho = state("ee")
        s = settings(eta3=0.6, eta4=0.6)
        for _ in range(300):
            rho, _ = tj.homodyne_step(rho, s, GAMMA, rng)
        assert st.purity(rho) < 1.0 - 1e-4


class TestHeterodyneStep:
    def test_never_entangles_from_ee(self):
        rng = np.random.default_rng(14)
        rho = state("ee")
        s = settings()
        for _ in range(300):
            rho, _ = tj.heterodyne_step(rho, s, GAMMA, rng)
            # noise floor ~1e-8: the spin-flip spectrum of an exactly separable
            # state is all round-off, which the square root amplifies
            assert concurrence_mixed(rho) < 1e-7
        assert st.purity(rho) == pytest.approx(1.0, abs=1e-8)


class TestMixedSteps:
    def test_psi_plus_purely_diffusive(self):
        rng = np.random.default_rng(15)
        rho = state("psi_plus")
        s = settings(vartheta=0.0)
        for _ in range(400):
            w = tj.mixed_weights(rho, s, GAMMA, DT)
            assert w[1] + w[2] < 1e-12
            rho, out = tj.mixed_step(rho, s, GAMMA, rng)
            assert out.j == 0

    def test_psi_minus_zero_heterodyne_signal(self):
        rng = np.random.default_rng(16)
        rho = state("psi_minus")
        s = settings(vartheta=0.0)
        for _ in range(400):
            mi, mq = tj.mixed_heterodyne_means(rho, s, GAMMA)
            assert abs(mi) < 1e-12 and abs(mq) < 1e-12
            rho, _ = tj.mixed_step(rho, s, GAMMA, rng)

    def test_discard_purity_dips_and_recovers(self):
        rng = np.random.default_rng(17)
        rho = state("ee")
        s = settings(vartheta=0.0)
        purities = [1.0]
        for _ in range(3000):
            rho, _ = tj.mixed_discard_step(rho, s, GAMMA, rng)
            purities.append(st.purity(rho))
        assert min(purities) < 0.9
        assert purities[-1] > min(purities)  # recovering towards |gg>

    def test_discard_from_gg_stays_pure(self):
        rng = np.random.default_rng(18)
        rho = state("gg")
        s = settings(vartheta=0.0)
        for _ in range(100):
            rho, _ = tj.mixed_discard_step(rho, s, GAMMA, rng)
            assert st.purity(rho) == pytest.approx(1.0, abs=1e-12)


class TestInefficientPdStep:
    def test_eta_one_matches_ideal(self):
        rho = state("ee")
        for k in range(40):
            r1 = tj.trajectory_rng(1, k)
            r2 = tj.trajectory_rng(1, k)
            a, out_a = tj.pd_step(rho, settings(), r1)
            b, out_b = tj.inefficient_pd_step(rho, settings(), r2)
            assert out_a == out_b
            assert np.max(np.abs(a.rho - b.rho)) < 1e-12
            rho = a

    def test_click_ceiling_at_late_time(self):
        # no-click evolution from |ee> for 5/gamma, then a forced click at port 3:
        # the post-click concurrence sits at the eta-ceiling, about 0.0635 < 0.1
        eta = 0.9
        s = settings(eta3=eta, eta4=eta)
        rho = state("ee")
        rng = tj.trajectory_rng(0, 0)
        n = round(5.0 / DT)
        for _ in range(n):
            rho, _ = tj.inefficient_pd_step(rho, s, rng, force_outcome=0)
        rho, _ = tj.inefficient_pd_step(rho, s, rng, force_outcome=1)
        c = concurrence_mixed(rho)
        expected = 1.0 / ((1 - eta) * np.exp(5.0) + eta)
        assert expected == pytest.approx(0.06347, abs=2e-4)
        assert c == pytest.approx(expected, abs=3e-3)
        assert c < 0.1


class TestRunners:
    def test_run_trajectory_deterministic(self):
        cfg = tj.TrajectoryConfig.build(
            GAMMA, DT, 0.2, "homodyne", initial=st.pure_state_from_label("ee"), seed=123
        )
        a = tj.run_trajectory(cfg)
        b = tj.run_trajectory(cfg)
        assert np.array_equal(a.concurrence, b.concurrence)
        assert all(x == y for x, y in zip(a.outcomes, b.outcomes))
        assert len(a.outcomes) == cfg.n_steps
        assert len(a.concurrence) == cfg.n_steps + 1

    def test_snapshot_stride(self):
        cfg = tj.TrajectoryConfig.build(
            GAMMA, DT, 0.1, "photodetection", initial=st.pure_state_from_label("ee"),
            seed=5, snapshot_stride=10,
        )
        rec = tj.run_trajectory(cfg)
        assert rec.snapshots[0][0] == 0
        assert all(k % 10 == 0 or k == cfg.n_steps for k, _ in rec.snapshots)

    def test_ensemble_thread_count_invariance(self):
        cfg = tj.TrajectoryConfig.build(
            GAMMA, DT, 0.1, "homodyne", initial=st.pure_state_from_label("ee"), seed=77
        )
        one = tj.run_ensemble(cfg, 300, threads=1)
        # chunk boundaries are fixed, so any thread count gives identical bits
        import fluorpair._batched as bt

        old = bt.CHUNK_SIZE
        bt.CHUNK_SIZE = 128
        try:
            chunked = tj.run_ensemble(cfg, 300, threads=1)
            threaded = tj.run_ensemble(cfg, 300, threads=2)
        finally:
            bt.CHUNK_SIZE = old
        assert np.array_equal(chunked.mean_concurrence, threaded.mean_concurrence)
        assert np.array_equal(chunked.mean_purity, threaded.mean_purity)
        # chunking itself only reorders float accumulation
        assert np.max(np.abs(one.mean_concurrence - chunked.mean_concurrence)) < 1e-12

    def test_ensemble_matches_scalar_stream(self):
        # trajectory i of an ensemble evolves on the stream (seed, i); the
        # scalar runner on the same stream reproduces its concurrence curve
        cfg = tj.TrajectoryConfig.build(
            GAMMA, DT, 0.05, "photodetection", initial=st.pure_state_from_label("ee"), seed=9
        )
        ens = tj.run_ensemble(cfg, 3)
        recs = [tj.run_trajectory(cfg, index=i) for i in range(3)]
        mean = np.mean([r.concurrence for r in recs], axis=0)
        assert np.max(np.abs(mean - ens.mean_concurrence)) < 1e-10

    def test_config_validation(self):
        with pytest.raises(ValueError):
            tj.TrajectoryConfig.build(
                GAMMA, 0.003, 0.01, "homodyne", initial=st.pure_state_from_label("ee")
            )  # T/dt not integral
        with pytest.raises(ValueError):
            tj.TrajectoryConfig.build(
                GAMMA, DT, 0.1, "nonsense", initial=st.pure_state_from_label("ee")
            )

    def test_capture_threshold(self):
        cfg = tj.TrajectoryConfig.build(
            GAMMA, DT, 2.0, "homodyne", initial=st.pure_state_from_label("ee"), seed=21
        )
        summ = tj.run_ensemble(cfg, 64, capture_threshold=0.8)
        caps = summ.captures
        assert caps is not None and len(caps.states) > 0
        assert len(caps.states) == len(set(caps.trajectory_indices))
        for v in caps.states:
            c = 2 * abs(v[0] * v[3] - v[1] * v[2])
            assert c >= 0.8 - 1e-9
