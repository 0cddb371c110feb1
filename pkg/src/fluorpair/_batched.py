"""Vectorized ensemble engine behind ``trajectory.run_ensemble``.

Trajectories are processed in fixed-size chunks; within a chunk all
trajectories advance together as numpy batches.  Trajectory ``i`` consumes a
noise tape drawn up front from its own stream (seed, spawn_key=(i,)), so the
chunking, batching and process distribution never change the physics: results
are bit-identical for any ``threads`` setting.

Pure initial states measured at unit efficiency stay pure, and those schemes
evolve amplitude vectors (B, 4).  The lossy and discarding schemes evolve
density-matrix batches (B, 4, 4); their concurrence uses the batched spin-flip
spectrum.  Total emission probability per window is O(gamma*dt), so click
outcomes are applied as sparse row-overwrites on top of the dominant no-click
update.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .entanglement import SPIN_FLIP
from .kraus import MeasurementSettings
from .states import sanitize_density
from .trajectory import (
    CaptureSet,
    EnsembleSummary,
    StepError,
    TrajectoryConfig,
    trajectory_rng,
)

CHUNK_SIZE = 2048

_SQ2 = np.sqrt(2.0)


# ---------------------------------------------------------------------------
# batched state functionals

def batched_concurrence_mixed(rho: np.ndarray) -> np.ndarray:
    """Concurrence of a (B, 4, 4) density-matrix batch via the spin-flip spectrum.

    Round-off noise on rank-deficient spectra is clipped as in
    ``entanglement.concurrence_mixed``.
    """
    product = rho @ SPIN_FLIP @ rho.conj() @ SPIN_FLIP
    ev = np.linalg.eigvals(product).real
    noise = 1e-13 * np.maximum(np.max(np.abs(ev), axis=1, keepdims=True), 1e-300)
    lam = np.sqrt(np.where(ev > noise, ev, 0.0))
    lam.sort(axis=1)
    return np.maximum(0.0, lam[:, 3] - lam[:, 2] - lam[:, 1] - lam[:, 0])


def batched_concurrence_pure(psi: np.ndarray) -> np.ndarray:
    return 2 * np.abs(psi[:, 0] * psi[:, 3] - psi[:, 1] * psi[:, 2])


def batched_purity(rho: np.ndarray) -> np.ndarray:
    return np.real(np.einsum("bij,bji->b", rho, rho))


# ---------------------------------------------------------------------------
# accumulators

@dataclass
class _Accumulator:
    sum_c: np.ndarray
    sum_c2: np.ndarray
    sum_p: np.ndarray
    sum_p2: np.ndarray
    max_c: np.ndarray
    sum_pop: np.ndarray
    count: int
    cap_states: list
    cap_times: list
    cap_indices: list

    @classmethod
    def empty(cls, n_times: int) -> "_Accumulator":
        z = lambda *shape: np.zeros(shape)
        return cls(z(n_times), z(n_times), z(n_times), z(n_times), z(n_times),
                   z(n_times, 4), 0, [], [], [])

    def absorb(self, other: "_Accumulator") -> None:
        self.sum_c += other.sum_c
        self.sum_c2 += other.sum_c2
        self.sum_p += other.sum_p
        self.sum_p2 += other.sum_p2
        np.maximum(self.max_c, other.max_c, out=self.max_c)
        self.sum_pop += other.sum_pop
        self.count += other.count
        self.cap_states += other.cap_states
        self.cap_times += other.cap_times
        self.cap_indices += other.cap_indices


class _Recorder:
    """Accumulates per-step batch statistics and first threshold crossings."""

    def __init__(self, n_times: int, index0: int, batch: int, threshold: Optional[float], dt: float):
        self.acc = _Accumulator.empty(n_times)
        self.acc.count = batch
        self.threshold = threshold
        self.dt = dt
        self.index0 = index0
        self.pending = np.ones(batch, dtype=bool) if threshold is not None else None

    def record(self, k: int, conc, pur, pop, psi=None, rho=None):
        a = self.acc
        a.sum_c[k] += conc.sum()
        a.sum_c2[k] += (conc**2).sum()
        a.sum_p[k] += pur.sum() if isinstance(pur, np.ndarray) else pur * len(conc)
        a.sum_p2[k] += (pur**2).sum() if isinstance(pur, np.ndarray) else pur**2 * len(conc)
        a.max_c[k] = max(a.max_c[k], conc.max())
        a.sum_pop[k] += pop.sum(axis=0)
        if self.pending is not None:
            hit = self.pending & (conc >= self.threshold)
            if hit.any():
                idx = np.nonzero(hit)[0]
                if psi is not None:
                    states = psi[idx]
                else:
                    w, v = np.linalg.eigh(rho[idx])
                    states = v[..., -1]
                a.cap_states.append(states.copy())
                a.cap_times.append(np.full(idx.size, k * self.dt))
                a.cap_indices.append(self.index0 + idx)
                self.pending[idx] = False


# ---------------------------------------------------------------------------
# noise tapes

def _tapes(cfg: TrajectoryConfig, index0: int, batch: int) -> dict[str, np.ndarray]:
    """Per-trajectory noise, one stream per global index; layout fixed per scheme."""
    n = cfg.n_steps
    scheme = cfg.scheme
    need_u = scheme in ("photodetection", "mixed_het_pd", "mixed_het_discard")
    n_z = {"homodyne": 2, "heterodyne": 4, "mixed_het_pd": 2, "mixed_het_discard": 2}.get(scheme, 0)
    u = np.empty((batch, n)) if need_u else None
    z = np.empty((batch, n, n_z)) if n_z else None
    for b in range(batch):
        rng = trajectory_rng(cfg.seed, index0 + b)
        if need_u:
            u[b] = rng.random(n)
        if n_z:
            z[b] = rng.standard_normal((n, n_z))
    out = {}
    if need_u:
        out["u"] = np.ascontiguousarray(u.T)  # (n, B)
    if n_z:
        out["z"] = np.ascontiguousarray(z.transpose(1, 0, 2))  # (n, B, n_z)
    return out


# ---------------------------------------------------------------------------
# pure-state steppers (ideal measurements from pure initial states)

def _pd_step_psi(psi: np.ndarray, eps: float, u: np.ndarray) -> np.ndarray:
    a, b, c, d = psi.T
    pa, pb, pc = np.abs(a) ** 2, np.abs(b) ** 2, np.abs(c) ** 2
    w0 = (1 - eps) ** 2 * pa + (1 - eps) * (pb + pc) + np.abs(d) ** 2
    w1 = eps * (1 - eps) * pa + eps / 2 * np.abs(b + c) ** 2
    w2 = eps * (1 - eps) * pa + eps / 2 * np.abs(b - c) ** 2
    w3 = eps**2 / 2 * pa
    total = w0 + w1 + w2 + w3 + w3
    cum1 = w0 / total
    cum2 = cum1 + w1 / total
    cum3 = cum2 + w2 / total
    cum4 = cum3 + w3 / total
    k = (u >= cum1).astype(np.int8) + (u >= cum2) + (u >= cum3) + (u >= cum4)

    out = np.empty_like(psi)
    s = np.sqrt(eps * (1 - eps) / 2)
    t = np.sqrt(eps / 2)
    no, c3, c4 = k == 0, k == 1, k == 2
    out[:, 0] = np.where(no, (1 - eps) * a, 0.0)
    out[:, 1] = np.select([no, c3, c4], [np.sqrt(1 - eps) * b, s * a, -s * a], 0.0)
    out[:, 2] = np.select([no, c3, c4], [np.sqrt(1 - eps) * c, s * a, s * a], 0.0)
    out[:, 3] = np.select(
        [no, c3, c4, k == 3], [d, t * (b + c), t * (b - c), eps / _SQ2 * a], -eps / _SQ2 * a
    )
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def _excitation_sums(psi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """S = <sA + sB> and D = <sA - sB> style coherence sums for a psi batch."""
    a, b, c, d = psi.T
    s_plus = np.conj(b) * a + np.conj(c) * a + np.conj(d) * (b + c)
    s_minus = -np.conj(b) * a + np.conj(c) * a + np.conj(d) * (b - c)
    return s_plus, s_minus


def _homodyne_step_psi(psi, s: MeasurementSettings, gamma, dt, z):
    eps = s.epsilon
    p3, p4 = np.exp(1j * s.theta), np.exp(1j * s.vartheta)
    s_plus, s_minus = _excitation_sums(psi)
    m3 = np.sqrt(2 * gamma * s.eta3) * np.real(p3 * s_plus)
    m4 = np.sqrt(2 * gamma * s.eta4) * np.real(p4 * s_minus)
    scale = np.sqrt(1 / dt)
    r3 = m3 + scale * z[:, 0]
    r4 = m4 + scale * z[:, 1]
    x3, x4 = np.sqrt(dt / 2) * r3, np.sqrt(dt / 2) * r4

    a, b, c, d = psi.T
    g3, g4 = p3 * x3, p4 * x4
    out = np.empty_like(psi)
    out[:, 0] = (1 - eps) * a
    out[:, 1] = np.sqrt(eps * (1 - eps)) * (g3 - g4) * a + np.sqrt(1 - eps) * b
    out[:, 2] = np.sqrt(eps * (1 - eps)) * (g3 + g4) * a + np.sqrt(1 - eps) * c
    out[:, 3] = (
        eps * (p3**2 * (x3**2 - 0.5) - p4**2 * (x4**2 - 0.5)) * a
        + np.sqrt(eps) * ((g3 + g4) * b + (g3 - g4) * c)
        + d
    )
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def _heterodyne_step_psi(psi, s: MeasurementSettings, gamma, dt, z):
    eps = s.epsilon
    p3, p4 = np.exp(1j * s.theta), np.exp(1j * s.vartheta)
    s_plus, s_minus = _excitation_sums(psi)
    g = np.sqrt(gamma)
    means = (
        g * np.real(p3 * s_plus),
        g * np.imag(p3 * s_plus),
        g * np.real(p4 * s_minus),
        g * np.imag(p4 * s_minus),
    )
    scale = np.sqrt(1 / dt)
    ri, rq, rx, ry = (m + scale * z[:, i] for i, m in enumerate(means))
    alpha = np.sqrt(dt / 2) * (ri + 1j * rq)
    beta = np.sqrt(dt / 2) * (rx + 1j * ry)
    u = np.conj(alpha) * p3
    v = np.conj(beta) * p4

    a, b, c, d = psi.T
    out = np.empty_like(psi)
    out[:, 0] = (1 - eps) * a
    out[:, 1] = np.sqrt(eps * (1 - eps) / 2) * (u - v) * a + np.sqrt(1 - eps) * b
    out[:, 2] = np.sqrt(eps * (1 - eps) / 2) * (u + v) * a + np.sqrt(1 - eps) * c
    out[:, 3] = eps / 2 * (u**2 - v**2) * a + np.sqrt(eps / 2) * ((u + v) * b + (u - v) * c) + d
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def _mixed_weights_psi(psi: np.ndarray, gamma: float, dt: float):
    a, b, c, d = psi.T
    pa, pb, pc, pd_ = (np.abs(x) ** 2 for x in (a, b, c, d))
    q1 = (pa - pb) / _SQ2
    q2 = (pa + pb - 2 * pc) / np.sqrt(6)
    q3 = (pa + pb + pc - 3 * pd_) / np.sqrt(12)
    q4 = _SQ2 * np.real(b * np.conj(c))
    xi = 1 + q1 / _SQ2 + q2 / np.sqrt(6) + 2 * q3 / np.sqrt(3)
    s_plus, _ = _excitation_sums(psi)
    chi_i, chi_q = _SQ2 * np.real(s_plus), _SQ2 * np.imag(s_plus)
    varsigma = 3 * _SQ2 + 3 * q1 + np.sqrt(3) * q2 + 2 * np.sqrt(6) * q3 - 6 * q4
    kappa = 3 / _SQ2 + 6 * q1 + 2 * np.sqrt(3) * q2 + np.sqrt(6) * q3
    w0 = np.exp(gamma * dt * (-xi + (chi_i**2 + chi_q**2) / 4))
    ok = varsigma > 1e-14
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        w1 = np.where(
            ok,
            gamma * dt * varsigma / (6 * _SQ2)
            * np.exp(-gamma * kappa * dt / np.where(ok, varsigma, 1.0) / _SQ2),
            0.0,
        )
    w2 = (gamma * dt) ** 2 / 24 * (3 + 6 * _SQ2 * q1 + 2 * np.sqrt(6) * q2 + 2 * np.sqrt(3) * q3)
    w = np.stack([w0, np.clip(w1, 0.0, None), np.clip(w2, 0.0, None)], axis=1)
    w /= w.sum(axis=1, keepdims=True)
    return w, chi_i, chi_q


def _mixed_step_psi(psi, s: MeasurementSettings, gamma, dt, u, z):
    eps = s.epsilon
    w, chi_i, chi_q = _mixed_weights_psi(psi, gamma, dt)
    cum0 = w[:, 0]
    cum1 = cum0 + w[:, 1]
    j = (u >= cum0).astype(np.int8) + (u >= cum1)
    no = j == 0
    scale = np.sqrt(1 / dt)
    ri = np.where(no, np.sqrt(gamma / 2) * chi_i, 0.0) + scale * z[:, 0]
    rq = np.where(no, np.sqrt(gamma / 2) * chi_q, 0.0) + scale * z[:, 1]
    ustar = np.sqrt(dt / 2) * (ri - 1j * rq)

    a, b, c, d = psi.T
    out = np.empty_like(psi)
    one = j == 1
    s10 = np.sqrt(eps * (1 - eps) / 2)
    out[:, 0] = np.where(no, (1 - eps) * a, 0.0)
    out[:, 1] = np.select([no, one], [ustar * s10 * a + np.sqrt(1 - eps) * b,
                                      -np.sqrt(eps * (1 - eps) / 2) * a], 0.0)
    out[:, 2] = np.select([no, one], [ustar * s10 * a + np.sqrt(1 - eps) * c,
                                      np.sqrt(eps * (1 - eps) / 2) * a], 0.0)
    out[:, 3] = np.select(
        [no, one],
        [eps / 2 * ustar**2 * a + ustar * np.sqrt(eps / 2) * (b + c) + d,
         np.sqrt(eps / 2) * (b - c)],
        -eps / _SQ2 * a,
    )
    return out / np.linalg.norm(out, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# density-matrix steppers

def _superop(m: np.ndarray):
    """Closure computing M rho M^dag over a (B, 4, 4) batch for a constant M."""
    mh = m.conj().T.copy()

    def apply(rho: np.ndarray) -> np.ndarray:
        return m @ rho @ mh

    return apply


def _click_structures(eps: float):
    p3 = np.zeros((4, 4), dtype=complex)
    s, t = np.sqrt(eps * (1 - eps) / 2), np.sqrt(eps / 2)
    p3[1, 0] = p3[2, 0] = s
    p3[3, 1] = p3[3, 2] = t
    p4 = p3.copy()
    p4[1, 0], p4[3, 2] = -s, -t
    return p3, p4


class _InefficientPdStepper:
    def __init__(self, s: MeasurementSettings):
        self.s = s
        eps, t3, t4 = s.epsilon, s.eta3, s.eta4
        self.eps = eps
        p3, p4 = _click_structures(eps)
        self.ap3, self.ap4 = _superop(p3), _superop(p4)
        d = np.array([1 - eps, np.sqrt(1 - eps), np.sqrt(1 - eps), 1.0])
        self.no_click_scale = np.outer(d, d)
        self.lost_double = ((1 - t3) ** 2 + (1 - t4) ** 2) * eps**2 / 2

    def __call__(self, rho: np.ndarray, u: np.ndarray) -> np.ndarray:
        s, eps = self.s, self.eps
        t3, t4 = s.eta3, s.eta4
        diag = np.real(np.diagonal(rho, axis1=1, axis2=2))
        xi = 2 * diag[:, 0] + diag[:, 1] + diag[:, 2]
        th = diag[:, 0]
        q4 = _SQ2 * np.real(rho[:, 1, 2])
        w0 = 1 - eps / 2 * (t3 + t4) * xi + eps / _SQ2 * (t4 - t3) * q4 \
            + eps**2 / 2 * (t3**2 + t4**2) * th
        w1 = eps * t3 * (xi / 2 + q4 / _SQ2) - eps**2 * t3**2 * th
        w2 = eps * t4 * (xi / 2 - q4 / _SQ2) - eps**2 * t4**2 * th
        w3 = eps**2 * t3**2 * th / 2
        w4 = eps**2 * t4**2 * th / 2
        w = np.stack([w0, w1, w2, w3, w4], axis=1)
        w = np.clip(w, 0.0, None)
        w /= w.sum(axis=1, keepdims=True)
        cum = np.cumsum(w, axis=1)
        k = (u[:, None] >= cum[:, :4]).sum(axis=1)

        r3 = self.ap3(rho)
        r4 = self.ap4(rho)
        out = self.no_click_scale * rho + (1 - t3) * r3 + (1 - t4) * r4
        out[:, 3, 3] += self.lost_double * th
        clicked = np.nonzero(k)[0]
        for b in clicked:
            kk = k[b]
            if kk == 1:
                m = t3 * r3[b]
                m[3, 3] += eps**2 * t3 * (1 - t3) * th[b]
            elif kk == 2:
                m = t4 * r4[b]
                m[3, 3] += eps**2 * t4 * (1 - t4) * th[b]
            else:
                m = np.zeros((4, 4), dtype=complex)
                m[3, 3] = 1.0
            out[b] = m
        return sanitize_density(out)


class _InefficientHomodyneStepper:
    def __init__(self, s: MeasurementSettings, gamma: float, dt: float):
        self.s, self.gamma, self.dt = s, gamma, dt
        eps, t3, t4 = s.epsilon, s.eta3, s.eta4
        self.eps = eps
        self.p3m, self.p4m = _click_structures(eps)
        self.ap3, self.ap4 = _superop(self.p3m), _superop(self.p4m)
        self.g3 = eps * np.exp(1j * s.theta) * np.sqrt(2 * t3 * (1 - t3))
        self.g4 = eps * np.exp(1j * s.vartheta) * np.sqrt(2 * t4 * (1 - t4))
        self.lost_double = ((1 - t3) ** 2 + (1 - t4) ** 2) * eps**2 / 2

    def __call__(self, rho: np.ndarray, z: np.ndarray) -> np.ndarray:
        s, eps, dt = self.s, self.eps, self.dt
        t3, t4 = s.eta3, s.eta4
        p3, p4 = np.exp(1j * s.theta), np.exp(1j * s.vartheta)
        cs = rho[:, 0, 1] + rho[:, 0, 2] + rho[:, 1, 3] + rho[:, 2, 3]
        cd = -rho[:, 0, 1] + rho[:, 0, 2] + rho[:, 1, 3] - rho[:, 2, 3]
        chi3 = _SQ2 * np.real(p3 * cs)
        chi4 = _SQ2 * np.real(p4 * cd)
        scale = np.sqrt(1 / dt)
        r3 = np.sqrt(self.gamma * t3) * chi3 + scale * z[:, 0]
        r4 = np.sqrt(self.gamma * t4) * chi4 + scale * z[:, 1]
        x3, x4 = np.sqrt(dt / 2) * r3, np.sqrt(dt / 2) * r4

        # signal operator, built per trajectory
        w3, w4 = np.sqrt(t3) * p3 * x3, np.sqrt(t4) * p4 * x4
        B = rho.shape[0]
        m = np.zeros((B, 4, 4), dtype=complex)
        m[:, 0, 0] = 1 - eps
        m[:, 1, 1] = m[:, 2, 2] = np.sqrt(1 - eps)
        m[:, 3, 3] = 1.0
        m[:, 1, 0] = np.sqrt(eps * (1 - eps)) * (w3 - w4)
        m[:, 2, 0] = np.sqrt(eps * (1 - eps)) * (w3 + w4)
        m[:, 3, 0] = eps * (p3**2 * t3 * (x3**2 - 0.5) - p4**2 * t4 * (x4**2 - 0.5))
        m[:, 3, 1] = np.sqrt(eps) * (w3 + w4)
        m[:, 3, 2] = np.sqrt(eps) * (w3 - w4)
        out = m @ rho @ m.conj().transpose(0, 2, 1)

        # lost-mode single-photon groups, with their X-linear |gg><ee| pieces
        out += (1 - t3) * self.ap3(rho) + (1 - t4) * self.ap4(rho)
        c3 = x3 * self.g3 * np.sqrt(1 - t3)
        c4 = -x4 * self.g4 * np.sqrt(1 - t4)
        v3 = np.einsum("bj,ij->bi", rho[:, 0, :], self.p3m.conj())
        v4 = np.einsum("bj,ij->bi", rho[:, 0, :], self.p4m.conj())
        contrib = c3[:, None] * v3 + c4[:, None] * v4
        out[:, 3, :] += contrib
        out[:, :, 3] += contrib.conj()
        th = np.real(rho[:, 0, 0])
        out[:, 3, 3] += (np.abs(x3 * self.g3) ** 2 + np.abs(x4 * self.g4) ** 2) * th
        out[:, 3, 3] += self.lost_double * th
        return sanitize_density(out)


class _HeterodyneRhoStepper:
    def __init__(self, s: MeasurementSettings, gamma: float, dt: float):
        self.s, self.gamma, self.dt = s, gamma, dt

    def __call__(self, rho: np.ndarray, z: np.ndarray) -> np.ndarray:
        s, gamma, dt = self.s, self.gamma, self.dt
        eps = s.epsilon
        p3, p4 = np.exp(1j * s.theta), np.exp(1j * s.vartheta)
        cs = rho[:, 0, 1] + rho[:, 0, 2] + rho[:, 1, 3] + rho[:, 2, 3]
        cd = -rho[:, 0, 1] + rho[:, 0, 2] + rho[:, 1, 3] - rho[:, 2, 3]
        g = np.sqrt(gamma)
        scale = np.sqrt(1 / dt)
        ri = g * np.real(p3 * cs) + scale * z[:, 0]
        rq = g * np.imag(p3 * cs) + scale * z[:, 1]
        rx = g * np.real(p4 * cd) + scale * z[:, 2]
        ry = g * np.imag(p4 * cd) + scale * z[:, 3]
        u = np.sqrt(dt / 2) * (ri - 1j * rq) * p3
        v = np.sqrt(dt / 2) * (rx - 1j * ry) * p4

        B = rho.shape[0]
        m = np.zeros((B, 4, 4), dtype=complex)
        m[:, 0, 0] = 1 - eps
        m[:, 1, 1] = m[:, 2, 2] = np.sqrt(1 - eps)
        m[:, 3, 3] = 1.0
        m[:, 1, 0] = np.sqrt(eps * (1 - eps) / 2) * (u - v)
        m[:, 2, 0] = np.sqrt(eps * (1 - eps) / 2) * (u + v)
        m[:, 3, 0] = eps / 2 * (u**2 - v**2)
        m[:, 3, 1] = np.sqrt(eps / 2) * (u + v)
        m[:, 3, 2] = np.sqrt(eps / 2) * (u - v)
        return sanitize_density(m @ rho @ m.conj().transpose(0, 2, 1))


class _MixedRhoStepper:
    """Heterodyne + photon counter on density matrices.

    With ``discard=True`` the counter outcome is unavailable to the observer
    and the update sums over j; otherwise only the drawn operator is applied.
    """

    def __init__(self, s: MeasurementSettings, gamma: float, dt: float, discard: bool):
        self.s, self.gamma, self.dt, self.discard = s, gamma, dt, discard
        eps = s.epsilon
        self.eps = eps
        k = np.zeros((4, 4), dtype=complex)
        k[1, 0], k[2, 0] = -np.sqrt(1 - eps), np.sqrt(1 - eps)
        k[3, 1], k[3, 2] = 1.0, -1.0
        self.jump = k  # M_{alpha 1} = e^{-|a|^2/2} sqrt(eps/2) * jump
        self.ak = _superop(k)

    def __call__(self, rho: np.ndarray, u: np.ndarray, z: np.ndarray) -> np.ndarray:
        eps, dt, gamma = self.eps, self.dt, self.gamma
        diag = np.real(np.diagonal(rho, axis1=1, axis2=2))
        q1 = (diag[:, 0] - diag[:, 1]) / _SQ2
        q2 = (diag[:, 0] + diag[:, 1] - 2 * diag[:, 2]) / np.sqrt(6)
        q3 = (diag[:, 0] + diag[:, 1] + diag[:, 2] - 3 * diag[:, 3]) / np.sqrt(12)
        q4 = _SQ2 * np.real(rho[:, 1, 2])
        xi = 1 + q1 / _SQ2 + q2 / np.sqrt(6) + 2 * q3 / np.sqrt(3)
        cs = rho[:, 0, 1] + rho[:, 0, 2] + rho[:, 1, 3] + rho[:, 2, 3]
        chi_i, chi_q = _SQ2 * np.real(cs), _SQ2 * np.imag(cs)
        varsigma = 3 * _SQ2 + 3 * q1 + np.sqrt(3) * q2 + 2 * np.sqrt(6) * q3 - 6 * q4
        kappa = 3 / _SQ2 + 6 * q1 + 2 * np.sqrt(3) * q2 + np.sqrt(6) * q3
        w0 = np.exp(gamma * dt * (-xi + (chi_i**2 + chi_q**2) / 4))
        ok = varsigma > 1e-14
        safe = np.where(ok, varsigma, 1.0)
        w1 = np.where(
            ok,
            gamma * dt * safe / (6 * _SQ2) * np.exp(-gamma * kappa * dt / safe / _SQ2),
            0.0,
        )
        w2 = (gamma * dt) ** 2 / 24 * (3 + 6 * _SQ2 * q1 + 2 * np.sqrt(6) * q2 + 2 * np.sqrt(3) * q3)
        w = np.stack([w0, np.clip(w1, 0.0, None), np.clip(w2, 0.0, None)], axis=1)
        w /= w.sum(axis=1, keepdims=True)
        cum0 = w[:, 0]
        cum1 = cum0 + w[:, 1]
        j = (u >= cum0).astype(np.int8) + (u >= cum1)
        no = j == 0
        scale = np.sqrt(1 / dt)
        ri = np.where(no, np.sqrt(gamma / 2) * chi_i, 0.0) + scale * z[:, 0]
        rq = np.where(no, np.sqrt(gamma / 2) * chi_q, 0.0) + scale * z[:, 1]
        ustar = np.sqrt(dt / 2) * (ri - 1j * rq)

        B = rho.shape[0]
        m0 = np.zeros((B, 4, 4), dtype=complex)
        m0[:, 0, 0] = 1 - eps
        m0[:, 1, 1] = m0[:, 2, 2] = np.sqrt(1 - eps)
        m0[:, 3, 3] = 1.0
        m0[:, 1, 0] = m0[:, 2, 0] = ustar * np.sqrt(eps * (1 - eps) / 2)
        m0[:, 3, 0] = eps / 2 * ustar**2
        m0[:, 3, 1] = m0[:, 3, 2] = ustar * np.sqrt(eps / 2)
        out = m0 @ rho @ m0.conj().transpose(0, 2, 1)
        if self.discard:
            out += eps / 2 * self.ak(rho)
            out[:, 3, 3] += eps**2 / 2 * np.real(rho[:, 0, 0])
        else:
            for b in np.nonzero(j)[0]:
                if j[b] == 1:
                    out[b] = self.jump @ rho[b] @ self.jump.conj().T
                else:
                    out[b] = 0.0
                    out[b, 3, 3] = np.real(rho[b, 0, 0])
        return sanitize_density(out)


# ---------------------------------------------------------------------------
# chunk driver

def _initial_pure(cfg: TrajectoryConfig) -> Optional[np.ndarray]:
    from .states import PureState

    if isinstance(cfg.initial, PureState):
        return cfg.initial.normalized().amplitudes
    rho = cfg.initial.rho
    w, v = np.linalg.eigh(rho)
    if w[-1] > 1 - 1e-12:
        return v[:, -1]
    return None


def _uses_pure_path(cfg: TrajectoryConfig) -> bool:
    if cfg.scheme in ("mixed_het_discard",):
        return False
    if cfg.scheme in ("photodetection", "homodyne") and not cfg.settings.ideal:
        return False
    return _initial_pure(cfg) is not None


def _run_chunk(cfg: TrajectoryConfig, index0: int, batch: int, threshold: Optional[float]) -> _Accumulator:
    n = cfg.n_steps
    s = cfg.settings
    gamma, dt = cfg.gamma, cfg.dt
    tapes = _tapes(cfg, index0, batch)
    rec = _Recorder(n + 1, index0, batch, threshold, dt)

    if _uses_pure_path(cfg):
        psi0 = _initial_pure(cfg)
        psi = np.tile(psi0, (batch, 1))
        pop = np.abs(psi) ** 2
        rec.record(0, batched_concurrence_pure(psi), 1.0, pop, psi=psi)
        for k in range(1, n + 1):
            if cfg.scheme == "photodetection":
                psi = _pd_step_psi(psi, s.epsilon, tapes["u"][k - 1])
            elif cfg.scheme == "homodyne":
                psi = _homodyne_step_psi(psi, s, gamma, dt, tapes["z"][k - 1])
            elif cfg.scheme == "heterodyne":
                psi = _heterodyne_step_psi(psi, s, gamma, dt, tapes["z"][k - 1])
            else:  # mixed_het_pd
                psi = _mixed_step_psi(psi, s, gamma, dt, tapes["u"][k - 1], tapes["z"][k - 1])
            rec.record(k, batched_concurrence_pure(psi), 1.0, np.abs(psi) ** 2, psi=psi)
        return rec.acc

    rho = np.tile(cfg.initial_density(), (batch, 1, 1))
    if cfg.scheme == "photodetection":
        stepper = _InefficientPdStepper(s)
        step = lambda k: stepper(rho, tapes["u"][k])
    elif cfg.scheme == "homodyne":
        stepper = _InefficientHomodyneStepper(s, gamma, dt)
        step = lambda k: stepper(rho, tapes["z"][k])
    elif cfg.scheme == "heterodyne":
        stepper = _HeterodyneRhoStepper(s, gamma, dt)
        step = lambda k: stepper(rho, tapes["z"][k])
    else:
        stepper = _MixedRhoStepper(s, gamma, dt, discard=cfg.scheme == "mixed_het_discard")
        step = lambda k: stepper(rho, tapes["u"][k], tapes["z"][k])

    pops = np.real(np.diagonal(rho, axis1=1, axis2=2))
    rec.record(0, batched_concurrence_mixed(rho), batched_purity(rho), pops, rho=rho)
    for k in range(1, n + 1):
        rho = step(k - 1)
        pops = np.real(np.diagonal(rho, axis1=1, axis2=2))
        rec.record(k, batched_concurrence_mixed(rho), batched_purity(rho), pops, rho=rho)
    return rec.acc


def _chunk_args(cfg, n_trajectories, threshold):
    for index0 in range(0, n_trajectories, CHUNK_SIZE):
        yield cfg, index0, min(CHUNK_SIZE, n_trajectories - index0), threshold


def run_ensemble_batched(
    cfg: TrajectoryConfig,
    n_trajectories: int,
    threads: int,
    capture_threshold: Optional[float],
) -> EnsembleSummary:
    total = _Accumulator.empty(cfg.n_steps + 1)
    args = list(_chunk_args(cfg, n_trajectories, capture_threshold))
    if threads > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for acc in pool.map(_run_chunk_star, args):
                total.absorb(acc)
    else:
        for a in args:
            total.absorb(_run_chunk(*a))

    n = total.count
    mean_c = total.sum_c / n
    mean_p = total.sum_p / n
    var_c = np.maximum(total.sum_c2 / n - mean_c**2, 0.0)
    var_p = np.maximum(total.sum_p2 / n - mean_p**2, 0.0)
    captures = None
    if capture_threshold is not None:
        if total.cap_states:
            states = np.concatenate(total.cap_states)
            times = np.concatenate(total.cap_times)
            idx = np.concatenate(total.cap_indices)
        else:
            states = np.zeros((0, 4), dtype=complex)
            times = np.zeros(0)
            idx = np.zeros(0, dtype=int)
        captures = CaptureSet(capture_threshold, states, times, idx)
    return EnsembleSummary(
        times=cfg.times,
        n_trajectories=n,
        mean_concurrence=mean_c,
        std_concurrence=np.sqrt(var_c),
        mean_purity=mean_p,
        std_purity=np.sqrt(var_p),
        max_concurrence=total.max_c,
        mean_populations=total.sum_pop / n,
        captures=captures,
    )


def _run_chunk_star(args):
    return _run_chunk(*args)
