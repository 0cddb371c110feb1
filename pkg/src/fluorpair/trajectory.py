"""Stochastic time stepping for the monitored two-qubit system.

A trajectory alternates, once per detector integration window dt:

1. draw a measurement outcome with the statistics the current state assigns
   (multinomial click weights for photon counting, Gaussians of variance 1/dt
   and state-dependent mean for quadrature records),
2. update the state with the matching Kraus operator (or the group sum over
   unobserved lost-mode outcomes when the detection is inefficient).

Readouts follow the scalings X = sqrt(dt/2) r for homodyne and
alpha = sqrt(dt/2)(r_I + i r_Q), beta = sqrt(dt/2)(r_X + i r_Y) for heterodyne.
After every update the density matrix is re-Hermitized and trace-normalized to
suppress floating-point drift over thousands of steps.

``run_trajectory`` evolves a single trajectory and records everything;
``run_ensemble`` evolves many independent trajectories on a deterministic
per-index random stream (so results are reproducible and independent of how
work is distributed over processes) and accumulates time-gridded statistics.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .entanglement import concurrence_mixed
from .kraus import (
    KrausSet,
    MeasurementSettings,
    heterodyne_op,
    homodyne_op,
    inefficient_homodyne_ops,
    inefficient_photodetection_ops,
    mixed_het_pd_ops,
    photodetection_ops,
)
from .states import (
    PureState,
    TwoQubitState,
    bell_aligned_from_vector,
    purity,
    sanitize_density,
)

__all__ = [
    "SCHEMES",
    "StepError",
    "TrajectoryConfig",
    "StepOutcome",
    "TrajectoryRecord",
    "EnsembleSummary",
    "CaptureSet",
    "pd_weights",
    "inefficient_pd_weights",
    "mixed_weights",
    "homodyne_means",
    "heterodyne_means",
    "mixed_heterodyne_means",
    "conditional_update",
    "pd_step",
    "inefficient_pd_step",
    "homodyne_step",
    "heterodyne_step",
    "mixed_step",
    "mixed_discard_step",
    "run_trajectory",
    "run_ensemble",
    "trajectory_rng",
]

SCHEMES = ("photodetection", "homodyne", "heterodyne", "mixed_het_pd", "mixed_het_discard")

WEIGHT_CLIP_LIMIT = 1e-6

_SQ2 = np.sqrt(2.0)
_SIGMA_MINUS_A = np.zeros((4, 4), dtype=complex)
_SIGMA_MINUS_A[2, 0] = _SIGMA_MINUS_A[3, 1] = 1.0  # sigma_- on qubit A
_SIGMA_MINUS_B = np.zeros((4, 4), dtype=complex)
_SIGMA_MINUS_B[1, 0] = _SIGMA_MINUS_B[3, 2] = 1.0  # sigma_- on qubit B


class StepError(RuntimeError):
    """A trajectory step could not be completed (impossible outcome, bad weights)."""


def homodyne_lindblad_ops(gamma: float, theta: float, vartheta: float) -> tuple[np.ndarray, np.ndarray]:
    """Decay channels seen by the homodyne ports:
    L3 = sqrt(gamma/2) e^{i theta} (sA + sB), L4 = sqrt(gamma/2) e^{i vartheta} (sA - sB)."""
    l3 = np.sqrt(gamma / 2) * np.exp(1j * theta) * (_SIGMA_MINUS_A + _SIGMA_MINUS_B)
    l4 = np.sqrt(gamma / 2) * np.exp(1j * vartheta) * (_SIGMA_MINUS_A - _SIGMA_MINUS_B)
    return l3, l4


def heterodyne_lindblad_ops(gamma: float, theta: float, vartheta: float) -> tuple[np.ndarray, ...]:
    """Four half-strength channels (I, Q at port 3; X, Y at port 4) for heterodyne."""
    plus = _SIGMA_MINUS_A + _SIGMA_MINUS_B
    minus = _SIGMA_MINUS_A - _SIGMA_MINUS_B
    g = np.sqrt(gamma) / 2
    return (
        g * np.exp(1j * theta) * plus,
        -1j * g * np.exp(1j * theta) * plus,
        g * np.exp(1j * vartheta) * minus,
        -1j * g * np.exp(1j * vartheta) * minus,
    )


# ---------------------------------------------------------------------------
# configuration and record types

@dataclass(frozen=True)
class TrajectoryConfig:
    """Everything needed to reproduce a trajectory or ensemble.

    gamma is the common decay rate in 1/us, dt and total_time are in us, and
    settings.epsilon must equal gamma*dt.  The per-trajectory random stream is
    derived deterministically from (seed, trajectory index).
    """

    gamma: float
    dt: float
    total_time: float
    scheme: str
    settings: MeasurementSettings
    initial: PureState | TwoQubitState
    seed: int = 0
    snapshot_stride: int = 10

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.gamma <= 0 or self.dt <= 0 or self.total_time <= 0:
            raise ValueError("gamma, dt and total_time must be positive")
        if abs(self.settings.epsilon - self.gamma * self.dt) > 1e-12:
            raise ValueError(
                f"settings.epsilon = {self.settings.epsilon} does not match "
                f"gamma*dt = {self.gamma * self.dt}"
            )
        steps = self.total_time / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(f"total_time/dt = {steps} is not an integer number of steps")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")

    @classmethod
    def build(
        cls,
        gamma: float,
        dt: float,
        total_time: float,
        scheme: str,
        *,
        theta: float = 0.0,
        vartheta: float = np.pi / 2,
        eta3: float = 1.0,
        eta4: float = 1.0,
        initial: PureState | TwoQubitState,
        seed: int = 0,
        snapshot_stride: int = 10,
    ) -> "TrajectoryConfig":
        settings = MeasurementSettings(gamma * dt, theta, vartheta, eta3, eta4)
        return cls(gamma, dt, total_time, scheme, settings, initial, seed, snapshot_stride)

    @property
    def n_steps(self) -> int:
        return round(self.total_time / self.dt)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def initial_density(self) -> np.ndarray:
        if isinstance(self.initial, PureState):
            v = self.initial.normalized().amplitudes
            return np.outer(v, v.conj())
        return self.initial.rho.copy()


@dataclass(frozen=True)
class StepOutcome:
    """Outcome of a single measurement window; only the active scheme's fields are set."""

    clicks3: Optional[int] = None
    clicks4: Optional[int] = None
    r3: Optional[float] = None
    r4: Optional[float] = None
    r_i: Optional[float] = None
    r_q: Optional[float] = None
    r_x: Optional[float] = None
    r_y: Optional[float] = None
    j: Optional[int] = None


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    outcomes: list[StepOutcome]
    snapshots: list[tuple[int, TwoQubitState]]
    concurrence: np.ndarray
    purity: np.ndarray
    bell: np.ndarray  # (n_steps+1, 4) phase-aligned Bell amplitudes of the dominant eigenvector


@dataclass(frozen=True)
class CaptureSet:
    """First states crossing a concurrence threshold, one per crossing trajectory."""

    threshold: float
    states: np.ndarray  # (m, 4) pure-state amplitudes
    times: np.ndarray  # (m,)
    trajectory_indices: np.ndarray  # (m,)


@dataclass
class EnsembleSummary:
    times: np.ndarray
    n_trajectories: int
    mean_concurrence: np.ndarray
    std_concurrence: np.ndarray
    mean_purity: np.ndarray
    std_purity: np.ndarray
    max_concurrence: np.ndarray
    mean_populations: np.ndarray  # (n_steps+1, 4)
    captures: Optional[CaptureSet] = None

    @property
    def excited_population_a(self) -> np.ndarray:
        return self.mean_populations[:, 0] + self.mean_populations[:, 1]

    @property
    def excited_population_b(self) -> np.ndarray:
        return self.mean_populations[:, 0] + self.mean_populations[:, 2]


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent, reproducible stream for trajectory ``index`` under a master seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


# ---------------------------------------------------------------------------
# outcome statistics

def _q_diag(rho: np.ndarray) -> tuple[float, float, float]:
    """(Xi, Theta, q4): excitation weight, |ee> population, eg-ge coherence coordinate."""
    xi = float(np.real(2 * rho[0, 0] + rho[1, 1] + rho[2, 2]))
    theta = float(np.real(rho[0, 0]))
    q4 = _SQ2 * float(np.real(rho[1, 2]))
    return xi, theta, q4


def _clip_weights(weights: np.ndarray, context: str) -> np.ndarray:
    clip = -float(np.minimum(weights, 0.0).sum())
    if clip > WEIGHT_CLIP_LIMIT:
        raise StepError(
            f"{context}: outcome weights negative by {clip:.3e}; gamma*dt is too large"
        )
    w = np.clip(weights, 0.0, None)
    return w / w.sum()


def pd_weights(rho: TwoQubitState, s: MeasurementSettings) -> np.ndarray:
    """Ideal photodetection click probabilities (w00, w10, w01, w20, w02).

    In Bloch form w10 = eps(Xi/2 + q4/sqrt(2)) - eps^2 Theta and w01 carries
    -q4: the |Psi+> state (q4 = +1/sqrt(2)) keeps port 4 completely dark.
    """
    if not s.ideal:
        raise ValueError("pd_weights is for ideal detection; use inefficient_pd_weights")
    eps = s.epsilon
    xi, theta, q4 = _q_diag(rho.rho)
    w = np.array(
        [
            1 - eps * xi + eps**2 * theta,
            eps * (xi / 2 + q4 / _SQ2) - eps**2 * theta,
            eps * (xi / 2 - q4 / _SQ2) - eps**2 * theta,
            eps**2 * theta / 2,
            eps**2 * theta / 2,
        ]
    )
    return _clip_weights(w, "pd_weights")


def inefficient_pd_weights(rho: TwoQubitState, s: MeasurementSettings) -> np.ndarray:
    """Registered-click probabilities when the ports have efficiencies eta3, eta4."""
    eps, t3, t4 = s.epsilon, s.eta3, s.eta4
    xi, theta, q4 = _q_diag(rho.rho)
    w = np.array(
        [
            1 - eps / 2 * (t3 + t4) * xi + eps / _SQ2 * (t4 - t3) * q4
            + eps**2 / 2 * (t3**2 + t4**2) * theta,
            eps * t3 * (xi / 2 + q4 / _SQ2) - eps**2 * t3**2 * theta,
            eps * t4 * (xi / 2 - q4 / _SQ2) - eps**2 * t4**2 * theta,
            eps**2 * t3**2 * theta / 2,
            eps**2 * t4**2 * theta / 2,
        ]
    )
    return _clip_weights(w, "inefficient_pd_weights")


def _coherence_sums(rho: np.ndarray) -> tuple[complex, complex]:
    """S and D combinations of the single-excitation coherences.

    chi3 = sqrt(2) Re(e^{i theta} S) and chi4 = sqrt(2) Re(e^{i vartheta} D).
    """
    s = rho[0, 1] + rho[0, 2] + rho[1, 3] + rho[2, 3]
    d = -rho[0, 1] + rho[0, 2] + rho[1, 3] - rho[2, 3]
    return s, d


def homodyne_means(rho: TwoQubitState, s: MeasurementSettings, gamma: float) -> tuple[float, float]:
    """Means of the homodyne readouts r3, r4 (their variance is 1/dt).

    mean_c = sqrt(gamma*eta_c) * chi_c; losses attenuate the signal by
    sqrt(eta) while the local-oscillator noise is unchanged.
    """
    cs, cd = _coherence_sums(rho.rho)
    chi3 = _SQ2 * float(np.real(np.exp(1j * s.theta) * cs))
    chi4 = _SQ2 * float(np.real(np.exp(1j * s.vartheta) * cd))
    return np.sqrt(gamma * s.eta3) * chi3, np.sqrt(gamma * s.eta4) * chi4


def heterodyne_means(
    rho: TwoQubitState, s: MeasurementSettings, gamma: float
) -> tuple[float, float, float, float]:
    """Means of (r_I, r_Q, r_X, r_Y); splitting both quadratures halves the signal power."""
    out = []
    for op in heterodyne_lindblad_ops(gamma, s.theta, s.vartheta):
        out.append(float(np.real(np.trace(rho.rho @ (op + op.conj().T)))))
    return tuple(out)


def mixed_weights(rho: TwoQubitState, s: MeasurementSettings, gamma: float, dt: float) -> np.ndarray:
    """Click-number probabilities (w0, w1, w2) for heterodyne at 3 + counter at 4.

    States of the form a(|eg> + |ge>) + b|gg> make the jump rate vanish
    identically: interference steers every photon to the heterodyne port.
    """
    rm = rho.rho
    q1 = float(np.real(rm[0, 0] - rm[1, 1])) / _SQ2
    q2 = float(np.real(rm[0, 0] + rm[1, 1] - 2 * rm[2, 2])) / np.sqrt(6)
    q3 = float(np.real(rm[0, 0] + rm[1, 1] + rm[2, 2] - 3 * rm[3, 3])) / np.sqrt(12)
    _, _, q4 = _q_diag(rm)
    xi = 1 + q1 / _SQ2 + q2 / np.sqrt(6) + 2 * q3 / np.sqrt(3)
    chi_i, chi_q = mixed_heterodyne_means(rho, s, 1.0)  # gamma=1: just the chi combinations
    varsigma = 3 * _SQ2 + 3 * q1 + np.sqrt(3) * q2 + 2 * np.sqrt(6) * q3 - 6 * q4
    kappa = 3 / _SQ2 + 6 * q1 + 2 * np.sqrt(3) * q2 + np.sqrt(6) * q3
    w0 = np.exp(gamma * dt * (-xi + (chi_i**2 + chi_q**2) / 2))
    if varsigma > 1e-14:
        w1 = gamma * dt * varsigma / (6 * _SQ2) * np.exp(-gamma * kappa * dt / (varsigma * _SQ2))
    else:
        w1 = 0.0
    w2 = (gamma * dt) ** 2 / 24 * (3 + 6 * _SQ2 * q1 + 2 * np.sqrt(6) * q2 + 2 * np.sqrt(3) * q3)
    return _clip_weights(np.array([w0, w1, w2]), "mixed_weights")


def mixed_heterodyne_means(
    rho: TwoQubitState, s: MeasurementSettings, gamma: float
) -> tuple[float, float]:
    """No-click means of (r_I, r_Q) for the mixed apparatus (zero upon a click)."""
    cs, _ = _coherence_sums(rho.rho)
    chi_i = _SQ2 * float(np.real(cs))
    chi_q = _SQ2 * float(np.imag(cs))
    return np.sqrt(gamma / 2) * chi_i, np.sqrt(gamma / 2) * chi_q


# ---------------------------------------------------------------------------
# conditional updates

def conditional_update(rho: np.ndarray, matrices: Sequence[np.ndarray]) -> np.ndarray:
    """rho -> sum_j M_j rho M_j^dag, normalized; raises on vanishing probability."""
    out = np.zeros_like(rho)
    for m in matrices:
        out += m @ rho @ m.conj().T
    tr = float(np.real(np.trace(out)))
    if tr <= 1e-300:
        raise StepError("conditional update has vanishing probability (impossible outcome)")
    return sanitize_density(out / tr)


_PD_OUTCOMES = (
    StepOutcome(clicks3=0, clicks4=0),
    StepOutcome(clicks3=1, clicks4=0),
    StepOutcome(clicks3=0, clicks4=1),
    StepOutcome(clicks3=2, clicks4=0),
    StepOutcome(clicks3=0, clicks4=2),
)


def _draw(weights: np.ndarray, u: float) -> int:
    return int(np.searchsorted(np.cumsum(weights), u, side="right").clip(0, len(weights) - 1))


def pd_step(
    rho: TwoQubitState,
    s: MeasurementSettings,
    rng: np.random.Generator,
    force_outcome: Optional[int] = None,
) -> tuple[TwoQubitState, StepOutcome]:
    """One ideal photodetection window: multinomial click draw, single-operator update."""
    w = pd_weights(rho, s)
    k = _draw(w, rng.random()) if force_outcome is None else force_outcome
    m = photodetection_ops(s).matrices()[k]
    return TwoQubitState(conditional_update(rho.rho, [m])), _PD_OUTCOMES[k]


def inefficient_pd_step(
    rho: TwoQubitState,
    s: MeasurementSettings,
    rng: np.random.Generator,
    force_outcome: Optional[int] = None,
) -> tuple[TwoQubitState, StepOutcome]:
    """One lossy photodetection window; the update sums over the unseen lost-mode outcomes."""
    w = inefficient_pd_weights(rho, s)
    k = _draw(w, rng.random()) if force_outcome is None else force_outcome
    kset = inefficient_photodetection_ops(s)
    by_label = dict(kset.operators)
    group_key = tuple(kset.groups)[k]
    mats = [by_label[lab] for lab in kset.groups[group_key]]
    return TwoQubitState(conditional_update(rho.rho, mats)), _PD_OUTCOMES[k]


def homodyne_step(
    rho: TwoQubitState,
    s: MeasurementSettings,
    gamma: float,
    rng: np.random.Generator,
    force_readouts: Optional[tuple[float, float]] = None,
) -> tuple[TwoQubitState, StepOutcome]:
    """One homodyne window at both ports (lossy case sums the five-operator group)."""
    dt = s.epsilon / gamma
    if force_readouts is None:
        m3, m4 = homodyne_means(rho, s, gamma)
        scale = np.sqrt(1 / dt)
        r3 = m3 + scale * rng.standard_normal()
        r4 = m4 + scale * rng.standard_normal()
    else:
        r3, r4 = force_readouts
    x3, x4 = np.sqrt(dt / 2) * r3, np.sqrt(dt / 2) * r4
    if s.ideal:
        mats = [homodyne_op(s, x3, x4)]
    else:
        mats = inefficient_homodyne_ops(s, x3, x4).matrices()
    return TwoQubitState(conditional_update(rho.rho, mats)), StepOutcome(r3=r3, r4=r4)


def heterodyne_step(
    rho: TwoQubitState,
    s: MeasurementSettings,
    gamma: float,
    rng: np.random.Generator,
    force_readouts: Optional[tuple[float, float, float, float]] = None,
) -> tuple[TwoQubitState, StepOutcome]:
    """One heterodyne window at both ports (ideal efficiency only)."""
    dt = s.epsilon / gamma
    if force_readouts is None:
        means = heterodyne_means(rho, s, gamma)
        scale = np.sqrt(1 / dt)
        ri, rq, rx, ry = (m + scale * rng.standard_normal() for m in means)
    else:
        ri, rq, rx, ry = force_readouts
    alpha = np.sqrt(dt / 2) * (ri + 1j * rq)
    beta = np.sqrt(dt / 2) * (rx + 1j * ry)
    m = heterodyne_op(s, alpha, beta)
    return (
        TwoQubitState(conditional_update(rho.rho, [m])),
        StepOutcome(r_i=ri, r_q=rq, r_x=rx, r_y=ry),
    )


def _mixed_readouts(
    rho: TwoQubitState, s: MeasurementSettings, gamma: float, dt: float, j: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    # Upon a click the photon demonstrably went to port 4, so the heterodyne
    # record carries no signal: pure local-oscillator noise.
    scale = np.sqrt(1 / dt)
    if j == 0:
        mi, mq = mixed_heterodyne_means(rho, s, gamma)
    else:
        mi = mq = 0.0
    return mi + scale * rng.standard_normal(), mq + scale * rng.standard_normal()


def mixed_step(
    rho: TwoQubitState,
    s: MeasurementSettings,
    gamma: float,
    rng: np.random.Generator,
) -> tuple[TwoQubitState, StepOutcome]:
    """Heterodyne at port 3, photon counting at port 4, full record available."""
    dt = s.epsilon / gamma
    w = mixed_weights(rho, s, gamma, dt)
    j = _draw(w, rng.random())
    ri, rq = _mixed_readouts(rho, s, gamma, dt, j, rng)
    alpha = np.sqrt(dt / 2) * (ri + 1j * rq)
    m = mixed_het_pd_ops(s, alpha).matrices()[j]
    return (
        TwoQubitState(conditional_update(rho.rho, [m])),
        StepOutcome(r_i=ri, r_q=rq, j=j),
    )


def mixed_discard_step(
    rho: TwoQubitState,
    s: MeasurementSettings,
    gamma: float,
    rng: np.random.Generator,
) -> tuple[TwoQubitState, StepOutcome]:
    """Same apparatus with the photon counter switched off: its outcome is traced out.

    The physical click number still shapes the heterodyne record statistics,
    but the observer's update sums over j, so purity is generally lost.
    """
    dt = s.epsilon / gamma
    w = mixed_weights(rho, s, gamma, dt)
    j = _draw(w, rng.random())
    ri, rq = _mixed_readouts(rho, s, gamma, dt, j, rng)
    alpha = np.sqrt(dt / 2) * (ri + 1j * rq)
    mats = mixed_het_pd_ops(s, alpha).matrices()
    return (
        TwoQubitState(conditional_update(rho.rho, mats)),
        StepOutcome(r_i=ri, r_q=rq),
    )


# ---------------------------------------------------------------------------
# runners

def _scalar_step(cfg: TrajectoryConfig, rho: TwoQubitState, rng) -> tuple[TwoQubitState, StepOutcome]:
    s = cfg.settings
    if cfg.scheme == "photodetection":
        return pd_step(rho, s, rng) if s.ideal else inefficient_pd_step(rho, s, rng)
    if cfg.scheme == "homodyne":
        return homodyne_step(rho, s, cfg.gamma, rng)
    if cfg.scheme == "heterodyne":
        return heterodyne_step(rho, s, cfg.gamma, rng)
    if cfg.scheme == "mixed_het_pd":
        return mixed_step(rho, s, cfg.gamma, rng)
    return mixed_discard_step(rho, s, cfg.gamma, rng)


def _dominant_vector(rho: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(rho)
    return v[:, -1]


def run_trajectory(cfg: TrajectoryConfig, index: int = 0) -> TrajectoryRecord:
    """Evolve one trajectory on the random stream derived from (cfg.seed, index)."""
    rng = trajectory_rng(cfg.seed, index)
    n = cfg.n_steps
    state = TwoQubitState(cfg.initial_density())
    conc = np.empty(n + 1)
    pur = np.empty(n + 1)
    bell = np.empty((n + 1, 4), dtype=complex)
    outcomes: list[StepOutcome] = []
    snapshots: list[tuple[int, TwoQubitState]] = [(0, state)]
    conc[0] = concurrence_mixed(state)
    pur[0] = purity(state)
    bell[0] = bell_aligned_from_vector(_dominant_vector(state.rho))
    for k in range(1, n + 1):
        try:
            state, outcome = _scalar_step(cfg, state, rng)
        except StepError as exc:
            raise StepError(f"step {k}: {exc}") from exc
        outcomes.append(outcome)
        conc[k] = concurrence_mixed(state)
        pur[k] = purity(state)
        bell[k] = bell_aligned_from_vector(_dominant_vector(state.rho))
        if k % cfg.snapshot_stride == 0 or k == n:
            snapshots.append((k, state))
    return TrajectoryRecord(cfg.times, outcomes, snapshots, conc, pur, bell)


def run_ensemble(
    cfg: TrajectoryConfig,
    n_trajectories: int,
    *,
    threads: int = 1,
    capture_threshold: Optional[float] = None,
) -> EnsembleSummary:
    """Time-gridded statistics over independent trajectories.

    Trajectory ``i`` always evolves on the stream derived from (seed, i), and
    work is split into fixed-size chunks merged in index order, so the result
    is bit-identical for any ``threads`` value.
    """
    from . import _batched

    if n_trajectories < 1:
        raise ValueError("n_trajectories must be >= 1")
    return _batched.run_ensemble_batched(cfg, n_trajectories, threads, capture_threshold)
