"""Measurement (Kraus) operators for jointly monitored two-qubit fluorescence.

Both qubits decay at the same rate gamma into separate lines that are mixed on
a balanced beamsplitter; outputs 3 and 4 pass phase plates (theta, vartheta)
and are then measured.  Conditioned on the optical outcome, the two-qubit
state updates as rho -> M rho M^dag / tr(...).  The operator families here are

* photodetection: five discrete outcomes (0, 1 or 2 photons per port),
* homodyne: projection onto quadrature eigenvalues (X3, X4),
* heterodyne: projection onto coherent outcomes (alpha, beta),
* mixed: heterodyne at port 3 with a photon counter at port 4,
* inefficient variants, where each output is split into a monitored "signal"
  mode (transmission eta) and an unmonitored "lost" mode that is traced out.

Every family is a positive operator valued measure: the operators summed (and,
for continuous outcomes, integrated) as M^dag M resolve the identity, which
``povm_check`` verifies either exactly or by Gauss-Hermite quadrature.

Matrices are 4x4 in the {|ee>, |eg>, |ge>, |gg>} basis and carry the small
parameter epsilon = gamma*dt exactly (no small-epsilon truncation).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "MeasurementSettings",
    "KrausSet",
    "PovmError",
    "photodetection_ops",
    "homodyne_op",
    "heterodyne_op",
    "mixed_het_pd_ops",
    "inefficient_photodetection_ops",
    "inefficient_homodyne_ops",
    "homodyne_family",
    "heterodyne_family",
    "povm_check",
]

EPSILON_WARN = 0.01
POVM_RESIDUAL_LIMIT = 1e-6


class PovmError(RuntimeError):
    """A Kraus family failed its completeness check."""

    def __init__(self, label: str, residual: float):
        super().__init__(f"operator family {label!r} fails POVM completeness: residual {residual:.3e}")
        self.label = label
        self.residual = residual


@dataclass(frozen=True)
class MeasurementSettings:
    """Per-step measurement parameters.

    epsilon is gamma*dt (dimensionless), theta and vartheta are the phase-plate
    settings in radians for ports 3 and 4, and eta3/eta4 are the respective
    measurement efficiencies.
    """

    epsilon: float
    theta: float = 0.0
    vartheta: float = np.pi / 2
    eta3: float = 1.0
    eta4: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon = gamma*dt must lie in (0, 1), got {self.epsilon}")
        if self.epsilon > EPSILON_WARN:
            warnings.warn(
                f"epsilon = {self.epsilon} exceeds {EPSILON_WARN}; trajectory "
                "discretization errors grow linearly with gamma*dt",
                stacklevel=2,
            )
        for name, eta in (("eta3", self.eta3), ("eta4", self.eta4)):
            if not 0.0 <= eta <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {eta}")

    @property
    def ideal(self) -> bool:
        return self.eta3 == 1.0 and self.eta4 == 1.0


@dataclass(frozen=True)
class KrausSet:
    """A labelled family of measurement operators.

    Discrete families list their operators directly.  Continuous families hold
    a builder mapping real outcome coordinates to the operator list (quadrature
    values for homodyne, real/imaginary parts of the coherent amplitudes for
    heterodyne and the mixed apparatus); ``coord_dim`` gives the number of
    integration variables and the Gaussian weight exp(-sum x_i^2) is carried
    inside the operators themselves.
    """

    label: str
    measure_type: str  # "discrete" | "continuous-2d" | "continuous-4d"
    operators: tuple[tuple[str, np.ndarray], ...] | None = None
    family: Callable[..., list[tuple[str, np.ndarray]]] | None = None
    coord_dim: int = 0
    groups: dict[str, tuple[str, ...]] | None = field(default=None)
    # optional fast path for quadrature checks: coords (n, coord_dim) ->
    # list of (n, 4, 4) operator stacks with the Gaussian weight divided out
    vector_family: Callable[[np.ndarray], list[np.ndarray]] | None = None

    def matrices(self) -> list[np.ndarray]:
        if self.operators is None:
            raise ValueError(f"{self.label}: continuous family has no fixed operator list")
        return [m for _, m in self.operators]


def _require_ideal(s: MeasurementSettings, op_name: str, alternative: str) -> None:
    if not s.ideal:
        raise ValueError(
            f"{op_name} models ideal detection only (eta3 = eta4 = 1); "
            f"use {alternative} for eta < 1"
        )


# ---------------------------------------------------------------------------
# photodetection

def _pd_click3(eps: float) -> np.ndarray:
    s = np.sqrt(eps * (1 - eps) / 2)
    t = np.sqrt(eps / 2)
    m = np.zeros((4, 4), dtype=complex)
    m[1, 0] = s
    m[2, 0] = s
    m[3, 1] = t
    m[3, 2] = t
    return m


def _pd_click4(eps: float) -> np.ndarray:
    s = np.sqrt(eps * (1 - eps) / 2)
    t = np.sqrt(eps / 2)
    m = np.zeros((4, 4), dtype=complex)
    m[1, 0] = -s
    m[2, 0] = s
    m[3, 1] = t
    m[3, 2] = -t
    return m


def _pd_no_click(eps: float) -> np.ndarray:
    return np.diag([1 - eps, np.sqrt(1 - eps), np.sqrt(1 - eps), 1.0]).astype(complex)


def _gg_from_ee(weight: complex) -> np.ndarray:
    m = np.zeros((4, 4), dtype=complex)
    m[3, 0] = weight
    return m


def photodetection_ops(s: MeasurementSettings) -> KrausSet:
    """The five ideal photon-counting operators.

    A single click at port 3 projects |ee> onto |Psi+>, a click at port 4 onto
    |Psi-> (up to sign); double emissions within one dt land both photons on
    the same detector.  Photon counting is insensitive to the phase plates, so
    theta and vartheta only enter as global phases on each operator.
    """
    _require_ideal(s, "photodetection_ops", "inefficient_photodetection_ops")
    eps = s.epsilon
    p3, p4 = np.exp(1j * s.theta), np.exp(1j * s.vartheta)
    ops = (
        ("n3=0,n4=0", _pd_no_click(eps)),
        ("n3=1,n4=0", p3 * _pd_click3(eps)),
        ("n3=0,n4=1", p4 * _pd_click4(eps)),
        ("n3=2,n4=0", p3**2 * _gg_from_ee(eps / np.sqrt(2))),
        ("n3=0,n4=2", p4**2 * _gg_from_ee(-eps / np.sqrt(2))),
    )
    return KrausSet(label="photodetection", measure_type="discrete", operators=ops)


# ---------------------------------------------------------------------------
# homodyne

def homodyne_op(s: MeasurementSettings, x3: float, x4: float) -> np.ndarray:
    """Projection onto the quadrature outcome pair (X3, X4), Gaussian prefactor included.

    The |ee> -> |gg> element carries the second Hermite polynomial,
    eps*e^{2i theta}(X3^2 - 1/2) - eps*e^{2i vartheta}(X4^2 - 1/2); its constant
    part is what lets concurrence survive the one-step update.
    """
    _require_ideal(s, "homodyne_op", "inefficient_homodyne_ops")
    eps = s.epsilon
    p3, p4 = np.exp(1j * s.theta), np.exp(1j * s.vartheta)
    m = np.zeros((4, 4), dtype=complex)
    m[0, 0] = 1 - eps
    m[1, 0] = np.sqrt(eps * (1 - eps)) * (p3 * x3 - p4 * x4)
    m[2, 0] = np.sqrt(eps * (1 - eps)) * (p3 * x3 + p4 * x4)
    m[1, 1] = m[2, 2] = np.sqrt(1 - eps)
    m[3, 0] = eps * (p3**2 * (x3**2 - 0.5) - p4**2 * (x4**2 - 0.5))
    m[3, 1] = np.sqrt(eps) * (p3 * x3 + p4 * x4)
    m[3, 2] = np.sqrt(eps) * (p3 * x3 - p4 * x4)
    m[3, 3] = 1.0
    return np.exp(-(x3**2 + x4**2) / 2) / np.sqrt(np.pi) * m


def homodyne_family(s: MeasurementSettings) -> KrausSet:
    _require_ideal(s, "homodyne_family", "inefficient_homodyne_family")
    return KrausSet(
        label="homodyne",
        measure_type="continuous-2d",
        family=lambda x3, x4: [("X", homodyne_op(s, x3, x4))],
        coord_dim=2,
    )


# ---------------------------------------------------------------------------
# heterodyne

def heterodyne_op(s: MeasurementSettings, alpha: complex, beta: complex) -> np.ndarray:
    """Projection onto coherent outcomes |alpha> at port 3 and |beta> at port 4.

    Readouts map onto the eigenvalues as alpha = sqrt(dt/2)(r_I + i r_Q) and
    beta = sqrt(dt/2)(r_X + i r_Y).
    """
    _require_ideal(s, "heterodyne_op", "inefficient measurement is not modelled for heterodyne")
    eps = s.epsilon
    u = np.conj(alpha) * np.exp(1j * s.theta)
    v = np.conj(beta) * np.exp(1j * s.vartheta)
    m = np.zeros((4, 4), dtype=complex)
    m[0, 0] = 1 - eps
    m[1, 0] = np.sqrt(eps * (1 - eps) / 2) * (u - v)
    m[2, 0] = np.sqrt(eps * (1 - eps) / 2) * (u + v)
    m[3, 0] = (eps / 2) * (u**2 - v**2)
    m[1, 1] = m[2, 2] = np.sqrt(1 - eps)
    m[3, 1] = np.sqrt(eps / 2) * (u + v)
    m[3, 2] = np.sqrt(eps / 2) * (u - v)
    m[3, 3] = 1.0
    return np.exp(-(abs(alpha) ** 2 + abs(beta) ** 2) / 2) * m


def heterodyne_family(s: MeasurementSettings) -> KrausSet:
    def build(x3, p3, x4, p4):
        return [("alpha,beta", heterodyne_op(s, x3 + 1j * p3, x4 + 1j * p4))]

    def build_batch(coords: np.ndarray) -> list[np.ndarray]:
        eps = s.epsilon
        u = (coords[:, 0] - 1j * coords[:, 1]) * np.exp(1j * s.theta)
        v = (coords[:, 2] - 1j * coords[:, 3]) * np.exp(1j * s.vartheta)
        m = np.zeros((len(coords), 4, 4), dtype=complex)
        m[:, 0, 0] = 1 - eps
        m[:, 1, 1] = m[:, 2, 2] = np.sqrt(1 - eps)
        m[:, 3, 3] = 1.0
        m[:, 1, 0] = np.sqrt(eps * (1 - eps) / 2) * (u - v)
        m[:, 2, 0] = np.sqrt(eps * (1 - eps) / 2) * (u + v)
        m[:, 3, 0] = eps / 2 * (u**2 - v**2)
        m[:, 3, 1] = np.sqrt(eps / 2) * (u + v)
        m[:, 3, 2] = np.sqrt(eps / 2) * (u - v)
        return [m]

    return KrausSet(
        label="heterodyne",
        measure_type="continuous-4d",
        family=build,
        coord_dim=4,
        vector_family=build_batch,
    )


# ---------------------------------------------------------------------------
# heterodyne at port 3 mixed with photodetection at port 4

def mixed_het_pd_ops(s: MeasurementSettings, alpha: complex) -> KrausSet:
    """Three operators for j = 0, 1, 2 clicks at port 4 with heterodyne at port 3."""
    _require_ideal(s, "mixed_het_pd_ops", "inefficient measurement is not modelled for this apparatus")
    if s.theta != 0.0 or s.vartheta != 0.0:
        raise ValueError("the mixed apparatus is defined for theta = vartheta = 0")
    eps = s.epsilon
    u = np.conj(alpha)
    pref = np.exp(-abs(alpha) ** 2 / 2)

    m0 = np.zeros((4, 4), dtype=complex)
    m0[0, 0] = 1 - eps
    m0[1, 0] = m0[2, 0] = u * np.sqrt(eps * (1 - eps) / 2)
    m0[1, 1] = m0[2, 2] = np.sqrt(1 - eps)
    m0[3, 0] = (eps / 2) * u**2
    m0[3, 1] = m0[3, 2] = u * np.sqrt(eps / 2)
    m0[3, 3] = 1.0

    m1 = np.zeros((4, 4), dtype=complex)
    m1[1, 0] = -np.sqrt(1 - eps)
    m1[2, 0] = np.sqrt(1 - eps)
    m1[3, 1] = 1.0
    m1[3, 2] = -1.0
    m1 *= np.sqrt(eps / 2)

    m2 = _gg_from_ee(-np.sqrt(2) * eps / 2)

    ops = (("j=0", pref * m0), ("j=1", pref * m1), ("j=2", pref * m2))
    return KrausSet(
        label="mixed_het_pd",
        measure_type="continuous-2d",
        operators=ops,
        family=lambda x, p: list(mixed_het_pd_ops(s, x + 1j * p).operators),
        coord_dim=2,
    )


# ---------------------------------------------------------------------------
# inefficient photodetection

def inefficient_photodetection_ops(s: MeasurementSettings) -> KrausSet:
    """All eleven Fock-projected operators when each port has efficiency eta.

    Outcomes are grouped by what the detectors actually register; within each
    group the operators enumerate the photons that escaped into the lost
    modes, and the state update sums over the group.  Lost modes sit before
    the phase plates, so only signal photons pick up theta / vartheta.
    """
    eps, t3, t4 = s.epsilon, s.eta3, s.eta4
    p3, p4 = np.exp(1j * s.theta), np.exp(1j * s.vartheta)
    ops = (
        ("n3=0,n4=0,l3=0,l4=0", _pd_no_click(eps)),
        ("n3=0,n4=0,l3=1,l4=0", np.sqrt(1 - t3) * _pd_click3(eps)),
        ("n3=0,n4=0,l3=0,l4=1", np.sqrt(1 - t4) * _pd_click4(eps)),
        ("n3=0,n4=0,l3=2,l4=0", (1 - t3) * _gg_from_ee(eps / np.sqrt(2))),
        ("n3=0,n4=0,l3=0,l4=2", (1 - t4) * _gg_from_ee(-eps / np.sqrt(2))),
        ("n3=1,n4=0,l3=0,l4=0", p3 * np.sqrt(t3) * _pd_click3(eps)),
        ("n3=1,n4=0,l3=1,l4=0", p3 * _gg_from_ee(eps * np.sqrt(t3 * (1 - t3)))),
        ("n3=0,n4=1,l3=0,l4=0", p4 * np.sqrt(t4) * _pd_click4(eps)),
        ("n3=0,n4=1,l3=0,l4=1", p4 * _gg_from_ee(-eps * np.sqrt(t4 * (1 - t4)))),
        ("n3=2,n4=0,l3=0,l4=0", p3**2 * t3 * _gg_from_ee(eps / np.sqrt(2))),
        ("n3=0,n4=2,l3=0,l4=0", p4**2 * t4 * _gg_from_ee(-eps / np.sqrt(2))),
    )
    groups = {
        "n3=0,n4=0": tuple(label for label, _ in ops[:5]),
        "n3=1,n4=0": tuple(label for label, _ in ops[5:7]),
        "n3=0,n4=1": tuple(label for label, _ in ops[7:9]),
        "n3=2,n4=0": (ops[9][0],),
        "n3=0,n4=2": (ops[10][0],),
    }
    return KrausSet(
        label="inefficient_photodetection",
        measure_type="discrete",
        operators=ops,
        groups=groups,
    )


# ---------------------------------------------------------------------------
# inefficient homodyne

def inefficient_homodyne_ops(s: MeasurementSettings, x3: float, x4: float) -> KrausSet:
    """Five operators: signal modes projected onto quadratures, lost modes onto Fock states."""
    eps, t3, t4 = s.epsilon, s.eta3, s.eta4
    p3, p4 = np.exp(1j * s.theta), np.exp(1j * s.vartheta)
    pref = np.exp(-(x3**2 + x4**2) / 2) / np.sqrt(np.pi)
    w3, w4 = np.sqrt(t3) * p3 * x3, np.sqrt(t4) * p4 * x4

    m00 = np.zeros((4, 4), dtype=complex)
    m00[0, 0] = 1 - eps
    m00[1, 0] = np.sqrt(eps * (1 - eps)) * (w3 - w4)
    m00[2, 0] = np.sqrt(eps * (1 - eps)) * (w3 + w4)
    m00[1, 1] = m00[2, 2] = np.sqrt(1 - eps)
    m00[3, 0] = eps * (p3**2 * t3 * (x3**2 - 0.5) - p4**2 * t4 * (x4**2 - 0.5))
    m00[3, 1] = np.sqrt(eps) * (w3 + w4)
    m00[3, 2] = np.sqrt(eps) * (w3 - w4)
    m00[3, 3] = 1.0

    m10 = np.sqrt(1 - t3) * _pd_click3(eps)
    m10[3, 0] = eps * p3 * x3 * np.sqrt(2 * t3 * (1 - t3))
    m01 = np.sqrt(1 - t4) * _pd_click4(eps)
    m01[3, 0] = -eps * p4 * x4 * np.sqrt(2 * t4 * (1 - t4))
    m20 = (1 - t3) * _gg_from_ee(eps / np.sqrt(2))
    m02 = (1 - t4) * _gg_from_ee(-eps / np.sqrt(2))

    ops = (
        ("l3=0,l4=0", pref * m00),
        ("l3=1,l4=0", pref * m10),
        ("l3=0,l4=1", pref * m01),
        ("l3=2,l4=0", pref * m20),
        ("l3=0,l4=2", pref * m02),
    )
    return KrausSet(
        label="inefficient_homodyne",
        measure_type="continuous-2d",
        operators=ops,
        family=lambda a, b: list(inefficient_homodyne_ops(s, a, b).operators),
        coord_dim=2,
    )


# ---------------------------------------------------------------------------
# POVM verification

def _gauss_hermite_sum(kraus_set: "KrausSet", order: int) -> np.ndarray:
    """Integrate sum_j M_j^dag M_j over all outcome coordinates.

    The operators carry exp(-sum x_i^2 / 2) prefactors, so stripping that
    weight leaves a polynomial integrand that Gauss-Hermite nodes integrate
    exactly.
    """
    coord_dim = kraus_set.coord_dim
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    total = np.zeros((4, 4), dtype=complex)
    grids = np.meshgrid(*([nodes] * coord_dim), indexing="ij")
    wgrids = np.meshgrid(*([weights] * coord_dim), indexing="ij")
    coords = np.stack([g.ravel() for g in grids], axis=1)
    wprod = np.prod(np.stack([w.ravel() for w in wgrids], axis=1), axis=1)
    if kraus_set.vector_family is not None:
        for lo in range(0, len(coords), 65536):
            sl = slice(lo, lo + 65536)
            for stack in kraus_set.vector_family(coords[sl]):
                total += np.einsum(
                    "n,nji,njk->ik", wprod[sl], stack.conj(), stack, optimize=True
                )
        return total
    for point, w in zip(coords, wprod):
        strip = np.exp(np.sum(point**2) / 2)
        for _, m in kraus_set.family(*point):
            mt = strip * m
            total += w * (mt.conj().T @ mt)
    return total


def povm_check(kraus_set: KrausSet, quad_order: int = 40) -> float:
    """Max-norm residual of sum(M^dag M) against (a scalar multiple of) the identity.

    Discrete families must resolve the identity exactly; continuous families
    are integrated by Gauss-Hermite quadrature and checked against c*I with the
    scalar c fitted (coherent-state overcompleteness contributes pi-factors
    that the state update normalization absorbs).  Residuals above 1e-6 raise
    ``PovmError`` naming the family.
    """
    if kraus_set.measure_type == "discrete":
        total = np.zeros((4, 4), dtype=complex)
        for _, m in kraus_set.operators:
            total += m.conj().T @ m
        c = 1.0
    else:
        if quad_order < 20:
            raise ValueError("continuous POVM checks need quad_order >= 20")
        total = _gauss_hermite_sum(kraus_set, quad_order)
        c = float(np.real(total.trace())) / 4.0
    residual = float(np.max(np.abs(total - c * np.eye(4))))
    if residual > POVM_RESIDUAL_LIMIT:
        raise PovmError(kraus_set.label, residual)
    return residual
