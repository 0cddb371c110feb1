"""Two-qubit state representations and conversions.

Basis convention (used everywhere in this package): the computational basis is
ordered {|ee>, |eg>, |ge>, |gg>}, where the first letter labels qubit A and the
second labels qubit B.  All 4x4 matrices, amplitude vectors and generalized
Bloch coordinates refer to this ordering.

Three equivalent descriptions are supported:

* amplitude vectors (a, b, c, d) for pure states,
* 4x4 density matrices for general (possibly mixed) states,
* 15 generalized Bloch coordinates q_1..q_15 built on the generalized
  Gell-Mann basis, rho = I/4 + sum_i q_i Gamma_i, with tr(Gamma_i Gamma_j) =
  delta_ij.  Coordinates 1-3 are the populations, 4-9 the real parts of the
  coherences and 10-15 their imaginary parts.

The Bell basis {|Phi+>, |Phi->, |Psi+>, |Psi->} with |Phi+-> = (|ee> +- |gg>)/sqrt(2)
and |Psi+-> = (|eg> +- |ge>)/sqrt(2) is reached through a fixed 4x4 unitary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NormalizationError",
    "NonPhysicalStateError",
    "PureState",
    "TwoQubitState",
    "BlochVector15",
    "BellAmplitudes",
    "GELL_MANN",
    "BELL_BASIS_UNITARY",
    "density_from_pure",
    "bloch_from_density",
    "density_from_bloch",
    "bell_from_computational",
    "computational_from_bell",
    "purity",
    "bell_aligned_from_vector",
    "pure_state_from_label",
    "sanitize_density",
    "STATE_LABELS",
]

HERMITICITY_TOL = 1e-12
TRACE_TOL = 1e-10
PSD_TOL = -1e-9
NORM_TOL = 1e-10


class NormalizationError(ValueError):
    """A state vector or density matrix is not normalized."""


class NonPhysicalStateError(ValueError):
    """A matrix fails the Hermiticity / trace / positivity requirements."""


def _gell_mann_matrices() -> np.ndarray:
    """The 15 generalized Gell-Mann matrices for dimension 4, stacked (15,4,4).

    Indexing follows the diagonal / symmetric / antisymmetric grouping:
    Gamma_1..Gamma_3 diagonal, Gamma_4..Gamma_9 symmetric off-diagonal pairs
    in the order (1,2),(0,1),(0,2),(0,3),(1,3),(2,3), Gamma_10..Gamma_15
    antisymmetric in the same pair order.
    """
    g = np.zeros((15, 4, 4), dtype=complex)
    g[0] = np.diag([1, -1, 0, 0]) / np.sqrt(2)
    g[1] = np.diag([1, 1, -2, 0]) / np.sqrt(6)
    g[2] = np.diag([1, 1, 1, -3]) / np.sqrt(12)
    pairs = [(1, 2), (0, 1), (0, 2), (0, 3), (1, 3), (2, 3)]
    for k, (i, j) in enumerate(pairs):
        g[3 + k][i, j] = g[3 + k][j, i] = 1 / np.sqrt(2)
        g[9 + k][i, j] = -1j / np.sqrt(2)
        g[9 + k][j, i] = 1j / np.sqrt(2)
    g.setflags(write=False)
    return g


GELL_MANN = _gell_mann_matrices()

# Columns map computational amplitudes onto Bell amplitudes (A, B, C, D).
BELL_BASIS_UNITARY = np.array(
    [
        [1, 0, 0, 1],
        [1, 0, 0, -1],
        [0, 1, 1, 0],
        [0, 1, -1, 0],
    ],
    dtype=complex,
) / np.sqrt(2)
BELL_BASIS_UNITARY.setflags(write=False)


def _as_amplitudes(values) -> np.ndarray:
    arr = np.asarray(values, dtype=complex).reshape(4).copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PureState:
    """Amplitudes (a, b, c, d) on {|ee>, |eg>, |ge>, |gg>}."""

    amplitudes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "amplitudes", _as_amplitudes(self.amplitudes))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "PureState":
        n = self.norm
        if n == 0.0:
            raise NormalizationError("cannot normalize the zero vector")
        return PureState(self.amplitudes / n)

    def require_normalized(self, tol: float = NORM_TOL) -> None:
        if abs(self.norm - 1.0) > tol:
            raise NormalizationError(
                f"state vector norm {self.norm!r} deviates from 1 by more than {tol}"
            )


@dataclass(frozen=True, eq=False)
class TwoQubitState:
    """A 4x4 density matrix in the {|ee>, |eg>, |ge>, |gg>} basis."""

    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=complex).reshape(4, 4).copy()
        herm = np.max(np.abs(rho - rho.conj().T))
        if herm > HERMITICITY_TOL:
            raise NonPhysicalStateError(f"density matrix not Hermitian: max deviation {herm:.3e}")
        tr = rho.trace()
        if abs(tr - 1.0) > TRACE_TOL:
            raise NonPhysicalStateError(f"density matrix trace {tr!r} deviates from 1")
        evmin = float(np.linalg.eigvalsh((rho + rho.conj().T) / 2).min())
        if evmin < PSD_TOL:
            raise NonPhysicalStateError(
                f"density matrix has negative eigenvalue {evmin:.3e} below tolerance {PSD_TOL}"
            )
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @property
    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.rho))


@dataclass(frozen=True, eq=False)
class BlochVector15:
    """Generalized Bloch coordinates q_1..q_15 (stored zero-indexed)."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(15).copy()
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    def __getitem__(self, index: int) -> float:
        """One-based access matching the q_1..q_15 labelling."""
        if not 1 <= index <= 15:
            raise IndexError("Bloch coordinates are labelled 1..15")
        return float(self.q[index - 1])

    @property
    def q_a(self) -> float:
        """Population of |ee>."""
        q = self.q
        return 0.25 + q[0] / np.sqrt(2) + q[1] / np.sqrt(6) + q[2] / np.sqrt(12)

    @property
    def q_b(self) -> float:
        """Population of |eg> (equals the |ge> population when q_1 = sqrt(2) q_2)."""
        q = self.q
        return 0.25 - q[0] / np.sqrt(2) + q[1] / np.sqrt(6) + q[2] / np.sqrt(12)


@dataclass(frozen=True, eq=False)
class BellAmplitudes:
    """Amplitudes (A, B, C, D) on {|Phi+>, |Phi->, |Psi+>, |Psi->}.

    For the states produced by the entangling homodyne measurement, D is purely
    imaginary and is conventionally written D = iE with real E; the accessor
    ``e`` returns that real coordinate.
    """

    a: complex
    b: complex
    c: complex
    d: complex

    @property
    def e(self) -> complex:
        return self.d / 1j

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d], dtype=complex)


def density_from_pure(psi: PureState) -> TwoQubitState:
    """rho = |psi><psi| for a normalized pure state."""
    psi.require_normalized()
    v = psi.amplitudes
    return TwoQubitState(np.outer(v, v.conj()))


def bloch_from_density(rho: TwoQubitState, imag_tol: float = 1e-12) -> BlochVector15:
    """Coordinates q_i = tr(Gamma_i rho)."""
    traces = np.einsum("kij,ji->k", GELL_MANN, rho.rho)
    worst = float(np.max(np.abs(traces.imag)))
    if worst > imag_tol:
        raise NonPhysicalStateError(f"Bloch coordinates have imaginary part {worst:.3e}")
    return BlochVector15(traces.real)


def density_from_bloch(q: BlochVector15) -> TwoQubitState:
    """Rebuild rho = I/4 + q . Gamma; rejects coordinates outside the state space."""
    rho = np.eye(4, dtype=complex) / 4 + np.einsum("k,kij->ij", q.q, GELL_MANN)
    return TwoQubitState(rho)


def bell_from_computational(psi: PureState) -> BellAmplitudes:
    """Re-express a pure state in the Bell basis."""
    psi.require_normalized()
    a, b, c, d = BELL_BASIS_UNITARY @ psi.amplitudes
    return BellAmplitudes(a, b, c, d)


def computational_from_bell(bell: BellAmplitudes) -> PureState:
    return PureState(BELL_BASIS_UNITARY.conj().T @ bell.as_array())


def purity(rho: TwoQubitState) -> float:
    """tr(rho^2), between 1/4 (maximally mixed) and 1 (pure)."""
    return float(np.real(np.einsum("ij,ji->", rho.rho, rho.rho)))


def bell_aligned_from_vector(vec: np.ndarray) -> np.ndarray:
    """Bell amplitudes (A, B, C, D) of a pure state, with the global phase fixed.

    Trajectories driven from |ee> by the entangling homodyne settings produce
    states whose (A, B, C, D/i) tuple is real up to one overall phase.  That
    phase is removed here (sign fixed by making B, then C, non-negative), so
    statistics over captured states can be read directly off the amplitudes.
    """
    vec = np.asarray(vec, dtype=complex).reshape(4)
    n = np.linalg.norm(vec)
    if n == 0.0:
        raise NormalizationError("cannot align the zero vector")
    t = BELL_BASIS_UNITARY @ (vec / n)
    t[3] /= 1j  # work with E = D / i
    z = np.sum(t**2)
    phase = 0.5 * np.angle(z) if abs(z) > 1e-12 else 0.0
    t = t * np.exp(-1j * phase)
    if t[1].real < -1e-12 or (abs(t[1]) <= 1e-12 and t[2].real < 0):
        t = -t
    t[3] *= 1j
    return t


def sanitize_density(rho: np.ndarray) -> np.ndarray:
    """Re-Hermitize and renormalize a raw density matrix.

    Applied after every trajectory step to keep floating-point drift from
    accumulating over thousands of updates.
    """
    rho = (rho + rho.conj().swapaxes(-1, -2)) / 2
    tr = np.real(np.trace(rho, axis1=-2, axis2=-1))
    return rho / tr[..., None, None] if rho.ndim > 2 else rho / tr


_ISQ2 = 1 / np.sqrt(2)
STATE_LABELS = {
    "ee": (1, 0, 0, 0),
    "eg": (0, 1, 0, 0),
    "ge": (0, 0, 1, 0),
    "gg": (0, 0, 0, 1),
    "phi_plus": (_ISQ2, 0, 0, _ISQ2),
    "phi_minus": (_ISQ2, 0, 0, -_ISQ2),
    "psi_plus": (0, _ISQ2, _ISQ2, 0),
    "psi_minus": (0, _ISQ2, -_ISQ2, 0),
}


def pure_state_from_label(label: str) -> PureState:
    try:
        return PureState(STATE_LABELS[label])
    except KeyError:
        raise KeyError(
            f"unknown state label {label!r}; expected one of {sorted(STATE_LABELS)}"
        ) from None
