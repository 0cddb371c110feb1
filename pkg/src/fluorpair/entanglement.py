"""Concurrence measures and Bell-state utilities.

Concurrence C is the standard two-qubit entanglement monotone: C = 0 for
separable states, C = 1 for Bell states.  For a mixed state it is
C = max(0, l1 - l2 - l3 - l4) where the l_i are the decreasingly-sorted square
roots of the eigenvalues of rho (sy x sy) rho* (sy x sy).  Working with that
non-Hermitian product avoids the matrix square roots in the textbook
definition; its eigenvalues are real and non-negative up to round-off, so tiny
negative real parts are clipped before the square root.
"""

from __future__ import annotations

import numpy as np

from .states import (
    BellAmplitudes,
    NonPhysicalStateError,
    PureState,
    TwoQubitState,
    computational_from_bell,
)

__all__ = [
    "SPIN_FLIP",
    "concurrence_mixed",
    "concurrence_pure",
    "concurrence_bell",
    "disentangling_local_unitary",
]

_SY = np.array([[0, -1j], [1j, 0]])
SPIN_FLIP = np.kron(_SY, _SY).real  # sy x sy is real in this basis
SPIN_FLIP.setflags(write=False)

_IMAG_TOL = 1e-9


def concurrence_mixed(rho: TwoQubitState) -> float:
    """Concurrence of an arbitrary two-qubit density matrix."""
    m = rho.rho if isinstance(rho, TwoQubitState) else np.asarray(rho, dtype=complex)
    product = m @ SPIN_FLIP @ m.conj() @ SPIN_FLIP
    try:
        ev = np.linalg.eigvals(product)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigenvalue solver failed for state\n{m!r}") from exc
    if np.max(np.abs(ev.imag)) > _IMAG_TOL:
        raise NonPhysicalStateError(
            f"spin-flip spectrum has imaginary parts {ev.imag!r}; state\n{m!r}"
        )
    # Rank-deficient products (any pure state) put round-off noise of size
    # eps_mach * ||product|| on the zero eigenvalues, which the square root
    # amplifies to ~1e-8; suppress it before taking roots.
    real = ev.real
    noise = 1e-13 * max(float(np.max(np.abs(real))), 1e-300)
    lam = np.sqrt(np.where(real > noise, real, 0.0))
    lam[::-1].sort()
    return max(0.0, float(lam[0] - lam[1] - lam[2] - lam[3]))


def concurrence_pure(psi: PureState) -> float:
    """C = 2|ad - bc| for a normalized pure state."""
    psi.require_normalized()
    a, b, c, d = psi.amplitudes
    return float(2 * abs(a * d - b * c))


def concurrence_bell(bell: BellAmplitudes) -> float:
    """C = |A^2 - B^2 - C^2 + D^2| in the Bell basis."""
    return float(abs(bell.a**2 - bell.b**2 - bell.c**2 + bell.d**2))


def disentangling_local_unitary(bell: BellAmplitudes, atol: float = 1e-6) -> np.ndarray:
    """Single-qubit rotation on qubit B sending B|Phi-> + C|Psi+> + iE|Psi-> to |Phi->.

    The input must be a maximally concurrent state of that restricted form:
    A = 0 with B, C, E all real and B^2 + C^2 + E^2 = 1.  Returns the 2x2
    unitary U_B such that (I x U_B)|psi> = |Phi->.
    """
    b, c, e = bell.b, bell.c, bell.e
    residues = (
        abs(bell.a),
        abs(np.imag(b)),
        abs(np.imag(c)),
        abs(np.imag(e)),
        abs(abs(b) ** 2 + abs(c) ** 2 + abs(e) ** 2 - 1.0),
    )
    if max(residues) > atol:
        raise ValueError(
            "state is not of the maximal-concurrence form A=0 with real B, C, E "
            f"(residues {residues})"
        )
    b, c, e = float(np.real(b)), float(np.real(c)), float(np.real(e))
    u = np.array([[b, c - 1j * e], [-(c + 1j * e), b]], dtype=complex)
    psi = computational_from_bell(bell).amplitudes
    target = np.kron(np.eye(2), u) @ psi
    phi_minus = np.array([1, 0, 0, -1], dtype=complex) / np.sqrt(2)
    if np.linalg.norm(target - phi_minus) > 1e-10:
        raise ValueError("constructed rotation does not reach |Phi->; input malformed")
    return u
