"""Two-photon polarization states.

Every 4-vector and 4x4 matrix in the package uses the basis order
(HH, HV, VH, VV), signal photon first.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericalError

BASIS_LABELS = ("HH", "HV", "VH", "VV")

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = -1e-10
NORM_TOL = 1e-6


def _as_complex(a, shape, what):
    arr = np.array(a, dtype=complex)
    if arr.shape != shape:
        raise InvalidInputError(f"{what} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{what} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Ket4:
    """Normalized two-photon polarization ket."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amp = _as_complex(self.amplitudes, (4,), "ket")
        norm = np.linalg.norm(amp)
        if abs(norm - 1.0) > NORM_TOL:
            raise InvalidInputError(f"ket is not normalized (norm={norm:.9g})")
        amp = amp / norm
        amp.setflags(write=False)
        object.__setattr__(self, "amplitudes", amp)

    @classmethod
    def normalized(cls, amplitudes) -> "Ket4":
        amp = np.asarray(amplitudes, dtype=complex)
        norm = np.linalg.norm(amp)
        if norm == 0:
            raise InvalidInputError("cannot normalize the zero vector")
        return cls(amp / norm)

    @classmethod
    def product(cls, signal, idler) -> "Ket4":
        """Tensor product of two single-photon Jones vectors."""
        return cls.normalized(np.kron(np.asarray(signal, complex), np.asarray(idler, complex)))


@dataclass(frozen=True, eq=False)
class PolState:
    """Physical two-photon density matrix (Hermitian, unit trace, PSD)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = _as_complex(self.matrix, (4, 4), "density matrix")
        if np.max(np.abs(m - m.conj().T)) > HERMITIAN_TOL:
            raise InvalidInputError("density matrix is not Hermitian")
        tr = np.trace(m)
        if abs(tr - 1.0) > TRACE_TOL:
            raise InvalidInputError(f"density matrix trace is {tr.real:.15g}, expected 1")
        evals = np.linalg.eigvalsh(m)
        if evals[0] < PSD_TOL:
            raise InvalidInputError(
                f"density matrix is not positive semidefinite (min eigenvalue {evals[0]:.3e})")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_matrix(cls, m) -> "PolState":
        """Symmetrize and trace-normalize ``m`` before validation.

        Only rounding-level asymmetry is removed; genuinely unphysical input
        still fails validation.
        """
        m = np.asarray(m, dtype=complex)
        m = 0.5 * (m + m.conj().T)
        return cls(m / np.trace(m).real)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


@dataclass(frozen=True, eq=False)
class Projector:
    matrix: np.ndarray

    def __post_init__(self):
        m = _as_complex(self.matrix, (4, 4), "projector")
        if np.max(np.abs(m - m.conj().T)) > 1e-10:
            raise InvalidInputError("projector is not Hermitian")
        if np.max(np.abs(m @ m - m)) > 1e-10:
            raise InvalidInputError("projector is not idempotent")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_ket(cls, k: Ket4) -> "Projector":
        a = k.amplitudes
        return cls(np.outer(a, a.conj()))

    @property
    def rank(self) -> int:
        return int(round(np.trace(self.matrix).real))


def basis_ket(label: str) -> Ket4:
    v = np.zeros(4, complex)
    v[BASIS_LABELS.index(label)] = 1.0
    return Ket4(v)


def entangled_ket(phi: float = 0.0) -> Ket4:
    """(|HV> - exp(-i phi)|VH>)/sqrt(2), the crossed-crystal state."""
    s = 1 / np.sqrt(2)
    return Ket4([0, s, -s * np.exp(-1j * phi), 0])


def psi_minus() -> Ket4:
    return entangled_ket(0.0)


def psi_plus() -> Ket4:
    s = 1 / np.sqrt(2)
    return Ket4([0, s, s, 0])


def phi_plus() -> Ket4:
    s = 1 / np.sqrt(2)
    return Ket4([s, 0, 0, s])


def phi_minus() -> Ket4:
    s = 1 / np.sqrt(2)
    return Ket4([s, 0, 0, -s])


def maximally_mixed() -> PolState:
    return PolState(np.eye(4) / 4)


def density_from_ket(k: Ket4) -> PolState:
    if not isinstance(k, Ket4):
        k = Ket4(k)
    a = k.amplitudes
    return PolState.from_matrix(np.outer(a, a.conj()))


def expectation(rho: PolState, P: Projector) -> float:
    """Tr(rho P) for a projector, returned as a probability."""
    val = float(np.real(np.trace(rho.matrix @ P.matrix)))
    if val < -1e-10 or val > 1 + 1e-10:
        raise NumericalError(f"expectation value {val!r} is not a probability")
    return min(max(val, 0.0), 1.0)


def fidelity(rho: PolState, target: Ket4) -> float:
    """Overlap <target|rho|target> with a pure target state."""
    a = target.amplitudes
    val = float(np.real(a.conj() @ rho.matrix @ a))
    return min(max(val, 0.0), 1.0)


def purity(rho: PolState) -> float:
    m = rho.matrix
    return float(np.real(np.sum(m * m.T)))


def trace_distance(a, b) -> float:
    ma = a.matrix if isinstance(a, PolState) else np.asarray(a)
    mb = b.matrix if isinstance(b, PolState) else np.asarray(b)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(ma - mb))))


def format_matrix(m, precision: int = 12) -> str:
    """Serialize a 4x4 complex matrix as 4 lines of ``re+imj`` tokens."""
    m = m.matrix if isinstance(m, PolState) else np.asarray(m, complex)
    rows = []
    for row in m:
        rows.append(" ".join(f"{z.real:.{precision}e}{z.imag:+.{precision}e}j" for z in row))
    return "\n".join(rows) + "\n"


def parse_matrix(text: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) != 4:
        raise InvalidInputError(f"expected 4 matrix rows, got {len(lines)}")
    out = np.empty((4, 4), complex)
    for i, ln in enumerate(lines):
        toks = ln.split()
        if len(toks) != 4:
            raise InvalidInputError(f"row {i + 1}: expected 4 entries, got {len(toks)}")
        for j, tok in enumerate(toks):
            try:
                out[i, j] = complex(tok)
            except ValueError:
                raise InvalidInputError(f"row {i + 1}, column {j + 1}: bad entry {tok!r}") from None
    return out
