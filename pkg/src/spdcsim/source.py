"""Crossed-crystal two-photon state with noise.

The state is built in three layers:

1. ``dephasing_v`` keeps a fraction V of the coherence between the |HV>
   and |VH> amplitudes (temporal which-crystal distinguishability);
2. ``crosstalk_q`` flips the signal polarization with probability q
   (HV-basis correlation errors);
3. ``white_noise_w`` mixes in the maximally mixed state (uncorrelated
   coincidences from multi-pair emission).

With ``crosstalk_q = 0`` this is the plain dephasing plus white-noise model.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .errors import InvalidInputError, NoSolutionError
from .polcore import PolState, entangled_ket

_X_SIGNAL = np.kron(np.array([[0, 1], [1, 0]]), np.eye(2))


@dataclass(frozen=True)
class SourceParams:
    phase_phi: float = 0.0
    dephasing_v: float = 1.0
    white_noise_w: float = 0.0
    crosstalk_q: float = 0.0
    pump_power_mw: float = 0.0
    mu_per_mw: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.phase_phi):
            raise InvalidInputError("phase_phi must be finite")
        for name in ("dephasing_v", "white_noise_w", "crosstalk_q"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise InvalidInputError(f"{name}={v!r} outside [0, 1]")
        for name in ("pump_power_mw", "mu_per_mw"):
            v = getattr(self, name)
            if not (v >= 0.0 and np.isfinite(v)):
                raise InvalidInputError(f"{name}={v!r} must be finite and >= 0")

    @property
    def mean_pairs_per_pulse(self) -> float:
        return self.mu_per_mw * self.pump_power_mw

    def at_power(self, pump_power_mw: float) -> "SourceParams":
        return replace(self, pump_power_mw=pump_power_mw)


def build_state(p: SourceParams) -> PolState:
    psi = entangled_ket(p.phase_phi).amplitudes
    pure = np.outer(psi, psi.conj())
    dephased = np.diag([0, 0.5, 0.5, 0]).astype(complex)
    rho = p.dephasing_v * pure + (1 - p.dephasing_v) * dephased
    rho = (1 - p.crosstalk_q) * rho + p.crosstalk_q * (_X_SIGNAL @ rho @ _X_SIGNAL)
    rho = (1 - p.white_noise_w) * rho + p.white_noise_w * np.eye(4) / 4
    return PolState.from_matrix(rho)


def predicted_visibility(p: SourceParams, basis: Literal["HV", "DIAG"] = "DIAG") -> float:
    """Closed-form fringe visibility with the idler analyzer fixed in ``basis``.

    DIAG is the +-45 deg fringe scanned with linear polarizers, which only
    sees the real part of the HV/VH coherence, hence the ``|cos(phi)|``.
    """
    if basis == "DIAG":
        return (1 - p.white_noise_w) * p.dephasing_v * abs(np.cos(p.phase_phi))
    if basis == "HV":
        return (1 - p.white_noise_w) * (1 - 2 * p.crosstalk_q)
    raise InvalidInputError(f"unknown basis {basis!r}")


def model_fidelity(p: SourceParams) -> float:
    """<psi-|rho|psi-> of ``build_state(p)`` in closed form."""
    coh = (1 + p.dephasing_v * np.cos(p.phase_phi)) / 2
    return (1 - p.white_noise_w) * (1 - p.crosstalk_q) * coh + p.white_noise_w / 4


def fit_noise_to_observations(vis_diag: float, fidelity: float,
                              base: SourceParams | None = None) -> SourceParams:
    """Solve for (dephasing V, white noise w) reproducing a fringe visibility
    and a Bell-state fidelity, with phase and crosstalk at zero.

    The pair must satisfy ``(1 + 3 vis)/4 <= F <= (1 + vis)/2``.
    """
    if not 0.0 <= vis_diag <= 1.0:
        raise InvalidInputError(f"vis_diag={vis_diag!r} outside [0, 1]")
    if not 0.25 <= fidelity <= 1.0:
        raise InvalidInputError(f"fidelity={fidelity!r} outside [0.25, 1]")
    f_lo, f_hi = (1 + 3 * vis_diag) / 4, (1 + vis_diag) / 2
    tol = 1e-12
    if not (f_lo - tol <= fidelity <= f_hi + tol):
        raise NoSolutionError(
            f"no (V, w) in [0,1]^2 gives visibility {vis_diag:.6g} and fidelity {fidelity:.6g}; "
            f"at this visibility the model admits fidelities in [{f_lo:.6g}, {f_hi:.6g}]")
    # F = (1 + vis)/2 - w/4 once vis = (1 - w) V is substituted
    w = min(max(2 * (1 + vis_diag) - 4 * fidelity, 0.0), 1.0)
    v = vis_diag / (1 - w) if w < 1 else 0.0
    v = min(max(v, 0.0), 1.0)
    base = base or SourceParams()
    return replace(base, phase_phi=0.0, dephasing_v=v, white_noise_w=w, crosstalk_q=0.0)


def isotropic_params(visibility: float, base: SourceParams | None = None) -> SourceParams:
    """Noise split so that HV and +-45 deg visibilities are both ``visibility``.

    Equal dephasing and crosstalk, no white noise. Under this split the CHSH
    value at the standard angles is exactly 2*sqrt(2)*visibility.
    """
    if not 0.0 <= visibility <= 1.0:
        raise InvalidInputError(f"visibility={visibility!r} outside [0, 1]")
    base = base or SourceParams()
    return replace(base, phase_phi=0.0, dephasing_v=visibility,
                   crosstalk_q=(1 - visibility) / 2, white_noise_w=0.0)


def isotropic_params_from_fidelity(fidelity: float, base: SourceParams | None = None) -> SourceParams:
    """Isotropic noise split with the given Bell-state fidelity (F = ((1+v)/2)^2)."""
    if not 0.25 <= fidelity <= 1.0:
        raise InvalidInputError(f"fidelity={fidelity!r} outside [0.25, 1]")
    return isotropic_params(2 * np.sqrt(fidelity) - 1, base)
