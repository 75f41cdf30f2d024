"""Crystal dispersion: Sellmeier-form index models, group indices,
quasi-phase-matching periods, group-velocity walk-off and birefringent
compensator sizing.

Index models are data. They are loaded from YAML files of the form::

    material: KTP
    citation: "..."
    axes:
      Y:
        A: 3.45
        poles: [[B1, C1], ...]          # B / (lambda^2 - C)
        lambda2_poles: [[E1, F1], ...]  # E lambda^2 / (lambda^2 - F)
        D: 0.0                          # - D lambda^2
        validity_um: [0.4, 3.5]

with lambda in micrometres.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Literal

import numpy as np

from ._yamlio import LocatedData, load_located, load_located_file
from .errors import (ConfigError, DegeneratePhaseMatchingError, InvalidInputError, RangeError,
                     UnusableMaterialError)

C_NM_PER_FS = 299.792458
C_MM_PER_FS = C_NM_PER_FS * 1e-6


@dataclass(frozen=True)
class AxisDispersion:
    A: float
    poles: tuple = ()
    lambda2_poles: tuple = ()
    D: float = 0.0
    validity_um: tuple = (0.0, np.inf)

    def n_squared(self, lam_um):
        l2 = np.asarray(lam_um, float) ** 2
        out = self.A - self.D * l2
        for b, c in self.poles:
            out = out + b / (l2 - c)
        for b, c in self.lambda2_poles:
            out = out + b * l2 / (l2 - c)
        return out

    def n(self, lam_um):
        return np.sqrt(self.n_squared(lam_um))


@dataclass(frozen=True)
class DispersionModel:
    material: str
    axes: dict
    citation: str = ""
    source: str | None = field(default=None, compare=False)

    def axis(self, name: str) -> AxisDispersion:
        try:
            return self.axes[name]
        except KeyError:
            raise InvalidInputError(
                f"{self.material} has no axis {name!r} (axes: {', '.join(self.axes)})") from None

    def _check_range(self, axis: str, lam_um: float, margin_um: float = 0.0):
        lo, hi = self.axis(axis).validity_um
        if not (lo + margin_um <= lam_um <= hi - margin_um):
            raise RangeError(
                f"{lam_um * 1e3:.4g} nm is outside the {self.material} {axis}-axis validity range "
                f"[{lo * 1e3:.4g}, {hi * 1e3:.4g}] nm" + (" (with derivative margin)" if margin_um else ""))


# ---------------------------------------------------------------- loading

_AXIS_KEYS = {"A", "poles", "lambda2_poles", "D", "validity_um"}
_TOP_KEYS = {"material", "citation", "axes", "notes"}


def _number(doc: LocatedData, path, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
        raise doc.error(path, f"expected a finite number, got {value!r}")
    return float(value)


def _pairs(doc, path, value):
    if value is None:
        return ()
    if not isinstance(value, list):
        raise doc.error(path, "expected a list of [B, C] pairs")
    out = []
    for i, item in enumerate(value):
        if not isinstance(item, list) or len(item) != 2:
            raise doc.error(path + (i,), "expected a [B, C] pair")
        out.append((_number(doc, path + (i, 0), item[0]), _number(doc, path + (i, 1), item[1])))
    return tuple(out)


def _validate_axis(doc, path, ax: AxisDispersion):
    lo, hi = ax.validity_um
    for _, c in ax.poles + ax.lambda2_poles:
        if c > 0 and lo <= np.sqrt(c) <= hi:
            raise doc.error(path, f"pole at {np.sqrt(c):.4g} um lies inside the validity range")
    grid = np.linspace(lo, hi, 400)
    n2 = ax.n_squared(grid)
    if not np.all(np.isfinite(n2)) or np.any(n2 <= 1.0):
        raise doc.error(path, "refractive index is not real and > 1 over the validity range")


def dispersion_from_doc(doc: LocatedData) -> DispersionModel:
    data = doc.data
    if not isinstance(data, dict):
        raise doc.error((), "dispersion file must be a mapping")
    for k in data:
        if k not in _TOP_KEYS:
            raise doc.error((k,), f"unknown key {k!r}")
    for k in ("material", "citation", "axes"):
        if k not in data:
            raise doc.error((), f"missing required key {k!r}")
    if not isinstance(data["material"], str) or not data["material"]:
        raise doc.error(("material",), "material must be a non-empty string")
    if not isinstance(data["citation"], str) or not data["citation"].strip():
        raise doc.error(("citation",), "citation must be a non-empty string")
    if not isinstance(data["axes"], dict) or not data["axes"]:
        raise doc.error(("axes",), "axes must be a non-empty mapping")
    axes = {}
    for name, entry in data["axes"].items():
        path = ("axes", name)
        if not isinstance(entry, dict):
            raise doc.error(path, "axis entry must be a mapping")
        for k in entry:
            if k not in _AXIS_KEYS:
                raise doc.error(path + (k,), f"unknown key {k!r}")
        if "A" not in entry or "validity_um" not in entry:
            raise doc.error(path, "axis needs 'A' and 'validity_um'")
        vr = entry["validity_um"]
        if not isinstance(vr, list) or len(vr) != 2:
            raise doc.error(path + ("validity_um",), "validity_um must be [min, max]")
        lo, hi = (_number(doc, path + ("validity_um", i), vr[i]) for i in range(2))
        if not 0 < lo < hi:
            raise doc.error(path + ("validity_um",), "validity range must satisfy 0 < min < max")
        ax = AxisDispersion(
            A=_number(doc, path + ("A",), entry["A"]),
            poles=_pairs(doc, path + ("poles",), entry.get("poles")),
            lambda2_poles=_pairs(doc, path + ("lambda2_poles",), entry.get("lambda2_poles")),
            D=_number(doc, path + ("D",), entry.get("D", 0.0)),
            validity_um=(lo, hi),
        )
        _validate_axis(doc, path, ax)
        axes[str(name)] = ax
    return DispersionModel(data["material"], axes, data["citation"].strip(), doc.source)


def load_dispersion(path) -> DispersionModel:
    return dispersion_from_doc(load_located_file(path))


def parse_dispersion(text: str, source=None) -> DispersionModel:
    return dispersion_from_doc(load_located(text, source))


def data_path(name: str) -> Path:
    """Path of a file shipped in ``spdcsim/data``."""
    return Path(str(resources.files("spdcsim") / "data" / name))


def builtin_dispersion(name: str) -> DispersionModel:
    """Load a shipped dispersion file, e.g. ``"ktp_kato2002"``."""
    return load_dispersion(data_path(name if name.endswith(".yaml") else name + ".yaml"))


# ---------------------------------------------------------------- indices

def refractive_index(m: DispersionModel, axis: str, lambda_nm: float) -> float:
    lam = lambda_nm * 1e-3
    m._check_range(axis, lam)
    return float(m.axis(axis).n(lam))


def _dn_dlambda(ax: AxisDispersion, lam_um: float, h_um: float) -> float:
    return (ax.n(lam_um + h_um) - ax.n(lam_um - h_um)) / (2 * h_um)


def group_index(m: DispersionModel, axis: str, lambda_nm: float, step_nm: float = 0.1) -> float:
    """n_g = n - lambda dn/dlambda, central differences with one Richardson step."""
    lam, h = lambda_nm * 1e-3, step_nm * 1e-3
    m._check_range(axis, lam, margin_um=h)
    ax = m.axis(axis)
    d1 = _dn_dlambda(ax, lam, h)
    d2 = _dn_dlambda(ax, lam, h / 2)
    deriv = (4 * d2 - d1) / 3
    return float(ax.n(lam) - lam * deriv)


def group_slowness(m: DispersionModel, axis: str, lambda_nm: float) -> float:
    """Inverse group velocity in fs/mm."""
    return group_index(m, axis, lambda_nm) / C_MM_PER_FS


# ---------------------------------------------------------------- QPM

@dataclass(frozen=True)
class QpmProblem:
    """Three-wave collinear interaction.

    Without ``pump_nm`` the pump wavelength follows from energy
    conservation; an explicit pump is accepted only within ``tolerance``
    (relative mismatch of 1/lambda_p against 1/lambda_s + 1/lambda_i).
    """

    signal_nm: float
    idler_nm: float
    pump_nm: float | None = None
    pump_axis: str = "Y"
    signal_axis: str = "Y"
    idler_axis: str = "Z"
    order: int = 1
    tolerance: float = 0.005

    def __post_init__(self):
        for name in ("signal_nm", "idler_nm"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.pump_nm is None:
            object.__setattr__(self, "pump_nm", 1.0 / (1.0 / self.signal_nm + 1.0 / self.idler_nm))
        elif not self.pump_nm > 0:
            raise InvalidInputError("pump_nm must be positive")
        if self.order == 0:
            raise InvalidInputError("QPM order must be nonzero")
        mis = self.energy_mismatch
        if mis > self.tolerance:
            raise InvalidInputError(
                f"wavelengths violate energy conservation: relative mismatch {mis:.3%} "
                f"exceeds tolerance {self.tolerance:.3%} (energy-conserving pump: "
                f"{self.conserving_pump_nm:.2f} nm)")

    @classmethod
    def from_um(cls, signal_um, idler_um, pump_um=None, **kw) -> "QpmProblem":
        return cls(signal_um * 1e3, idler_um * 1e3, None if pump_um is None else pump_um * 1e3, **kw)

    @property
    def conserving_pump_nm(self) -> float:
        return 1.0 / (1.0 / self.signal_nm + 1.0 / self.idler_nm)

    @property
    def energy_mismatch(self) -> float:
        inv_p = 1.0 / self.pump_nm
        return abs(inv_p - 1.0 / self.signal_nm - 1.0 / self.idler_nm) / inv_p


def wavevector(m: DispersionModel, axis: str, lambda_nm: float) -> float:
    """k = 2 pi n / lambda in rad/um."""
    return 2 * np.pi * refractive_index(m, axis, lambda_nm) / (lambda_nm * 1e-3)


def phase_mismatch(m: DispersionModel, prob: QpmProblem) -> float:
    """k_p - k_s - k_i in rad/um."""
    return (wavevector(m, prob.pump_axis, prob.pump_nm)
            - wavevector(m, prob.signal_axis, prob.signal_nm)
            - wavevector(m, prob.idler_axis, prob.idler_nm))


def qpm_period(m: DispersionModel, prob: QpmProblem) -> float:
    """Poling period in um that cancels the mismatch at the given QPM order."""
    kp = wavevector(m, prob.pump_axis, prob.pump_nm)
    dk = phase_mismatch(m, prob)
    if abs(dk) < 1e-12 * kp:
        raise DegeneratePhaseMatchingError("phase mismatch is zero; no finite poling period")
    period = abs(2 * np.pi * prob.order / dk)
    resid = abs(abs(dk) - 2 * np.pi * abs(prob.order) / period)
    assert resid < 1e-9 * kp
    return float(period)


# ---------------------------------------------------------------- walk-off

def gvm_walkoff(m: DispersionModel, axis_a: str, lambda_a_nm: float, axis_b: str,
                lambda_b_nm: float, length_mm: float) -> float:
    """Group delay difference (fs) accumulated over ``length_mm``."""
    if length_mm < 0:
        raise InvalidInputError("length must be >= 0")
    d = group_slowness(m, axis_a, lambda_a_nm) - group_slowness(m, axis_b, lambda_b_nm)
    return abs(d) * length_mm


Convention = Literal["crossed_crystal", "half_length", "full_length"]


def _other(axis, transverse):
    a, b = transverse
    if axis == a:
        return b
    if axis == b:
        return a
    raise InvalidInputError(f"axis {axis!r} is not one of the transverse axes {transverse}")


def crystal_delays(m: DispersionModel, prob: QpmProblem, length_mm: float,
                   convention: Convention = "crossed_crystal",
                   transverse=("Y", "Z")) -> dict:
    """H/V arrival-time difference per arm (fs) that a compensator must remove.

    ``crossed_crystal`` follows both emission paths through the two crossed
    crystals. A pair from the first crystal travels the second crystal with
    its polarizations on swapped axes, while a pair from the second crystal
    was pumped by the pump component that crossed the first crystal on the
    other axis. The emission-depth terms cancel, leaving for each arm
    ``L |s(photon, swapped axis) - s(pump, swapped pump axis)|``.

    ``half_length`` / ``full_length`` use the photon's own Y/Z group delay
    difference over half / all of one crystal.
    """
    if length_mm < 0:
        raise InvalidInputError("length must be >= 0")
    arms = {"signal": (prob.signal_nm, prob.signal_axis), "idler": (prob.idler_nm, prob.idler_axis)}
    out = {}
    if convention == "crossed_crystal":
        sp = group_slowness(m, _other(prob.pump_axis, transverse), prob.pump_nm)
        for arm, (lam, ax) in arms.items():
            out[arm] = abs(group_slowness(m, _other(ax, transverse), lam) - sp) * length_mm
    elif convention in ("half_length", "full_length"):
        f = 0.5 if convention == "half_length" else 1.0
        for arm, (lam, _) in arms.items():
            out[arm] = f * gvm_walkoff(m, transverse[0], lam, transverse[1], lam, length_mm)
    else:
        raise InvalidInputError(f"unknown compensation convention {convention!r}")
    return out


def compensation_thickness(delay_fs: float, comp_model: DispersionModel, comp_axes=("o", "e"),
                           lambda_nm: float = 800.0) -> float:
    """Thickness (mm) of a birefringent plate whose fast/slow group delay
    difference equals ``delay_fs`` at ``lambda_nm``."""
    if delay_fs < 0:
        raise InvalidInputError("delay must be >= 0")
    per_mm = gvm_walkoff(comp_model, comp_axes[0], lambda_nm, comp_axes[1], lambda_nm, 1.0)
    if per_mm < 1e-9:
        raise UnusableMaterialError(
            f"{comp_model.material} has no group birefringence at {lambda_nm:.4g} nm")
    return delay_fs / per_mm


@dataclass(frozen=True)
class CompensationPlate:
    arm: str
    lambda_nm: float
    delay_fs: float
    thickness_mm: float


def compensation_plan(crystal: DispersionModel, prob: QpmProblem, length_mm: float,
                      comp_model: DispersionModel, comp_axes=("o", "e"),
                      convention: Convention = "crossed_crystal") -> list[CompensationPlate]:
    delays = crystal_delays(crystal, prob, length_mm, convention)
    lams = {"signal": prob.signal_nm, "idler": prob.idler_nm}
    return [CompensationPlate(arm, lams[arm], d,
                              compensation_thickness(d, comp_model, comp_axes, lams[arm]))
            for arm, d in delays.items()]


def load_dispersion_or_error(path) -> DispersionModel:
    """Like :func:`load_dispersion` but resolves bare names against shipped data."""
    p = Path(path)
    if not p.exists() and not p.is_absolute():
        alt = data_path(p.name)
        if alt.exists():
            p = alt
    if not p.exists():
        raise ConfigError("dispersion file not found", source=str(path))
    return load_dispersion(p)
