"""Joint spectral amplitude, Schmidt analysis and Hong-Ou-Mandel dips.

Frequencies are angular detunings in rad/fs from the channel centres,
group slownesses are in fs/mm and lengths in mm, so ``dk * L`` comes out
in radians.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import FitError, InvalidInputError, NumericalError, ResolutionError
from .measure import derive_rng
from .optics import C_NM_PER_FS, DispersionModel, QpmProblem, group_slowness

_SINC_HALF_MAX_X = 1.3915573782515103  # sinc(x) = 1/sqrt(2) in intensity, x > 0
_ENERGY_TOL = 0.005


def bandwidth_nm_to_omega(fwhm_nm: float, center_nm: float) -> float:
    """Wavelength FWHM to angular-frequency FWHM (rad/fs)."""
    return 2 * np.pi * C_NM_PER_FS * fwhm_nm / center_nm ** 2


def stage_um_to_delay_fs(stage_um):
    """One-way free-space delay of a translation stage displacement."""
    return np.asarray(stage_um, float) * 1e3 / C_NM_PER_FS


def delay_fs_to_stage_um(delay_fs):
    return np.asarray(delay_fs, float) * C_NM_PER_FS * 1e-3


@dataclass(frozen=True)
class SpectralParams:
    """Source parameters entering the JSA.

    Group slownesses (fs/mm) come from a dispersion model, see
    :meth:`from_dispersion`. Without ``pump_center_nm`` the pump centre
    follows from energy conservation.
    """

    gv_inverse_pump: float
    gv_inverse_signal: float
    gv_inverse_idler: float
    signal_center_nm: float = 760.0
    idler_center_nm: float = 810.0
    pump_center_nm: float | None = None
    pump_fwhm_duration_fs: float = 150.0
    crystal_length_mm: float = 1.0
    filter_fwhm_signal_nm: float = 3.0
    filter_fwhm_idler_nm: float = 1.0

    def __post_init__(self):
        if self.pump_center_nm is None and self.signal_center_nm > 0 and self.idler_center_nm > 0:
            object.__setattr__(self, "pump_center_nm",
                               1 / (1 / self.signal_center_nm + 1 / self.idler_center_nm))
        for name in ("pump_center_nm", "signal_center_nm", "idler_center_nm",
                     "pump_fwhm_duration_fs", "filter_fwhm_signal_nm", "filter_fwhm_idler_nm"):
            v = getattr(self, name)
            if not v > 0:
                raise InvalidInputError(f"{name}={v!r} must be > 0")
        if not (self.crystal_length_mm >= 0 and np.isfinite(self.crystal_length_mm)):
            raise InvalidInputError("crystal_length_mm must be finite and >= 0")
        for name in ("gv_inverse_pump", "gv_inverse_signal", "gv_inverse_idler"):
            if not np.isfinite(getattr(self, name)):
                raise InvalidInputError(f"{name} must be finite")
        inv_p = 1 / self.pump_center_nm
        mis = abs(inv_p - 1 / self.signal_center_nm - 1 / self.idler_center_nm) / inv_p
        if mis > _ENERGY_TOL:
            raise InvalidInputError(f"centre wavelengths violate energy conservation "
                                    f"(relative mismatch {mis:.3%})")

    @classmethod
    def from_dispersion(cls, model: DispersionModel, prob: QpmProblem, **kw) -> "SpectralParams":
        """Take centre wavelengths and group slownesses from a crystal model."""
        return cls(
            pump_center_nm=prob.pump_nm, signal_center_nm=prob.signal_nm,
            idler_center_nm=prob.idler_nm,
            gv_inverse_pump=group_slowness(model, prob.pump_axis, prob.pump_nm),
            gv_inverse_signal=group_slowness(model, prob.signal_axis, prob.signal_nm),
            gv_inverse_idler=group_slowness(model, prob.idler_axis, prob.idler_nm),
            **kw)

    @property
    def pump_fwhm_omega(self) -> float:
        # transform-limited Gaussian: FWHM_w * FWHM_t = 4 ln 2
        return 4 * np.log(2) / self.pump_fwhm_duration_fs

    @property
    def filter_fwhm_omega(self) -> tuple[float, float]:
        return (bandwidth_nm_to_omega(self.filter_fwhm_signal_nm, self.signal_center_nm),
                bandwidth_nm_to_omega(self.filter_fwhm_idler_nm, self.idler_center_nm))

    def sinc_fwhm_omega(self) -> tuple[float, float]:
        """FWHM of |Phi|^2 along each detuning axis with the other held at zero."""
        out = []
        for s in (self.gv_inverse_signal, self.gv_inverse_idler):
            rate = abs(self.gv_inverse_pump - s) * self.crystal_length_mm / 2
            out.append(2 * _SINC_HALF_MAX_X / rate if rate > 1e-200 else math.inf)
        return tuple(out)


@dataclass(frozen=True)
class JsaGrid:
    """n x n amplitude table, rows indexed by signal detuning."""

    amplitude: np.ndarray
    omega_s: np.ndarray
    omega_i: np.ndarray

    def __post_init__(self):
        a = self.amplitude
        n = a.shape[0]
        if a.ndim != 2 or a.shape[1] != n:
            raise InvalidInputError("JSA table must be square")
        if n < 64:
            raise InvalidInputError(f"grid size {n} below the minimum of 64")
        if self.omega_s.shape != (n,) or self.omega_i.shape != (n,):
            raise InvalidInputError("axis vectors must match the table size")
        norm = np.sum(np.abs(a) ** 2) * self.d_omega_s * self.d_omega_i
        if abs(norm - 1) > 1e-9:
            raise InvalidInputError(f"JSA not normalized (norm {norm:.12g})")

    @property
    def n(self) -> int:
        return self.amplitude.shape[0]

    @property
    def d_omega_s(self) -> float:
        return float(self.omega_s[1] - self.omega_s[0])

    @property
    def d_omega_i(self) -> float:
        return float(self.omega_i[1] - self.omega_i[0])

    @classmethod
    def from_table(cls, table, omega_s, omega_i) -> "JsaGrid":
        """Wrap an arbitrary table, rescaling it to unit norm."""
        table = np.asarray(table, complex)
        omega_s, omega_i = np.asarray(omega_s, float), np.asarray(omega_i, float)
        norm = np.sum(np.abs(table) ** 2) * (omega_s[1] - omega_s[0]) * (omega_i[1] - omega_i[0])
        if not norm > 0:
            raise InvalidInputError("JSA table is identically zero")
        return cls(table / np.sqrt(norm), omega_s, omega_i)

    def idler_state(self) -> np.ndarray:
        """Reduced idler spectral density matrix (unit trace) after tracing the signal."""
        f = self.amplitude
        rho = f.T @ f.conj()
        return rho / np.trace(rho).real

    def to_text(self) -> str:
        """Row-major table: omega_s, omega_i, magnitude, phase."""
        S, I = np.meshgrid(self.omega_s, self.omega_i, indexing="ij")
        rows = np.column_stack([S.ravel(), I.ravel(), np.abs(self.amplitude).ravel(),
                                np.angle(self.amplitude).ravel()])
        lines = ["omega_s_rad_per_fs\tomega_i_rad_per_fs\tmagnitude\tphase_rad"]
        lines += ["\t".join(f"{v:.10e}" for v in r) for r in rows]
        return "\n".join(lines) + "\n"


def _axis_width(filter_fwhm, pump_fwhm, sinc_fwhm):
    if np.isfinite(filter_fwhm):
        return filter_fwhm
    return max(pump_fwhm, sinc_fwhm) if np.isfinite(sinc_fwhm) else pump_fwhm


def build_jsa(p: SpectralParams, n: int = 256, span_fwhm: float = 4.0,
              phase_matching: bool = True) -> JsaGrid:
    """Sample pump envelope x phase matching x filters on an n x n grid.

    Each axis spans ``span_fwhm`` times its widest relevant FWHM (the
    filter, or the pump/phase-matching width when unfiltered). With
    ``phase_matching=False`` the sinc factor is replaced by 1.
    """
    if n < 64:
        raise InvalidInputError(f"grid size {n} below the minimum of 64")
    if not span_fwhm > 0:
        raise InvalidInputError("span_fwhm must be > 0")
    pump = p.pump_fwhm_omega
    filt = p.filter_fwhm_omega
    sinc = p.sinc_fwhm_omega() if phase_matching else (math.inf, math.inf)
    axes = []
    for k in range(2):
        half = span_fwhm * _axis_width(filt[k], pump, sinc[k]) / 2
        axes.append(np.linspace(-half, half, n))
    ws, wi = axes
    d = (ws[1] - ws[0], wi[1] - wi[0])
    for k, label in enumerate(("signal", "idler")):
        for name, width in (("filter", filt[k]), ("phase-matching", sinc[k]), ("pump", pump)):
            if np.isfinite(width) and width / d[k] < 4:
                raise ResolutionError(
                    f"{label} axis step {d[k]:.3g} rad/fs leaves {width / d[k]:.2f} samples across "
                    f"the {name} FWHM (need >= 4); increase n or reduce span")
    S, I = np.meshgrid(ws, wi, indexing="ij")
    amp = np.exp(-2 * np.log(2) * (S + I) ** 2 / pump ** 2).astype(complex)
    if phase_matching:
        dk = (p.gv_inverse_pump * (S + I) - p.gv_inverse_signal * S - p.gv_inverse_idler * I)
        x = dk * p.crystal_length_mm / 2
        # np.sinc(t) = sin(pi t)/(pi t); the exp keeps the physical phase
        amp *= np.sinc(x / np.pi) * np.exp(1j * x)
    for k, grid in enumerate((S, I)):
        if np.isfinite(filt[k]):
            amp *= np.exp(-2 * np.log(2) * grid ** 2 / filt[k] ** 2)
    return JsaGrid.from_table(amp, ws, wi)


@dataclass(frozen=True)
class SchmidtResult:
    coefficients: np.ndarray
    schmidt_number: float
    purity: float


def schmidt(jsa: JsaGrid) -> SchmidtResult:
    """Schmidt coefficients c_k (sum c_k^2 = 1), purity sum c_k^4 and K = 1/purity."""
    table = jsa.amplitude * np.sqrt(jsa.d_omega_s * jsa.d_omega_i)
    try:
        sv = np.linalg.svd(table, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD of the JSA failed: {exc}") from exc
    c = sv / np.sqrt(np.sum(sv ** 2))
    purity = float(np.sum(c ** 4))
    return SchmidtResult(c, 1.0 / purity, purity)


DEFAULT_STAGE_UM = np.arange(-1500.0, 1500.0 + 1e-9, 10.0)


@dataclass(frozen=True)
class HomCurve:
    delay_fs: np.ndarray
    rate: np.ndarray
    normalized_rate: np.ndarray
    visibility: float
    visibility_error: float
    plateau: float
    mode: str

    @property
    def stage_um(self) -> np.ndarray:
        return delay_fs_to_stage_um(self.delay_fs)

    def to_tsv(self) -> str:
        lines = ["delay_fs\tstage_um\trate\tnormalized_rate"]
        fmt_rate = "{:d}" if self.mode == "sampled" else "{:.10f}"
        for t, x, r, nr in zip(self.delay_fs, self.stage_um, self.rate, self.normalized_rate):
            rate = fmt_rate.format(int(r)) if self.mode == "sampled" else fmt_rate.format(r)
            lines.append(f"{t:.4f}\t{x:.4f}\t{rate}\t{nr:.10f}")
        return "\n".join(lines) + "\n"


def _overlap_diagonals(rho_a, rho_b):
    """g_k = sum over j - l = k of rho_a[j, l] rho_b[l, j], for k = -(n-1)..n-1."""
    m = rho_a * rho_b.T
    n = m.shape[0]
    return np.arange(-(n - 1), n), np.array([np.trace(m, offset=-k) for k in range(-(n - 1), n)])


def hom_rate_exact(jsa_a: JsaGrid, jsa_b: JsaGrid, delays_fs) -> np.ndarray:
    """Normalized coincidence probability R(tau) = 1 - Re Tr[rho_a D rho_b D^-1]."""
    _check_same_axes(jsa_a, jsa_b)
    k, g = _overlap_diagonals(jsa_a.idler_state(), jsa_b.idler_state())
    tau = np.asarray(delays_fs, float)
    phase = np.exp(1j * np.outer(tau, k * jsa_a.d_omega_i))
    return 1.0 - (phase @ g).real


def _check_same_axes(a: JsaGrid, b: JsaGrid):
    if a.n != b.n or not (np.allclose(a.omega_i, b.omega_i, rtol=0, atol=1e-15)
                          and np.allclose(a.omega_s, b.omega_s, rtol=0, atol=1e-15)):
        raise InvalidInputError("HOM sources must share identical frequency grids")


def dip_model(tau, plateau, vis, center, width):
    return plateau * (1 - vis * np.exp(-((tau - center) / width) ** 2 / 2))


def fit_dip(delays_fs, counts, sigma=None, guess_width_fs: float = 300.0):
    """Gaussian-dip fit; returns (plateau, visibility, center, width) and their errors."""
    t = np.asarray(delays_fs, float)
    y = np.asarray(counts, float)
    if sigma is None:
        sigma = np.sqrt(np.maximum(y, 1.0))
    edge = max(1, len(y) // 10)
    plateau0 = float(np.mean(np.r_[y[:edge], y[-edge:]])) or 1.0
    vis0 = float(np.clip(1 - y.min() / plateau0, 0.01, 0.99))
    x0 = [plateau0, vis0, float(t[np.argmin(y)]), guess_width_fs]
    res = least_squares(lambda q: (dip_model(t, *q) - y) / sigma, x0, method="lm", xtol=1e-10)
    if not res.success:
        raise FitError("HOM dip fit failed to converge", residuals=res.fun)
    dof = max(len(y) - 4, 1)
    try:
        cov = np.linalg.inv(res.jac.T @ res.jac) * max(np.sum(res.fun ** 2) / dof, 1.0)
    except np.linalg.LinAlgError as exc:
        raise FitError("singular HOM fit Jacobian", residuals=res.fun) from exc
    return res.x, np.sqrt(np.diag(cov))


def hom_dip(jsa_a: JsaGrid, jsa_b: JsaGrid, delays_fs=None, mode: str = "exact",
            mean_fourfolds: float | None = None, seed: int | None = None) -> HomCurve:
    """HOM dip between the heralded idlers of two independent sources.

    ``exact`` returns probabilities normalized to the distinguishable
    plateau R = 1, so the visibility is ``1 - min R``. ``sampled`` draws
    Poisson counts with mean ``mean_fourfolds * R(tau)`` and takes the
    plateau and visibility from a Gaussian-dip fit.
    """
    if delays_fs is None:
        delays_fs = stage_um_to_delay_fs(DEFAULT_STAGE_UM)
    tau = np.asarray(delays_fs, float)
    if tau.ndim != 1 or tau.size == 0:
        raise InvalidInputError("delays must be a non-empty 1-D list")
    r = np.clip(hom_rate_exact(jsa_a, jsa_b, tau), 0.0, None)
    if mode == "exact":
        vis = float(np.clip(1.0 - r.min(), 0.0, 1.0))
        return HomCurve(tau, r, r, vis, 0.0, 1.0, "exact")
    if mode != "sampled":
        raise InvalidInputError(f"unknown mode {mode!r}")
    if mean_fourfolds is None or not mean_fourfolds > 0:
        raise InvalidInputError("sampled mode needs mean_fourfolds > 0")
    rng = derive_rng(seed, 7)
    counts = rng.poisson(mean_fourfolds * r)
    q, dq = fit_dip(tau, counts)
    plateau, vis = q[0], q[1]
    return HomCurve(tau, counts, counts / plateau, float(np.clip(vis, 0, 1)), float(dq[1]),
                    float(plateau), "sampled")


@dataclass(frozen=True)
class TimingJitter:
    total_fs: float
    pump_fs: float
    gvm_fs: float


def timing_jitter(p: SpectralParams) -> TimingJitter:
    """Linear (extent) combination: pump FWHM + |pump-idler GVM| * L."""
    gvm = abs(p.gv_inverse_pump - p.gv_inverse_idler) * p.crystal_length_mm
    return TimingJitter(p.pump_fwhm_duration_fs + gvm, p.pump_fwhm_duration_fs, gvm)
