"""Polarization analysis: analyzer settings, coincidence statistics, fringe
fits and the CHSH value.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import FitError, InsufficientStatisticsError, InvalidInputError
from .polcore import PolState, Projector, expectation

DEFAULT_CHSH_ANGLES = (0.0, 45.0, 22.5, 67.5)


def _canon(angle):
    if angle is None:
        return None
    a = float(angle)
    if not np.isfinite(a):
        raise InvalidInputError(f"analyzer angle {angle!r} is not finite")
    a = a % 180.0
    return 0.0 if a == 180.0 else a


@dataclass(frozen=True)
class ArmSetting:
    """Polarizer at ``pol_deg``, optionally preceded by a quarter-wave plate."""

    pol_deg: float
    qwp_deg: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "pol_deg", _canon(self.pol_deg))
        object.__setattr__(self, "qwp_deg", _canon(self.qwp_deg))

    def orthogonal(self) -> "ArmSetting":
        return ArmSetting(self.pol_deg + 90.0, self.qwp_deg)


@dataclass(frozen=True)
class MeasSetting:
    signal: ArmSetting
    idler: ArmSetting

    @classmethod
    def polarizers(cls, signal_deg: float, idler_deg: float) -> "MeasSetting":
        return cls(ArmSetting(signal_deg), ArmSetting(idler_deg))


@dataclass(frozen=True)
class CountRecord:
    """Coincidences recorded at one setting.

    ``counts`` is an integer for sampled data; noiseless records carry the
    expected value as a float.
    """

    setting: MeasSetting
    counts: float
    duration_s: float

    def __post_init__(self):
        if not self.counts >= 0:
            raise InvalidInputError(f"counts must be >= 0, got {self.counts!r}")
        if not self.duration_s > 0:
            raise InvalidInputError(f"duration must be > 0, got {self.duration_s!r}")


def qwp_jones(angle_deg: float) -> np.ndarray:
    """Quarter-wave plate with its fast axis at ``angle_deg`` from horizontal."""
    t = np.deg2rad(angle_deg)
    c, s = np.cos(t), np.sin(t)
    rot = np.array([[c, s], [-s, c]])
    return rot.T @ np.diag([1, 1j]) @ rot


def analyzer_ket(arm: ArmSetting) -> np.ndarray:
    """Single-photon state transmitted with certainty by the analyzer."""
    t = np.deg2rad(arm.pol_deg)
    e = np.array([np.cos(t), np.sin(t)], dtype=complex)
    if arm.qwp_deg is not None:
        e = qwp_jones(arm.qwp_deg).conj().T @ e
    return e


def projector_from_setting(s: MeasSetting) -> Projector:
    k = np.kron(analyzer_ket(s.signal), analyzer_ket(s.idler))
    return Projector(np.outer(k, k.conj()))


def coincidence_probability(rho: PolState, s: MeasSetting) -> float:
    return expectation(rho, projector_from_setting(s))


def derive_rng(seed, *index) -> np.random.Generator:
    """Generator for sub-task ``index`` of a seeded computation.

    Depends only on (seed, index), never on evaluation order.
    """
    if seed is None:
        raise InvalidInputError("a seed is required for sampled computations")
    if isinstance(seed, np.random.SeedSequence):
        entropy = seed.entropy
    elif isinstance(seed, (int, np.integer)):
        entropy = int(seed)
    else:
        entropy = [int(x) for x in seed]
    if index:
        base = list(entropy) if isinstance(entropy, (list, tuple)) else [entropy]
        return np.random.default_rng(np.random.SeedSequence(base + [int(i) for i in index]))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def simulate_counts(rho: PolState, s: MeasSetting, rate_hz: float, duration_s: float,
                    seed=None, rng: np.random.Generator | None = None) -> CountRecord:
    """Poissonian coincidence counts with mean ``rate * duration * p``.

    ``rate_hz`` is the coincidence rate with the analyzers removed.
    """
    if rate_hz < 0:
        raise InvalidInputError("rate must be >= 0")
    if not duration_s > 0:
        raise InvalidInputError("duration must be > 0")
    mean = rate_hz * duration_s * coincidence_probability(rho, s)
    if rng is None:
        rng = derive_rng(seed)
    return CountRecord(s, int(rng.poisson(mean)), duration_s)


def expected_counts(rho: PolState, s: MeasSetting, rate_hz: float, duration_s: float) -> CountRecord:
    return CountRecord(s, rate_hz * duration_s * coincidence_probability(rho, s), duration_s)


# ---------------------------------------------------------------- fringes

@dataclass
class FringeFit:
    amplitude: float
    offset: float
    phase_deg: float
    visibility: float
    visibility_error: float
    covariance: np.ndarray = field(repr=False)


@dataclass
class FringeCurve:
    idler: ArmSetting
    angles_deg: np.ndarray
    counts: np.ndarray
    duration_s: float
    fit: FringeFit

    @property
    def visibility(self) -> float:
        return self.fit.visibility

    @property
    def visibility_error(self) -> float:
        return self.fit.visibility_error

    def fit_values(self) -> np.ndarray:
        return sin2_model(self.angles_deg, self.fit.amplitude, self.fit.phase_deg, self.fit.offset)

    def to_tsv(self) -> str:
        buf = io.StringIO()
        buf.write("angle_deg\tcounts\tfit_value\n")
        for a, c, f in zip(self.angles_deg, self.counts, self.fit_values()):
            cs = str(int(c)) if float(c).is_integer() else f"{c:.10g}"
            buf.write(f"{a:.10g}\t{cs}\t{f:.10g}\n")
        return buf.getvalue()


def sin2_model(theta_deg, amplitude, phase_deg, offset):
    return amplitude * np.sin(np.deg2rad(np.asarray(theta_deg) - phase_deg)) ** 2 + offset


def fit_fringe(angles_deg, counts, sigma=None, max_iter: int = 200) -> FringeFit:
    """Weighted least-squares fit of ``a sin^2(theta - theta0) + b``.

    Started from the discrete extrema. ``sigma`` defaults to Poisson errors
    ``sqrt(max(counts, 1))``; the covariance is taken as absolute.
    """
    x = np.asarray(angles_deg, float)
    y = np.asarray(counts, float)
    if sigma is None:
        sigma = np.sqrt(np.maximum(y, 1.0))
    sigma = np.asarray(sigma, float)

    i_min, i_max = int(np.argmin(y)), int(np.argmax(y))
    p0 = np.array([y[i_max] - y[i_min], x[i_min], y[i_min]])
    if p0[0] <= 0:
        p0[0] = max(abs(y).max(), 1.0)

    def resid(p):
        return (sin2_model(x, p[0], p[1], p[2]) - y) / sigma

    res = least_squares(resid, p0, method="lm", xtol=1e-10, ftol=1e-15, gtol=1e-15,
                        max_nfev=max_iter * (len(p0) + 1))
    if res.status <= 0 or not np.all(np.isfinite(res.x)):
        raise FitError(f"sin^2 fit did not converge: {res.message}", residuals=res.fun)

    a, th, b = res.x
    jac = res.jac
    try:
        cov = np.linalg.inv(jac.T @ jac)
    except np.linalg.LinAlgError:
        raise FitError("singular fit Jacobian", residuals=res.fun) from None
    if a < 0:
        # same curve: -a sin^2(t) + b == a' sin^2(t - 90) + b - |a|
        a, th, b = -a, th + 90.0, b + a
        t = np.array([[-1, 0, 0], [0, 1, 0], [1, 0, 1]])
        cov = t @ cov @ t.T
    th = th % 180.0

    denom = a + 2 * b
    vis = a / denom if denom > 0 else 1.0
    grad = np.array([2 * b / denom**2, 0.0, -2 * a / denom**2]) if denom > 0 else np.zeros(3)
    err = float(np.sqrt(max(grad @ cov @ grad, 0.0)))
    return FringeFit(float(a), float(b), float(th), float(min(max(vis, 0.0), 1.0)), err, cov)


def fringe_scan(rho: PolState, idler: ArmSetting, signal_angles_deg: Sequence[float],
                rate_hz: float, duration_s: float, seed=None, exact: bool = False) -> FringeCurve:
    """Scan the signal polarizer with the idler analyzer fixed.

    ``exact=True`` fits the expected counts themselves (the infinite-duration
    limit); the reported error is then the Poisson error a real run of this
    length would carry.
    """
    angles = np.asarray(signal_angles_deg, float)
    if angles.size < 8:
        raise InvalidInputError("a fringe scan needs at least 8 angles")
    if np.ptp(angles) < 180.0 - 1e-9:
        raise InvalidInputError("fringe angles must span at least 180 degrees")
    settings = [MeasSetting(ArmSetting(a, None), idler) for a in angles]
    means = np.array([rate_hz * duration_s * coincidence_probability(rho, s) for s in settings])
    if exact:
        counts = means
        sigma = np.sqrt(np.maximum(means, 1e-300)) if rate_hz * duration_s > 0 else np.ones_like(means)
        sigma = np.maximum(sigma, 1e-12 * max(sigma.max(), 1.0))
    else:
        counts = np.array([derive_rng(seed, i).poisson(m) for i, m in enumerate(means)])
        sigma = None
    fit = fit_fringe(angles, counts, sigma=sigma)
    return FringeCurve(idler, angles, counts, duration_s, fit)


# ---------------------------------------------------------------- CHSH

@dataclass
class ChshResult:
    S: float
    S_error: float
    correlations: np.ndarray
    records: list

    def to_tsv(self) -> str:
        buf = io.StringIO()
        buf.write("signal_deg\tidler_deg\tcounts\n")
        for r in self.records:
            c = r.counts
            cs = str(int(c)) if float(c).is_integer() else f"{c:.10g}"
            buf.write(f"{r.setting.signal.pol_deg:.10g}\t{r.setting.idler.pol_deg:.10g}\t{cs}\n")
        buf.write(f"# S\t{self.S:.10g}\n# S_error\t{self.S_error:.10g}\n")
        return buf.getvalue()


def correlation(c11, c00, c10, c01):
    """Correlation E and its Poisson standard error from four coincidence values."""
    total = c11 + c00 + c10 + c01
    if total <= 0:
        raise InsufficientStatisticsError("no coincidences recorded for this analyzer pair")
    e = (c11 + c00 - c10 - c01) / total
    var = sum(c * (s - e) ** 2 for c, s in ((c11, 1), (c00, 1), (c10, -1), (c01, -1))) / total**2
    return e, var


def chsh(rho: PolState, angles=DEFAULT_CHSH_ANGLES, mode: str = "exact",
         rate_hz: float | None = None, duration_s: float | None = None, seed=None) -> ChshResult:
    """CHSH value from 16 polarizer settings.

    ``angles`` = (a, a', b, b') for signal (a) and idler (b). The reported
    S is -[E(a,b) - E(a,b') + E(a',b) + E(a',b')], which is +2*sqrt(2)
    for psi- at (0, 45, 22.5, 67.5).
    """
    a, a2, b, b2 = (float(x) for x in angles)
    pairs = [(a, b), (a, b2), (a2, b), (a2, b2)]
    signs = np.array([1.0, -1.0, 1.0, 1.0])
    if mode == "sampled":
        if rate_hz is None or duration_s is None:
            raise InvalidInputError("sampled CHSH needs rate_hz and duration_s")
    elif mode != "exact":
        raise InvalidInputError(f"unknown mode {mode!r}")

    records = []
    corr = np.empty(4)
    var_total = 0.0
    k = 0
    for j, (ta, tb) in enumerate(pairs):
        vals = {}
        for da, db, key in ((0, 0, "11"), (90, 90, "00"), (0, 90, "10"), (90, 0, "01")):
            s = MeasSetting.polarizers(ta + da, tb + db)
            if mode == "exact":
                p = coincidence_probability(rho, s)
                rec = CountRecord(s, p, 1.0) if rate_hz is None else \
                    CountRecord(s, rate_hz * (duration_s or 1.0) * p, duration_s or 1.0)
            else:
                rec = simulate_counts(rho, s, rate_hz, duration_s, rng=derive_rng(seed, k))
            k += 1
            records.append(rec)
            vals[key] = rec.counts
        e, var = correlation(vals["11"], vals["00"], vals["10"], vals["01"])
        corr[j] = e
        var_total += var
    S = -float(signs @ corr)
    err = 0.0 if mode == "exact" else float(np.sqrt(var_total))
    return ChshResult(S, err, corr, records)
