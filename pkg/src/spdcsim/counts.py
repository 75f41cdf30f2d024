"""Pulsed-source photon counting.

Pairs per pulse are Poissonian (or thermal). Every photon is detected
independently with its arm's total efficiency by a threshold
(click / no-click) detector. A coincidence is *true* when at
least one pair had both photons detected; otherwise it is accidental.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, replace
from typing import Callable, Literal, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidInputError
from .measure import derive_rng
from .source import SourceParams, build_state, model_fidelity, predicted_visibility

BLOCK_PULSES = 1 << 22
PairStatistics = Literal["poisson", "thermal"]


@dataclass(frozen=True)
class DetectionChain:
    coupling_efficiency: float
    filter_peak_transmission: float
    detector_efficiency: float
    rep_rate_hz: float = 76e6
    coincidence_window_s: float = 4.4e-9
    dark_count_rate_hz: float = 0.0
    idler_efficiency_scale: float = 1.0

    def __post_init__(self):
        for name in ("coupling_efficiency", "filter_peak_transmission", "detector_efficiency"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"{name}={v!r} outside [0, 1]")
        if not self.rep_rate_hz > 0 or not self.coincidence_window_s > 0:
            raise InvalidInputError("rep_rate_hz and coincidence_window_s must be > 0")
        if self.dark_count_rate_hz < 0:
            raise InvalidInputError("dark_count_rate_hz must be >= 0")
        if not 0.0 <= self.eta_idler <= 1.0:
            raise InvalidInputError("idler efficiency must lie in [0, 1]")

    @property
    def eta_signal(self) -> float:
        return self.coupling_efficiency * self.filter_peak_transmission * self.detector_efficiency

    @property
    def eta_idler(self) -> float:
        return self.eta_signal * self.idler_efficiency_scale

    @property
    def dark_probability(self) -> float:
        """Chance of a dark click inside one coincidence window."""
        return min(self.dark_count_rate_hz * self.coincidence_window_s, 1.0)

    @property
    def adjacent_pulses_in_window(self) -> bool:
        return self.coincidence_window_s >= 1.0 / self.rep_rate_hz


@dataclass(frozen=True)
class RateReport:
    singles_signal_hz: float
    singles_idler_hz: float
    coincidences_hz: float
    accidentals_hz: float
    coincidence_to_singles: float
    spectral_brightness: float | None = None
    n_pulses: int = 0
    coincidence_counts: int = 0
    accidental_counts: int = 0

    @property
    def accidental_fraction(self) -> float:
        return self.accidentals_hz / self.coincidences_hz if self.coincidences_hz > 0 else 0.0

    def to_text(self) -> str:
        buf = io.StringIO()
        for k in ("singles_signal_hz", "singles_idler_hz", "coincidences_hz", "accidentals_hz",
                  "coincidence_to_singles", "spectral_brightness", "n_pulses",
                  "coincidence_counts", "accidental_counts"):
            v = getattr(self, k)
            buf.write(f"{k}={'nan' if v is None else format(v, '.10g')}\n")
        return buf.getvalue()


def spectral_brightness(coincidences_hz: float, pump_mw: float, bandwidth_nm: float) -> float:
    """Coincidences per second, per mW of pump, per nm of filter bandwidth."""
    if not pump_mw > 0 or not bandwidth_nm > 0:
        raise InvalidInputError("pump power and bandwidth must be positive")
    if coincidences_hz < 0:
        raise InvalidInputError("coincidence rate must be >= 0")
    return coincidences_hz / (pump_mw * bandwidth_nm)


# ------------------------------------------------------------ closed forms

def _pgf(stats: PairStatistics, mu: float, x):
    """E[x^n] for the pair-number distribution."""
    if stats == "poisson":
        return np.exp(-mu * (1 - x))
    if stats == "thermal":
        return 1.0 / (1 + mu * (1 - x))
    raise InvalidInputError(f"unknown pair statistics {stats!r}")


def click_probabilities(mu: float, chain: DetectionChain, stats: PairStatistics = "poisson"):
    """Per-pulse probabilities (signal click, idler click, coincidence, true coincidence)."""
    es, ei, pd = chain.eta_signal, chain.eta_idler, chain.dark_probability
    if stats == "poisson":
        # pairs split into independent Poisson classes (both, signal only,
        # idler only detected); the product form avoids cancellation at small mu
        p_true = -np.expm1(-mu * es * ei)
        p_s = pd - (1 - pd) * np.expm1(-mu * es)
        p_i = pd - (1 - pd) * np.expm1(-mu * ei)
        s_only = pd - (1 - pd) * np.expm1(-mu * es * (1 - ei))
        i_only = pd - (1 - pd) * np.expm1(-mu * ei * (1 - es))
        p_acc = (1 - p_true) * s_only * i_only
        return p_s, p_i, p_true + p_acc, p_true
    no_s = (1 - pd) * _pgf(stats, mu, 1 - es)
    no_i = (1 - pd) * _pgf(stats, mu, 1 - ei)
    no_both = (1 - pd) ** 2 * _pgf(stats, mu, (1 - es) * (1 - ei))
    p_c = 1 - no_s - no_i + no_both
    p_true = 1 - _pgf(stats, mu, 1 - es * ei)
    return 1 - no_s, 1 - no_i, p_c, p_true


def expected_rates(mu: float, chain: DetectionChain, stats: PairStatistics = "poisson",
                   pump_mw: float | None = None, bandwidth_nm: float | None = None) -> RateReport:
    ps, pi, pc, pt = click_probabilities(mu, chain, stats)
    r = chain.rep_rate_hz
    return _report(ps * r, pi * r, pc * r, (pc - pt) * r, pump_mw, bandwidth_nm)


def _report(s_hz, i_hz, c_hz, a_hz, pump_mw, bandwidth_nm, n=0, cc=0, ac=0):
    ratio = c_hz / np.sqrt(s_hz * i_hz) if s_hz > 0 and i_hz > 0 else 0.0
    bright = spectral_brightness(c_hz, pump_mw, bandwidth_nm) if pump_mw and bandwidth_nm else None
    return RateReport(float(s_hz), float(i_hz), float(c_hz), float(a_hz), float(min(ratio, 1.0)),
                      bright, int(n), int(cc), int(ac))


# ------------------------------------------------------------ Monte Carlo

def _truncated_sampler(stats: PairStatistics, mu: float):
    """Inverse-CDF table for the pair number conditioned on n >= 1.

    Returns (P(n >= 1), cdf, nmax); the first value is computed without
    cancellation so that tiny mu still emits pairs.
    """
    pmf = []
    if stats == "poisson":
        logp = -mu
        k = 0
        while True:
            pmf.append(np.exp(logp))
            k += 1
            logp += np.log(mu) - np.log(k)
            if k >= 2 and k > mu and np.exp(logp) < 1e-18:
                break
    else:
        q = mu / (1 + mu)
        k = 0
        while True:
            pmf.append((1 - q) * q**k)
            k += 1
            if k >= 2 and pmf[-1] < 1e-18 and k > mu:
                break
    pmf = np.array(pmf)
    nmax = len(pmf) - 1
    cdf = np.cumsum(pmf[1:])
    cdf = cdf / cdf[-1] if cdf[-1] > 0 else np.ones_like(cdf)
    p_any = -np.expm1(-mu) if stats == "poisson" else mu / (1 + mu)
    return p_any, cdf, nmax


def _simulate_block(rng, n, mu, chain, stats, include_adjacent):
    es, ei, pd = chain.eta_signal, chain.eta_idler, chain.dark_probability
    k = 0
    if mu > 0:
        p_any, cdf, _ = _truncated_sampler(stats, mu)
        k = rng.binomial(n, p_any)
    pairs = np.searchsorted(cdf, rng.random(k), side="right") + 1 if k else np.zeros(0, int)
    probs = [es * ei, es * (1 - ei), (1 - es) * ei, (1 - es) * (1 - ei)]
    cat = rng.multinomial(pairs, probs) if k else np.zeros((0, 4), int)
    both = cat[:, 0]
    s_click = (both + cat[:, 1]) > 0
    i_click = (both + cat[:, 2]) > 0
    if pd > 0:
        s_click |= rng.random(k) < pd
        i_click |= rng.random(k) < pd
    true_c = both > 0
    coinc = s_click & i_click

    # pulses without pairs: only dark clicks
    dark = rng.multinomial(n - k, [pd * pd, pd * (1 - pd), (1 - pd) * pd, (1 - pd) ** 2]) \
        if pd > 0 else np.zeros(4, int)
    singles_s = int(s_click.sum()) + int(dark[0] + dark[1])
    singles_i = int(i_click.sum()) + int(dark[0] + dark[2])
    n_coinc = int(coinc.sum()) + int(dark[0])
    n_true = int(true_c.sum())

    n_adj = 0
    if include_adjacent and chain.adjacent_pulses_in_window:
        pos = np.sort(rng.choice(n, size=k, replace=False)) if k else np.zeros(0, int)
        s_all = np.zeros(n, bool)
        i_all = np.zeros(n, bool)
        s_all[pos] = s_click
        i_all[pos] = i_click
        if pd > 0:
            empty = np.ones(n, bool)
            empty[pos] = False
            m = int(empty.sum())
            s_all[empty] = rng.random(m) < pd
            i_all[empty] = rng.random(m) < pd
        n_adj = int(np.sum(s_all[:-1] & i_all[1:]) + np.sum(i_all[:-1] & s_all[1:]))
    return singles_s, singles_i, n_coinc + n_adj, n_true


def simulate_rates(mu: float, chain: DetectionChain, n_pulses: int, seed,
                   stats: PairStatistics = "poisson", include_adjacent: bool = False,
                   pump_mw: float | None = None, bandwidth_nm: float | None = None,
                   workers: int = 1) -> RateReport:
    """Monte Carlo rates over ``n_pulses`` pump pulses.

    Pulses are processed in fixed blocks of ``BLOCK_PULSES`` with seeds
    derived from (seed, block), so the result does not depend on
    ``workers``. Adjacent-pulse accidentals are only possible when the
    coincidence window reaches the next pulse.
    """
    if mu < 0:
        raise InvalidInputError("mu must be >= 0")
    if n_pulses < 1:
        raise InvalidInputError("n_pulses must be >= 1")
    sizes = [BLOCK_PULSES] * (n_pulses // BLOCK_PULSES)
    if n_pulses % BLOCK_PULSES:
        sizes.append(n_pulses % BLOCK_PULSES)

    def run(i):
        return _simulate_block(derive_rng(seed, i), sizes[i], mu, chain, stats, include_adjacent)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, range(len(sizes))))
    else:
        parts = [run(i) for i in range(len(sizes))]
    s, i_, c, t = (sum(p[j] for p in parts) for j in range(4))
    scale = chain.rep_rate_hz / n_pulses
    return _report(s * scale, i_ * scale, c * scale, (c - t) * scale, pump_mw, bandwidth_nm,
                   n_pulses, c, c - t)


# ------------------------------------------------------------ calibration

def calibrate_efficiency(coincidences_hz: float, coincidence_to_singles: float,
                         rep_rate_hz: float = 76e6, stats: PairStatistics = "poisson"):
    """Symmetric per-arm efficiency and mean pair number that reproduce a
    measured coincidence rate and coincidence-to-singles ratio (no darks).

    Returns ``(mu, eta)``.
    """
    target = coincidences_hz / rep_rate_hz
    if not 0 < target < 1 or not 0 < coincidence_to_singles < 1:
        raise InvalidInputError("targets out of range")

    def chain_for(eta):
        return DetectionChain(eta, 1.0, 1.0, rep_rate_hz)

    def mu_for(eta):
        c = chain_for(eta)
        return brentq(lambda m: click_probabilities(m, c, stats)[2] - target, 1e-12, 1e3, xtol=1e-15)

    def ratio_err(eta):
        c = chain_for(eta)
        ps, _, pc, _ = click_probabilities(mu_for(eta), c, stats)
        return pc / ps - coincidence_to_singles

    # at small mu the ratio is ~eta, so the root sits near the target ratio
    lo, hi = 0.5 * coincidence_to_singles, min(1 - 1e-9, 0.5 + coincidence_to_singles)
    eta = brentq(ratio_err, lo, hi, xtol=1e-14)
    return mu_for(eta), eta


def calibrated_chain(coincidences_hz: float, coincidence_to_singles: float, pump_mw: float,
                     filter_peak_transmission: float = 0.75, detector_efficiency: float = 0.5,
                     rep_rate_hz: float = 76e6, coincidence_window_s: float = 4.4e-9,
                     stats: PairStatistics = "poisson"):
    """(mu_per_mw, DetectionChain) with the coupling efficiency absorbing the rest."""
    mu, eta = calibrate_efficiency(coincidences_hz, coincidence_to_singles, rep_rate_hz, stats)
    coupling = eta / (filter_peak_transmission * detector_efficiency)
    if coupling > 1:
        raise InvalidInputError("filter and detector efficiencies too low for the target ratio")
    chain = DetectionChain(coupling, filter_peak_transmission, detector_efficiency,
                           rep_rate_hz, coincidence_window_s)
    return mu / pump_mw, chain


# ------------------------------------------------------------ power scan

@dataclass(frozen=True)
class PowerPoint:
    power_mw: float
    mu: float
    accidental_fraction: float
    white_noise_w: float
    visibility: float
    fidelity: float


def derating_curve(table: Sequence[tuple[float, float]] | None) -> Callable[[float], float]:
    """Piecewise-linear multiplicative brightness derating vs pump power."""
    if not table:
        return lambda p: 1.0
    pts = np.array(sorted(table), float)
    return lambda p: float(np.interp(p, pts[:, 0], pts[:, 1]))


def accidental_fraction(mu: float, chain: DetectionChain, stats: PairStatistics = "poisson",
                        n_pulses: int | None = None, seed=None) -> float:
    """Fraction of coincidences not originating from a single pair.

    Closed form when ``n_pulses`` is None, otherwise Monte Carlo.
    """
    if mu == 0:
        return 0.0
    if n_pulses is None:
        _, _, pc, pt = click_probabilities(mu, chain, stats)
        return float((pc - pt) / pc) if pc > 0 else 0.0
    return simulate_rates(mu, chain, n_pulses, seed, stats).accidental_fraction


def visibility_vs_power(powers_mw: Sequence[float], base: SourceParams, chain: DetectionChain,
                        noise_scale: float = 1.0, n_pulses: int | None = None, seed=None,
                        stats: PairStatistics = "poisson", derating=None) -> list[PowerPoint]:
    """Diagonal-basis visibility and Bell fidelity vs pump power.

    The mean pair number scales linearly with power; accidental coincidences
    carry no polarization correlation and enter the state as white noise
    ``w = w0 + noise_scale * accidental_fraction``.
    """
    derate = derating if callable(derating) else derating_curve(derating)
    out = []
    for k, p in enumerate(powers_mw):
        if not p > 0:
            raise InvalidInputError("powers must be positive")
        mu = base.mu_per_mw * p * derate(p)
        a = accidental_fraction(mu, chain, stats, n_pulses, None if seed is None else (seed, k))
        w = min(base.white_noise_w + noise_scale * a, 1.0)
        sp = replace(base, pump_power_mw=p, white_noise_w=w)
        out.append(PowerPoint(float(p), mu, a, w, predicted_visibility(sp, "DIAG"), model_fidelity(sp)))
    return out


def calibrate_power_noise(powers_mw: Sequence[float], fidelities: Sequence[float],
                          base: SourceParams, chain: DetectionChain,
                          stats: PairStatistics = "poisson"):
    """Fit the intrinsic state and the higher-order noise scale to two
    (power, fidelity) points.

    The intrinsic state is the isotropic split with fidelity F0, and
    F(P) = (1 - k a(P)) F0 + k a(P)/4 with a(P) the closed-form accidental
    fraction. Returns ``(intrinsic SourceParams, k)``.
    """
    from .source import isotropic_params_from_fidelity

    if len(powers_mw) != 2 or len(fidelities) != 2:
        raise InvalidInputError("exactly two calibration points are required")
    a = np.array([accidental_fraction(base.mu_per_mw * p, chain, stats) for p in powers_mw])
    f = np.asarray(fidelities, float)
    # F = F0 - k a (F0 - 1/4): linear in (F0, k F0 - k/4) -> solve in (F0, c = k (F0 - 1/4))
    M = np.array([[1.0, -a[0]], [1.0, -a[1]]])
    f0, c = np.linalg.solve(M, f)
    k = c / (f0 - 0.25)
    if not (0.25 < f0 <= 1.0) or k < 0:
        raise InvalidInputError(f"calibration points give unphysical F0={f0:.4g}, scale={k:.4g}")
    intrinsic = isotropic_params_from_fidelity(f0, replace(base, white_noise_w=0.0))
    return intrinsic, float(k)


def state_at_power(base: SourceParams, chain: DetectionChain, power_mw: float,
                   noise_scale: float, stats: PairStatistics = "poisson"):
    pt = visibility_vs_power([power_mw], base, chain, noise_scale, stats=stats)[0]
    return build_state(replace(base, pump_power_mw=power_mw, white_noise_w=pt.white_noise_w))
