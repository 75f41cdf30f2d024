"""Two-qubit polarization tomography.

Linear inversion plus maximum-likelihood reconstruction with a
Cholesky-type parametrization that keeps every estimate physical. The
fidelity error bar comes from Poisson-resampling Monte Carlo.
"""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import ConfigError, ConvergenceError, InvalidInputError
from .measure import (ArmSetting, CountRecord, MeasSetting, analyzer_ket, derive_rng,
                      expected_counts, simulate_counts)
from .polcore import Ket4, PolState, fidelity, format_matrix

ANALYZERS = {
    "H": ArmSetting(0.0),
    "V": ArmSetting(90.0),
    "D": ArmSetting(45.0),
    "L": ArmSetting(0.0, qwp_deg=45.0),  # transmits (|H> + i|V>)/sqrt(2)
}

_PAULI = [np.eye(2), np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.diag([1, -1])]
_GAMMA = np.array([np.kron(a, b) for a in _PAULI for b in _PAULI])

MAX_CONDITION = 100.0


@dataclass(frozen=True)
class TomoSettings:
    labels: tuple
    settings: tuple

    def __post_init__(self):
        if len(self.settings) != 16 or len(self.labels) != 16:
            raise ConfigError("tomography needs exactly 16 settings")
        cond = np.linalg.cond(self.design_matrix())
        if not np.isfinite(cond) or cond > 1e12:
            raise ConfigError(f"tomography settings are not informationally complete (cond={cond:.3g})")

    def kets(self) -> np.ndarray:
        return np.array([np.kron(analyzer_ket(s.signal), analyzer_ket(s.idler)) for s in self.settings])

    def design_matrix(self) -> np.ndarray:
        """Real 16x16 map from Pauli coefficients r (rho = sum r_m G_m / 4) to probabilities."""
        k = self.kets()
        return np.real(np.einsum("vi,mij,vj->vm", k.conj(), _GAMMA, k)) / 4

    def condition_number(self) -> float:
        return float(np.linalg.cond(self.design_matrix()))

    def index(self, label: str) -> int:
        return self.labels.index(label)


def settings_from_labels(labels: Sequence[str]) -> TomoSettings:
    """Build settings from two-letter analyzer labels such as ``"HV"`` or ``"DL"``."""
    out = []
    for lab in labels:
        if len(lab) != 2 or lab[0] not in ANALYZERS or lab[1] not in ANALYZERS:
            raise ConfigError(f"bad tomography setting label {lab!r}")
        out.append(MeasSetting(ANALYZERS[lab[0]], ANALYZERS[lab[1]]))
    return TomoSettings(tuple(labels), tuple(out))


def canonical_settings() -> TomoSettings:
    """{H,V,D,L} x {H,V,D,L}, signal index outermost; the first entry is HH."""
    return settings_from_labels([a + b for a, b in itertools.product("HVDL", repeat=2)])


def simulate_tomography_counts(rho: PolState, settings: TomoSettings, rate_hz: float,
                               duration_s: float, seed=None, exact: bool = False) -> list[CountRecord]:
    """Counts for every setting; setting ``v`` draws from ``derive_rng(seed, v)``."""
    if exact:
        return [expected_counts(rho, s, rate_hz, duration_s) for s in settings.settings]
    return [simulate_counts(rho, s, rate_hz, duration_s, rng=derive_rng(seed, v))
            for v, s in enumerate(settings.settings)]


def _arrays(counts: Sequence[CountRecord], settings: TomoSettings):
    if len(counts) != 16:
        raise InvalidInputError(f"expected 16 count records, got {len(counts)}")
    for i, (rec, s) in enumerate(zip(counts, settings.settings)):
        if rec.setting != s:
            raise InvalidInputError(f"count record {i} does not match setting {settings.labels[i]}")
    n = np.array([r.counts for r in counts], float)
    d = np.array([r.duration_s for r in counts], float)
    if n.sum() <= 0:
        raise InvalidInputError("total counts must be positive")
    return n, d


def linear_reconstruct(counts: Sequence[CountRecord], settings: TomoSettings) -> np.ndarray:
    """Invert the probability map on count rates.

    Returns a Hermitian, unit-trace matrix that may have negative
    eigenvalues; it is deliberately not a PolState.
    """
    n, d = _arrays(counts, settings)
    A = settings.design_matrix()
    try:
        r = np.linalg.solve(A, n / d)
    except np.linalg.LinAlgError:
        raise ConfigError("tomography design matrix is singular") from None
    m = np.einsum("m,mij->ij", r, _GAMMA) / 4
    m = 0.5 * (m + m.conj().T)
    return m / np.trace(m).real


# ---------------------------------------------------------------- MLE

_LOWER = np.tril_indices(4, -1)


def t_to_matrix(t: np.ndarray) -> np.ndarray:
    """16 reals -> lower-triangular T (4 real diagonal, 6 complex below)."""
    T = np.zeros((4, 4), complex)
    T[np.diag_indices(4)] = t[:4]
    T[_LOWER] = t[4:10] + 1j * t[10:16]
    return T


def matrix_to_t(T: np.ndarray) -> np.ndarray:
    return np.concatenate([np.real(np.diag(T)), np.real(T[_LOWER]), np.imag(T[_LOWER])])


def state_from_t(t: np.ndarray) -> np.ndarray:
    T = t_to_matrix(t)
    m = T.conj().T @ T
    return m / np.trace(m).real


def t_from_state(m: np.ndarray) -> np.ndarray:
    """Lower-triangular T with T^dagger T = m, for positive definite m."""
    J = np.eye(4)[::-1]
    L = np.linalg.cholesky(J @ m @ J)
    return matrix_to_t(J @ L.conj().T @ J)


@dataclass(frozen=True)
class MleOptions:
    likelihood: Literal["gaussian", "poisson"] = "gaussian"
    gtol: float = 1e-8
    xtol: float = 1e-10
    max_iter: int = 5000
    eigen_floor: float = 1e-6
    p_floor: float = 1e-12
    analytic_gradient: bool = True


class Likelihood:
    """Negative log-likelihood of the counts as a function of the T parameters.

    Expected counts are ``d_v <psi_v|T^dagger T|psi_v>``: the trace of
    T^dagger T carries the unknown coincidence rate, so the exposure of
    setting v is its duration times that rate.
    """

    def __init__(self, counts, durations, kets, opts: MleOptions = MleOptions()):
        self.n = np.asarray(counts, float)
        self.d = np.asarray(durations, float)
        self.kets = np.asarray(kets)
        self.opts = opts

    def _ta(self, t):
        # rows are T psi_v, so <psi_v|T^dagger T|psi_v> = |T psi_v|^2
        return self.kets @ t_to_matrix(t).T

    def expected(self, t):
        return self.d * np.sum(np.abs(self._ta(t)) ** 2, axis=1)

    def value(self, t) -> float:
        ta = self._ta(t)
        e = np.maximum(self.d * np.sum(np.abs(ta) ** 2, axis=1), self.opts.p_floor)
        n = self.n
        if self.opts.likelihood == "gaussian":
            return float(np.sum((e - n) ** 2 / (2 * e)))
        nz = n > 0
        return float(np.sum(e) - np.sum(n[nz] * np.log(e[nz])) + np.sum(n[nz] * np.log(n[nz]) - n[nz]))

    def gradient(self, t) -> np.ndarray:
        ta = self._ta(t)
        raw = self.d * np.sum(np.abs(ta) ** 2, axis=1)
        e = np.maximum(raw, self.opts.p_floor)
        n = self.n
        if self.opts.likelihood == "gaussian":
            dl = 0.5 - n**2 / (2 * e**2)
        else:
            dl = 1.0 - n / e
        dl = np.where(raw >= self.opts.p_floor, dl, 0.0)
        # d e_v / d T_jk = 2 d_v conj((T a)_j) a_k  (Wirtinger, real/imag parts below)
        G = np.einsum("v,vj,vk->jk", 2 * dl * self.d, ta.conj(), self.kets)
        grad_re, grad_im = np.real(G), -np.imag(G)
        return np.concatenate([np.diag(grad_re), grad_re[_LOWER], grad_im[_LOWER]])

    def numerical_gradient(self, t, step: float = 1e-6) -> np.ndarray:
        g = np.empty_like(t, dtype=float)
        for i in range(len(t)):
            tp, tm = t.copy(), t.copy()
            tp[i] += step
            tm[i] -= step
            g[i] = (self.value(tp) - self.value(tm)) / (2 * step)
        return g


@dataclass
class MleFit:
    state: PolState
    likelihood: float
    initial_likelihood: float
    n_iter: int
    trace: list = field(repr=False, default_factory=list)


def _initial_t(counts, settings, opts):
    n, d = _arrays(counts, settings)
    lin = linear_reconstruct(counts, settings)
    w, v = np.linalg.eigh(lin)
    w = np.maximum(w, opts.eigen_floor)
    rho0 = (v * (w / w.sum())) @ v.conj().T
    # coincidence-rate scale: least squares of rates against rho0 probabilities
    p0 = np.real(np.einsum("vi,ij,vj->v", settings.kets().conj(), rho0, settings.kets()))
    scale = float(np.sum(n * p0 * d) / np.sum((p0 * d) ** 2))
    return t_from_state(0.5 * (rho0 + rho0.conj().T) * max(scale, 1e-300))


def mle_fit(counts: Sequence[CountRecord], settings: TomoSettings,
            opts: MleOptions = MleOptions()) -> MleFit:
    n, d = _arrays(counts, settings)
    lik = Likelihood(n, d, settings.kets(), opts)
    t0 = _initial_t(counts, settings, opts)
    l0 = lik.value(t0)
    trace = [l0]

    # Work in units where T is O(1) so gtol is meaningful across count scales.
    scale = float(np.sqrt(max(np.sum(n / d), 1e-300)))

    def f(u):
        return lik.value(u * scale)

    def g(u):
        t = u * scale
        return (lik.gradient(t) if opts.analytic_gradient else lik.numerical_gradient(t)) * scale

    res = minimize(f, t0 / scale, jac=g, method="BFGS",
                   callback=lambda u: trace.append(f(u)),
                   options={"gtol": opts.gtol, "xrtol": opts.xtol, "maxiter": opts.max_iter})
    t_best = res.x * scale
    l_best = float(res.fun)
    if l_best > l0:
        t_best, l_best = t0, l0
    state = PolState.from_matrix(state_from_t(t_best))
    if res.status == 1:
        raise ConvergenceError(f"MLE hit {opts.max_iter} iterations without converging",
                               best_state=state, trace=trace)
    if not np.isfinite(l_best):
        raise ConvergenceError("MLE likelihood is not finite", best_state=state, trace=trace)
    return MleFit(state, l_best, l0, int(res.nit), trace)


def mle_reconstruct(counts: Sequence[CountRecord], settings: TomoSettings,
                    opts: MleOptions = MleOptions()) -> PolState:
    return mle_fit(counts, settings, opts).state


# ---------------------------------------------------------------- errors

def _mc_run(counts, settings, target, opts, seed, i):
    rng = derive_rng(seed, i)
    resampled = [CountRecord(r.setting, int(rng.poisson(r.counts)), r.duration_s) for r in counts]
    try:
        return fidelity(mle_reconstruct(resampled, settings, opts), target)
    except ConvergenceError:
        return None


def monte_carlo_errors(counts: Sequence[CountRecord], settings: TomoSettings, n_runs: int,
                       target: Ket4, seed, opts: MleOptions = MleOptions(),
                       workers: int = 1) -> tuple[float, float]:
    """Mean and sample standard deviation of the fidelity over Poisson resamplings."""
    if n_runs < 2:
        raise InvalidInputError("n_runs must be >= 2")
    args = [(counts, settings, target, opts, seed, i) for i in range(n_runs)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(lambda a: _mc_run(*a), args))
    else:
        results = [_mc_run(*a) for a in args]
    ok = np.array([r for r in results if r is not None])
    failed = n_runs - len(ok)
    if failed > 0.1 * n_runs or len(ok) < 2:
        raise ConvergenceError(f"{failed} of {n_runs} Monte Carlo reconstructions failed")
    return float(ok.mean()), float(ok.std(ddof=1))


@dataclass
class TomoResult:
    rho_linear: np.ndarray
    rho_mle: PolState
    fidelity: float
    fidelity_std: float
    mle_likelihood: float
    mc_runs: int
    failed_runs: int = 0

    def report(self) -> str:
        return format_matrix(self.rho_mle) + f"F={self.fidelity:.6f} +/- {self.fidelity_std:.6f}\n"


def run_tomography(counts: Sequence[CountRecord], settings: TomoSettings, target: Ket4,
                   n_runs: int, seed, opts: MleOptions = MleOptions(), workers: int = 1) -> TomoResult:
    fit = mle_fit(counts, settings, opts)
    _, std = monte_carlo_errors(counts, settings, n_runs, target, seed, opts, workers)
    return TomoResult(linear_reconstruct(counts, settings), fit.state, fidelity(fit.state, target),
                      std, fit.likelihood, n_runs)


# ---------------------------------------------------------------- I/O

def write_count_file(path, counts: Sequence[CountRecord], settings: TomoSettings) -> None:
    lines = []
    for lab, rec in zip(settings.labels, counts):
        c = rec.counts
        cs = str(int(c)) if float(c).is_integer() else repr(float(c))
        lines.append(f"{lab} {cs} {rec.duration_s!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_count_file(path, settings: TomoSettings | None = None):
    """Parse ``setting_id counts duration_s`` lines; returns (records, settings)."""
    labels, recs = [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ConfigError("expected 'setting_id counts duration_s'", line=lineno, source=path)
        lab, c, dur = parts
        try:
            cval = float(c)
            recs.append((lab, int(cval) if cval.is_integer() else cval, float(dur)))
        except ValueError:
            raise ConfigError(f"bad number in {raw!r}", line=lineno, source=path) from None
        labels.append(lab)
    if len(recs) != 16:
        raise ConfigError(f"count file must have 16 entries, found {len(recs)}", source=path)
    if settings is None:
        settings = settings_from_labels(labels)
    by_label = {lab: (c, dur) for lab, c, dur in recs}
    out = []
    for lab, s in zip(settings.labels, settings.settings):
        if lab not in by_label:
            raise ConfigError(f"setting {lab} missing from count file", source=path)
        c, dur = by_label[lab]
        try:
            out.append(CountRecord(s, c, dur))
        except InvalidInputError as exc:
            raise ConfigError(str(exc), source=path) from None
    return out, settings
