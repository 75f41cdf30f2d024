import numpy as np
import pytest
from hypothesis import strategies as st

from spdcsim.optics import builtin_dispersion


def random_state(seed: int, rank: int = 4) -> np.ndarray:
    """Random density matrix of the given rank (Ginibre construction)."""
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(4, rank)) + 1j * rng.normal(size=(4, rank))
    m = g @ g.conj().T
    return m / np.trace(m).real


def random_unitary(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


seeds = st.integers(0, 2**32 - 1)
unit = st.floats(0.0, 1.0, allow_nan=False)


@pytest.fixture(scope="session")
def ktp():
    return builtin_dispersion("ktp_kato2002")


@pytest.fixture(scope="session")
def calcite():
    return builtin_dispersion("calcite_ghosh1999")


# ---------------------------------------------------------------- acceptance report

import functools
import time

ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}
SUITE_BUDGET_S = 600.0
_SESSION_START = time.monotonic()


def criterion(number: int, title: str):
    """Record the outcome of an acceptance test for the end-of-run report."""
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                ACCEPTANCE[number] = (False, title, f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
                raise
            ACCEPTANCE[number] = (True, title, detail or "")
        return run
    return wrap


def pytest_sessionfinish(session, exitstatus):
    if 9 in ACCEPTANCE and ACCEPTANCE[9][0]:
        elapsed = time.monotonic() - _SESSION_START
        ok = elapsed < SUITE_BUDGET_S
        ACCEPTANCE[9] = (ok, ACCEPTANCE[9][1], f"{ACCEPTANCE[9][2]}; session {elapsed:.0f} s "
                         f"(budget {SUITE_BUDGET_S:.0f} s)")
        if not ok:
            session.exitstatus = 1


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {number}. {title}: {detail}")
