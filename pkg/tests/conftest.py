from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from fraudsim import ingestion as ing
from fraudsim.config import bundled_path
from fraudsim.model import BankParams, GlobalParams

# lines collected by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def gp():
    return GlobalParams()


@pytest.fixture
def bp_means():
    """One bank sitting exactly at the reference cross-bank means."""
    return BankParams(alpha0=0.400, alpha1=16.81, alpha_c=-275.291, alpha_y=-1.587, alpha_q=0.052,
                      rho=0.70, beta0=0.20, c_star=0.5, gamma=-0.5, lam=0.0003, delta=0.2, sigma2_eta=0.012)


@pytest.fixture(scope="session")
def bundled():
    """The bundled synthetic data, loaded once."""
    rates = ing.load_rates(bundled_path("fx_rates.csv"))
    panel = ing.load_panel(bundled_path("panel.csv"), rates)
    macro = ing.load_macro(bundled_path("macro.csv"))
    text = ing.load_text_indicators(bundled_path("text_indicators.csv"))
    return {"rates": rates, "panel": panel, "macro": macro, "text": text,
            "drivers": ing.annual_drivers(panel, text)}


def toy_drivers(n_banks: int = 3, late_entrant: bool = True, seed: int = 0) -> pd.DataFrame:
    """Annual driver table for a few banks; the last one joins in 2009 if ``late_entrant``."""
    rng = np.random.default_rng(seed)
    rows = []
    for b in range(n_banks):
        years = range(2009, 2011) if late_entrant and b == n_banks - 1 else range(2006, 2011)
        epb = 10.0 + 10.0 * b
        for y in years:
            rows.append({"bank_code": f"B{b}", "year": y,
                         "income": 100.0 * (1 + b) * (1 + 0.02 * (y - 2006)),
                         "productivity": 3.0 + 0.5 * b + 0.1 * rng.normal(),
                         "emp_per_branch": epb * (1 + 0.01 * (y - 2006)),
                         "assets_r": 1000.0 * (1 + b), "m": 0.1 + 0.1 * b, "h": 1.0 + 0.2 * b})
    return pd.DataFrame(rows)


def simple_params(codes, **over) -> dict[str, BankParams]:
    """Bank parameters whose ramp interior is (roughly) the shock alone."""
    base = dict(alpha0=0.05, alpha1=1.0, alpha_c=-2.0, alpha_y=0.0, alpha_q=0.0, rho=0.7, beta0=0.2,
                c_star=0.5, gamma=-0.5, lam=0.0003, delta=0.2, sigma2_eta=0.0)
    base.update(over)
    return {c: BankParams(**base) for c in codes}


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    """The full command-line pipeline on the bundled data with default settings.

    Returns the output directory, the exit code of every stage and the wall
    time of calibration plus simulation.
    """
    import time

    from fraudsim.cli import main

    out = tmp_path_factory.mktemp("pipeline")
    codes, seconds = {}, {}
    for stage in ("ingest", "calibrate", "simulate", "validate", "report"):
        t0 = time.perf_counter()
        codes[stage] = main([stage, "--out-dir", str(out)])
        seconds[stage] = time.perf_counter() - t0
        if codes[stage] not in (0, 3):
            break
    return {"out": out, "codes": codes, "seconds": seconds}
