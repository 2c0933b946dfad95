"""Parameter calibration.

Two layers.  The shrinkage layer spreads a handful of cross-bank mean
parameters over the banks in proportion (or inverse proportion) to
observable risk indicators.  The search layer then tunes the mean loss
parameters so that simulated aggregates hit consortium-level targets.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd
import tomli
import tomli_w
from scipy.optimize import minimize

from fraudsim.model import RECORDING_THRESHOLD_EUR, BankParams, GlobalParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MeanParams:
    """Cross-bank means fed to the shrinkage rules (reference calibration)."""

    alpha0: float = 0.400
    alpha1: float = 16.810
    alpha_c: float = -275.291
    alpha_y: float = -1.587
    alpha_q: float = 0.052
    rho: float = 0.70
    beta0: float = 0.20
    c_star: float = 0.5
    gamma: float = -0.5
    delta: float = 0.2
    sigma2_eta: float = 0.012
    l_min: float = RECORDING_THRESHOLD_EUR


@dataclass(frozen=True)
class RiskIndicator:
    """Bank means of an indicator over active years plus the pooled mean."""

    name: str
    banks: tuple[str, ...]
    bank_means: np.ndarray
    overall_mean: float

    @classmethod
    def from_annual(cls, annual: pd.DataFrame, column: str) -> "RiskIndicator":
        if annual[column].isna().any():
            bad = annual.loc[annual[column].isna(), ["bank_code", "year"]].to_records(index=False)
            raise ValueError(f"missing {column} for {list(map(tuple, bad))}")
        grp = annual.groupby("bank_code", sort=True)[column].mean()
        return cls(column, tuple(grp.index), grp.to_numpy(dtype=float), float(annual[column].mean()))


def shrink_direct(alpha_bar: float, ind: RiskIndicator) -> np.ndarray:
    if ind.overall_mean == 0:
        raise ZeroDivisionError(f"overall mean of {ind.name} is zero")
    return ind.bank_means / ind.overall_mean * alpha_bar


def shrink_inverse(alpha_bar: float, ind: RiskIndicator) -> np.ndarray:
    if np.any(ind.bank_means == 0):
        raise ZeroDivisionError(f"a bank mean of {ind.name} is zero")
    return ind.overall_mean / ind.bank_means * alpha_bar


def rescale_bounded(raw, lo: float, hi: float) -> np.ndarray:
    """Affine map of ``raw`` onto [lo, hi] (min -> lo, max -> hi).

    All-equal inputs carry no ranking information and map to the midpoint.
    """
    raw = np.asarray(raw, dtype=float)
    if not lo < hi:
        raise ValueError(f"need lo < hi, got {lo}, {hi}")
    rmin, rmax = raw.min(), raw.max()
    if rmax == rmin:
        return np.full(raw.shape, (lo + hi) / 2.0)
    out = np.clip(lo + (hi - lo) / (rmax - rmin) * (raw - rmin), lo, hi)
    # pin the endpoints against rounding
    out[raw == rmin] = lo
    out[raw == rmax] = hi
    return out


def half_life_speed(half_life_days: float) -> float:
    """Adjustment speed that absorbs half of a level shift in ``half_life_days`` steps."""
    if half_life_days < 1:
        raise ValueError("half-life must be at least one day")
    return 1.0 - 0.5 ** (1.0 / half_life_days)


def build_bank_params(annual: pd.DataFrame, gp: GlobalParams, means: MeanParams = MeanParams(),
                      sigma2_band: tuple[float, float] = (0.25, 4.0)) -> dict[str, BankParams]:
    """Idiosyncratic parameters for every bank in the annual driver table.

    Employees per branch drives the loss-equation terms, the shock
    persistence and the shock variance; risk-management awareness ``m``
    drives the long-run control level and the control sensitivity;
    human-resource awareness ``h`` drives the quality sensitivity; retail
    assets drive the measurement-error variance.
    """
    epb = RiskIndicator.from_annual(annual, "emp_per_branch")
    m = RiskIndicator.from_annual(annual, "m")
    h = RiskIndicator.from_annual(annual, "h")
    size = RiskIndicator.from_annual(annual, "assets_r")

    alpha0 = shrink_direct(means.alpha0, epb)
    alpha1 = shrink_direct(means.alpha1, epb)
    alpha_y = shrink_direct(means.alpha_y, epb)
    beta0 = shrink_direct(means.beta0, epb)
    alpha_c = shrink_inverse(means.alpha_c, epb)
    alpha_q = shrink_inverse(means.alpha_q, epb)
    rho = rescale_bounded(shrink_direct(means.rho, epb), gp.rho_min, gp.rho_max)
    c_star = rescale_bounded(shrink_direct(means.c_star, m), gp.c_min, gp.c_max)
    gamma = -np.abs(shrink_direct(abs(means.gamma), m))
    delta = shrink_inverse(abs(means.delta), h)
    lo, hi = sigma2_band
    sigma2 = rescale_bounded(shrink_direct(means.sigma2_eta, size), lo * means.sigma2_eta, hi * means.sigma2_eta)

    out = {}
    for i, code in enumerate(epb.banks):
        bp = BankParams(
            alpha0=float(alpha0[i]), alpha1=float(alpha1[i]), alpha_c=float(alpha_c[i]),
            alpha_y=float(alpha_y[i]), alpha_q=float(alpha_q[i]), rho=float(rho[i]), beta0=float(beta0[i]),
            c_star=float(c_star[i]), gamma=float(gamma[i]), lam=gp.lambda_common, delta=float(delta[i]),
            sigma2_eta=float(sigma2[i]), l_min=means.l_min,
        )
        bp.validate(gp)
        out[code] = bp
    return out


# --- global search ----------------------------------------------------------

SEARCH_FIELDS = ("alpha0", "alpha1", "alpha_c", "alpha_y", "alpha_q", "beta0")
# which risk indicator rule spreads each searched mean over banks
_SEARCH_RULES = {"alpha0": "direct", "alpha1": "direct", "alpha_c": "inverse",
                 "alpha_y": "direct", "alpha_q": "inverse", "beta0": "direct"}


@dataclass(frozen=True)
class CalibrationTargets:
    target_event_count: float = 4357.0
    target_gross_loss: float = 880.0e6          # EUR
    min_fraction_banks_with_losses: float = 0.90

    def __post_init__(self) -> None:
        if self.target_event_count <= 0 or self.target_gross_loss <= 0:
            raise ValueError("calibration targets must be positive")
        if not 0.0 < self.min_fraction_banks_with_losses <= 1.0:
            raise ValueError("min_fraction_banks_with_losses must lie in (0, 1]")

    @property
    def mean_severity(self) -> float:
        return self.target_gross_loss / self.target_event_count


@dataclass(frozen=True)
class SearchSettings:
    n_histories: int = 16
    # calibration draws use history indices from here on, disjoint from the
    # histories a default simulation run produces
    history_offset: int = 1_000_000
    weights: tuple[float, float, float] = (1.0, 1.0, 10.0)   # severity, frequency, coverage
    max_iter: int = 500
    rel_tol: float = 1e-4
    initial_step: float = 0.10      # simplex edge in log-magnitude units
    warm_start: bool = True
    slope_spread: float = 1.0       # cross-bank spread allowed for the slope terms at warm start
    warm_rounds: int = 3


@dataclass(frozen=True)
class SimulatedMoments:
    events: float          # mean recorded events per history
    gross: float           # mean recorded gross loss per history, EUR
    covered: float         # mean fraction of banks with at least one recorded loss

    @property
    def mean_severity(self) -> float:
        return self.gross / self.events if self.events > 0 else 0.0


@dataclass
class CalibrationResult:
    gp: GlobalParams
    means: MeanParams
    bank_params: dict[str, BankParams]
    objective: float
    moments: SimulatedMoments | None
    trace: list[dict] = field(default_factory=list)
    converged: bool = True
    n_evaluations: int = 0
    searched: bool = True

    def __post_init__(self) -> None:
        for bp in self.bank_params.values():
            bp.validate(self.gp)


def objective_value(m: SimulatedMoments, targets: CalibrationTargets,
                    weights=(1.0, 1.0, 10.0)) -> float:
    w1, w2, w3 = weights
    sev_gap = (m.mean_severity - targets.mean_severity) / targets.mean_severity
    freq_gap = (m.events - targets.target_event_count) / targets.target_event_count
    # penalise only the share of loss-free banks beyond what the target allows
    shortfall = max(0.0, (1.0 - m.covered) - (1.0 - targets.min_fraction_banks_with_losses))
    return w1 * sev_gap**2 + w2 * freq_gap**2 + w3 * shortfall**2


class CalibrationObjective:
    """Simulated moments as a deterministic function of the searched means.

    The draws are generated once and reused by every evaluation (common
    random numbers), so the objective is a smooth-ish deterministic surface
    in the parameters rather than a noisy one.
    """

    def __init__(self, world, annual: pd.DataFrame, targets: CalibrationTargets, master_seed: int,
                 settings: SearchSettings = SearchSettings()):
        from fraudsim.rng import block_normals

        self.world = world
        self.targets = targets
        self.settings = settings
        self.master_seed = master_seed
        self.histories = list(range(settings.history_offset, settings.history_offset + settings.n_histories))
        self.normals = block_normals(master_seed, world.bank_codes, self.histories, world.n_days)
        epb = RiskIndicator.from_annual(annual, "emp_per_branch")
        if epb.banks != tuple(world.bank_codes):
            raise ValueError("annual drivers and simulation world cover different banks")
        # per-bank multipliers of each searched mean; shrinkage is linear in the mean
        self.ratios = {f: (shrink_direct(1.0, epb) if rule == "direct" else shrink_inverse(1.0, epb))
                       for f, rule in _SEARCH_RULES.items()}
        self.n_evaluations = 0

    def world_at(self, means: dict[str, float]):
        from fraudsim.simulation import World

        params = dict(self.world.params)
        for f in SEARCH_FIELDS:
            params[f] = self.ratios[f] * means[f]
        w = self.world
        return World(w.bank_codes, params, w.gp, w.active, w.income, w.productivity, w.emp_per_branch,
                     w.a_bar, w.e_bar, w.days_per_year, w.start_year)

    def moments(self, means: dict[str, float]) -> SimulatedMoments:
        from fraudsim.simulation import run_block

        self.n_evaluations += 1
        if means["beta0"] < 0:
            raise ValueError("beta0 must be non-negative")
        r = run_block(self.world_at(means), self.histories, self.master_seed, normals=self.normals,
                      collect_events=False, track_control=False)
        ever_active = self.world.active.any(axis=0)
        covered = (r.counts[ever_active] > 0).mean(axis=0)
        return SimulatedMoments(float(r.counts.sum(axis=0).mean()), float(r.gross.sum(axis=0).mean()),
                                float(covered.mean()))

    def __call__(self, means: dict[str, float]) -> float:
        return objective_value(self.moments(means), self.targets, self.settings.weights)


def _anchor_slope_terms(obj: CalibrationObjective, means: dict[str, float], gp: GlobalParams) -> np.ndarray:
    """Bank means of the non-constant ramp terms at the long-run anchors."""
    w = obj.world
    act = w.active
    income = np.where(act, w.income, 0.0).sum(axis=0) / np.maximum(act.sum(axis=0), 1)
    c_star = w.params["c_star"]
    return (obj.ratios["alpha_c"] * means["alpha_c"] * c_star
            + obj.ratios["alpha_y"] * means["alpha_y"] * income
            + obj.ratios["alpha_q"] * means["alpha_q"] * gp.q_bar)


def _bisect_log(f, lo: float, hi: float, n: int = 18) -> float:
    """Root of an increasing function on [lo, hi] by bisection in log space."""
    flo, fhi = f(lo), f(hi)
    if flo >= 0:
        return lo
    if fhi <= 0:
        return hi
    a, b = math.log(lo), math.log(hi)
    for _ in range(n):
        mid = 0.5 * (a + b)
        if f(math.exp(mid)) < 0:
            a = mid
        else:
            b = mid
    return math.exp(0.5 * (a + b))


def warm_start(obj: CalibrationObjective, means: dict[str, float], gp: GlobalParams) -> dict[str, float]:
    """Move a start point into the region where the simulator produces losses.

    First the slope terms are shrunk jointly until their cross-bank spread
    at the anchors is at most ``slope_spread``; a spread of hundreds means
    one or two banks carry every loss and the objective is flat elsewhere.
    Then the ramp constant is matched to the event count and the severity
    scale to the mean severity, alternating a few rounds.
    """
    s = obj.settings
    means = dict(means)
    spread = float(np.std(_anchor_slope_terms(obj, means, gp)))
    if spread > s.slope_spread:
        k = s.slope_spread / spread
        for f in ("alpha_c", "alpha_y", "alpha_q"):
            means[f] *= k
        log.info("warm start: slope terms scaled by %.4g", k)
    t = obj.targets
    # the ramp constant must at least offset the largest (negative) slope term
    base = -float(np.min(_anchor_slope_terms(obj, means, gp) / obj.ratios["alpha1"]))
    lo1, hi1 = max(abs(base) * 1e-3, 1e-3), abs(base) + 50.0
    for _ in range(s.warm_rounds):
        means["alpha1"] = _bisect_log(
            lambda a1: obj.moments({**means, "alpha1": a1}).events - t.target_event_count, lo1, hi1)
        means["alpha0"] = _bisect_log(
            lambda a0: obj.moments({**means, "alpha0": a0}).mean_severity - t.mean_severity,
            1e-4, 1e3)
    return means


def _to_theta(means: dict[str, float]) -> tuple[np.ndarray, dict[str, float]]:
    signs = {f: math.copysign(1.0, means[f]) for f in SEARCH_FIELDS}
    for f in SEARCH_FIELDS:
        if means[f] == 0:
            raise ValueError(f"cannot search from {f}=0: its sign is undetermined")
    return np.array([math.log(abs(means[f])) for f in SEARCH_FIELDS]), signs


def _from_theta(theta, signs) -> dict[str, float]:
    return {f: signs[f] * math.exp(float(t)) for f, t in zip(SEARCH_FIELDS, theta)}


def calibrate_global(annual: pd.DataFrame, targets: CalibrationTargets, master_seed: int,
                     gp: GlobalParams = GlobalParams(), start: MeanParams = MeanParams(),
                     settings: SearchSettings = SearchSettings(), n_years: int = 5,
                     start_year: int = 2006) -> CalibrationResult:
    """Tune the searched means so simulated aggregates match the targets.

    The search runs Nelder-Mead over the log magnitudes of the six means,
    keeping each sign as given at the start point.
    """
    from fraudsim.simulation import world_from_drivers

    world = world_from_drivers(annual, build_bank_params(annual, gp, start), gp, n_years, start_year)
    obj = CalibrationObjective(world, annual, targets, master_seed, settings)
    means0 = {f: getattr(start, f) for f in SEARCH_FIELDS}
    trace: list[dict] = []

    def record(stage, means, value):
        trace.append({"evaluation": obj.n_evaluations, "stage": stage, **means, "objective": value})

    record("start", means0, obj(means0))
    if settings.warm_start:
        means0 = warm_start(obj, means0, gp)
        record("warm", means0, obj(means0))

    theta0, signs = _to_theta(means0)
    simplex = np.vstack([theta0] + [theta0 + settings.initial_step * e for e in np.eye(len(theta0))])

    def f(theta):
        means = _from_theta(theta, signs)
        value = obj(means)
        record("search", means, value)
        return value

    res = minimize(f, theta0, method="Nelder-Mead",
                   options={"maxiter": settings.max_iter, "initial_simplex": simplex,
                            # gaps are normalised by the targets, so the objective is
                            # dimensionless and an absolute tolerance on it is relative
                            "xatol": 1e-3, "fatol": settings.rel_tol})
    best = min(trace, key=lambda r: r["objective"])
    best_means = replace(start, **{f: best[f] for f in SEARCH_FIELDS})
    moments = obj.moments({f: best[f] for f in SEARCH_FIELDS})
    return CalibrationResult(gp, best_means, build_bank_params(annual, gp, best_means), best["objective"],
                             moments, trace, bool(res.success), obj.n_evaluations)


# --- parameter file ---------------------------------------------------------------
#
# [global]       GlobalParams fields
# [means]        MeanParams fields
# [calibration]  objective, converged, searched, n_evaluations, simulated moments
# [banks."CODE"] BankParams fields, one table per bank

def result_to_dict(result: CalibrationResult) -> dict:
    cal = {"objective": float(result.objective), "converged": bool(result.converged),
           "searched": bool(result.searched), "n_evaluations": int(result.n_evaluations)}
    if result.moments is not None:
        cal.update({"simulated_events": result.moments.events, "simulated_gross_eur": result.moments.gross,
                    "simulated_fraction_banks_with_losses": result.moments.covered})
    return {
        "global": asdict(result.gp),
        "means": asdict(result.means),
        "calibration": cal,
        "banks": {code: asdict(bp) for code, bp in sorted(result.bank_params.items())},
    }


def save_result(result: CalibrationResult, path) -> None:
    Path(path).write_text(tomli_w.dumps(result_to_dict(result)), encoding="utf-8")


def _build(cls, table: dict, where: str):
    known = {f.name for f in fields(cls)}
    extra = set(table) - known
    if extra:
        raise ValueError(f"unknown keys in [{where}]: {sorted(extra)}")
    return cls(**{k: float(v) if isinstance(v, int) and not isinstance(v, bool) else v for k, v in table.items()})


def load_result(path) -> CalibrationResult:
    with open(path, "rb") as fh:
        doc = tomli.load(fh)
    for key in ("global", "means", "banks"):
        if key not in doc:
            raise ValueError(f"{path}: missing [{key}] table")
    gp_table = dict(doc["global"])
    gp_table["business_days_per_year"] = int(gp_table.get("business_days_per_year", 260))
    gp = GlobalParams(**{k: (float(v) if k != "business_days_per_year" else v) for k, v in gp_table.items()})
    means = _build(MeanParams, doc["means"], "means")
    banks = {code: _build(BankParams, t, f'banks."{code}"') for code, t in doc["banks"].items()}
    cal = doc.get("calibration", {})
    moments = None
    if "simulated_events" in cal:
        moments = SimulatedMoments(cal["simulated_events"], cal["simulated_gross_eur"],
                                   cal["simulated_fraction_banks_with_losses"])
    return CalibrationResult(gp, means, banks, float(cal.get("objective", math.nan)), moments, [],
                             bool(cal.get("converged", True)), int(cal.get("n_evaluations", 0)),
                             bool(cal.get("searched", False)))


def passthrough(annual: pd.DataFrame, gp: GlobalParams = GlobalParams(),
                means: MeanParams = MeanParams()) -> CalibrationResult:
    """Shrinkage of the given means with no search."""
    return CalibrationResult(gp, means, build_bank_params(annual, gp, means), math.nan, None, [],
                             converged=True, n_evaluations=0, searched=False)


TRACE_FIELDS = ("evaluation", "stage", *SEARCH_FIELDS, "objective")


def write_trace_csv(result: CalibrationResult, path) -> None:
    pd.DataFrame(result.trace, columns=list(TRACE_FIELDS)).to_csv(
        path, index=False, float_format="%.17g", lineterminator="\n")
