"""Dynamic equations for internal-fraud losses at a single bank.

Every function here is pure.  Inputs may be Python floats or numpy arrays
that broadcast against each other, which is how the simulation engine steps
many (bank, history) paths at once through the same code.

Units: the loss equation is expressed in EUR millions, the currency unit of
the bank panel.  Observation and recording work in EUR; multiply by
``LOSS_UNIT_EUR`` to move between the two.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

LOSS_UNIT_EUR = 1.0e6
RECORDING_THRESHOLD_EUR = 20_000.0
LOGISTIC_CLAMP = 700.0


@dataclass(frozen=True)
class BankParams:
    """The 13 idiosyncratic parameters of one bank (plus its threshold)."""

    alpha0: float
    alpha1: float
    alpha_c: float
    alpha_y: float
    alpha_q: float
    rho: float
    beta0: float
    c_star: float
    gamma: float
    lam: float
    delta: float
    sigma2_eta: float
    l_min: float = RECORDING_THRESHOLD_EUR

    def validate(self, gp: "GlobalParams | None" = None) -> None:
        lo, hi = (gp.rho_min, gp.rho_max) if gp is not None else (0.0, 1.0)
        checks = [
            (lo <= self.rho <= hi and 0.0 <= self.rho < 1.0, f"rho={self.rho} outside [{lo}, {hi}]"),
            (self.beta0 >= 0.0, f"beta0={self.beta0} < 0"),
            (self.sigma2_eta >= 0.0, f"sigma2_eta={self.sigma2_eta} < 0"),
            (self.l_min > 0.0, f"l_min={self.l_min} <= 0"),
            (self.gamma <= 0.0, f"gamma={self.gamma} > 0"),
            (self.delta >= 0.0, f"delta={self.delta} < 0"),
            (0.0 < self.c_star < 1.0, f"c_star={self.c_star} outside (0, 1)"),
            (self.lam >= 0.0, f"lambda={self.lam} < 0"),
        ]
        bad = [msg for ok, msg in checks if not ok]
        if bad:
            raise ValueError("invalid BankParams: " + "; ".join(bad))


@dataclass(frozen=True)
class GlobalParams:
    """Constants shared by every bank.  Defaults are the reference calibration."""

    beta1: float = 0.01
    beta2: float = 0.70
    rho_c: float = 0.10
    rho_q: float = 0.05
    q_bar: float = 0.7
    rho_min: float = 0.50
    rho_max: float = 0.90
    c_min: float = 0.3
    c_max: float = 0.7
    lambda_common: float = 0.0003
    business_days_per_year: int = 260

    def __post_init__(self) -> None:
        bad = []
        if self.beta1 < 0 or self.beta2 < 0 or self.beta1 + self.beta2 >= 1:
            bad.append(f"need beta1, beta2 >= 0 and beta1 + beta2 < 1 (got {self.beta1}, {self.beta2})")
        if not 0 < self.rho_min < self.rho_max < 1:
            bad.append(f"need 0 < rho_min < rho_max < 1 (got {self.rho_min}, {self.rho_max})")
        if not 0 < self.c_min < self.c_max < 1:
            bad.append(f"need 0 < c_min < c_max < 1 (got {self.c_min}, {self.c_max})")
        for name in ("rho_c", "rho_q"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                bad.append(f"{name}={v} outside (0, 1]")
        if self.q_bar <= 0:
            bad.append(f"q_bar={self.q_bar} <= 0")
        if self.business_days_per_year < 1:
            bad.append("business_days_per_year < 1")
        if bad:
            raise ValueError("invalid GlobalParams: " + "; ".join(bad))

    @property
    def persistence(self) -> float:
        return self.beta1 + self.beta2


@dataclass(frozen=True)
class BankState:
    """Latent state carried from one day to the next.

    ``cum_obs_loss`` and ``cum_income`` are both in EUR.
    """

    xi: float
    sigma2: float
    control: float
    quality: float
    cum_obs_loss: float = 0.0
    cum_income: float = 0.0

    def evolve(self, **changes) -> "BankState":
        return replace(self, **changes)


@dataclass(frozen=True)
class DailyDrivers:
    """Observable inputs for one day.

    income_y is daily retail income in EUR millions, productivity_a retail
    loans per retail employee (EUR millions/person), emp_per_branch_e retail
    staff per branch; a_bar and e_bar are the cross-bank means on that day.
    """

    income_y: float
    productivity_a: float
    emp_per_branch_e: float
    a_bar: float
    e_bar: float


@dataclass(frozen=True)
class LossEvent:
    bank_id: str
    tau: int
    true_loss: float
    observed_loss: float
    recorded: bool


def ramp(x):
    """max(x, 0), elementwise."""
    return np.maximum(x, 0.0)


def _logistic_half(z):
    # 1 / (1 + exp(z)) with the exponent clamped; expit is evaluated per
    # element, so results do not depend on array length.
    return expit(-np.clip(z, -LOGISTIC_CLAMP, LOGISTIC_CLAMP))


def _require_finite(name, *values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite {name} state")


def step_shock(state: BankState, bp: BankParams, gp: GlobalParams, normal_draw):
    """Advance the AR(1) shock with GARCH(1,1) conditional variance.

    The variance uses the previous day's shock, so
    ``sigma2_t = beta0 + beta1 * xi_{t-1}**2 + beta2 * sigma2_{t-1}``.
    Returns ``(xi_new, sigma2_new)``.
    """
    _require_finite("shock", state.xi, state.sigma2)
    sigma2_new = bp.beta0 + gp.beta1 * state.xi * state.xi + gp.beta2 * state.sigma2
    xi_new = bp.rho * state.xi + np.sqrt(sigma2_new) * normal_draw
    return xi_new, sigma2_new


def step_control(state: BankState, bp: BankParams, gp: GlobalParams):
    """Feedback rule for the control level.

    The loss ratio uses accumulators through the previous day.  With
    ``gamma < 0`` a loss ratio above ``lam`` pushes the control target above
    ``c_star``.
    """
    ratio = state.cum_obs_loss / state.cum_income
    target = 2.0 * bp.c_star * _logistic_half(bp.gamma * (ratio - bp.lam))
    return gp.rho_c * target + (1.0 - gp.rho_c) * state.control


def step_quality(state: BankState, d: DailyDrivers, bp: BankParams, gp: GlobalParams):
    """Ethical-quality update driven by productivity and staffing deviations."""
    _require_finite("quality", state.quality, d.productivity_a, d.emp_per_branch_e)
    z = bp.delta * (d.productivity_a - d.a_bar) * (d.emp_per_branch_e - d.e_bar)
    return 2.0 * gp.q_bar * gp.rho_q * _logistic_half(z) + (1.0 - gp.rho_q) * state.quality


def loss_interior(state: BankState, d: DailyDrivers, bp: BankParams):
    return bp.alpha1 + bp.alpha_c * state.control + bp.alpha_y * d.income_y + bp.alpha_q * state.quality + state.xi


def loss_severity(state: BankState, d: DailyDrivers, bp: BankParams):
    """True loss for the day in EUR millions (zero on most days)."""
    return bp.alpha0 * ramp(loss_interior(state, d, bp))


def observe_and_record(true_loss, bp: BankParams, normal_draw):
    """Add white measurement noise and apply the recording threshold.

    ``true_loss`` is in EUR.  Observed losses are clamped at zero.
    Returns ``(observed_loss, recorded)``.
    """
    observed = np.maximum(true_loss + np.sqrt(bp.sigma2_eta) * normal_draw, 0.0)
    return observed, observed > bp.l_min


def unconditional_variance(beta0, gp: GlobalParams):
    if gp.persistence >= 1.0:
        raise ValueError("beta1 + beta2 must be < 1 for a finite unconditional variance")
    return beta0 / (1.0 - gp.persistence)


def init_state(bp: BankParams, gp: GlobalParams) -> BankState:
    return BankState(
        xi=0.0,
        sigma2=unconditional_variance(bp.beta0, gp),
        control=bp.c_star,
        quality=gp.q_bar,
    )
