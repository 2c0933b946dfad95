"""Distributional regressions used to validate simulated loss data.

Severities are fitted with a left-truncated Weibull whose scale and shape
both depend on covariates; annual counts with negative binomial models
(type I: variance mu + sigma*mu**2, type II: variance mu + sigma*mu) or
their Poisson limit.  Both distribution parameters use log links.

Weibull parameterisation: density in (shape k, scale s),
``f(l) = k/s * (l/s)**(k-1) * exp(-(l/s)**k)``.  The "mean" regression acts
on log s and the "scale" regression on log k, so location coefficients
read as proportional effects on the loss size.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats
from scipy.optimize import minimize
from scipy.special import gammaln

from fraudsim.model import RECORDING_THRESHOLD_EUR

log = logging.getLogger(__name__)

FAMILIES = ("trunc-weibull", "negbin1", "negbin2", "poisson")
COVARIATES = ("gdp_growth", "cpi", "crisis", "governance", "control", "emp_per_branch", "assets_per_employee")


@dataclass(frozen=True)
class RegressionSpec:
    family: str
    response: str
    location: tuple[str, ...] = ()
    scale: tuple[str, ...] = ()
    truncation: float = RECORDING_THRESHOLD_EUR
    fixed_shape: float | None = None     # trunc-weibull only: hold k fixed, no scale regression
    name: str = ""

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "poisson" and self.scale:
            raise ValueError("the Poisson family has no scale parameter")
        if self.fixed_shape is not None and (self.family != "trunc-weibull" or self.scale):
            raise ValueError("fixed_shape applies to an intercept-free-scale truncated Weibull only")
        if self.fixed_shape is not None and self.fixed_shape <= 0:
            raise ValueError("fixed_shape must be positive")

    @property
    def label(self) -> str:
        return self.name or self.family

    @property
    def has_scale(self) -> bool:
        return self.family != "poisson" and self.fixed_shape is None


@dataclass
class Coefficient:
    part: str            # "location" or "scale"
    term: str
    estimate: float
    std_error: float
    t_value: float
    p_value: float

    @property
    def stars(self) -> str:
        return significance_stars(self.p_value)


@dataclass
class RegressionFit:
    spec: RegressionSpec
    coefficients: list[Coefficient]
    loglik: float
    n_obs: int
    converged: bool
    covariance: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_params(self) -> int:
        return len(self.coefficients)

    @property
    def aic(self) -> float:
        return aic(self.loglik, self.n_params)

    def coef(self, term: str, part: str = "location") -> Coefficient:
        for c in self.coefficients:
            if c.term == term and c.part == part:
                return c
        raise KeyError(f"{part} term {term!r} not in fit")

    def has_term(self, term: str, part: str = "location") -> bool:
        return any(c.term == term and c.part == part for c in self.coefficients)

    def table(self) -> pd.DataFrame:
        return pd.DataFrame([{"part": c.part, "term": c.term, "estimate": c.estimate, "std_error": c.std_error,
                              "t_value": c.t_value, "p_value": c.p_value, "signif": c.stars}
                             for c in self.coefficients])


def significance_stars(p: float) -> str:
    if not np.isfinite(p):
        return ""
    for cut, mark in ((0.001, "***"), (0.01, "**"), (0.05, "*"), (0.1, ".")):
        if p < cut:
            return mark
    return ""


def aic(loglik: float, n_params: int) -> float:
    return -2.0 * loglik + 2.0 * n_params


# --- log-likelihoods ----------------------------------------------------------
# Each returns per-observation log-likelihood and its derivatives with
# respect to the two linear predictors (eta1 = log location, eta2 = log scale).

def trunc_weibull_loglik(l, l0, eta1, eta2):
    k = np.exp(eta2)
    log_l = np.log(l)
    log_u = k * (log_l - eta1)
    log_u0 = k * (np.log(l0) - eta1)
    u, u0 = np.exp(log_u), np.exp(log_u0)
    ll = eta2 - k * eta1 + (k - 1.0) * log_l - u + u0
    g1 = k * (u - u0 - 1.0)
    g2 = 1.0 + log_u * (1.0 - u) + u0 * log_u0
    return ll, g1, g2


def trunc_weibull_pdf(l, l0, scale, shape):
    """Density of the Weibull left-truncated at ``l0`` (zero below it)."""
    l = np.asarray(l, dtype=float)
    z = (l / scale) ** shape
    dens = shape / scale * (l / scale) ** (shape - 1.0) * np.exp(-z + (l0 / scale) ** shape)
    return np.where(l > l0, dens, 0.0)


class _CountData:
    """Flattened ``j = 0..y-1`` indices for the sums in the NB likelihoods."""

    def __init__(self, y):
        self.y = np.asarray(y, dtype=np.int64)
        if np.any(self.y < 0):
            raise ValueError("counts must be non-negative")
        self.owner = np.repeat(np.arange(len(self.y)), self.y)
        starts = np.repeat(np.cumsum(self.y) - self.y, self.y)
        self.j = (np.arange(len(self.owner)) - starts).astype(float)
        self.log_fact = gammaln(self.y + 1.0)

    def group_sum(self, values) -> np.ndarray:
        return np.bincount(self.owner, weights=values, minlength=len(self.y))


def negbin1_loglik(cd: _CountData, eta1, eta2):
    y = cd.y
    m, s = np.exp(eta1), np.exp(eta2)
    js = cd.j * s[cd.owner]
    sm = s * m
    lsm = np.log1p(sm)
    ll = cd.group_sum(np.log1p(js)) + y * eta1 - y * lsm - lsm / s - cd.log_fact
    g1 = (y - m) / (1.0 + sm)
    g2 = cd.group_sum(js / (1.0 + js)) - y * sm / (1.0 + sm) - m / (1.0 + sm) + lsm / s
    return ll, g1, g2


def negbin2_loglik(cd: _CountData, eta1, eta2):
    y = cd.y
    m, s = np.exp(eta1), np.exp(eta2)
    r = cd.j * (s / m)[cd.owner]
    ls = np.log1p(s)
    frac = cd.group_sum(r / (1.0 + r))
    ll = y * eta1 + cd.group_sum(np.log1p(r)) - y * ls - m * ls / s - cd.log_fact
    g1 = y - frac - m * ls / s
    g2 = frac - y * s / (1.0 + s) - m / (1.0 + s) + m * ls / s
    return ll, g1, g2


def poisson_loglik(cd: _CountData, eta1, eta2=None):
    m = np.exp(eta1)
    return cd.y * eta1 - m - cd.log_fact, cd.y - m, None


def count_pmf(family: str, y, mu, sigma=None) -> np.ndarray:
    """Probabilities of counts ``y`` (vectorised); used by tests and reports."""
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    cd = _CountData(y)
    eta1 = np.full(len(y), math.log(mu))
    if family == "poisson":
        ll = poisson_loglik(cd, eta1)[0]
    else:
        eta2 = np.full(len(y), math.log(sigma))
        ll = (negbin1_loglik if family == "negbin1" else negbin2_loglik)(cd, eta1, eta2)[0]
    return np.exp(ll)


# --- fitting --------------------------------------------------------------------

def _design(df: pd.DataFrame, terms) -> tuple[np.ndarray, list[str]]:
    missing = [t for t in terms if t not in df.columns]
    if missing:
        raise KeyError(f"covariates not in data: {missing}")
    cols = [np.ones(len(df))] + [df[t].to_numpy(dtype=float) for t in terms]
    Z = np.column_stack(cols)
    if not np.all(np.isfinite(Z)):
        raise ValueError("missing or non-finite covariate values in fitted rows")
    return Z, ["(Intercept)", *terms]


def _standardise(Z):
    """Centre and scale the non-intercept columns; returns (Zs, A) with beta = A @ beta_s."""
    mu = Z[:, 1:].mean(axis=0)
    sd = Z[:, 1:].std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    Zs = Z.copy()
    Zs[:, 1:] = (Z[:, 1:] - mu) / sd
    p = Z.shape[1]
    A = np.eye(p)
    A[1:, 1:] = np.diag(1.0 / sd)
    A[0, 1:] = -mu / sd
    return Zs, A


class _Problem:
    def __init__(self, spec: RegressionSpec, df: pd.DataFrame):
        self.spec = spec
        Z1, self.names1 = _design(df, spec.location)
        Z2, self.names2 = _design(df, spec.scale) if spec.has_scale else (np.zeros((len(df), 0)), [])
        self.Z1, self.A1 = _standardise(Z1)
        if spec.has_scale:
            self.Z2, self.A2 = _standardise(Z2)
        else:
            self.Z2, self.A2 = Z2, np.zeros((0, 0))
        self.p1, self.p2 = self.Z1.shape[1], self.Z2.shape[1]
        y = df[spec.response].to_numpy()
        self.n = len(y)
        if self.n == 0:
            raise ValueError("no observations to fit")
        if spec.family == "trunc-weibull":
            self.l = y.astype(float)
            if np.any(self.l <= spec.truncation):
                raise ValueError("all severities must exceed the truncation point")
            self.l0 = float(spec.truncation)
        else:
            if np.any(y != np.round(y)):
                raise ValueError("count responses must be integers")
            self.cd = _CountData(y)

    def _etas(self, theta):
        eta1 = self.Z1 @ theta[: self.p1]
        if self.spec.has_scale:
            eta2 = self.Z2 @ theta[self.p1:]
        elif self.spec.fixed_shape is not None:
            eta2 = np.full(self.n, math.log(self.spec.fixed_shape))
        else:
            eta2 = None
        return eta1, eta2

    def loglik_grad(self, theta):
        eta1, eta2 = self._etas(theta)
        fam = self.spec.family
        if fam == "trunc-weibull":
            ll, g1, g2 = trunc_weibull_loglik(self.l, self.l0, eta1, eta2)
        elif fam == "negbin1":
            ll, g1, g2 = negbin1_loglik(self.cd, eta1, eta2)
        elif fam == "negbin2":
            ll, g1, g2 = negbin2_loglik(self.cd, eta1, eta2)
        else:
            ll, g1, g2 = poisson_loglik(self.cd, eta1)
        grad = self.Z1.T @ g1
        if self.spec.has_scale:
            grad = np.concatenate([grad, self.Z2.T @ g2])
        return float(ll.sum()), grad

    def start(self) -> np.ndarray:
        theta = np.zeros(self.p1 + self.p2)
        fam = self.spec.family
        if fam == "trunc-weibull":
            theta[0] = math.log(np.mean(self.l))
        else:
            y = self.cd.y
            mean, var = max(y.mean(), 1e-3), y.var()
            theta[0] = math.log(mean)
            if self.spec.has_scale:
                over = max(var / mean - 1.0, 0.05)
                theta[self.p1] = math.log(over / mean if fam == "negbin1" else over)
        return theta

    def to_original(self, theta):
        b1 = self.A1 @ theta[: self.p1]
        b2 = self.A2 @ theta[self.p1:] if self.spec.has_scale else np.zeros(0)
        return np.concatenate([b1, b2])

    def transform(self) -> np.ndarray:
        p = self.p1 + self.p2
        A = np.zeros((p, p))
        A[: self.p1, : self.p1] = self.A1
        if self.spec.has_scale:
            A[self.p1:, self.p1:] = self.A2
        return A


def numerical_hessian(grad_fn, theta, rel_step: float = 1e-5) -> np.ndarray:
    """Central differences of an analytic gradient, symmetrised."""
    p = len(theta)
    H = np.empty((p, p))
    for i in range(p):
        h = rel_step * max(1.0, abs(theta[i]))
        e = np.zeros(p)
        e[i] = h
        H[:, i] = (grad_fn(theta + e) - grad_fn(theta - e)) / (2.0 * h)
    return 0.5 * (H + H.T)


def fit(spec: RegressionSpec, data: pd.DataFrame, n_starts: int = 5, seed: int = 0,
        jitter: float = 0.1) -> RegressionFit:
    """Maximum likelihood with BFGS from several jittered starts."""
    prob = _Problem(spec, data)
    scale = 1.0 / prob.n          # optimise the mean log-likelihood for conditioning

    def nll(theta):
        ll, g = prob.loglik_grad(theta)
        if not np.isfinite(ll):
            return np.inf, np.zeros_like(theta)
        return -ll * scale, -g * scale

    rng = np.random.default_rng(seed)
    theta0 = prob.start()
    best = None
    for k in range(max(1, n_starts)):
        start = theta0 if k == 0 else theta0 + rng.normal(0.0, jitter, size=theta0.shape)
        with np.errstate(over="ignore", invalid="ignore"):
            res = minimize(nll, start, jac=True, method="BFGS", options={"gtol": 1e-9, "maxiter": 2000})
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise RuntimeError(f"{spec.label}: likelihood not finite at any start")
    theta = best.x
    ll, grad = prob.loglik_grad(theta)
    converged = bool(np.max(np.abs(grad)) <= 1e-4 * max(1.0, abs(ll)))
    if not converged:
        log.warning("%s: optimiser stopped with max score %.3g", spec.label, np.max(np.abs(grad)))

    H = numerical_hessian(lambda t: prob.loglik_grad(t)[1], theta)
    A = prob.transform()
    cov = None
    try:
        info = -H
        np.linalg.cholesky(info)
        cov = A @ np.linalg.inv(info) @ A.T
    except np.linalg.LinAlgError:
        log.warning("%s: information matrix not positive definite; standard errors unavailable", spec.label)

    est = prob.to_original(theta)
    se = np.sqrt(np.diag(cov)) if cov is not None else np.full(len(est), np.nan)
    df_resid = max(prob.n - len(est), 1)
    coefs = []
    names = [("location", n) for n in prob.names1] + [("scale", n) for n in prob.names2]
    for (part, term), b, s in zip(names, est, se):
        t = b / s if s > 0 else np.nan
        p = float(2.0 * stats.t.sf(abs(t), df_resid)) if np.isfinite(t) else np.nan
        coefs.append(Coefficient(part, term, float(b), float(s), float(t), p))
    return RegressionFit(spec, coefs, ll, prob.n, converged, cov)


def fit_trunc_weibull(spec: RegressionSpec, data: pd.DataFrame, **kw) -> RegressionFit:
    if spec.family != "trunc-weibull":
        raise ValueError("spec is not a truncated-Weibull model")
    return fit(spec, data, **kw)


def fit_negbin(spec: RegressionSpec, data: pd.DataFrame, **kw) -> RegressionFit:
    if spec.family not in ("negbin1", "negbin2", "poisson"):
        raise ValueError("spec is not a count model")
    return fit(spec, data, **kw)


def model_selection(fits: list[RegressionFit]) -> pd.DataFrame:
    """Fits ranked by AIC, fewer parameters first on ties."""
    rows = sorted(fits, key=lambda f: (f.aic, f.n_params))
    return pd.DataFrame([{"rank": i + 1, "model": f.spec.label, "family": f.spec.family, "loglik": f.loglik,
                          "n_params": f.n_params, "aic": f.aic, "converged": f.converged}
                         for i, f in enumerate(rows)])


# --- validation data -------------------------------------------------------------

def bank_year_covariates(panel: pd.DataFrame, macro: pd.DataFrame) -> pd.DataFrame:
    """Observable covariates per active bank-year (panel in EUR)."""
    from fraudsim.ingestion import join_macro

    j = join_macro(panel, macro)
    return pd.DataFrame({
        "bank_code": j["bank_code"],
        "year": j["year"],
        "gdp_growth": j["gdp_growth"],
        "cpi": j["cpi"],
        "crisis": j["crisis"].astype(float),
        "governance": j[["gover_effective", "reg_quality", "rule_law", "cont_corrup"]].mean(axis=1),
        "emp_per_branch": j["staff_r"] / j["branches"],
        "assets_per_employee": j["assets_r"] / j["staff_r"],
    }).sort_values(["bank_code", "year"], kind="mergesort").reset_index(drop=True)


@dataclass
class ValidationDataset:
    severity: pd.DataFrame      # one row per recorded loss
    frequency: pd.DataFrame     # one row per active bank-year

    def __post_init__(self) -> None:
        if (self.frequency["events"] < 0).any():
            raise ValueError("negative event counts")


def build_validation_dataset(covariates: pd.DataFrame, events: pd.DataFrame, bank_years: pd.DataFrame,
                             histories=None) -> ValidationDataset:
    """Join simulated events and bank-year outcomes to the observable covariates.

    ``events`` has columns history, bank_code, year, observed_loss_eur;
    ``bank_years`` has history, bank_code, year, events, mean_control.
    ``histories`` selects which simulated histories to pool (default: all
    present).
    """
    if histories is not None:
        hs = set(int(h) for h in histories)
        events = events[events["history"].isin(hs)]
        bank_years = bank_years[bank_years["history"].isin(hs)]
    by = bank_years[["history", "bank_code", "year", "events", "mean_control"]].rename(
        columns={"mean_control": "control"})
    freq = by.merge(covariates, on=["bank_code", "year"], how="inner", validate="many_to_one")
    if len(freq) != len(by):
        raise ValueError("simulated bank-years without covariates")
    if freq["control"].isna().any():
        raise ValueError("active bank-year without a simulated control level")
    sev = events[["history", "bank_code", "year", "observed_loss_eur"]].rename(columns={"observed_loss_eur": "loss"})
    sev = sev.merge(freq.drop(columns=["events"]), on=["history", "bank_code", "year"], how="left")
    if sev[list(COVARIATES)].isna().any().any():
        raise ValueError("recorded loss outside an active bank-year")
    sort = ["history", "bank_code", "year"]
    return ValidationDataset(sev.reset_index(drop=True),
                             freq.sort_values(sort, kind="mergesort").reset_index(drop=True))


BENCHMARK_SEVERITY = RegressionSpec(
    "trunc-weibull", "loss",
    location=("gdp_growth", "cpi", "control", "emp_per_branch", "assets_per_employee"),
    scale=("cpi", "emp_per_branch", "gdp_growth", "control", "assets_per_employee"),
    name="trunc-weibull benchmark")

BENCHMARK_FREQUENCY = RegressionSpec(
    "negbin1", "events",
    location=("gdp_growth", "cpi", "control", "emp_per_branch", "assets_per_employee"),
    scale=("emp_per_branch", "control"),
    name="negbin1 benchmark")


def frequency_candidates(spec: RegressionSpec = BENCHMARK_FREQUENCY) -> list[RegressionSpec]:
    """Poisson, NB-I and NB-II with and without the scale regression."""
    loc, sc = spec.location, spec.scale
    return [RegressionSpec("poisson", "events", loc, name="poisson"),
            RegressionSpec("negbin1", "events", loc, name="negbin1 (only mean regression)"),
            RegressionSpec("negbin2", "events", loc, name="negbin2 (only mean regression)"),
            RegressionSpec("negbin1", "events", loc, sc, name="negbin1 (mean and scale regression)"),
            RegressionSpec("negbin2", "events", loc, sc, name="negbin2 (mean and scale regression)")]


def severity_candidates(spec: RegressionSpec = BENCHMARK_SEVERITY) -> list[RegressionSpec]:
    return [RegressionSpec("trunc-weibull", "loss", spec.location, name="trunc-weibull (only mean regression)"),
            RegressionSpec("trunc-weibull", "loss", spec.location, spec.scale,
                           name="trunc-weibull (mean and scale regression)")]


# --- sign comparison ------------------------------------------------------------------

# reference directions of the mean-regression coefficients
REFERENCE_SIGNS = {
    "severity": {"gdp_growth": "+", "cpi": "-", "control": "-", "emp_per_branch": "+", "assets_per_employee": "-"},
    "frequency": {"gdp_growth": "+", "control": "-", "assets_per_employee": "-"},
}


def sign_report(fits: dict[str, RegressionFit], alpha: float = 0.05) -> pd.DataFrame:
    """Estimated versus reference signs of the location coefficients.

    ``fits`` maps "severity" / "frequency" to a fit.  Covariates that a fit
    does not include are reported as "n/a".
    """
    rows = []
    for kind, ref in REFERENCE_SIGNS.items():
        fit_ = fits.get(kind)
        for term, want in ref.items():
            if fit_ is None or not fit_.has_term(term):
                rows.append({"model": kind, "covariate": term, "reference": want, "estimate": np.nan,
                             "sign": "n/a", "p_value": np.nan, "signif": "", "agrees": "n/a",
                             "significant": False})
                continue
            c = fit_.coef(term)
            sign = "+" if c.estimate > 0 else "-" if c.estimate < 0 else "0"
            rows.append({"model": kind, "covariate": term, "reference": want, "estimate": c.estimate,
                         "sign": sign, "p_value": c.p_value, "signif": c.stars,
                         "agrees": "yes" if sign == want else "no",
                         "significant": bool(np.isfinite(c.p_value) and c.p_value < alpha)})
    return pd.DataFrame(rows)


# --- text output -------------------------------------------------------------------------

SIGNIF_LEGEND = "Signif. codes: 0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1"


def format_fit(fit_: RegressionFit) -> str:
    lines = [f"{fit_.spec.label} ({fit_.spec.family}), n = {fit_.n_obs}"]
    for part in ("location", "scale"):
        coefs = [c for c in fit_.coefficients if c.part == part]
        if not coefs:
            continue
        lines.append(f"  {part} (log link)")
        lines.append(f"    {'term':<22}{'Estimate':>13}{'Std. Error':>13}{'t value':>10}{'Pr(>|t|)':>12}")
        for c in coefs:
            lines.append(f"    {c.term:<22}{c.estimate:>13.5g}{c.std_error:>13.5g}{c.t_value:>10.3f}"
                         f"{c.p_value:>12.4g} {c.stars}")
    lines.append(f"  log-likelihood {fit_.loglik:.4f}, AIC {fit_.aic:.4f}, converged {fit_.converged}")
    return "\n".join(lines)


def write_fit_csv(fits: list[RegressionFit], path) -> None:
    frames = []
    for f in fits:
        t = f.table()
        t.insert(0, "model", f.spec.label)
        t["loglik"] = f.loglik
        t["aic"] = f.aic
        frames.append(t)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
