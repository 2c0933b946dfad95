"""Loading and validating the bank panel, macro and textual datasets.

All three datasets are plain UTF-8 CSV files with a fixed header.  Loaders
return pandas DataFrames whose columns follow ``PANEL_COLUMNS``,
``MACRO_COLUMNS`` and ``TEXT_COLUMNS``; any schema problem or invariant
breach raises :class:`DataValidationError` carrying row-addressed messages.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

SAMPLE_YEARS = (2006, 2010)

PANEL_COLUMNS = {
    "bank_code": str,
    "country_code": str,
    "year": int,
    "currency": str,
    "branches": float,
    "staff": float,
    "staff_r": float,
    "loans": float,
    "loans_r": float,
    "assets": float,
    "assets_r": float,
    "tier1": float,
    "nic": float,
    "nic_r": float,
    "active_member": int,
}
CURRENCY_FIELDS = ("loans", "loans_r", "assets", "assets_r", "nic", "nic_r")

MACRO_COLUMNS = {
    "country_code": str,
    "country_name": str,
    "year": int,
    "gdp_growth": float,
    "crisis": int,
    "gover_effective": float,
    "reg_quality": float,
    "rule_law": float,
    "cont_corrup": float,
    "cpi": float,
}

TERM_KEYS = ("orisk", "risk", "rman", "ama", "hres", "emp", "col")
TEXT_COLUMNS = {"bank_code": str, "year": int, **{k: int for k in TERM_KEYS}, "workers": int, "npag": int}

RATE_COLUMNS = {"currency": str, "year": int, "eur_per_unit": float}

# Whole-word matches; a trailing plural "s" is accepted and any whitespace
# (including line breaks) may separate the words of a phrase.
TERM_PHRASES = {
    "orisk": "operational risk",
    "risk": "risk",
    "rman": "risk management",
    "ama": "AMA",
    "hres": "human resource",
    "emp": "employee",
    "col": "colleague",
}
_TERM_PATTERNS = {
    key: re.compile(r"\b" + r"\s+".join(map(re.escape, phrase.split())) + r"s?\b", re.IGNORECASE)
    for key, phrase in TERM_PHRASES.items()
}


@dataclass
class ValidationIssue:
    line: int | None
    column: str | None
    message: str

    def __str__(self) -> str:
        where = []
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.column is not None:
            where.append(f"column {self.column!r}")
        return (", ".join(where) + ": " if where else "") + self.message


class DataValidationError(ValueError):
    def __init__(self, source: str, issues: list[ValidationIssue]):
        self.source = source
        self.issues = issues
        shown = "\n  ".join(str(i) for i in issues[:20])
        more = f"\n  ... {len(issues) - 20} more" if len(issues) > 20 else ""
        super().__init__(f"{source}: {len(issues)} validation error(s)\n  {shown}{more}")


def _line(idx) -> int:
    # data row index 0 sits on file line 2 (line 1 is the header)
    return int(idx) + 2


def _read_csv(path, columns: dict, source: str) -> pd.DataFrame:
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise
    except Exception as exc:  # malformed CSV
        raise DataValidationError(source, [ValidationIssue(None, None, f"unreadable CSV: {exc}")]) from exc

    issues = []
    missing = [c for c in columns if c not in df.columns]
    extra = [c for c in df.columns if c not in columns]
    for c in missing:
        issues.append(ValidationIssue(1, c, "missing column in header"))
    for c in extra:
        issues.append(ValidationIssue(1, c, "unexpected column in header"))
    if issues:
        raise DataValidationError(source, issues)

    out = {}
    for col, kind in columns.items():
        raw = df[col].str.strip()
        if kind is str:
            bad = raw == ""
            out[col] = raw
        else:
            num = pd.to_numeric(raw.where(raw != ""), errors="coerce")
            bad = num.isna()
            if kind is int:
                bad |= ~np.isclose(num.fillna(0) % 1, 0)
                num = num.fillna(0).astype(np.int64)
            out[col] = num
        for idx in np.flatnonzero(bad.to_numpy()):
            issues.append(ValidationIssue(_line(idx), col, f"invalid or empty value {df[col].iloc[idx]!r}"))
    if issues:
        raise DataValidationError(source, issues)
    return pd.DataFrame(out)


# --- exchange rates -------------------------------------------------------

def load_rates(path) -> dict[tuple[str, int], float]:
    df = _read_csv(path, RATE_COLUMNS, "rates")
    issues = [
        ValidationIssue(_line(i), "eur_per_unit", "rate must be positive")
        for i in np.flatnonzero((df["eur_per_unit"] <= 0).to_numpy())
    ]
    if issues:
        raise DataValidationError("rates", issues)
    rates = {(r.currency, int(r.year)): float(r.eur_per_unit) for r in df.itertuples()}
    for year in range(SAMPLE_YEARS[0], SAMPLE_YEARS[1] + 1):
        rates.setdefault(("EUR", year), 1.0)
    return rates


def to_eur(df: pd.DataFrame, rates, inverse: bool = False) -> pd.DataFrame:
    """Convert currency-valued panel fields to EUR millions (or back)."""
    out = df.copy()
    factor = np.empty(len(df))
    issues = []
    for pos, (ccy, year) in enumerate(zip(df["currency"], df["year"])):
        rate = rates.get((ccy, int(year)))
        if rate is None:
            issues.append(ValidationIssue(_line(pos), "currency", f"no rate for {ccy} in {year}"))
            rate = np.nan
        factor[pos] = rate
    if issues:
        raise DataValidationError("panel", issues)
    if inverse:
        factor = 1.0 / factor
    for col in CURRENCY_FIELDS:
        out[col] = df[col].to_numpy(dtype=float) * factor
    out["currency"] = "EUR" if not inverse else df["currency"]
    return out


# --- panel ----------------------------------------------------------------

def validate_panel(df: pd.DataFrame) -> None:
    issues = []

    def flag(mask, col, msg):
        for i in np.flatnonzero(np.asarray(mask)):
            issues.append(ValidationIssue(_line(i), col, msg))

    active = df["active_member"].to_numpy() == 1
    flag(~df["active_member"].isin([0, 1]), "active_member", "must be 0 or 1")
    flag((df["year"] < SAMPLE_YEARS[0]) | (df["year"] > SAMPLE_YEARS[1]), "year",
         f"year outside {SAMPLE_YEARS[0]}-{SAMPLE_YEARS[1]}")
    for col in ("branches", "staff", "staff_r", "loans_r", "assets_r", "nic_r"):
        flag(active & (df[col] <= 0), col, "must be positive for an active member")
    for col in PANEL_COLUMNS:
        if PANEL_COLUMNS[col] is float:
            flag(df[col] < 0, col, "must be non-negative")
    for total, retail in (("staff", "staff_r"), ("loans", "loans_r"), ("assets", "assets_r"), ("nic", "nic_r")):
        flag(df[retail] > df[total], retail, f"retail value exceeds {total}")
    dup = df.duplicated(["bank_code", "year"], keep="first")
    flag(dup, "bank_code", "duplicate bank-year")
    if issues:
        raise DataValidationError("panel", issues)


def load_panel(path, rates=None, active_only: bool = True) -> pd.DataFrame:
    """Read, validate and EUR-convert the bank panel.

    With ``active_only`` (default) only bank-years inside a bank's
    membership window are returned; memberships change on 1 January.
    """
    df = _read_csv(path, PANEL_COLUMNS, "panel")
    validate_panel(df)
    if rates is not None:
        df = to_eur(df, rates)
    elif (df["currency"] != "EUR").any():
        raise DataValidationError("panel", [ValidationIssue(None, "currency", "non-EUR rows need a rates file")])
    if active_only:
        df = df[df["active_member"] == 1]
    return df.sort_values(["bank_code", "year"]).reset_index(drop=True)


# --- macro ----------------------------------------------------------------

def load_macro(path) -> pd.DataFrame:
    df = _read_csv(path, MACRO_COLUMNS, "macro")
    issues = []
    expected = df["year"].isin([2007, 2008]).astype(int)
    for i in np.flatnonzero((df["crisis"] != expected).to_numpy()):
        issues.append(ValidationIssue(_line(i), "crisis", "crisis must be 1 exactly in 2007 and 2008"))
    for i in np.flatnonzero(df.duplicated(["country_code", "year"]).to_numpy()):
        issues.append(ValidationIssue(_line(i), "country_code", "duplicate country-year"))
    if issues:
        raise DataValidationError("macro", issues)
    return df.sort_values(["country_code", "year"]).reset_index(drop=True)


def join_macro(panel: pd.DataFrame, macro: pd.DataFrame) -> pd.DataFrame:
    """Attach headquarters-country macro data to every bank-year."""
    known = set(zip(macro["country_code"], macro["year"]))
    issues = [
        ValidationIssue(None, "country_code", f"no macro row for {c} in {y} (bank {b})")
        for b, c, y in zip(panel["bank_code"], panel["country_code"], panel["year"])
        if (c, y) not in known
    ]
    if issues:
        raise DataValidationError("macro join", issues)
    return panel.merge(macro.drop(columns=["country_name"]), on=["country_code", "year"], how="left")


# --- textual indicators ---------------------------------------------------

def _add_text_ratios(df: pd.DataFrame) -> pd.DataFrame:
    df = df.copy()
    for key in (*TERM_KEYS, "workers"):
        df[f"{key}_pp"] = df[key] / df["npag"]
    # risk-management awareness m and human-resource awareness h, per page
    df["m"] = df["orisk_pp"]
    df["h"] = (df["hres"] + df["workers"]) / df["npag"]
    return df


def load_text_indicators(path) -> pd.DataFrame:
    df = _read_csv(path, TEXT_COLUMNS, "text indicators")
    issues = []
    for key in (*TERM_KEYS, "workers"):
        for i in np.flatnonzero((df[key] < 0).to_numpy()):
            issues.append(ValidationIssue(_line(i), key, "count must be >= 0"))
    for i in np.flatnonzero((df["npag"] < 1).to_numpy()):
        issues.append(ValidationIssue(_line(i), "npag", "page count must be >= 1"))
    for i in np.flatnonzero((df["workers"] != df["emp"] + df["col"]).to_numpy()):
        issues.append(ValidationIssue(_line(i), "workers", "workers must equal emp + col"))
    if issues:
        raise DataValidationError("text indicators", issues)
    return _add_text_ratios(df.sort_values(["bank_code", "year"]).reset_index(drop=True))


def count_terms(text: str) -> dict[str, int]:
    counts = {key: len(pat.findall(text)) for key, pat in _TERM_PATTERNS.items()}
    counts["workers"] = counts["emp"] + counts["col"]
    return counts


def term_frequency_indicators(corpus_dir) -> pd.DataFrame:
    """Count the indicator phrases in ``corpus/<bank_code>/<year>.txt`` files.

    Each text file needs a ``<year>.pages`` sidecar holding the report's page
    count.
    """
    corpus_dir = Path(corpus_dir)
    rows, issues = [], []
    for txt in sorted(corpus_dir.glob("*/*.txt")):
        bank, year = txt.parent.name, txt.stem
        pages = txt.with_suffix(".pages")
        if not pages.exists():
            issues.append(ValidationIssue(None, "npag", f"missing page count for {bank}/{year}"))
            continue
        try:
            npag = int(pages.read_text(encoding="utf-8").strip())
        except ValueError:
            issues.append(ValidationIssue(None, "npag", f"unreadable page count for {bank}/{year}"))
            continue
        if npag < 1:
            issues.append(ValidationIssue(None, "npag", f"page count < 1 for {bank}/{year}"))
            continue
        rows.append({"bank_code": bank, "year": int(year), **count_terms(txt.read_text(encoding="utf-8")),
                     "npag": npag})
    if issues:
        raise DataValidationError("corpus", issues)
    df = pd.DataFrame(rows, columns=list(TEXT_COLUMNS))
    df = df.astype({k: v for k, v in TEXT_COLUMNS.items() if v is int})
    return _add_text_ratios(df.sort_values(["bank_code", "year"]).reset_index(drop=True))


def write_text_indicators(df: pd.DataFrame, path) -> None:
    df[list(TEXT_COLUMNS)].to_csv(path, index=False)


# --- annual drivers and daily interpolation -------------------------------

def annual_drivers(panel: pd.DataFrame, text: pd.DataFrame, income_margin: float = 0.02) -> pd.DataFrame:
    """Per bank-year model drivers built from the panel and textual data.

    income: annual retail income (EUR millions), from ``nic_r`` or, where that
    is zero, ``loans_r * income_margin``.  productivity: retail loans per
    retail employee.  emp_per_branch: retail staff per branch.  m, h: the
    textual awareness proxies.
    """
    merged = panel.merge(text[["bank_code", "year", "m", "h"]], on=["bank_code", "year"], how="left")
    missing = merged[merged[["m", "h"]].isna().any(axis=1)]
    if len(missing):
        raise DataValidationError("text indicators", [
            ValidationIssue(None, None, f"no textual indicators for {b} in {y}")
            for b, y in zip(missing["bank_code"], missing["year"])
        ])
    income = np.where(merged["nic_r"] > 0, merged["nic_r"], merged["loans_r"] * income_margin)
    return pd.DataFrame({
        "bank_code": merged["bank_code"],
        "year": merged["year"],
        "income": income,
        "productivity": merged["loans_r"] / merged["staff_r"],
        "emp_per_branch": merged["staff_r"] / merged["branches"],
        "assets_r": merged["assets_r"],
        "m": merged["m"],
        "h": merged["h"],
    })


DRIVER_FIELDS = ("income", "productivity", "emp_per_branch", "m", "h")


@dataclass
class DailySeries:
    """Business-day drivers for one bank over its covered years.

    ``tau`` is the 1-based day index counted from 1 January of the first
    sample year; ``values['income']`` is daily income (annual / days per year).
    """

    bank_code: str
    tau: np.ndarray
    values: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tau)


def interpolate_annual(anchors: np.ndarray, days_per_year: int) -> np.ndarray:
    """Piecewise-linear path through year-end anchors.

    The first year is held flat at its own anchor; day k of a later year
    moves linearly from the previous anchor (k=0) to the current one
    (k=days_per_year).
    """
    anchors = np.asarray(anchors, dtype=float)
    k = np.arange(1, days_per_year + 1) / days_per_year
    first = np.full(days_per_year, anchors[0])
    # weighted form, so k = 1 lands exactly on the anchor
    rest = [(1.0 - k) * prev + k * cur for prev, cur in zip(anchors[:-1], anchors[1:])]
    return np.concatenate([first, *rest])


def interpolate_daily(drivers: pd.DataFrame, gp, start_year: int = SAMPLE_YEARS[0]) -> dict[str, DailySeries]:
    """Daily series per bank from the annual driver table.

    Banks must be observed in consecutive years (membership windows are
    contiguous).
    """
    n = gp.business_days_per_year
    out = {}
    for bank, grp in drivers.sort_values("year").groupby("bank_code", sort=True):
        years = grp["year"].to_numpy()
        if len(years) == 0:
            continue
        if np.any(np.diff(years) != 1):
            raise DataValidationError("panel", [ValidationIssue(None, "year", f"{bank}: non-contiguous years {list(years)}")])
        offset = (years[0] - start_year) * n
        tau = offset + np.arange(1, len(years) * n + 1)
        values = {f: interpolate_annual(grp[f].to_numpy(), n) for f in DRIVER_FIELDS}
        values["income"] = values["income"] / n
        out[bank] = DailySeries(bank, tau, values)
    return out


def cross_bank_means(series: dict[str, DailySeries], tau: int) -> tuple[float, float]:
    """Ā and Ē on day ``tau``: means of productivity and employees per branch over active banks."""
    a, e = [], []
    for _, s in sorted(series.items()):
        pos = tau - s.tau[0]
        if 0 <= pos < len(s) and s.tau[pos] == tau:
            a.append(s.values["productivity"][pos])
            e.append(s.values["emp_per_branch"][pos])
    if not a:
        raise ValueError(f"no active bank on day {tau}")
    return float(np.mean(a)), float(np.mean(e))


def cross_bank_mean_arrays(series: dict[str, DailySeries], n_days: int) -> tuple[np.ndarray, np.ndarray]:
    """Ā_τ and Ē_τ for τ = 1..n_days (same as ``cross_bank_means`` day by day)."""
    a_sum = np.zeros(n_days)
    e_sum = np.zeros(n_days)
    cnt = np.zeros(n_days)
    # fixed summation order, so the means do not depend on dict order
    for _, s in sorted(series.items()):
        idx = s.tau - 1
        a_sum[idx] += s.values["productivity"]
        e_sum[idx] += s.values["emp_per_branch"]
        cnt[idx] += 1
    if np.any(cnt == 0):
        raise ValueError(f"no active bank on day(s) {np.flatnonzero(cnt == 0)[:5] + 1}")
    return a_sum / cnt, e_sum / cnt
