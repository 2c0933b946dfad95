"""Generator for the bundled SYNTHETIC bank panel.

The real bank data behind the model is proprietary, so the package ships a
synthetic stand-in with the same roster, membership windows and documented
ranges: 10k-140k employees, 300-10,000 branches, strongly correlated scale
variables.  Macro conditions are wired into the retail income margin so
that simulated losses respond to GDP growth and corruption perceptions in
the documented directions; nothing else about the bundled values should be
read as real bank data.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from fraudsim.ingestion import CURRENCY_FIELDS, PANEL_COLUMNS, TERM_PHRASES, TEXT_COLUMNS

YEARS = list(range(2006, 2011))

# (bank, country, name, first active year, last active year)
ROSTER = [
    ("BNS", "CAN", "Bank of Nova Scotia", 2006, 2010),
    ("CBA", "DEU", "Commerzbank AG", 2006, 2010),
    ("DBA", "DEU", "Deutsche Bank AG", 2006, 2010),
    ("BNP", "FRA", "BNP Paribas", 2006, 2010),
    ("ABN", "NLD", "ABN AMRO", 2006, 2010),
    ("FTL", "NLD", "Fortis NL", 2006, 2010),
    ("ING", "NLD", "ING Group", 2006, 2010),
    ("JPM", "USA", "JPMorgan Chase & Co.", 2006, 2010),
    ("BOA", "USA", "Bank of America", 2006, 2010),
    ("WLB", "DEU", "West LB", 2006, 2010),
    ("BNS", "ESP", "Banesto", 2006, 2010),
    ("SEB", "SWE", "SEB (Skandinaviska Enskilda Banken)", 2006, 2010),
    ("CAS", "FRA", "Credit Agricole SA", 2006, 2010),
    ("BSB", "ESP", "Banc Sabadell", 2006, 2010),
    ("CMR", "ESP", "Cajamar", 2006, 2010),
    ("BLB", "GBR", "Barclays Bank", 2006, 2010),
    ("BAC", "AUT", "Bank Austria - Creditanstalt", 2006, 2010),
    ("FTS", "BEL", "Fortis", 2006, 2010),
    ("CCT", "ESP", "Caixa Catalunya", 2006, 2010),
    ("BPN", "PRT", "Banco Portugues de Negocios", 2006, 2010),
    ("NAT", "USA", "National City", 2006, 2008),
    ("EGB", "AUT", "Erste Group Bank AG", 2006, 2010),
    ("BMO", "CAN", "BMO Financial Group", 2006, 2010),
    ("RBC", "CAN", "Royal Bank of Canada", 2006, 2010),
    ("BPO", "ESP", "Banco Popular", 2006, 2010),
    ("LBG", "GBR", "Lloyds Banking Group", 2006, 2010),
    ("USB", "USA", "US Bancorp", 2006, 2010),
    ("BST", "ESP", "Grupo Santander", 2006, 2010),
    ("TDB", "CAN", "Toronto Dominion Bank Group", 2006, 2010),
    ("BPS", "ESP", "Banco Pastor", 2006, 2010),
    ("CLB", "ESP", "Caja Laboral", 2006, 2010),
    ("HBO", "GBR", "HBOS PLC", 2006, 2008),
    ("WCR", "USA", "Wachovia Corporation", 2006, 2008),
    ("WAM", "USA", "Washington Mutual", 2006, 2008),
    ("PNC", "USA", "PNC Bank", 2006, 2010),
    ("RBS", "GBR", "Royal Bank of Scotland Group", 2006, 2010),
    ("BIG", "IRL", "Bank of Ireland Group", 2006, 2010),
    ("HSB", "GBR", "HSBC Holdings plc", 2006, 2010),
    ("HBK", "KOR", "Hana Bank", 2009, 2010),
    ("RBN", "NLD", "Rabobank Nederland", 2006, 2010),
    ("NAB", "AUS", "National Australia Bank", 2009, 2010),
    ("BSC", "BRA", "Banco Bradesco S/A", 2009, 2010),
    ("CNV", "ESP", "Caixanova", 2009, 2010),
    ("WFC", "USA", "Wells Fargo & Co", 2009, 2010),
    ("FRD", "ZAF", "First Rand", 2009, 2010),
    ("DPB", "DEU", "Deutsche Postbank AG", 2009, 2010),
    ("STA", "SGP", "Standard Chartered Bank", 2009, 2010),
    ("CON", "USA", "Capital One", 2009, 2010),
    ("BNY", "USA", "Bank of New York Mellon", 2009, 2010),
    ("WBC", "AUS", "Westpac Banking Corporation", 2010, 2010),
    ("CBA", "AUS", "Commonwealth Bank of Australia", 2010, 2010),
    ("SGL", "FRA", "Societe Generale", 2010, 2010),
]

COUNTRIES = {
    "AUS": ("Australia", "AUD"), "AUT": ("Austria", "EUR"), "BEL": ("Belgium", "EUR"),
    "BRA": ("Brazil", "BRL"), "CAN": ("Canada", "CAD"), "DEU": ("Germany", "EUR"),
    "ESP": ("Spain", "EUR"), "FRA": ("France", "EUR"), "GBR": ("United Kingdom", "GBP"),
    "IRL": ("Ireland", "EUR"), "KOR": ("South Korea", "KRW"), "NLD": ("Netherlands", "EUR"),
    "PRT": ("Portugal", "EUR"), "SGP": ("Singapore", "SGD"), "SWE": ("Sweden", "SEK"),
    "USA": ("United States", "USD"), "ZAF": ("South Africa", "ZAR"),
}

# approximate annual GDP growth (%) and CPI score, 2006-2010
GDP_GROWTH = {
    "AUS": (2.9, 4.5, 2.6, 1.8, 2.3), "AUT": (3.5, 3.7, 1.5, -3.8, 1.8), "BEL": (2.5, 3.4, 0.7, -2.0, 2.9),
    "BRA": (4.0, 6.1, 5.1, -0.1, 7.5), "CAN": (2.6, 2.1, 1.0, -2.9, 3.1), "DEU": (3.8, 3.0, 1.0, -5.7, 4.2),
    "ESP": (4.1, 3.6, 0.9, -3.8, 0.2), "FRA": (2.4, 2.4, 0.3, -2.9, 1.9), "GBR": (2.5, 2.4, -0.3, -4.2, 1.9),
    "IRL": (5.5, 5.3, -3.9, -4.6, 1.8), "KOR": (5.3, 5.8, 3.0, 0.8, 6.8), "NLD": (3.5, 3.7, 1.7, -3.8, 1.3),
    "PRT": (1.6, 2.5, 0.2, -3.0, 1.9), "SGP": (9.0, 9.0, 1.9, 0.1, 14.5), "SWE": (4.7, 3.4, -0.6, -5.2, 6.0),
    "USA": (2.7, 1.8, -0.3, -2.8, 2.5), "ZAF": (5.6, 5.4, 3.2, -1.5, 3.0),
}
CPI = {
    "AUS": (8.7, 8.6, 8.7, 8.7, 8.7), "AUT": (8.6, 8.1, 8.1, 7.9, 7.9), "BEL": (7.3, 7.1, 7.3, 7.1, 7.1),
    "BRA": (3.3, 3.5, 3.5, 3.7, 3.7), "CAN": (8.5, 8.7, 8.7, 8.7, 8.9), "DEU": (8.0, 7.8, 7.9, 8.0, 7.9),
    "ESP": (6.8, 6.7, 6.5, 6.1, 6.1), "FRA": (7.4, 7.3, 6.9, 6.9, 6.8), "GBR": (8.6, 8.4, 7.7, 7.7, 7.6),
    "IRL": (7.4, 7.5, 7.7, 8.0, 8.0), "KOR": (5.1, 5.1, 5.6, 5.5, 5.4), "NLD": (8.7, 9.0, 8.9, 8.9, 8.8),
    "PRT": (6.6, 6.5, 6.1, 5.8, 6.0), "SGP": (9.4, 9.3, 9.2, 9.2, 9.3), "SWE": (9.2, 9.3, 9.3, 9.2, 9.2),
    "USA": (7.3, 7.2, 7.3, 7.5, 7.1), "ZAF": (4.6, 5.1, 4.9, 4.7, 4.5),
}
# approximate EUR per unit of currency, 2006-2010
EUR_PER_UNIT = {
    "USD": (0.797, 0.730, 0.683, 0.720, 0.755), "CAD": (0.703, 0.682, 0.642, 0.630, 0.733),
    "GBP": (1.467, 1.461, 1.258, 1.123, 1.166), "SEK": (0.108, 0.108, 0.104, 0.094, 0.105),
    "AUD": (0.600, 0.611, 0.576, 0.565, 0.693), "BRL": (0.366, 0.375, 0.373, 0.361, 0.429),
    "ZAR": (0.118, 0.104, 0.083, 0.086, 0.103), "SGD": (0.502, 0.485, 0.483, 0.495, 0.554),
    "KRW": (0.000834, 0.000785, 0.000625, 0.000565, 0.000653),
}


@dataclass(frozen=True)
class Wiring:
    """How macro conditions move the retail income margin (NII / retail loans).

    margin = base * exp(-gdp_elasticity * gdp_growth + cpi_elasticity * (cpi - 7))

    Income enters the loss equation with a negative mean sensitivity, so a
    margin that shrinks in booms and grows with clean governance makes
    losses rise with GDP growth and fall with the CPI.  The defaults are
    strong enough for these effects to show up in a single simulated
    history at roughly the target magnitudes.
    """

    base_margin: float = 0.025
    gdp_elasticity: float = 0.20
    cpi_elasticity: float = 0.30


def bank_code(bank: str, country: str) -> str:
    return f"{country}.{bank}"


def make_macro(seed: int = 7) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    rows = []
    for cc, (name, _) in sorted(COUNTRIES.items()):
        noise = rng.normal(0.0, 0.15, size=4)
        for t, year in enumerate(YEARS):
            cpi = CPI[cc][t]
            gov = (cpi - 6.0) / 2.2 + noise + rng.normal(0.0, 0.05, size=4)
            rows.append({
                "country_code": cc, "country_name": name, "year": year,
                "gdp_growth": GDP_GROWTH[cc][t], "crisis": int(year in (2007, 2008)),
                "gover_effective": round(gov[0], 3), "reg_quality": round(gov[1], 3),
                "rule_law": round(gov[2], 3), "cont_corrup": round(gov[3], 3), "cpi": cpi,
            })
    return pd.DataFrame(rows)


def make_rates() -> pd.DataFrame:
    rows = [{"currency": ccy, "year": year, "eur_per_unit": v[t]}
            for ccy, v in sorted(EUR_PER_UNIT.items()) for t, year in enumerate(YEARS)]
    return pd.DataFrame(rows)


def make_panel(seed: int = 2006, wiring: Wiring = Wiring()) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Return (panel in EUR millions, panel in reporting currency)."""
    rng = np.random.default_rng(seed)
    rows = []
    for bank, cc, _name, first, last in ROSTER:
        staff = np.exp(rng.uniform(np.log(12_000), np.log(130_000)))
        retail_staff_share = rng.uniform(0.45, 0.75)
        branches = np.clip(300.0 * (staff / 10_000) ** 1.3 * np.exp(rng.normal(0, 0.25)), 300, 10_000)
        productivity = np.exp(rng.normal(np.log(4.0), 0.3))
        loans_share = rng.uniform(0.35, 0.70)
        assets_mult = rng.uniform(1.2, 1.6)
        assets_share = rng.uniform(0.30, 0.60)
        nic_share = rng.uniform(0.40, 0.70)
        tier1 = rng.uniform(7.0, 12.0)
        base_margin = wiring.base_margin * np.exp(rng.normal(0, 0.1))
        for t, year in enumerate(YEARS):
            g = GDP_GROWTH[cc][t]
            if t > 0:
                staff *= np.exp(0.01 + 0.004 * g + rng.normal(0, 0.02))
                branches = np.clip(branches * np.exp(0.005 + rng.normal(0, 0.01)), 300, 10_000)
                productivity *= np.exp(0.02 + 0.005 * g + rng.normal(0, 0.02))
                tier1 = float(np.clip(tier1 + rng.normal(0.2, 0.5), 5.0, 16.0))
            staff_r = staff * retail_staff_share
            loans_r = staff_r * productivity
            margin = base_margin * np.exp(-wiring.gdp_elasticity * g + wiring.cpi_elasticity * (CPI[cc][t] - 7.0))
            nic_r = loans_r * margin
            assets_r = loans_r * assets_mult
            rows.append({
                "bank_code": bank_code(bank, cc), "country_code": cc, "year": year,
                "currency": COUNTRIES[cc][1],
                "branches": float(round(branches)), "staff": float(round(staff)), "staff_r": float(round(staff_r)),
                "loans": loans_r / loans_share, "loans_r": loans_r,
                "assets": assets_r / assets_share, "assets_r": assets_r,
                "tier1": round(tier1, 2), "nic": nic_r / nic_share, "nic_r": nic_r,
                "active_member": int(first <= year <= last),
            })
    eur = pd.DataFrame(rows, columns=list(PANEL_COLUMNS))
    for col in CURRENCY_FIELDS:
        eur[col] = eur[col].round(3)
    local = eur.copy()
    rates = {(r.currency, r.year): r.eur_per_unit for r in make_rates().itertuples()}
    factor = np.array([1.0 if c == "EUR" else rates[(c, y)] for c, y in zip(eur["currency"], eur["year"])])
    for col in CURRENCY_FIELDS:
        local[col] = (eur[col] / factor).round(3)
    return eur, local


def make_text_indicators(panel: pd.DataFrame, seed: int = 1953) -> pd.DataFrame:
    """Term counts for every bank-year of the panel (all years, active or not)."""
    rng = np.random.default_rng(seed)
    rows = []
    for code, grp in panel.groupby("bank_code", sort=False):
        orisk_pp = np.exp(rng.uniform(np.log(0.05), np.log(0.6)))
        hr_pp = np.exp(rng.uniform(np.log(0.3), np.log(2.5)))
        pages = rng.uniform(150, 450)
        for year in grp["year"]:
            npag = int(round(pages * np.exp(rng.normal(0, 0.08))))
            orisk = int(rng.poisson(orisk_pp * npag * np.exp(rng.normal(0, 0.1))))
            rman = int(rng.poisson(orisk_pp * npag * rng.uniform(0.5, 1.5)))
            risk = orisk + rman + int(rng.poisson(npag * rng.uniform(2.0, 5.0)))
            ama = int(rng.poisson(orisk_pp * npag * 0.05))
            hres = int(rng.poisson(hr_pp * npag * 0.15))
            emp = int(rng.poisson(hr_pp * npag * 0.7))
            col = int(rng.poisson(hr_pp * npag * 0.15))
            rows.append({"bank_code": code, "year": int(year), "orisk": orisk, "risk": risk, "rman": rman,
                         "ama": ama, "hres": hres, "emp": emp, "col": col, "workers": emp + col, "npag": npag})
    return pd.DataFrame(rows, columns=list(TEXT_COLUMNS))


_FILLER = ("the group reported steady growth in deposits and lending across its regional network during "
           "the year while net income and capital ratios improved and the board approved new targets for "
           "customer service branch modernisation and digital channels").split()


def render_report(counts: dict[str, int], seed: int = 0, words_per_page: int = 40) -> str:
    """Plain-text report in which each indicator phrase occurs exactly as often as ``counts`` says.

    ``counts['risk']`` includes the occurrences inside the two risk phrases.
    """
    rnd = random.Random(seed)
    tokens = []
    standalone_risk = counts["risk"] - counts["orisk"] - counts["rman"]
    if standalone_risk < 0:
        raise ValueError("risk count must cover the operational risk and risk management phrases")
    plan = {"orisk": counts["orisk"], "rman": counts["rman"], "risk": standalone_risk,
            **{k: counts[k] for k in ("ama", "hres", "emp", "col")}}
    for key, n in plan.items():
        for _ in range(n):
            words = TERM_PHRASES[key].split()
            if key in ("hres", "emp", "col") and rnd.random() < 0.5:
                words[-1] += "s"
            style = rnd.randrange(3)
            if style == 1:
                words = [w.upper() for w in words]
            elif style == 2:
                words = [w.capitalize() for w in words]
            tokens.append("\n".join(words) if rnd.random() < 0.2 else " ".join(words))
    rnd.shuffle(tokens)
    filler = max(words_per_page * 2, len(tokens) * 3)
    out = []
    it = iter(tokens)
    for i in range(filler + len(tokens)):
        if i % 4 == 3:
            nxt = next(it, None)
            if nxt is not None:
                out.append(nxt)
                continue
        out.append(rnd.choice(_FILLER))
    out.extend(it)
    lines, line = [], []
    for tok in out:
        line.append(tok)
        if len(line) >= 12:
            lines.append(" ".join(line))
            line = []
    lines.append(" ".join(line))
    return ".\n".join(lines) + ".\n"


def write_corpus(text: pd.DataFrame, corpus_dir) -> None:
    corpus_dir = Path(corpus_dir)
    for i, r in enumerate(text.itertuples(index=False)):
        d = corpus_dir / r.bank_code
        d.mkdir(parents=True, exist_ok=True)
        counts = {k: getattr(r, k) for k in ("orisk", "risk", "rman", "ama", "hres", "emp", "col")}
        (d / f"{r.year}.txt").write_text(render_report(counts, seed=i), encoding="utf-8")
        (d / f"{r.year}.pages").write_text(f"{r.npag}\n", encoding="utf-8")


def write_bundle(out_dir, seed: int = 2006, wiring: Wiring = Wiring()) -> dict[str, Path]:
    """Write panel.csv, macro.csv, text_indicators.csv and fx_rates.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, local = make_panel(seed, wiring)
    paths = {
        "panel": out_dir / "panel.csv",
        "macro": out_dir / "macro.csv",
        "text": out_dir / "text_indicators.csv",
        "rates": out_dir / "fx_rates.csv",
    }
    local = local.astype({"branches": int, "staff": int, "staff_r": int})
    local.to_csv(paths["panel"], index=False)
    make_macro().to_csv(paths["macro"], index=False)
    make_text_indicators(local).to_csv(paths["text"], index=False)
    make_rates().to_csv(paths["rates"], index=False)
    return paths
