import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fraudsim import ingestion as ing
from fraudsim import synthetic
from fraudsim.config import bundled_path
from fraudsim.ingestion import DailySeries, DataValidationError
from fraudsim.model import GlobalParams


def write_panel(tmp_path, mutate=None, name="panel.csv"):
    df = pd.read_csv(bundled_path("panel.csv"), dtype=str, keep_default_na=False)
    if mutate is not None:
        df = mutate(df)
    path = tmp_path / name
    df.to_csv(path, index=False)
    return path


# --- panel -----------------------------------------------------------------------

def test_bundled_panel_roster(bundled):
    p = bundled["panel"]
    per_bank = p.groupby("bank_code")["year"].nunique()
    assert len(per_bank) == 52
    assert int((per_bank == 5).sum()) == 35
    assert (p["currency"] == "EUR").all()
    assert p["year"].between(2006, 2010).all()


def test_window_bank_contributes_its_years(bundled):
    p = bundled["panel"]
    years = p.groupby("bank_code")["year"].apply(list)
    late = [b for b, ys in years.items() if ys == [2009, 2010]]
    assert late, "roster should hold a 2009-2010 entrant"
    assert (p["bank_code"] == late[0]).sum() == 2


def test_inactive_rows_kept_on_request(bundled):
    full = ing.load_panel(bundled_path("panel.csv"), bundled["rates"], active_only=False)
    assert len(full) == 52 * 5
    assert len(full) > len(bundled["panel"])


def test_ranges_of_bundled_panel(bundled):
    p = bundled["panel"]
    assert p["staff"].between(10_000, 140_000).all()
    assert p["branches"].between(300, 10_000).all()
    assert (p["staff_r"] <= p["staff"]).all() and (p["loans_r"] <= p["loans"]).all()


def test_retail_above_total_is_reported_with_line(tmp_path, bundled):
    def bump(df):
        df.loc[3, "staff_r"] = str(int(df.loc[3, "staff"]) + 1)
        return df
    with pytest.raises(DataValidationError) as err:
        ing.load_panel(write_panel(tmp_path, bump), bundled["rates"])
    issue = err.value.issues[0]
    assert issue.line == 5 and issue.column == "staff_r"
    assert "line 5" in str(err.value)


def test_bad_header_names_the_column(tmp_path, bundled):
    path = write_panel(tmp_path, lambda df: df.rename(columns={"tier1": "tier_1"}))
    with pytest.raises(DataValidationError) as err:
        ing.load_panel(path, bundled["rates"])
    cols = {i.column for i in err.value.issues}
    assert {"tier1", "tier_1"} <= cols


def test_non_numeric_cell(tmp_path, bundled):
    def spoil(df):
        df.loc[0, "branches"] = "many"
        return df
    with pytest.raises(DataValidationError, match="line 2, column 'branches'"):
        ing.load_panel(write_panel(tmp_path, spoil), bundled["rates"])


def test_year_outside_sample(tmp_path, bundled):
    def shift(df):
        df.loc[0, "year"] = "2011"
        return df
    with pytest.raises(DataValidationError, match="year"):
        ing.load_panel(write_panel(tmp_path, shift), bundled["rates"])


def test_missing_rate_is_an_error(tmp_path, bundled):
    rates = {k: v for k, v in bundled["rates"].items() if k[0] != "USD"}
    with pytest.raises(DataValidationError, match="no rate for USD"):
        ing.load_panel(bundled_path("panel.csv"), rates)


def test_foreign_currency_without_rates():
    with pytest.raises(DataValidationError, match="rates"):
        ing.load_panel(bundled_path("panel.csv"))


def test_currency_round_trip(bundled):
    local = pd.read_csv(bundled_path("panel.csv"))
    eur = ing.to_eur(local, bundled["rates"])
    back = ing.to_eur(eur.assign(currency=local["currency"]), bundled["rates"], inverse=True)
    for col in ing.CURRENCY_FIELDS:
        np.testing.assert_allclose(back[col], local[col], rtol=1e-9)
    assert (back["currency"] == local["currency"]).all()


def test_eur_rows_unchanged(bundled):
    local = pd.read_csv(bundled_path("panel.csv"))
    eur = ing.to_eur(local, bundled["rates"])
    sel = local["currency"] == "EUR"
    np.testing.assert_array_equal(eur.loc[sel, "loans_r"], local.loc[sel, "loans_r"])


@given(st.floats(1e-6, 1e6), st.floats(0.0, 1e9))
def test_currency_round_trip_property(rate, value):
    df = pd.DataFrame({"currency": ["XXX"], "year": [2007], **{c: [value] for c in ing.CURRENCY_FIELDS}})
    rates = {("XXX", 2007): rate}
    back = ing.to_eur(ing.to_eur(df, rates).assign(currency="XXX"), rates, inverse=True)
    assert back["loans"].iloc[0] == pytest.approx(value, rel=1e-9, abs=1e-300)


def test_rates_must_be_positive(tmp_path):
    path = tmp_path / "rates.csv"
    path.write_text("currency,year,eur_per_unit\nUSD,2006,0.8\nUSD,2007,-1\n")
    with pytest.raises(DataValidationError, match="line 3"):
        ing.load_rates(path)


# --- macro -------------------------------------------------------------------------

def test_macro_crisis_and_completeness(bundled):
    m = bundled["macro"]
    assert (m.loc[m["year"] == 2008, "crisis"] == 1).all()
    assert (m.loc[m["year"] == 2007, "crisis"] == 1).all()
    assert (m.loc[~m["year"].isin([2007, 2008]), "crisis"] == 0).all()
    used = set(zip(bundled["panel"]["country_code"], bundled["panel"]["year"]))
    have = set(zip(m["country_code"], m["year"]))
    assert used <= have
    assert m["cpi"].notna().all()


def test_macro_wrong_crisis_flag(tmp_path):
    df = pd.read_csv(bundled_path("macro.csv"))
    df.loc[df["year"] == 2006, "crisis"] = 1
    path = tmp_path / "macro.csv"
    df.to_csv(path, index=False)
    with pytest.raises(DataValidationError, match="crisis"):
        ing.load_macro(path)


def test_join_macro_row_count(bundled):
    j = ing.join_macro(bundled["panel"], bundled["macro"])
    assert len(j) == len(bundled["panel"]) <= 260
    assert j["cpi"].notna().all()


def test_join_unknown_country(bundled):
    panel = bundled["panel"].copy()
    panel.loc[0, "country_code"] = "XYZ"
    with pytest.raises(DataValidationError, match="XYZ"):
        ing.join_macro(panel, bundled["macro"])


# --- text indicators ---------------------------------------------------------------------

def test_text_indicator_ratios(bundled):
    t = bundled["text"]
    assert len(t) == 260
    assert (t["workers"] == t["emp"] + t["col"]).all()
    np.testing.assert_allclose(t["orisk_pp"], t["orisk"] / t["npag"])
    np.testing.assert_allclose(t["m"], t["orisk_pp"])
    np.testing.assert_allclose(t["h"], (t["hres"] + t["workers"]) / t["npag"])


def test_text_workers_invariant(tmp_path):
    df = pd.read_csv(bundled_path("text_indicators.csv"))
    df.loc[7, "workers"] += 1
    path = tmp_path / "text.csv"
    df.to_csv(path, index=False)
    with pytest.raises(DataValidationError, match="line 9, column 'workers'"):
        ing.load_text_indicators(path)


def corpus_file(root, bank, year, text, pages):
    d = root / bank
    d.mkdir(parents=True, exist_ok=True)
    (d / f"{year}.txt").write_text(text, encoding="utf-8")
    if pages is not None:
        (d / f"{year}.pages").write_text(f"{pages}\n", encoding="utf-8")


def test_corpus_ratio_example(tmp_path):
    corpus_file(tmp_path, "AAA", 2007, "we manage operational risk.\n" * 5, 10)
    t = ing.term_frequency_indicators(tmp_path)
    row = t.iloc[0]
    assert row["orisk"] == 5 and row["orisk_pp"] == 0.5
    assert row["risk"] == 5 and row["rman"] == 0


def test_corpus_empty_document(tmp_path):
    corpus_file(tmp_path, "AAA", 2007, "", 3)
    row = ing.term_frequency_indicators(tmp_path).iloc[0]
    assert all(row[k] == 0 for k in (*ing.TERM_KEYS, "workers"))


def test_corpus_missing_page_count(tmp_path):
    corpus_file(tmp_path, "AAA", 2007, "risk", None)
    with pytest.raises(DataValidationError, match="missing page count"):
        ing.term_frequency_indicators(tmp_path)


def test_terms_case_and_line_breaks():
    text = "Operational Risk and operational risk, OPERATIONAL\nRISK; Risk Management of employees and a colleague"
    c = ing.count_terms(text)
    assert c["orisk"] == 3
    assert c["rman"] == 1
    assert c["risk"] == 4
    assert c["emp"] == 1 and c["col"] == 1 and c["workers"] == 2


def test_terms_are_whole_words():
    c = ing.count_terms("riskless risky asterisk drama amalgam AMA employer")
    assert c["risk"] == 0 and c["ama"] == 1 and c["emp"] == 0


words = st.lists(st.sampled_from(["operational risk", "risk management", "risk", "human resources",
                                  "employee", "colleagues", "AMA", "the", "bank", "loans"]), max_size=40)


@given(words, st.randoms(use_true_random=False))
def test_counts_invariant_to_case_and_breaks(tokens, rnd):
    plain = " ".join(tokens)
    mangled = []
    for tok in tokens:
        tok = "".join(ch.upper() if rnd.random() < 0.5 else ch.lower() for ch in tok)
        mangled.append(tok.replace(" ", rnd.choice([" ", "\n", "  ", " \n "])))
    assert ing.count_terms(plain) == ing.count_terms(rnd.choice(["\n", " "]).join(mangled))


def test_generated_corpus_matches_table(tmp_path, bundled):
    sample = bundled["text"].iloc[::13][list(ing.TEXT_COLUMNS)].reset_index(drop=True)
    synthetic.write_corpus(sample, tmp_path)
    got = ing.term_frequency_indicators(tmp_path)
    want = sample.sort_values(["bank_code", "year"]).reset_index(drop=True)
    pd.testing.assert_frame_equal(got[list(ing.TEXT_COLUMNS)], want, check_dtype=False)


# --- drivers and interpolation --------------------------------------------------------------

def test_annual_drivers(bundled):
    d = bundled["drivers"]
    p = bundled["panel"]
    assert len(d) == len(p)
    np.testing.assert_allclose(d["productivity"], p["loans_r"] / p["staff_r"])
    np.testing.assert_allclose(d["emp_per_branch"], p["staff_r"] / p["branches"])
    np.testing.assert_allclose(d["income"], p["nic_r"])


def test_income_falls_back_to_loans_margin(bundled):
    panel = bundled["panel"].copy()
    panel.loc[0, "nic_r"] = 0.0
    d = ing.annual_drivers(panel, bundled["text"], income_margin=0.03)
    assert d.loc[0, "income"] == pytest.approx(panel.loc[0, "loans_r"] * 0.03)


def test_drivers_need_text_rows(bundled):
    first = bundled["panel"].iloc[0]
    t = bundled["text"]
    text = t[~((t["bank_code"] == first["bank_code"]) & (t["year"] == first["year"]))]
    with pytest.raises(DataValidationError, match="no textual indicators"):
        ing.annual_drivers(bundled["panel"], text)


def test_interpolation_anchors_and_midpoint():
    anchors = np.array([10.0, 20.0, 14.0])
    path = ing.interpolate_annual(anchors, 260)
    assert len(path) == 780
    assert np.all(path[:260] == 10.0)
    assert path[259] == 10.0 and path[519] == 20.0 and path[779] == 14.0
    assert path[259 + 130] == pytest.approx(15.0, rel=1e-15)


@settings(max_examples=50)
@given(st.lists(st.floats(0.1, 1e4), min_size=1, max_size=5), st.integers(2, 300))
def test_interpolation_exact_and_monotone(anchors, n):
    path = ing.interpolate_annual(np.array(anchors), n)
    assert len(path) == len(anchors) * n
    np.testing.assert_array_equal(path[n - 1::n], anchors)
    for k in range(1, len(anchors)):
        seg = path[(k - 1) * n + n - 1:(k + 1) * n]
        diffs = np.diff(seg)
        assert np.all(diffs >= -1e-9) or np.all(diffs <= 1e-9)


def test_daily_series_length_and_income(bundled):
    gp = GlobalParams()
    series = ing.interpolate_daily(bundled["drivers"], gp)
    full = [s for s in series.values() if len(s) == 1300]
    assert len(full) == 35
    s = full[0]
    np.testing.assert_array_equal(s.tau, np.arange(1, 1301))
    ann = bundled["drivers"].query("bank_code == @s.bank_code").sort_values("year")
    np.testing.assert_allclose(s.values["income"][259::260], ann["income"].to_numpy() / 260)


def test_late_entrant_series_offset(bundled):
    series = ing.interpolate_daily(bundled["drivers"], GlobalParams())
    late = [s for s in series.values() if len(s) == 520]
    assert late and late[0].tau[0] == 3 * 260 + 1


def test_non_contiguous_years_rejected():
    df = pd.DataFrame({"bank_code": ["A", "A"], "year": [2006, 2008], **{f: [1.0, 1.0] for f in ing.DRIVER_FIELDS}})
    with pytest.raises(DataValidationError, match="non-contiguous"):
        ing.interpolate_daily(df, GlobalParams())


def series(code, tau, a, e):
    tau = np.asarray(tau)
    return DailySeries(code, tau, {"productivity": np.full(len(tau), a, dtype=float),
                                   "emp_per_branch": np.full(len(tau), e, dtype=float)})


def test_cross_bank_means_single_and_pair():
    assert ing.cross_bank_means({"A": series("A", [1, 2], 3.0, 12.0)}, 2) == (3.0, 12.0)
    pair = {"A": series("A", [1, 2], 2.0, 10.0), "B": series("B", [1, 2], 4.0, 30.0)}
    assert ing.cross_bank_means(pair, 1) == (3.0, 20.0)


def test_cross_bank_means_follow_active_set():
    s = {"A": series("A", range(1, 11), 2.0, 10.0), "B": series("B", range(6, 11), 6.0, 40.0)}
    a, e = ing.cross_bank_mean_arrays(s, 10)
    for tau in range(1, 11):
        assert (a[tau - 1], e[tau - 1]) == ing.cross_bank_means(s, tau)
    assert e[4] == 10.0 and e[5] == 25.0
    with pytest.raises(ValueError):
        ing.cross_bank_means(s, 11)
