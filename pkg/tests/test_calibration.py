import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fraudsim import calibration as cal
from fraudsim.calibration import CalibrationTargets, MeanParams, RiskIndicator, SearchSettings
from fraudsim.model import GlobalParams
from fraudsim.simulation import world_from_drivers

from conftest import toy_drivers


def indicator(bank_means, overall=None):
    bank_means = np.asarray(bank_means, dtype=float)
    return RiskIndicator("x", tuple(f"B{i}" for i in range(len(bank_means))), bank_means,
                         float(bank_means.mean()) if overall is None else overall)


positive_means = arrays(np.float64, st.integers(2, 40), elements=st.floats(0.01, 1e4))


# --- shrinkage rules -------------------------------------------------------------

def test_shrink_direct_examples():
    assert cal.shrink_direct(0.4, indicator([5.0], overall=5.0))[0] == 0.4
    assert cal.shrink_direct(0.400, indicator([2.0], overall=1.0))[0] == pytest.approx(0.800, rel=1e-15)


def test_shrink_inverse_examples():
    assert cal.shrink_inverse(-275.291, indicator([3.0], overall=3.0))[0] == -275.291
    assert cal.shrink_inverse(-275.291, indicator([2.0], overall=1.0))[0] == pytest.approx(-137.6455, rel=1e-15)


def test_shrink_errors():
    with pytest.raises(ZeroDivisionError):
        cal.shrink_direct(1.0, indicator([1.0, 2.0], overall=0.0))
    with pytest.raises(ZeroDivisionError):
        cal.shrink_inverse(1.0, indicator([0.0, 2.0], overall=1.0))


@given(positive_means, st.floats(-1e3, 1e3).filter(lambda a: abs(a) > 1e-6))
def test_shrink_direct_mean_identity(means, alpha_bar):
    out = cal.shrink_direct(alpha_bar, indicator(means))
    assert out.mean() == pytest.approx(alpha_bar, rel=1e-9)


@given(positive_means)
def test_inverse_after_direct_is_identity(means):
    ind = indicator(means)
    direct = cal.shrink_direct(1.0, ind)
    back = cal.shrink_inverse(1.0, ind) * direct
    np.testing.assert_allclose(back, 1.0, rtol=1e-12)


@given(positive_means, st.floats(0.01, 100))
def test_shrink_order(means, alpha_bar):
    ind = indicator(means)
    order = np.argsort(means, kind="stable")
    d = cal.shrink_direct(alpha_bar, ind)[order]
    i = cal.shrink_inverse(alpha_bar, ind)[order]
    assert np.all(np.diff(d) >= 0)
    assert np.all(np.diff(i) <= 0)


def test_risk_indicator_uses_active_years_only():
    annual = pd.DataFrame({"bank_code": ["A", "A", "B"], "year": [2006, 2007, 2007], "x": [1.0, 3.0, 8.0]})
    ind = RiskIndicator.from_annual(annual, "x")
    assert ind.banks == ("A", "B")
    np.testing.assert_allclose(ind.bank_means, [2.0, 8.0])
    assert ind.overall_mean == pytest.approx(4.0)


def test_risk_indicator_missing_value():
    annual = pd.DataFrame({"bank_code": ["A"], "year": [2006], "x": [np.nan]})
    with pytest.raises(ValueError, match="missing x"):
        RiskIndicator.from_annual(annual, "x")


# --- bounded rescaling and half-life ---------------------------------------------------

def test_rescale_endpoints_and_midpoint():
    raw = np.array([2.0, 5.0, 3.5, 8.0])
    out = cal.rescale_bounded(raw, 0.5, 0.9)
    assert out[0] == 0.5 and out[3] == 0.9
    assert cal.rescale_bounded([2.0, 5.0, 8.0], 0.3, 0.7)[1] == pytest.approx(0.5, abs=1e-15)


def test_rescale_degenerate_range_gives_midpoint():
    np.testing.assert_array_equal(cal.rescale_bounded([4.0, 4.0, 4.0], 0.3, 0.7), 0.5)


def test_rescale_rejects_bad_band():
    with pytest.raises(ValueError):
        cal.rescale_bounded([1.0, 2.0], 0.7, 0.3)


@given(arrays(np.float64, st.integers(3, 30), elements=st.floats(-1e3, 1e3), unique=True))
def test_rescale_is_affine(raw):
    out = cal.rescale_bounded(raw, 0.5, 0.9)
    assert out.min() == 0.5 and out.max() == 0.9
    order = np.argsort(raw)
    assert np.all(np.diff(out[order]) > -1e-15)
    # ratios of differences survive the map
    i, j, k = order[0], order[-1], order[len(order) // 2]
    want = (raw[k] - raw[i]) / (raw[j] - raw[i])
    assert (out[k] - out[i]) / (out[j] - out[i]) == pytest.approx(want, abs=1e-9)


@pytest.mark.parametrize("days, want, tol", [(65, 0.0106, 5e-5), (1, 0.5, 0.0), (130, 0.00532, 5e-6)])
def test_half_life_speed(days, want, tol):
    assert cal.half_life_speed(days) == pytest.approx(want, abs=tol)


def test_half_life_halves_a_gap():
    rho = cal.half_life_speed(65)
    assert (1 - rho) ** 65 == pytest.approx(0.5, rel=1e-12)
    with pytest.raises(ValueError):
        cal.half_life_speed(0)


# --- per-bank parameters -----------------------------------------------------------------

def test_identical_banks_get_identical_params(gp):
    d = toy_drivers(3, late_entrant=False)
    twin = d[d["bank_code"] == "B1"].assign(bank_code="B1twin")
    out = cal.build_bank_params(pd.concat([d, twin]), gp)
    assert out["B1"] == out["B1twin"]


def test_bundled_params_within_parameter_bounds(bundled, gp):
    out = cal.build_bank_params(bundled["drivers"], gp)
    assert len(out) == 52
    rho = np.array([bp.rho for bp in out.values()])
    c_star = np.array([bp.c_star for bp in out.values()])
    assert rho.min() == 0.5 and rho.max() == 0.9
    assert c_star.min() == 0.3 and c_star.max() == 0.7
    assert all(bp.gamma < 0 and bp.lam == 0.0003 for bp in out.values())


def test_shrinkage_directions_on_bundled(bundled, gp):
    d = bundled["drivers"]
    out = cal.build_bank_params(d, gp)
    epb = d.groupby("bank_code")["emp_per_branch"].mean()
    lo, hi = epb.idxmin(), epb.idxmax()
    assert out[hi].alpha0 > out[lo].alpha0 and out[hi].rho > out[lo].rho and out[hi].beta0 > out[lo].beta0
    assert abs(out[hi].alpha_c) < abs(out[lo].alpha_c)
    m = d.groupby("bank_code")["m"].mean()
    assert out[m.idxmax()].c_star == 0.7 and out[m.idxmin()].c_star == 0.3
    h = d.groupby("bank_code")["h"].mean()
    assert out[h.idxmax()].delta < out[h.idxmin()].delta


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (6, 5), elements=st.floats(1e-3, 1e4)))
def test_bank_params_always_valid(values):
    gp = GlobalParams()
    df = pd.DataFrame(values, columns=["emp_per_branch", "m", "h", "assets_r", "income"])
    df["bank_code"] = [f"B{i}" for i in range(6)]
    df["year"] = 2006
    df["productivity"] = 1.0
    for bp in cal.build_bank_params(df, gp).values():
        bp.validate(gp)
        assert gp.rho_min <= bp.rho <= gp.rho_max
        assert gp.c_min <= bp.c_star <= gp.c_max


def test_passthrough_is_plain_shrinkage(bundled, gp):
    res = cal.passthrough(bundled["drivers"], gp)
    assert not res.searched and res.n_evaluations == 0
    assert res.means == MeanParams()
    assert res.bank_params == cal.build_bank_params(bundled["drivers"], gp)


# --- objective and search -------------------------------------------------------------------

def test_targets_defaults_and_validation():
    t = CalibrationTargets()
    assert (t.target_event_count, t.target_gross_loss) == (4357, 880.0e6)
    assert t.mean_severity == pytest.approx(880.0e6 / 4357)
    with pytest.raises(ValueError):
        CalibrationTargets(target_event_count=0)
    with pytest.raises(ValueError):
        CalibrationTargets(min_fraction_banks_with_losses=1.5)


def test_objective_value_formula():
    t = CalibrationTargets(100.0, 1.0e6, 0.9)
    m = cal.SimulatedMoments(events=110.0, gross=1.21e6, covered=0.8)
    sev_gap = (1.21e6 / 110 - 1e4) / 1e4
    want = sev_gap**2 + 0.1**2 + 10 * 0.1**2
    assert cal.objective_value(m, t) == pytest.approx(want, rel=1e-12)
    assert cal.objective_value(cal.SimulatedMoments(100.0, 1.0e6, 0.95), t) == 0.0


PLANTED = {"alpha0": 0.05, "alpha1": 1.0, "alpha_c": -2.0, "alpha_y": -0.5, "alpha_q": 0.5, "beta0": 0.2}
TOY_SETTINGS = SearchSettings(n_histories=4, max_iter=300, warm_start=False)


@pytest.fixture(scope="module")
def toy_problem():
    gp = GlobalParams()
    annual = toy_drivers(3, late_entrant=False)
    start = MeanParams(**PLANTED)
    world = world_from_drivers(annual, cal.build_bank_params(annual, gp, start), gp)
    obj = cal.CalibrationObjective(world, annual, CalibrationTargets(), 99, TOY_SETTINGS)
    m = obj.moments(PLANTED)
    targets = CalibrationTargets(m.events, m.gross, max(m.covered, 1e-6))
    return annual, targets


def test_objective_smoke_at_reference_means(bundled, gp):
    world = world_from_drivers(bundled["drivers"], cal.build_bank_params(bundled["drivers"], gp), gp)
    obj = cal.CalibrationObjective(world, bundled["drivers"], CalibrationTargets(), 20120101,
                                   SearchSettings(n_histories=1))
    means = {f: getattr(MeanParams(), f) for f in cal.SEARCH_FIELDS}
    assert math.isfinite(obj(means))


def test_objective_is_deterministic(toy_problem, gp):
    annual, targets = toy_problem
    world = world_from_drivers(annual, cal.build_bank_params(annual, gp), gp)
    means = {**PLANTED, "alpha1": 1.1}
    a = cal.CalibrationObjective(world, annual, targets, 99, TOY_SETTINGS)
    b = cal.CalibrationObjective(world, annual, targets, 99, TOY_SETTINGS)
    assert a(means) == a(means) == b(means)


def test_planted_point_has_zero_objective(toy_problem, gp):
    annual, targets = toy_problem
    world = world_from_drivers(annual, cal.build_bank_params(annual, gp), gp)
    obj = cal.CalibrationObjective(world, annual, targets, 99, TOY_SETTINGS)
    assert obj(PLANTED) == pytest.approx(0.0, abs=1e-20)


def test_search_recovers_planted_targets(toy_problem, gp):
    annual, targets = toy_problem
    start = MeanParams(**{**PLANTED, "alpha0": 0.08, "alpha1": 0.7, "alpha_c": -2.6, "beta0": 0.15})
    res = cal.calibrate_global(annual, targets, 99, gp, start, TOY_SETTINGS)
    first = res.trace[0]["objective"]
    assert first > 0
    assert res.objective <= 0.1 * first
    assert res.objective == min(r["objective"] for r in res.trace)
    assert len(res.bank_params) == 3


def test_search_flags_non_convergence(toy_problem, gp):
    annual, targets = toy_problem
    start = MeanParams(**{**PLANTED, "alpha1": 0.7})
    res = cal.calibrate_global(annual, targets, 99, gp, start, SearchSettings(n_histories=2, max_iter=3,
                                                                            warm_start=False))
    assert not res.converged
    assert res.objective == min(r["objective"] for r in res.trace)


def test_zero_start_rejected(toy_problem, gp):
    annual, targets = toy_problem
    with pytest.raises(ValueError, match="sign"):
        cal.calibrate_global(annual, targets, 99, gp, MeanParams(**{**PLANTED, "alpha_q": 0.0}), TOY_SETTINGS)


# --- parameter file -----------------------------------------------------------------------------

def test_toml_round_trip(tmp_path, bundled, gp):
    res = cal.passthrough(bundled["drivers"], gp)
    res.moments = cal.SimulatedMoments(4300.5, 8.7e8, 0.93)
    path = tmp_path / "params.toml"
    cal.save_result(res, path)
    back = cal.load_result(path)
    assert back.gp == res.gp and back.means == res.means
    assert back.bank_params == res.bank_params
    assert back.moments == res.moments
    assert not back.searched
    text = path.read_text()
    assert "[global]" in text and "[means]" in text and '[banks."' in text


def test_toml_rejects_unknown_keys(tmp_path, bundled, gp):
    path = tmp_path / "params.toml"
    cal.save_result(cal.passthrough(bundled["drivers"], gp), path)
    path.write_text(path.read_text().replace("[means]\n", "[means]\nbogus = 1.0\n"))
    with pytest.raises(ValueError, match="bogus"):
        cal.load_result(path)


def test_result_rejects_invalid_bank_params(bundled, gp):
    res = cal.passthrough(bundled["drivers"], gp)
    bad = {k: v for k, v in res.bank_params.items()}
    code = next(iter(bad))
    from dataclasses import replace
    bad[code] = replace(bad[code], rho=0.99)
    with pytest.raises(ValueError):
        cal.CalibrationResult(gp, res.means, bad, math.nan, None)
