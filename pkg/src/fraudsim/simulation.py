"""Monte Carlo engine: all banks, all business days, many histories.

Paths are stepped with the functions in :mod:`fraudsim.model`, vectorised
over (bank, history).  Work is split into history blocks of a fixed size;
every block is a pure function of its inputs, so results do not depend on
how many workers run the blocks or in which order.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from fraudsim import model
from fraudsim.ingestion import DailySeries, cross_bank_mean_arrays, interpolate_daily
from fraudsim.model import LOSS_UNIT_EUR, BankParams, BankState, DailyDrivers, GlobalParams, LossEvent
from fraudsim.rng import block_normals, check_distinct_keys, path_normals

log = logging.getLogger(__name__)

EVENT_DTYPE = np.dtype([
    ("history", np.int32),
    ("bank", np.int32),
    ("day", np.int32),   # 0-based global business day
    ("true_loss", np.float64),
    ("observed_loss", np.float64),
])

PARAM_FIELDS = ("alpha0", "alpha1", "alpha_c", "alpha_y", "alpha_q", "rho", "beta0",
                "c_star", "gamma", "lam", "delta", "sigma2_eta", "l_min")


@dataclass
class SimulationConfig:
    n_histories: int = 500
    master_seed: int = 20120101
    start_year: int = 2006
    n_years: int = 5
    block_size: int = 25
    workers: int = 1

    def __post_init__(self) -> None:
        if self.n_histories < 1:
            raise ValueError("n_histories must be >= 1")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")

    @property
    def years(self) -> list[int]:
        return list(range(self.start_year, self.start_year + self.n_years))


@dataclass
class World:
    """Everything a simulation needs except the random draws.

    Banks are held in sorted code order; ``drivers`` arrays have shape
    (n_days, n_banks) and are only meaningful where ``active`` is true.
    """

    bank_codes: tuple[str, ...]
    params: dict[str, np.ndarray]
    gp: GlobalParams
    active: np.ndarray
    income: np.ndarray
    productivity: np.ndarray
    emp_per_branch: np.ndarray
    a_bar: np.ndarray
    e_bar: np.ndarray
    days_per_year: int
    start_year: int

    @property
    def n_days(self) -> int:
        return self.active.shape[0]

    @property
    def n_banks(self) -> int:
        return len(self.bank_codes)

    def with_params(self, bank_params: dict[str, BankParams]) -> "World":
        return World(self.bank_codes, _stack_params(self.bank_codes, bank_params), self.gp, self.active,
                     self.income, self.productivity, self.emp_per_branch, self.a_bar, self.e_bar,
                     self.days_per_year, self.start_year)

    def bank_params(self, code: str) -> BankParams:
        i = self.bank_codes.index(code)
        return BankParams(**{f: float(self.params[f][i]) for f in PARAM_FIELDS})


def _stack_params(codes, bank_params: dict[str, BankParams]) -> dict[str, np.ndarray]:
    missing = [c for c in codes if c not in bank_params]
    if missing:
        raise KeyError(f"no parameters for banks {missing}")
    return {f: np.array([getattr(bank_params[c], f) for c in codes], dtype=float) for f in PARAM_FIELDS}


def build_world(series: dict[str, DailySeries], bank_params: dict[str, BankParams], gp: GlobalParams,
                n_years: int = 5, start_year: int = 2006) -> World:
    codes = tuple(sorted(series))
    check_distinct_keys(codes)
    n_days = n_years * gp.business_days_per_year
    a_bar, e_bar = cross_bank_mean_arrays({c: series[c] for c in codes}, n_days)
    shape = (n_days, len(codes))
    active = np.zeros(shape, dtype=bool)
    # inactive cells get harmless placeholders; they are masked out
    income = np.ones(shape)
    prod = np.tile(a_bar[:, None], (1, len(codes)))
    epb = np.tile(e_bar[:, None], (1, len(codes)))
    for i, c in enumerate(codes):
        s = series[c]
        idx = s.tau - 1
        active[idx, i] = True
        income[idx, i] = s.values["income"]
        prod[idx, i] = s.values["productivity"]
        epb[idx, i] = s.values["emp_per_branch"]
    return World(codes, _stack_params(codes, bank_params), gp, active, income, prod, epb, a_bar, e_bar,
                 gp.business_days_per_year, start_year)


def world_from_drivers(drivers, bank_params, gp, n_years: int = 5, start_year: int = 2006) -> World:
    return build_world(interpolate_daily(drivers, gp, start_year), bank_params, gp, n_years, start_year)


# --- the stepping kernel --------------------------------------------------

@dataclass
class BlockResult:
    histories: np.ndarray
    events: np.ndarray                 # EVENT_DTYPE, canonical order
    control_sum: np.ndarray | None     # (n_years, n_banks, n_hist)
    counts: np.ndarray                 # (n_banks, n_hist)
    gross: np.ndarray                  # (n_banks, n_hist), EUR


def _param_view(params: dict[str, np.ndarray], sl=None) -> BankParams:
    return BankParams(**{f: (params[f] if sl is None else params[f][sl])[:, None] for f in PARAM_FIELDS})


def run_block(world: World, histories: Sequence[int], master_seed: int, normals: np.ndarray | None = None,
              collect_events: bool = True, track_control: bool = True) -> BlockResult:
    """Simulate every bank for the given histories.

    ``normals`` (n_days, n_banks, n_hist, 2) may be supplied to reuse draws,
    e.g. common random numbers across calibration evaluations.
    """
    histories = np.asarray(histories, dtype=np.int64)
    nd, nb, nh = world.n_days, world.n_banks, len(histories)
    if normals is None:
        normals = block_normals(master_seed, world.bank_codes, histories, nd)
    gp = world.gp
    bp = _param_view(world.params)
    init = model.init_state(bp, gp)
    shape = (nb, nh)
    xi = np.zeros(shape)
    sigma2 = np.broadcast_to(init.sigma2, shape).copy()
    control = np.broadcast_to(init.control, shape).copy()
    quality = np.full(shape, gp.q_bar)
    cum_loss = np.zeros(shape)
    cum_income = np.zeros(shape)
    counts = np.zeros(shape, dtype=np.int64)
    gross = np.zeros(shape)
    ctrl_sum = np.zeros((nd // world.days_per_year + 1, nb, nh)) if track_control else None
    ev_parts = []

    with np.errstate(divide="ignore", invalid="ignore"):
        for d in range(nd):
            act = world.active[d][:, None]
            if not act.any():
                continue
            state = BankState(xi, sigma2, control, quality, cum_loss, np.where(cum_income > 0, cum_income, 1.0))
            drv = DailyDrivers(world.income[d][:, None], world.productivity[d][:, None],
                               world.emp_per_branch[d][:, None], world.a_bar[d], world.e_bar[d])
            # 1. shock
            xi_n, s2_n = model.step_shock(state, bp, gp, normals[d, :, :, 0])
            # 2. control from accumulators through the previous day; no
            #    income history yet means no feedback signal
            c_n = np.where(cum_income > 0, model.step_control(state, bp, gp), control)
            # 3. quality
            q_n = model.step_quality(state, drv, bp, gp)
            # 4. severity, EUR
            stepped = BankState(xi_n, s2_n, c_n, q_n)
            true_loss = model.loss_severity(stepped, drv, bp) * LOSS_UNIT_EUR
            # 5. observation and recording
            obs, rec = model.observe_and_record(true_loss, bp, normals[d, :, :, 1])
            rec &= act
            # 6. accumulators
            xi = np.where(act, xi_n, xi)
            sigma2 = np.where(act, s2_n, sigma2)
            control = np.where(act, c_n, control)
            quality = np.where(act, q_n, quality)
            rec_loss = np.where(rec, obs, 0.0)
            cum_loss = cum_loss + rec_loss
            cum_income = cum_income + np.where(act, drv.income_y * LOSS_UNIT_EUR, 0.0)
            counts += rec
            gross += rec_loss
            if track_control:
                ctrl_sum[d // world.days_per_year] += np.where(act, control, 0.0)
            if collect_events and rec.any():
                bi, hi = np.nonzero(rec)
                part = np.empty(len(bi), dtype=EVENT_DTYPE)
                part["history"] = histories[hi]
                part["bank"] = bi
                part["day"] = d
                part["true_loss"] = true_loss[bi, hi]
                part["observed_loss"] = obs[bi, hi]
                ev_parts.append(part)

    events = np.concatenate(ev_parts) if ev_parts else np.empty(0, dtype=EVENT_DTYPE)
    events = events[np.lexsort((events["day"], events["bank"], events["history"]))]
    if ctrl_sum is not None:
        ctrl_sum = ctrl_sum[: world.n_days // world.days_per_year]
    return BlockResult(histories, events, ctrl_sum, counts, gross)


def simulate_bank_path(world: World, bank_code: str, master_seed: int, history: int,
                       bank_params: BankParams | None = None) -> list[LossEvent]:
    """Recorded loss events for one bank in one history.

    Scalar day-by-day loop; the same arithmetic as :func:`run_block` on a
    single path, so both give the same events.
    """
    i = world.bank_codes.index(bank_code)
    bp = bank_params or world.bank_params(bank_code)
    gp = world.gp
    z = path_normals(master_seed, bank_code, history, world.n_days)
    state = model.init_state(bp, gp)
    events = []
    for d in np.flatnonzero(world.active[:, i]):
        drv = DailyDrivers(world.income[d, i], world.productivity[d, i], world.emp_per_branch[d, i],
                           world.a_bar[d], world.e_bar[d])
        try:
            xi, s2 = model.step_shock(state, bp, gp, z[d, 0])
        except FloatingPointError as exc:
            raise FloatingPointError(f"{bank_code}, day {d + 1}: {exc}") from exc
        c = model.step_control(state, bp, gp) if state.cum_income > 0 else state.control
        q = model.step_quality(state, drv, bp, gp)
        stepped = state.evolve(xi=xi, sigma2=s2, control=c, quality=q)
        true_loss = float(model.loss_severity(stepped, drv, bp)) * LOSS_UNIT_EUR
        obs, rec = model.observe_and_record(true_loss, bp, z[d, 1])
        obs, rec = float(obs), bool(rec)
        if rec:
            events.append(LossEvent(bank_code, int(d) + 1, true_loss, obs, True))
        state = stepped.evolve(cum_obs_loss=state.cum_obs_loss + (obs if rec else 0.0),
                               cum_income=state.cum_income + drv.income_y * LOSS_UNIT_EUR)
    return events


# --- summaries ------------------------------------------------------------

@dataclass
class HistorySummary:
    history: int
    total_events: int
    gross_loss: float                    # EUR
    bank_codes: tuple[str, ...]
    bank_counts: np.ndarray
    bank_gross: np.ndarray               # EUR
    bank_year_counts: np.ndarray         # (n_banks, n_years)
    events: np.ndarray = field(repr=False)
    bank_year_control: np.ndarray | None = field(default=None, repr=False)

    def per_bank(self) -> dict[str, tuple[int, float]]:
        return {c: (int(n), float(g)) for c, n, g in zip(self.bank_codes, self.bank_counts, self.bank_gross)}

    def severities(self, bank_code: str, year_index: int, days_per_year: int = 260) -> np.ndarray:
        i = self.bank_codes.index(bank_code)
        ev = self.events
        sel = (ev["bank"] == i) & (ev["day"] // days_per_year == year_index)
        return ev["observed_loss"][sel]


def summarize(world: World, block: BlockResult) -> list[HistorySummary]:
    ny = world.n_days // world.days_per_year
    out = []
    ev = block.events
    bounds = np.searchsorted(ev["history"], np.r_[block.histories, block.histories[-1] + 1]) if len(ev) else None
    for j, h in enumerate(block.histories):
        e = ev[bounds[j]:bounds[j + 1]] if bounds is not None else ev
        by = np.zeros((world.n_banks, ny), dtype=np.int64)
        np.add.at(by, (e["bank"], e["day"] // world.days_per_year), 1)
        bank_gross = block.gross[:, j].copy()
        ctrl = None
        if block.control_sum is not None:
            days = world.active.reshape(ny, world.days_per_year, world.n_banks).sum(axis=1).T
            with np.errstate(invalid="ignore", divide="ignore"):
                ctrl = np.where(days > 0, block.control_sum[:, :, j].T / days, np.nan)
        out.append(HistorySummary(
            history=int(h),
            total_events=int(block.counts[:, j].sum()),
            gross_loss=math.fsum(bank_gross),
            bank_codes=world.bank_codes,
            bank_counts=block.counts[:, j].copy(),
            bank_gross=bank_gross,
            bank_year_counts=by,
            events=e,
            bank_year_control=ctrl,
        ))
    return out


def simulate_history(world: World, master_seed: int, history: int) -> HistorySummary:
    return summarize(world, run_block(world, [history], master_seed))[0]


@dataclass
class MonteCarloResult:
    summaries: list[HistorySummary]
    bank_codes: tuple[str, ...]
    start_year: int
    days_per_year: int

    @property
    def mean_events(self) -> float:
        return math.fsum(s.total_events for s in self.summaries) / len(self.summaries)

    @property
    def mean_gross(self) -> float:
        return math.fsum(s.gross_loss for s in self.summaries) / len(self.summaries)

    def all_events(self) -> np.ndarray:
        return np.concatenate([s.events for s in self.summaries])


def _blocks(n_histories: int, block_size: int) -> list[list[int]]:
    return [list(range(s, min(s + block_size, n_histories))) for s in range(0, n_histories, block_size)]


def _run_block_task(args):
    world, hist, seed = args
    return summarize(world, run_block(world, hist, seed))


def monte_carlo(world: World, config: SimulationConfig) -> MonteCarloResult:
    blocks = _blocks(config.n_histories, config.block_size)
    workers = config.workers or os.cpu_count() or 1
    tasks = [(world, b, config.master_seed) for b in blocks]
    if workers <= 1 or len(blocks) == 1:
        parts = [_run_block_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(blocks))) as pool:
            parts = list(pool.map(_run_block_task, tasks))
    summaries = [s for part in parts for s in part]
    log.info("simulated %d histories: mean events %.1f, mean gross EUR %.1fm", len(summaries),
             math.fsum(s.total_events for s in summaries) / len(summaries),
             math.fsum(s.gross_loss for s in summaries) / len(summaries) / 1e6)
    return MonteCarloResult(summaries, world.bank_codes, world.start_year, world.days_per_year)


# --- outputs --------------------------------------------------------------

EVENT_HEADER = ("history", "bank_code", "year", "day", "observed_loss_eur")
SUMMARY_HEADER = ("history", "total_events", "gross_loss_eur_millions")


def events_frame(result: MonteCarloResult) -> pd.DataFrame:
    """All recorded events in canonical order with calendar year and day of year."""
    ev = result.all_events()
    codes = np.asarray(result.bank_codes, dtype=object)
    return pd.DataFrame({
        "history": ev["history"].astype(np.int64),
        "bank_code": codes[ev["bank"]] if len(ev) else np.empty(0, dtype=object),
        "year": result.start_year + ev["day"] // result.days_per_year,
        "day": ev["day"] % result.days_per_year + 1,
        "observed_loss_eur": ev["observed_loss"],
    }, columns=list(EVENT_HEADER))


def write_events_csv(result: MonteCarloResult, path) -> None:
    events_frame(result).to_csv(path, index=False, float_format="%.6f", lineterminator="\n")


def write_summary_csv(result: MonteCarloResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for s in result.summaries:
            w.writerow((s.history, s.total_events, f"{s.gross_loss / 1e6:.6f}"))


def read_summary_csv(path) -> list[tuple[int, int, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [(int(r["history"]), int(r["total_events"]), float(r["gross_loss_eur_millions"]))
                for r in csv.DictReader(fh)]


def bank_year_table(world: World, result: MonteCarloResult, histories: Iterable[int] | None = None) -> pd.DataFrame:
    """Rows of (history, bank_code, year, events, gross_eur, mean_control) for active bank-years."""
    keep = None if histories is None else set(histories)
    ny = world.n_days // world.days_per_year
    active_by = world.active.reshape(ny, world.days_per_year, world.n_banks).any(axis=1).T
    bank_idx, year_idx = np.nonzero(active_by)
    codes = np.asarray(world.bank_codes, dtype=object)
    frames = []
    for s in result.summaries:
        if keep is not None and s.history not in keep:
            continue
        gross_by = np.zeros((world.n_banks, ny))
        np.add.at(gross_by, (s.events["bank"], s.events["day"] // world.days_per_year), s.events["observed_loss"])
        ctrl = s.bank_year_control if s.bank_year_control is not None else np.full((world.n_banks, ny), np.nan)
        frames.append(pd.DataFrame({
            "history": s.history,
            "bank_code": codes[bank_idx],
            "year": world.start_year + year_idx,
            "events": s.bank_year_counts[bank_idx, year_idx],
            "gross_eur": gross_by[bank_idx, year_idx],
            "mean_control": ctrl[bank_idx, year_idx],
        }))
    cols = ["history", "bank_code", "year", "events", "gross_eur", "mean_control"]
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=cols)


def write_bank_year_csv(table, path) -> None:
    table.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
