"""Command-line pipeline: ingest -> calibrate -> simulate -> validate -> report.

Each stage reads the previous stage's files under the output directory
and writes its own, so stages can be rerun independently.  Exit codes:
0 ok, 2 data validation failure, 3 calibration did not converge,
4 a required upstream artifact is missing.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import pandas as pd

from fraudsim import calibration as cal
from fraudsim import ingestion as ing
from fraudsim import regression as rg
from fraudsim import report as rep
from fraudsim import simulation as sim
from fraudsim.config import RunConfig, load_config

log = logging.getLogger("fraudsim")

EXIT_OK, EXIT_DATA, EXIT_NOT_CONVERGED, EXIT_MISSING = 0, 2, 3, 4

# stage -> files it produces, relative to the output directory
ARTIFACTS = {
    "ingest": {"panel": "ingest/panel_eur.csv", "macro": "ingest/macro.csv", "text": "ingest/text_indicators.csv",
               "drivers": "ingest/drivers.csv", "covariates": "ingest/covariates.csv",
               "report": "ingest/validation_report.txt"},
    "calibrate": {"params": "calibrate/params.toml", "trace": "calibrate/trace.csv"},
    "simulate": {"events": "simulate/events.csv", "summary": "simulate/summary.csv",
                 "bank_years": "simulate/bank_years.csv"},
    "validate": {"severity": "validate/severity_coefficients.csv", "frequency": "validate/frequency_coefficients.csv",
                 "severity_aic": "validate/severity_selection.csv", "frequency_aic": "validate/frequency_selection.csv",
                 "signs": "validate/sign_report.csv", "text": "validate/regression_report.txt"},
    "report": {"svg": "report/summary.svg", "text": "report/report.txt"},
}


class MissingArtifact(Exception):
    def __init__(self, stage: str, path: Path):
        super().__init__(f"missing {path} from the '{stage}' stage; run `fraudsim {stage}` first")
        self.stage = stage


def _out(cfg: RunConfig, stage: str, key: str) -> Path:
    p = Path(cfg.out_dir) / ARTIFACTS[stage][key]
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _need(cfg: RunConfig, stage: str, key: str) -> Path:
    p = Path(cfg.out_dir) / ARTIFACTS[stage][key]
    if not p.exists():
        raise MissingArtifact(stage, p)
    return p


def _write_csv(df: pd.DataFrame, path: Path) -> None:
    # full precision so a downstream stage sees exactly the values written
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def _read_drivers(cfg: RunConfig) -> pd.DataFrame:
    return pd.read_csv(_need(cfg, "ingest", "drivers"), dtype={"bank_code": str, "year": int})


# --- stages -------------------------------------------------------------------

def cmd_ingest(cfg: RunConfig) -> int:
    missing = cfg.data.check_exist()
    if missing:
        raise ing.DataValidationError("config", [ing.ValidationIssue(None, None, f"path not found: {m}")
                                                 for m in missing])
    rates = ing.load_rates(cfg.data.rates)
    panel = ing.load_panel(cfg.data.panel, rates)
    macro = ing.load_macro(cfg.data.macro)
    if cfg.data.corpus is not None:
        text = ing.term_frequency_indicators(cfg.data.corpus)
        source = "corpus"
    else:
        text = ing.load_text_indicators(cfg.data.text)
        source = "file"
    drivers = ing.annual_drivers(panel, text)
    covariates = rg.bank_year_covariates(panel, macro)

    _write_csv(panel, _out(cfg, "ingest", "panel"))
    _write_csv(macro, _out(cfg, "ingest", "macro"))
    ing.write_text_indicators(text, _out(cfg, "ingest", "text"))
    _write_csv(drivers, _out(cfg, "ingest", "drivers"))
    _write_csv(covariates, _out(cfg, "ingest", "covariates"))

    per_bank = panel.groupby("bank_code")["year"].nunique()
    lines = [
        "validation: 0 errors",
        f"banks: {panel['bank_code'].nunique()}",
        f"active bank-years: {len(panel)}",
        f"banks active in all {per_bank.max()} years: {int((per_bank == per_bank.max()).sum())}",
        f"countries: {panel['country_code'].nunique()}",
        f"text indicators from: {source} ({len(text)} bank-years)",
    ]
    _out(cfg, "ingest", "report").write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.info("ingested %d bank-years for %d banks", len(panel), panel["bank_code"].nunique())
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig) -> int:
    drivers = _read_drivers(cfg)
    if cfg.skip_search:
        result = cal.passthrough(drivers, cfg.gp)
    else:
        result = cal.calibrate_global(drivers, cfg.targets, cfg.seed, cfg.gp, settings=cfg.search)
    cal.save_result(result, _out(cfg, "calibrate", "params"))
    cal.write_trace_csv(result, _out(cfg, "calibrate", "trace"))
    if result.searched:
        m = result.moments
        log.info("calibration objective %.3g after %d evaluations: %.1f events, EUR %.1fm, %.1f%% banks with losses",
                 result.objective, result.n_evaluations, m.events, m.gross / 1e6, 100 * m.covered)
    if not result.converged:
        log.error("calibration did not converge within %d iterations; best point written", cfg.search.max_iter)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    drivers = _read_drivers(cfg)
    result = cal.load_result(_need(cfg, "calibrate", "params"))
    world = sim.world_from_drivers(drivers, result.bank_params, result.gp)
    mc = sim.monte_carlo(world, cfg.simulation())
    sim.write_events_csv(mc, _out(cfg, "simulate", "events"))
    sim.write_summary_csv(mc, _out(cfg, "simulate", "summary"))
    sim.write_bank_year_csv(sim.bank_year_table(world, mc), _out(cfg, "simulate", "bank_years"))
    return EXIT_OK


def run_validation(covariates, events, bank_years, history: int | None):
    ds = rg.build_validation_dataset(covariates, events, bank_years, None if history is None else [history])
    if ds.severity.empty:
        raise ValueError("no recorded losses in the selected histories")
    sev = [rg.fit_trunc_weibull(s, ds.severity) for s in rg.severity_candidates()]
    freq = [rg.fit_negbin(s, ds.frequency) for s in rg.frequency_candidates()]
    bench_sev = next(f for f in sev if f.spec.scale == rg.BENCHMARK_SEVERITY.scale)
    bench_freq = next(f for f in freq if f.spec.family == "negbin1" and f.spec.scale == rg.BENCHMARK_FREQUENCY.scale)
    signs = rg.sign_report({"severity": bench_sev, "frequency": bench_freq})
    return ds, sev, freq, signs


def cmd_validate(cfg: RunConfig) -> int:
    covariates = pd.read_csv(_need(cfg, "ingest", "covariates"), dtype={"bank_code": str})
    events = pd.read_csv(_need(cfg, "simulate", "events"), dtype={"bank_code": str})
    bank_years = pd.read_csv(_need(cfg, "simulate", "bank_years"), dtype={"bank_code": str})
    history = None if cfg.validation.pool_histories else cfg.validation.history
    if history is not None and history not in set(bank_years["history"]):
        raise ValueError(f"history {history} was not simulated")
    ds, sev, freq, signs = run_validation(covariates, events, bank_years, history)

    rg.write_fit_csv(sev, _out(cfg, "validate", "severity"))
    rg.write_fit_csv(freq, _out(cfg, "validate", "frequency"))
    rg.model_selection(sev).to_csv(_out(cfg, "validate", "severity_aic"), index=False, float_format="%.10g",
                                   lineterminator="\n")
    rg.model_selection(freq).to_csv(_out(cfg, "validate", "frequency_aic"), index=False, float_format="%.10g",
                                    lineterminator="\n")
    signs.to_csv(_out(cfg, "validate", "signs"), index=False, float_format="%.10g", lineterminator="\n")
    which = "all histories pooled" if history is None else f"history {history}"
    parts = [f"Validation regressions on {which}: {len(ds.severity)} recorded losses, "
             f"{len(ds.frequency)} bank-years", ""]
    for f in sev + freq:
        parts += [rg.format_fit(f), ""]
    parts += ["Severity model selection", rg.model_selection(sev).to_string(index=False), "",
              "Frequency model selection", rg.model_selection(freq).to_string(index=False), "", rg.SIGNIF_LEGEND]
    _out(cfg, "validate", "text").write_text("\n".join(parts) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    summary = pd.read_csv(_need(cfg, "simulate", "summary"))
    signs = pd.read_csv(_need(cfg, "validate", "signs"), keep_default_na=False,
                        na_values={"estimate": [""], "p_value": [""]})
    signs["p_value"] = pd.to_numeric(signs["p_value"], errors="coerce")
    t = cfg.targets
    rep.summary_scatter(summary, t.target_event_count, t.target_gross_loss / 1e6, _out(cfg, "report", "svg"))
    grand = rep.grand_summary(summary, t.target_event_count, t.target_gross_loss / 1e6)
    _out(cfg, "report", "text").write_text(
        rep.format_report(grand, t.target_event_count, t.target_gross_loss / 1e6, signs), encoding="utf-8")
    return EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "calibrate": cmd_calibrate, "simulate": cmd_simulate,
            "validate": cmd_validate, "report": cmd_report}


# --- argument handling -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def shared(argument_default=None):
        p = argparse.ArgumentParser(add_help=False, argument_default=argument_default)
        p.add_argument("--config", type=Path, help="TOML run configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--workers", type=int, help="worker processes; 0 = one per CPU")
        p.add_argument("--out-dir", type=Path, help="output directory (overrides the config)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    # global flags work before or after the subcommand; the subcommand copy
    # only sets values that were actually given
    common = shared(argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="fraudsim", description=__doc__.splitlines()[0], parents=[shared()])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="validate and normalise the input data")
    p = sub.add_parser("calibrate", parents=[common], help="fit the mean parameters to the targets")
    p.add_argument("--skip-search", action="store_true", help="shrink the reference means without searching")
    p = sub.add_parser("simulate", parents=[common], help="run the Monte Carlo histories")
    p.add_argument("--n-histories", type=int)
    p = sub.add_parser("validate", parents=[common], help="fit the validation regressions")
    p.add_argument("--history", type=int, help="simulated history to fit (default from config)")
    p.add_argument("--pool-histories", action="store_true", help="pool every simulated history")
    sub.add_parser("report", parents=[common], help="summary plot and sign comparison")
    return parser


def config_from_args(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    if getattr(args, "skip_search", False):
        cfg.skip_search = True
    if getattr(args, "n_histories", None) is not None:
        cfg.n_histories = args.n_histories
    if getattr(args, "history", None) is not None:
        cfg.validation.history = args.history
    if getattr(args, "pool_histories", False):
        cfg.validation.pool_histories = True
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg)
    except ing.DataValidationError as exc:
        print(f"data validation failed: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MissingArtifact as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
