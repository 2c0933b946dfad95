"""Summary plot and text report for a Monte Carlo run."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402


def summary_scatter(summary: pd.DataFrame, target_events: float, target_gross_millions: float, path) -> None:
    """One point per history (events, gross loss) with target crosshairs.

    ``summary`` has columns total_events and gross_loss_eur_millions.  The
    SVG is written without a date stamp and with fixed element ids, so
    identical inputs give identical files.
    """
    with matplotlib.rc_context({"svg.hashsalt": "fraudsim", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6.4, 4.8))
        ax.scatter(summary["total_events"], summary["gross_loss_eur_millions"], s=9, alpha=0.6,
                   color="#1f4e79", label="simulated histories", gid="histories")
        ax.axvline(target_events, color="#b22222", lw=1.0, gid="target-events", label="targets")
        ax.axhline(target_gross_millions, color="#b22222", lw=1.0, gid="target-gross")
        ax.set_xlabel("number of recorded losses (5 years)")
        ax.set_ylabel("gross recorded loss (EUR millions)")
        ax.legend(loc="best", frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def grand_summary(summary: pd.DataFrame, target_events: float, target_gross_millions: float) -> dict:
    n = summary["total_events"].to_numpy(dtype=float)
    g = summary["gross_loss_eur_millions"].to_numpy(dtype=float)
    mean_n, mean_g = math.fsum(n) / len(n), math.fsum(g) / len(g)
    return {
        "histories": len(n),
        "mean_events": mean_n,
        "mean_gross_eur_millions": mean_g,
        "events_rel_gap": mean_n / target_events - 1.0,
        "gross_rel_gap": mean_g / target_gross_millions - 1.0,
        "events_p05": float(np.quantile(n, 0.05)),
        "events_p95": float(np.quantile(n, 0.95)),
        "gross_p05": float(np.quantile(g, 0.05)),
        "gross_p95": float(np.quantile(g, 0.95)),
    }


def format_report(grand: dict, target_events: float, target_gross_millions: float,
                  signs: pd.DataFrame | None = None) -> str:
    lines = [
        "Simulation summary",
        f"  histories                 {grand['histories']}",
        f"  mean recorded events      {grand['mean_events']:.1f}  (target {target_events:g}, "
        f"gap {100 * grand['events_rel_gap']:+.1f}%)",
        f"  mean gross loss, EUR m    {grand['mean_gross_eur_millions']:.1f}  (target {target_gross_millions:g}, "
        f"gap {100 * grand['gross_rel_gap']:+.1f}%)",
        f"  events 5-95%              {grand['events_p05']:.0f} - {grand['events_p95']:.0f}",
        f"  gross 5-95%, EUR m        {grand['gross_p05']:.1f} - {grand['gross_p95']:.1f}",
    ]
    if signs is not None:
        lines += ["", "Coefficient signs in the mean regressions (reference = benchmark directions)",
                  f"  {'model':<10}{'covariate':<22}{'reference':>10}{'estimate':>10}{'p-value':>11}  agrees"]
        for r in signs.itertuples():
            p = "" if not np.isfinite(r.p_value) else f"{r.p_value:.3g}"
            lines.append(f"  {r.model:<10}{r.covariate:<22}{r.reference:>10}{r.sign:>10}{p:>11} {r.signif:<3} "
                         f"{r.agrees}")
        lines += ["", "Note: GDP growth enters the severity scale regression as a linear term, not a smoothed one."]
    return "\n".join(lines) + "\n"
