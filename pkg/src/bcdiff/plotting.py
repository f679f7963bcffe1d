"""Turn evaluation reports and training logs into tidy CSV plus a figure."""

from __future__ import annotations

import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

TIDY_COLUMNS = ("metric", "r", "t", "seed", "value")


def read_rows(path) -> list[dict]:
    """Read either an eval report or a training metrics log as tidy rows."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        raw = list(reader)
    if "metric" in cols and "value" in cols:
        return [{k: row.get(k, "") for k in TIDY_COLUMNS} for row in raw]
    if "step" not in cols:
        raise ValueError(f"{path}: neither an eval report nor a metrics log")
    rows = []
    for row in raw:
        for name in cols:
            if name != "step":
                rows.append({"metric": name, "r": "", "t": row["step"], "seed": "", "value": row[name]})
    return rows


def write_tidy(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIDY_COLUMNS)
        for row in rows:
            w.writerow([row[k] for k in TIDY_COLUMNS])


def _series(rows):
    """``{metric: {r: [(t, mean value)]}}`` averaged over seeds."""
    acc = defaultdict(lambda: defaultdict(lambda: defaultdict(list)))
    for row in rows:
        try:
            t = float(row["t"]) if row["t"] != "" else 0.0
            v = float(row["value"])
        except ValueError:
            continue
        acc[row["metric"]][row["r"]][t].append(v)
    out = {}
    for metric, by_r in acc.items():
        out[metric] = {r: sorted((t, sum(vs) / len(vs)) for t, vs in pts.items()) for r, pts in by_r.items()}
    return out


def plot_report(rows, path, title: str | None = None) -> None:
    """One panel per metric, one line per ``r``."""
    series = _series(rows)
    if not series:
        raise ValueError("nothing to plot")
    n = len(series)
    fig, axes = plt.subplots(n, 1, figsize=(5.0, 2.2 * n), squeeze=False)
    for ax, (metric, by_r) in zip(axes[:, 0], sorted(series.items())):
        for r, pts in sorted(by_r.items()):
            ts, vs = zip(*pts)
            label = f"r={r}" if r != "" else None
            ax.plot(ts, vs, marker="o" if len(ts) < 20 else None, ms=3, lw=1, label=label)
        ax.set_ylabel(metric, fontsize=8)
        ax.tick_params(labelsize=7)
        if any(r != "" for r in by_r):
            ax.legend(fontsize=7, frameon=False)
    axes[-1, 0].set_xlabel("t / step", fontsize=8)
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
