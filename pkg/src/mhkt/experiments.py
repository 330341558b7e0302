"""Experiment grids: module ablations and one-axis hyperparameter sweeps."""

from __future__ import annotations

import csv
import io
import itertools
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset
from .trainer import LossWeights, TrainConfig, train, write_run

DEFAULT_RUN_CAP = 200

# Row order of the module ablation table.
ABLATION_ROWS: list[tuple[str, dict[str, bool]]] = [
    ("none", dict(tais=False, tgkt=False, crkt=False)),
    ("tais", dict(tais=True, tgkt=False, crkt=False)),
    ("tgkt", dict(tais=False, tgkt=True, crkt=False)),
    ("crkt", dict(tais=False, tgkt=False, crkt=True)),
    ("tais+tgkt", dict(tais=True, tgkt=True, crkt=False)),
    ("tgkt+crkt", dict(tais=False, tgkt=True, crkt=True)),
    ("all", dict(tais=True, tgkt=True, crkt=True)),
]

SWEEP_AXES = ("lambda1", "lambda2", "alpha", "labeled_per_class")
WEIGHT_AXES = ("lambda1", "lambda2", "alpha", "beta")


class RunCapExceeded(ValueError):
    pass


def run_cap() -> int:
    raw = os.environ.get("MHKT_RUN_CAP")
    if raw is None:
        return DEFAULT_RUN_CAP
    try:
        cap = int(raw)
    except ValueError:
        raise ValueError(f"MHKT_RUN_CAP must be an integer, got {raw!r}") from None
    if cap < 1:
        raise ValueError("MHKT_RUN_CAP must be >= 1")
    return cap


def with_setting(cfg: TrainConfig, name: str, value) -> TrainConfig:
    """Copy of ``cfg`` with one field (or loss weight, or module toggle set) changed."""
    if name in WEIGHT_AXES:
        return replace(cfg, weights=replace(cfg.weights, **{name: float(value)}))
    if name == "toggles":
        return replace(cfg, variant="mhkt", **value)
    return replace(cfg, **{name: value})


@dataclass
class ExperimentGrid:
    """Cartesian product of axis values, repeated over seeds.

    ``values`` holds one list per axis; each cell label is built from the
    axis values and every (cell, seed) run gets its own directory.
    """

    axes: list[str]
    values: list[list]
    seeds: list[int]
    base: TrainConfig = field(default_factory=TrainConfig)
    labels: list[list[str]] | None = None
    cap: int | None = None

    def __post_init__(self):
        if len(self.axes) != len(self.values):
            raise ValueError("one value list per axis is required")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        for a, v in zip(self.axes, self.values):
            if not v:
                raise ValueError(f"axis {a!r} has no values")
        if self.labels is None:
            self.labels = [[_fmt(x) for x in v] for v in self.values]
        cap = self.cap if self.cap is not None else run_cap()
        if self.n_runs > cap:
            raise RunCapExceeded(f"grid needs {self.n_runs} runs, above the cap of {cap} (set MHKT_RUN_CAP to raise it)")

    @property
    def n_cells(self) -> int:
        return int(np.prod([len(v) for v in self.values]))

    @property
    def n_runs(self) -> int:
        return self.n_cells * len(self.seeds)

    def cells(self):
        """Yield ``(cell_label, config_without_seed)`` in row-major order."""
        idx = [range(len(v)) for v in self.values]
        for combo in itertools.product(*idx):
            cfg = self.base
            for a, vals, i in zip(self.axes, self.values, combo):
                cfg = with_setting(cfg, a, vals[i])
            yield "_".join(f"{self.labels[k][i]}" for k, i in enumerate(combo)), cfg

    def runs(self):
        for label, cfg in self.cells():
            for s in self.seeds:
                yield label, s, replace(cfg, seed=int(s))


def _fmt(x) -> str:
    if isinstance(x, dict):
        return "+".join(k for k, v in x.items() if v) or "none"
    return str(x)


def cached_result(run_dir: Path, cfg: TrainConfig) -> dict | None:
    """Final metrics of a finished run whose config matches ``cfg``, else None."""
    try:
        saved = json.loads((run_dir / "config.json").read_text())
        final = json.loads((run_dir / "eval.json").read_text())
        history = [json.loads(x) for x in (run_dir / "metrics.jsonl").read_text().splitlines()]
    except (OSError, ValueError):
        return None
    if saved != json.loads(json.dumps(cfg.to_dict())):
        return None
    return {"final": final, "history": history}


def run_one(cfg: TrainConfig, run_dir: Path, dataset: Dataset | None = None, reuse: bool = False) -> dict:
    """Train ``cfg`` into ``run_dir`` (or reuse a matching finished run)."""
    run_dir = Path(run_dir)
    if reuse:
        hit = cached_result(run_dir, cfg)
        if hit is not None:
            return hit
    result = train(cfg, dataset)
    write_run(result, cfg, run_dir)
    return {"final": result.final, "history": result.history}


def run_grid(grid: ExperimentGrid, out_dir: str | Path, dataset: Dataset | None = None, reuse: bool = False, log=None) -> list[dict]:
    """Execute every run; returns one record per run with ``cell``, ``seed`` and ``accuracy``."""
    out = Path(out_dir)
    records = []
    for label, seed, cfg in grid.runs():
        res = run_one(cfg, out / label / f"seed{seed}", dataset, reuse)
        rec = {"cell": label, "seed": seed, "accuracy": res["final"]["accuracy"]}
        records.append(rec)
        if log:
            log(rec)
    return records


def summarize(records: list[dict]) -> dict[str, tuple[float, float, int]]:
    """Per-cell (mean, population std, n) of accuracy, in first-seen order."""
    by: dict[str, list[float]] = {}
    for r in records:
        by.setdefault(r["cell"], []).append(r["accuracy"])
    return {k: (float(np.mean(v)), float(np.std(v)), len(v)) for k, v in by.items()}


# --- table writers ------------------------------------------------------------

ABLATION_COLUMNS = ["modules", "tais", "tgkt", "crkt", "mean_accuracy", "std_accuracy", "n_seeds", "overall_accuracy"]
SWEEP_LONG_COLUMNS = ["axis", "value", "seed", "accuracy"]


def _csv(rows: list[list], header: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def ablation_table(summary: dict[str, tuple[float, float, int]], reference: tuple[float, float, int] | None = None) -> str:
    rows = []
    if reference is not None:
        m, s, n = reference
        rows.append(["target_only", "-", "-", "-", f"{m:.6f}", f"{s:.6f}", n, f"{100 * m:.2f}±{100 * s:.2f}%"])
    for name, toggles in ABLATION_ROWS:
        if name not in summary:
            continue
        m, s, n = summary[name]
        flags = [int(toggles[k]) for k in ("tais", "tgkt", "crkt")]
        rows.append([name, *flags, f"{m:.6f}", f"{s:.6f}", n, f"{100 * m:.2f}±{100 * s:.2f}%"])
    return _csv(rows, ABLATION_COLUMNS)


def sweep_tables(axis: str, labels: list[str], records: list[dict]) -> tuple[str, str]:
    """Long table (one row per value and seed) and wide table (one row per seed plus the mean curve)."""
    long_rows = [[axis, r["cell"], r["seed"], f"{r['accuracy']:.6f}"] for r in records]
    acc = {(r["cell"], r["seed"]): r["accuracy"] for r in records}
    seeds = sorted({r["seed"] for r in records})
    wide = [[s] + [f"{acc[(v, s)]:.6f}" for v in labels] for s in seeds]
    wide.append(["mean"] + [f"{np.mean([acc[(v, s)] for s in seeds]):.6f}" for v in labels])
    return _csv(long_rows, SWEEP_LONG_COLUMNS), _csv(wide, ["seed"] + labels)


def parse_sweep_values(axis: str, raw: str) -> tuple[list, list[str]]:
    """Parse a comma list; ``ALL`` on the labeled-count axis means the whole target split."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown axis {axis!r}; expected one of {SWEEP_AXES}")
    items = [x.strip() for x in raw.split(",") if x.strip()]
    if not items:
        raise ValueError("empty values list")
    values: list = []
    for x in items:
        if axis == "labeled_per_class":
            if x.upper() == "ALL":
                values.append(0)
                continue
            v = int(x)
            if v < 1:
                raise ValueError("labeled_per_class values must be >= 1 or ALL")
            values.append(v)
        else:
            v = float(x)
            LossWeights(**{axis: v})  # range check
            values.append(v)
    labels = ["ALL" if axis == "labeled_per_class" and v == 0 else x for v, x in zip(values, items)]
    return values, labels
