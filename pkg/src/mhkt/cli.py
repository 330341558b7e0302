"""Command-line entry point: ``mhkt <command> [flags]``.

Exit codes: 0 success, 2 usage error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .ascsim import RadarConfig
from .data import generate_dataset, load_dataset
from .experiments import (
    ABLATION_ROWS,
    SWEEP_AXES,
    ExperimentGrid,
    ablation_table,
    parse_sweep_values,
    run_grid,
    summarize,
    sweep_tables,
)
from .trainer import MODULES, VARIANTS, LossWeights, TrainConfig, evaluate, load_checkpoint, load_train_data, train, write_run

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

EMBED_COLUMNS_PREFIX = ["domain", "label"]


class UsageError(Exception):
    pass


def _claim_out(path: Path, force: bool) -> Path:
    """Refuse to write into an existing non-empty path unless ``force``."""
    if path.exists() and (path.is_file() or any(path.iterdir())):
        if not force:
            raise UsageError(f"{path} already exists; pass --force to overwrite")
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()
    return path


def _parse_toggles(raw: str | None) -> dict[str, bool]:
    if raw is None or raw == "all":
        return dict.fromkeys(MODULES, True)
    if raw == "none":
        return dict.fromkeys(MODULES, False)
    names = [x.strip() for x in raw.split(",") if x.strip()]
    bad = set(names) - set(MODULES)
    if bad:
        raise UsageError(f"unknown modules {sorted(bad)}; choose from {MODULES}, 'all' or 'none'")
    return {m: m in names for m in MODULES}


def _seeds(raw: str) -> list[int]:
    try:
        seeds = [int(x) for x in raw.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad seed list {raw!r}") from None
    if not seeds:
        raise UsageError("empty seed list")
    return seeds


def _config_from_args(args) -> TrainConfig:
    try:
        weights = LossWeights(lambda1=args.lambda1, lambda2=args.lambda2, beta=args.beta, alpha=args.alpha)
        return TrainConfig(
            data=str(args.data),
            labeled_per_class=args.labeled_per_class,
            batch_size=args.batch_size,
            epochs=args.epochs,
            lr=args.lr,
            seed=args.seed,
            variant=args.variant,
            weights=weights,
            steps_per_epoch=args.steps_per_epoch,
            **_parse_toggles(args.toggles),
        )
    except ValueError as e:
        raise UsageError(str(e)) from None


def _load_data(path):
    if not (Path(path) / "manifest.json").exists():
        raise UsageError(f"no dataset at {path} (manifest.json missing)")
    return load_dataset(path)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# --- commands -------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    if args.classes < 2:
        raise UsageError("--classes must be >= 2")
    if min(args.source_per_class, args.target_per_class) < 1 or args.test_per_class < 0:
        raise UsageError("per-class counts must be positive")
    out = _claim_out(Path(args.out), args.force)
    m = generate_dataset(
        RadarConfig(), args.classes, args.source_per_class, args.target_per_class, args.seed, out,
        n_test_per_class=args.test_per_class, image_shape=(args.image_size, args.image_size), snr_db=args.snr_db,
    )
    print(json.dumps({"out": str(out), "K": m.K, "counts": m.counts, "seed": m.seed}, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    ds = _load_data(args.data)
    out = _claim_out(Path(args.out), args.force)
    result = train(cfg, ds)
    write_run(result, cfg, out)
    final = result.final or {}
    print(json.dumps({"out": str(out), "accuracy": final.get("accuracy"), "loss": result.history[-1]["loss"] if result.history else {}}))
    return EXIT_OK


def _run_state(run: Path, data_override=None):
    if not (run / "checkpoint.bin").exists():
        raise UsageError(f"{run} has no checkpoint.bin")
    try:
        cfg, _ = load_checkpoint(run / "checkpoint.bin")
    except (ValueError, KeyError) as e:
        raise UsageError(f"malformed run directory {run}: {e}") from None
    if data_override:
        cfg = replace(cfg, data=str(data_override))
    ds = _load_data(cfg.data)
    data = load_train_data(cfg, ds)
    cfg, state = load_checkpoint(run / "checkpoint.bin", data)
    return cfg, ds, data, state


def cmd_eval(args) -> int:
    run = Path(args.run)
    cfg, ds, data, state = _run_state(run, args.data)
    if data.test_images is None:
        raise UsageError("dataset has no test split")
    ev = evaluate(state.model, data.test_images, data.test_labels, data.n_classes)
    print(json.dumps(ev))
    if args.out:
        _write(_claim_out(Path(args.out), args.force), json.dumps(ev, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_ablate(args) -> int:
    base = _config_from_args(args)
    ds = _load_data(args.data)
    seeds = _seeds(args.seeds)
    names = [n for n, _ in ABLATION_ROWS]
    try:
        grid = ExperimentGrid(["toggles"], [[t for _, t in ABLATION_ROWS]], seeds, replace(base, variant="mhkt"), labels=[names])
        ref_grid = ExperimentGrid(["variant"], [["target_only"]], seeds, base) if args.with_target_only else None
    except ValueError as e:
        raise UsageError(str(e)) from None
    out = _claim_out(Path(args.out), args.force)
    log = (lambda r: print(json.dumps(r), flush=True)) if args.verbose else None
    records = run_grid(grid, out / "runs", ds, log=log)
    reference = None
    if ref_grid is not None:
        reference = summarize(run_grid(ref_grid, out / "runs", ds, log=log))["target_only"]
    _write(out / "ablation.csv", ablation_table(summarize(records), reference))
    print((out / "ablation.csv").read_text(), end="")
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.axis not in SWEEP_AXES:
        raise UsageError(f"unknown axis {args.axis!r}; expected one of {SWEEP_AXES}")
    try:
        values, labels = parse_sweep_values(args.axis, args.values)
    except ValueError as e:
        raise UsageError(str(e)) from None
    base = _config_from_args(args)
    ds = _load_data(args.data)
    try:
        grid = ExperimentGrid([args.axis], [values], _seeds(args.seeds), base, labels=[labels])
    except ValueError as e:
        raise UsageError(str(e)) from None
    out = _claim_out(Path(args.out), args.force)
    log = (lambda r: print(json.dumps(r), flush=True)) if args.verbose else None
    records = run_grid(grid, out / "runs", ds, log=log)
    long_csv, wide_csv = sweep_tables(args.axis, labels, records)
    _write(out / "sweep_long.csv", long_csv)
    _write(out / "sweep.csv", wide_csv)
    print(wide_csv, end="")
    return EXIT_OK


@torch.no_grad()
def common_features(state, data, ds, cfg) -> list[tuple[str, int, np.ndarray]]:
    """Common-space vectors for every source sample and every target training sample."""
    m = state.model
    m.eval()
    rows = []
    if data.source is not None:
        u = m.branch("source", m.source_features(*data.source), stochastic=False)["u"]
        rows += [("source", int(y), v) for y, v in zip(data.source_labels, u.double().numpy())]
    images = torch.as_tensor(ds.target_images, dtype=cfg.torch_dtype).unsqueeze(1)
    u_t = torch.cat([
        m.branch("target", m.target_features(images[i : i + 256]), stochastic=False)["u"] for i in range(0, len(images), 256)
    ])
    rows += [("target", int(y), v) for y, v in zip(ds.target_labels, u_t.double().numpy())]
    m.train()
    return rows


def cmd_embed(args) -> int:
    run = Path(args.run)
    cfg, ds, data, state = _run_state(run, args.data)
    rows = common_features(state, data, ds, cfg)
    X = np.stack([r[2] for r in rows])
    d = X.shape[1]
    header = EMBED_COLUMNS_PREFIX + [f"u{i}" for i in range(d)]
    coords = None
    if args.tsne:
        from sklearn.manifold import TSNE

        perplexity = min(args.perplexity, (len(X) - 1) / 3)
        coords = TSNE(n_components=2, perplexity=perplexity, random_state=args.tsne_seed, init="pca").fit_transform(X)
        header += ["tsne_x", "tsne_y"]
    out = _claim_out(Path(args.out), args.force)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        if coords is not None:
            fh.write(f"# tsne perplexity={perplexity} seed={args.tsne_seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, (dom, y, v) in enumerate(rows):
            extra = [f"{coords[i, 0]:.6f}", f"{coords[i, 1]:.6f}"] if coords is not None else []
            w.writerow([dom, y] + [f"{x:.8g}" for x in v] + extra)
    print(json.dumps({"out": str(out), "rows": len(rows), "dim": d}))
    return EXIT_OK


def read_csv_rows(path: Path) -> list[dict]:
    with path.open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    src = Path(args.csv)
    if not src.exists():
        raise UsageError(f"{src} not found")
    rows = read_csv_rows(src)
    if not rows:
        raise UsageError(f"{src} has no data rows")
    fig, ax = plt.subplots(figsize=(5, 4))
    cols = list(rows[0])
    if cols[0] == "seed":  # wide sweep table
        values = cols[1:]
        mean = next(r for r in rows if r["seed"] == "mean")
        for r in rows:
            if r["seed"] != "mean":
                ax.plot(values, [100 * float(r[v]) for v in values], color="0.7", lw=1)
        ax.plot(values, [100 * float(mean[v]) for v in values], marker="o", color="C0", label="mean")
        ax.set_xlabel(args.xlabel or "value")
        ax.set_ylabel("accuracy (%)")
        ax.legend()
    elif cols[0] == "modules":
        names = [r["modules"] for r in rows]
        ax.bar(names, [100 * float(r["mean_accuracy"]) for r in rows], yerr=[100 * float(r["std_accuracy"]) for r in rows], color="C0")
        ax.set_ylabel("accuracy (%)")
        ax.tick_params(axis="x", rotation=45)
    elif {"tsne_x", "tsne_y"} <= set(cols):
        for (dom, marker) in (("source", "o"), ("target", "^")):
            for lab in sorted({r["label"] for r in rows}):
                pts = [(float(r["tsne_x"]), float(r["tsne_y"])) for r in rows if r["domain"] == dom and r["label"] == lab]
                if pts:
                    xy = np.array(pts)
                    ax.scatter(xy[:, 0], xy[:, 1], s=8, marker=marker, color=f"C{int(lab) % 10}", label=f"{dom} {lab}")
        ax.legend(fontsize=6)
    else:
        raise UsageError("unrecognized table; expected a sweep, ablation, or embedding CSV with 2-D coordinates")
    fig.tight_layout()
    out = _claim_out(Path(args.out), args.force)
    fig.savefig(out, dpi=args.dpi)
    plt.close(fig)
    print(json.dumps({"out": str(out)}))
    return EXIT_OK


# --- parser ---------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--labeled-per-class", type=int, default=10, help="labeled target samples per class (0 = all)")
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=2.0)
    p.add_argument("--alpha", type=float, default=0.06)
    p.add_argument("--beta", type=float, default=1e-3)
    p.add_argument("--variant", choices=VARIANTS, default="mhkt")
    p.add_argument("--toggles", default="all", help="comma list of tais,tgkt,crkt, or all / none")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=24)
    p.add_argument("--steps-per-epoch", type=int, default=None)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true", help="overwrite an existing output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mhkt", description="Heterogeneous transfer from scattering centers to SAR images.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="simulate a dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--source-per-class", type=int, default=360)
    p.add_argument("--target-per-class", type=int, default=233)
    p.add_argument("--test-per-class", type=int, default=195)
    p.add_argument("--image-size", type=int, default=128)
    p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one run")
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a run on the test split")
    p.add_argument("--run", required=True)
    p.add_argument("--data", default=None, help="override the dataset path stored in the run")
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="module ablation grid")
    _add_train_flags(p)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--with-target-only", action="store_true", help="add a target-only reference row")
    p.set_defaults(func=cmd_ablate, seed=0)

    p = sub.add_parser("sweep", help="one-axis hyperparameter sweep")
    _add_train_flags(p)
    p.add_argument("--axis", required=True, help=f"one of {', '.join(SWEEP_AXES)}")
    p.add_argument("--values", required=True, help="comma list; ALL allowed for labeled_per_class")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.set_defaults(func=cmd_sweep, seed=0)

    p = sub.add_parser("embed", help="export common-space features")
    p.add_argument("--run", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--tsne", action="store_true", help="append a 2-D t-SNE projection")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--tsne-seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("plot", help="render a CSV table to an image")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--xlabel", default=None)
    p.add_argument("--dpi", type=int, default=120)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"mhkt {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001 - any failure past validation is a runtime failure
        print(f"mhkt {args.command}: runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
