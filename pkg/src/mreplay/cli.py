"""Command-line front end.

Subcommands: gen, split, train, eval, ablate, sweep, plot, report.
A JSON config file mirrors the DataConfig / TrainConfig field names under
"data" and "train" sections; command-line flags override single fields.
Outputs land under --out, the MREPLAY_OUT env var, or ./runs.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (DataConfig, Dataset, SessionPlan, SessionSplit, apply_scaler,
                   grade_split, generate_synthetic, inject_label_noise,
                   load_csv, normalize_scores, save_csv)
from .metrics import spearman
from .plots import pca_plot, scatter_plot, sessions_plot, sweep_plot
from .trainer import (ABLATION_FLAGS, METHODS, RunResult, TrainConfig,
                      evaluate_on, run_continual, run_sweep)

SPLIT_FORMAT_VERSION = 1
DEFAULT_SWEEP_VALUES = {"shots": [5, 10, 15, 20], "noise": [0.0, 3.0, 6.0, 9.0],
                        "memory": [3, 5, 7, 9, 11]}
ABLATION_VARIANTS = ("full", "no_mp", "no_residual", "no_ii_gr", "no_j_gr",
                     "no_iij_gr", "mse_gr", "random_sampling")


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config root must be an object")
    known = {"data", "train", "seeds"}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"{path}: unknown config sections {sorted(unknown)}")
    return raw


def _data_config(cfg: dict) -> DataConfig:
    section = dict(cfg.get("data", {}))
    known = {f.name for f in fields(DataConfig)}
    unknown = set(section) - known
    if unknown:
        raise ValueError(f"unknown data config fields: {sorted(unknown)}")
    return DataConfig(**section)


def _train_config(cfg: dict, args) -> TrainConfig:
    section = dict(cfg.get("train", {}))
    tc = TrainConfig.from_dict(section)
    overrides = {}
    if getattr(args, "method", None):
        overrides["method"] = args.method
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "online", False):
        overrides["online"] = True
    for flag in ABLATION_FLAGS:
        if getattr(args, flag, False):
            overrides[flag] = True
    return replace(tc, **overrides) if overrides else tc


def _out_root(args) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(os.environ.get("MREPLAY_OUT", "runs"))


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _write_rows(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else
                        ("" if v is None else repr(v) if isinstance(v, float) else str(v))
                        for v in row])


# ------------------------------------------------------------------- splits


def split_manifest(plan: SessionPlan, seed: int) -> dict:
    return {
        "format_version": SPLIT_FORMAT_VERSION,
        "T": plan.n_sessions,
        "shots": plan.shots,
        "seed": seed,
        "sessions": [{"session": s.session,
                      "train": [x.sample_id for x in s.train],
                      "held_out": [x.sample_id for x in s.held_out]}
                     for s in plan.sessions],
    }


def plan_from_manifest(dataset: Dataset, manifest: dict) -> SessionPlan:
    version = manifest.get("format_version")
    if version != SPLIT_FORMAT_VERSION:
        raise ValueError(f"split manifest format {version!r} does not match "
                         f"supported version {SPLIT_FORMAT_VERSION}")
    by_id = {s.sample_id: s for s in dataset.samples}
    seen: set[str] = set()
    sessions = []
    for entry in manifest["sessions"]:
        t = entry["session"]

        def grab(ids):
            out = []
            for sid in ids:
                if sid not in by_id:
                    raise ValueError(f"split manifest references unknown id {sid!r}")
                if sid in seen:
                    raise ValueError(f"split manifest reuses id {sid!r}")
                seen.add(sid)
                out.append(replace(by_id[sid], grade=t))
            return tuple(out)

        sessions.append(SessionSplit(session=t, train=grab(entry["train"]),
                                     held_out=grab(entry["held_out"])))
    return SessionPlan(sessions=tuple(sessions), shots=manifest["shots"],
                       input_width=dataset.input_width,
                       score_range=dataset.score_range,
                       feature_mode=dataset.feature_mode)


def _build_plan(dataset: Dataset, data_cfg: DataConfig, split_path: str | None,
                split_seed: int):
    if split_path:
        with open(split_path) as fh:
            manifest = json.load(fh)
        plan = plan_from_manifest(dataset, manifest)
    else:
        plan = grade_split(dataset, data_cfg.T, data_cfg.shots, split_seed)
        manifest = split_manifest(plan, split_seed)
    if data_cfg.label_noise > 0:
        plan = inject_label_noise(plan, data_cfg.label_noise, split_seed)
    return plan, manifest


def _load_dataset(args, data_cfg: DataConfig) -> Dataset:
    if getattr(args, "dataset", None):
        return load_csv(args.dataset)
    return generate_synthetic(data_cfg)


# -------------------------------------------------------------- subcommands


def cmd_gen(args) -> int:
    cfg = _load_config(args.config)
    data_cfg = _data_config(cfg)
    if args.seed is not None:
        data_cfg = replace(data_cfg, seed=args.seed)
    out = _out_root(args)
    out.mkdir(parents=True, exist_ok=True)
    dataset = generate_synthetic(data_cfg)
    save_csv(dataset, out / "dataset.csv")
    plan = grade_split(dataset, data_cfg.T, data_cfg.shots, data_cfg.seed)
    _write_json(out / "split.json", split_manifest(plan, data_cfg.seed))
    print(f"wrote {out / 'dataset.csv'} ({len(dataset.samples)} samples) and "
          f"{out / 'split.json'}")
    return 0


def cmd_split(args) -> int:
    cfg = _load_config(args.config)
    data_cfg = _data_config(cfg)
    seed = args.seed if args.seed is not None else data_cfg.seed
    dataset = load_csv(args.dataset)
    plan = grade_split(dataset, data_cfg.T, data_cfg.shots, seed)
    out = _out_root(args)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "split.json", split_manifest(plan, seed))
    print(f"wrote {out / 'split.json'}")
    return 0


def _results_rows(result: RunResult) -> list[list]:
    rows = []
    T = result.n_sessions
    if result.method == "joint":
        for j in range(1, T + 1):
            rows.append([T, f"rho_on_{j}", result.matrix.cell(T, j)])
        rows.append([T, "rho_avg", result.summary["rho_avg"]])
        return rows
    for t in range(1, T + 1):
        for j in range(1, t + 1):
            rows.append([t, f"rho_on_{j}", result.matrix.cell(t, j)])
        if t < T:
            rows.append([t, f"rho_lookahead_{t + 1}", result.matrix.cell(t, t + 1)])
        rows.append([t, "rho_avg", result.matrix.pooled[t]])
    rows.append([T, "rho_aft", result.summary["rho_aft"]])
    rows.append([T, "rho_fwt", result.summary["rho_fwt"]])
    return rows


def _run_and_write(run_dir: Path, dataset: Dataset, data_cfg: DataConfig,
                   train_cfg: TrainConfig, split_path: str | None) -> RunResult:
    run_dir.mkdir(parents=True, exist_ok=True)
    plan, manifest = _build_plan(dataset, data_cfg, split_path, train_cfg.seed)
    save_csv(dataset, run_dir / "dataset.csv")
    _write_json(run_dir / "split.json", manifest)
    plan_norm, scaler = normalize_scores(plan)
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    saved = []

    def on_session(state, t):
        path = ckpt_dir / f"session_{t:02d}.json"
        save_checkpoint(path, state, scaler, train_cfg)
        saved.append(str(path))

    result = run_continual(plan_norm, scaler, train_cfg, on_session=on_session)
    _write_rows(run_dir / "results.csv", ["session", "metric", "value"],
                _results_rows(result))
    summary = dict(result.summary)
    summary["n_sessions"] = result.n_sessions
    summary["config"] = train_cfg.to_dict()
    summary["version"] = __version__
    _write_json(run_dir / "summary.json", summary)
    manifest_doc = {
        "version": __version__,
        "config": {"data": _dc_dict(data_cfg), "train": train_cfg.to_dict()},
        "seed": train_cfg.seed,
        "artifacts": {
            "dataset": str(run_dir / "dataset.csv"),
            "split": str(run_dir / "split.json"),
            "results": str(run_dir / "results.csv"),
            "summary": str(run_dir / "summary.json"),
            "checkpoints": saved,
        },
        "wall_seconds": [r.wall_seconds for r in result.reports],
        "epochs_run": [r.epochs_run for r in result.reports],
    }
    _write_json(run_dir / "manifest.json", manifest_doc)
    return result


def _dc_dict(dc: DataConfig) -> dict:
    return {f.name: getattr(dc, f.name) for f in fields(dc)}


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    data_cfg = _data_config(cfg)
    train_cfg = _train_config(cfg, args)
    dataset = _load_dataset(args, data_cfg)
    run_dir = _out_root(args) / f"{train_cfg.method}-seed{train_cfg.seed}"
    result = _run_and_write(run_dir, dataset, data_cfg, train_cfg,
                            getattr(args, "split", None))
    s = result.summary
    aft = "-" if s["rho_aft"] is None else f"{s['rho_aft']:.4f}"
    fwt = "-" if s["rho_fwt"] is None else f"{s['rho_fwt']:.4f}"
    print(f"{train_cfg.method} seed={train_cfg.seed}: "
          f"rho_avg={s['rho_avg']:.4f} rho_aft={aft} rho_fwt={fwt}")
    print(f"run dir: {run_dir}")
    return 0


def cmd_eval(args) -> int:
    state, scaler, train_cfg = load_checkpoint(args.checkpoint)
    dataset = load_csv(args.dataset)
    with open(args.split) as fh:
        manifest = json.load(fh)
    plan = plan_from_manifest(dataset, manifest)
    plan_norm = apply_scaler(plan, scaler)
    t = state.session if train_cfg.method != "joint" else plan.n_sessions
    upto = args.session if args.session else t
    if upto > plan.n_sessions:
        raise ValueError(f"session {upto} exceeds plan with {plan.n_sessions}")
    truths, preds = [], []
    per_session = {}
    for j in range(1, upto + 1):
        truth, pred = evaluate_on(state.bundle,
                                  plan_norm.test_samples(j, train_cfg.held_out_only),
                                  scaler)
        per_session[str(j)] = spearman(truth, pred)
        truths.append(truth)
        preds.append(pred)
    payload = {"checkpoint": str(args.checkpoint), "session": t,
               "rho_per_session": per_session,
               "rho_avg": spearman(np.concatenate(truths), np.concatenate(preds))}
    if args.out:
        _write_json(Path(args.out), payload)
        print(f"wrote {args.out}")
    else:
        print(json.dumps(payload, sort_keys=True, indent=1))
    return 0


def _variant_config(base: TrainConfig, variant: str, seed: int) -> TrainConfig:
    cfg = replace(base, method="magr", seed=seed)
    if variant == "full":
        return cfg
    if variant == "no_iij_gr":
        return replace(cfg, no_ii_gr=True, no_j_gr=True)
    if variant not in ABLATION_FLAGS:
        raise ValueError(f"unknown ablation variant {variant!r}")
    return replace(cfg, **{variant: True})


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config)
    data_cfg = _data_config(cfg)
    train_cfg = _train_config(cfg, args)
    seeds = cfg.get("seeds", [train_cfg.seed])
    dataset = _load_dataset(args, data_cfg)
    out = _out_root(args)
    rows = []
    full_scores: dict[int, float] = {}
    for variant in ABLATION_VARIANTS:
        for seed in seeds:
            vc = _variant_config(train_cfg, variant, seed)
            plan, _ = _build_plan(dataset, data_cfg, None, seed)
            plan_norm, scaler = normalize_scores(plan)
            result = run_continual(plan_norm, scaler, vc)
            s = result.summary
            if variant == "full":
                full_scores[seed] = s["rho_avg"]
            delta = s["rho_avg"] - full_scores[seed]
            pct = 100.0 * delta / abs(full_scores[seed]) if full_scores[seed] else 0.0
            rows.append([variant, seed, s["rho_avg"], s["rho_aft"], s["rho_fwt"],
                         delta, pct])
            print(f"{variant} seed={seed}: rho_avg={s['rho_avg']:.4f} "
                  f"(delta={delta:+.4f})")
    _write_rows(out / "ablation.csv",
                ["variant", "seed", "rho_avg", "rho_aft", "rho_fwt",
                 "delta_rho_avg", "delta_pct"], rows)
    print(f"wrote {out / 'ablation.csv'}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    data_cfg = _data_config(cfg)
    train_cfg = _train_config(cfg, args)
    seeds = cfg.get("seeds", [train_cfg.seed])
    if args.values:
        values = [float(v) for v in args.values.split(",")]
    else:
        values = DEFAULT_SWEEP_VALUES[args.axis]
    rows = run_sweep(args.axis, values, data_cfg, train_cfg, seeds)
    out = _out_root(args)
    _write_rows(out / "sweep.csv",
                ["axis", "value", "seed", "rho_avg", "rho_aft", "rho_fwt"],
                [[r["axis"], r["value"], r["seed"], r["rho_avg"], r["rho_aft"],
                  r["rho_fwt"]] for r in rows])
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} rows)")
    return 0


def _read_results(run_dir: Path) -> list[dict]:
    with open(run_dir / "results.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_plot(args) -> int:
    run_dir = Path(args.run)
    out = Path(args.out) if args.out else run_dir / "plots"
    out.mkdir(parents=True, exist_ok=True)
    kind = args.kind
    if kind == "sessions":
        rows = _read_results(run_dir)
        curve = [(int(r["session"]), float(r["value"])) for r in rows
                 if r["metric"] == "rho_avg"]
        svg = sessions_plot({run_dir.name: curve})
        path = out / "sessions.svg"
        path.write_text(svg)
    elif kind == "sweep":
        with open(run_dir / "sweep.csv", newline="") as fh:
            raw = list(csv.DictReader(fh))
        rows = [{"axis": r["axis"], "value": float(r["value"]),
                 "seed": int(r["seed"]), "rho_avg": float(r["rho_avg"])}
                for r in raw]
        svg = sweep_plot(rows)
        path = out / "sweep.svg"
        path.write_text(svg)
    elif kind in ("scatter", "pca2d"):
        ckpts = sorted((run_dir / "checkpoints").glob("session_*.json"))
        if not ckpts:
            raise FileNotFoundError(f"no checkpoints under {run_dir}")
        state, scaler, train_cfg = load_checkpoint(ckpts[-1])
        dataset = load_csv(run_dir / "dataset.csv")
        with open(run_dir / "split.json") as fh:
            plan = plan_from_manifest(dataset, json.load(fh))
        plan_norm = apply_scaler(plan, scaler)
        if kind == "scatter":
            truths, preds, tags = [], [], []
            for j in range(1, plan.n_sessions + 1):
                truth, pred = evaluate_on(
                    state.bundle, plan_norm.test_samples(j, train_cfg.held_out_only),
                    scaler)
                truths.extend(truth)
                preds.extend(pred)
                tags.extend([j] * len(truth))
            path = out / "scatter.svg"
            path.write_text(scatter_plot(truths, preds, tags))
        else:
            if state.bank.size == 0:
                raise ValueError("empty memory bank; pca2d needs stored features")
            labels = [r.session for r in state.bank.entries]
            svg, sil = pca_plot(state.bank.features(), labels)
            path = out / "pca2d.svg"
            path.write_text(svg)
            _write_json(out / "pca2d.json", {"silhouette": sil,
                                             "n_points": state.bank.size})
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
    print(f"wrote {path}")
    return 0


def cmd_report(args) -> int:
    lines = ["| run | method | seed | rho_avg | rho_aft | rho_fwt |",
             "|---|---|---|---|---|---|"]
    for run in args.runs:
        with open(Path(run) / "summary.json") as fh:
            s = json.load(fh)
        fmt = lambda v: "-" if v is None else f"{v:.4f}"
        lines.append(f"| {Path(run).name} | {s['method']} | {s['seed']} | "
                     f"{fmt(s['rho_avg'])} | {fmt(s['rho_aft'])} | "
                     f"{fmt(s['rho_fwt'])} |")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mreplay",
                                description="continual score-regression lab")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, method_flag=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="override the seed")
        sp.add_argument("--out", help="output directory")
        if method_flag:
            sp.add_argument("--method", choices=METHODS)
            sp.add_argument("--online", action="store_true",
                            help="single-epoch online regime")
            for flag in ABLATION_FLAGS:
                sp.add_argument(f"--{flag.replace('_', '-')}", dest=flag,
                                action="store_true")

    sp = sub.add_parser("gen", help="generate a synthetic dataset + split")
    common(sp, method_flag=False)

    sp = sub.add_parser("split", help="split an existing dataset CSV")
    common(sp, method_flag=False)
    sp.add_argument("--dataset", required=True, help="dataset CSV")

    sp = sub.add_parser("train", help="run one continual training")
    common(sp)
    sp.add_argument("--dataset", help="dataset CSV (default: synthesize)")
    sp.add_argument("--split", help="split manifest JSON")

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--split", required=True)
    sp.add_argument("--session", type=int, help="evaluate sessions 1..N")
    sp.add_argument("--out", help="write metrics JSON here")

    sp = sub.add_parser("ablate", help="run the ablation grid")
    common(sp)
    sp.add_argument("--dataset", help="dataset CSV (default: synthesize)")

    sp = sub.add_parser("sweep", help="sweep one robustness axis")
    common(sp)
    sp.add_argument("--axis", choices=("shots", "noise", "memory"), required=True)
    sp.add_argument("--values", help="comma-separated axis values")

    sp = sub.add_parser("plot", help="render SVG diagnostics for a run")
    sp.add_argument("--run", required=True, help="run directory")
    sp.add_argument("--kind", choices=("scatter", "sessions", "sweep", "pca2d"),
                    required=True)
    sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("report", help="summarize one or more runs")
    sp.add_argument("--runs", nargs="+", required=True)
    sp.add_argument("--out")
    return p


COMMANDS = {"gen": cmd_gen, "split": cmd_split, "train": cmd_train,
            "eval": cmd_eval, "ablate": cmd_ablate, "sweep": cmd_sweep,
            "plot": cmd_plot, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except BrokenPipeError:
        return 0
    except Exception as e:  # noqa: BLE001 - uniform CLI error reporting
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
