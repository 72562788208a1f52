"""Command-line entry points tying the pipeline together.

Subcommands: offline-synth (dataset, models, abstraction, strategy),
simulate (one closed-loop episode from saved artifacts), benchmark (the
Monte Carlo matrix), dfa (compile and print a formula's automaton), and
check-model (validate a saved model file).  Wall-clock measurements go to
timing sidecars and the manifest's "timing" key so every primary artifact
is byte-reproducible under a fixed seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import backend_name
from .config import Config, ConfigError, load_config
from .gp import Dataset
from .imdp import Imdp, Pimdp
from .ltlf import Dfa, LtlfError, parse, to_dfa
from .online import GP_MODES, METRICS
from .pipeline import build_offline, loop_params_from, make_plant
from .sim import (
    RNG_ALGORITHM,
    monte_carlo,
    run_episode,
    write_stats_csv,
    write_timing_csv,
)
from .synthesis import ValueResult

EXIT_USAGE = 2
EXIT_FAILURE = 1


def _fail(message: str, code: int = EXIT_FAILURE):
    print(f"error: {message}", file=sys.stderr)
    raise SystemExit(code)


def _load_config(path) -> Config:
    try:
        return load_config(path)
    except ConfigError as exc:
        for issue in exc.issues:
            print(f"config error: {issue}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _manifest(cfg: Config, extra: dict, timing: dict) -> str:
    doc = {
        "tool": "gpimdp",
        "version": __version__,
        "kernel_backend": backend_name(),
        "rng": RNG_ALGORITHM,
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "config": cfg.canonical(),
        **extra,
        "timing": {k: float(v) for k, v in timing.items()},
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def cmd_offline_synth(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    art = build_offline(cfg)
    total = time.perf_counter() - t0

    art.dataset.to_csv(out / "dataset.csv", tuple(cfg.actions))
    (out / "dfa.json").write_text(art.dfa.to_json() + "\n")
    (out / "imdp.json").write_text(art.imdp.to_json() + "\n")
    (out / "pimdp.json").write_text(art.pimdp.to_json() + "\n")
    art.values.to_csv(art.pimdp, out / "strategy.csv")
    timing = dict(art.timing)
    timing["total"] = total
    (out / "manifest.json").write_text(_manifest(cfg, art.info, timing) + "\n")
    print(f"offline synthesis complete: {out}")
    for key, value in art.info.items():
        print(f"  {key}: {value}")
    if not art.values.converged:
        print("  warning: value iteration did not converge; residuals "
              f"{art.info['vi_residuals']}", file=sys.stderr)
    return 0


def _load_artifacts(cfg: Config, art_dir: Path):
    dataset_path = art_dir / "dataset.csv"
    if not dataset_path.exists():
        _fail(f"dataset file not found: {dataset_path}", EXIT_USAGE)
    dataset = Dataset.from_csv(dataset_path, len(cfg.actions), tuple(cfg.actions))
    imdp = Imdp.from_json((art_dir / "imdp.json").read_text())
    dfa = Dfa.from_json((art_dir / "dfa.json").read_text())
    pimdp = Pimdp(imdp, dfa)
    values = _load_values(art_dir / "strategy.csv", pimdp, cfg)
    return dataset, imdp, dfa, pimdp, values


def _load_values(path, pimdp: Pimdp, cfg: Config) -> ValueResult:
    action_index = {name: i for i, name in enumerate(cfg.actions)}
    p_lower = np.zeros(pimdp.n_states)
    p_upper = np.zeros(pimdp.n_states)
    strategy = np.full(pimdp.n_states, -1, dtype=np.int32)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            sid = int(row["state"])
            if (int(row["region"]), int(row["dfa_state"])) != pimdp.states[sid]:
                _fail(f"strategy file does not match the rebuilt product at state {sid}")
            p_lower[sid] = float(row["p_lower"])
            p_upper[sid] = float(row["p_upper"])
            if row["action"]:
                strategy[sid] = action_index[row["action"]]
    return ValueResult(p_lower, p_upper, strategy, (0, 0), (0.0, 0.0), True)


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    art_dir = Path(args.artifacts)
    if not art_dir.exists():
        _fail(f"artifact directory not found: {art_dir}", EXIT_USAGE)
    dataset, imdp, dfa, pimdp, values = _load_artifacts(cfg, art_dir)

    from .pipeline import fit_models
    from .partition import Region, build_partition

    plant = make_plant(cfg)
    models = fit_models(cfg, dataset)
    regions = [Region(name, tuple(lo), tuple(hi)) for name, (lo, hi) in cfg.regions.items()]
    partition = build_partition(
        cfg.bounds_lower, cfg.bounds_upper, cfg.cells_per_dim, regions,
        tuple(cfg.propositions), cfg.max_cells,
    )

    x0 = np.array([float(v) for v in args.x0.split(",")])
    if len(x0) != cfg.n_dim:
        _fail(f"--x0 must have {cfg.n_dim} coordinates", EXIT_USAGE)
    params = loop_params_from(cfg, args.mode, args.metrics)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, 9000])))
    record = run_episode(
        plant, x0, pimdp, partition, plant.noise, models, dataset, values, params, rng,
    )
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    record.to_jsonl(out / "run.jsonl", out / "run.timing.jsonl")
    print(f"episode finished: outcome={record.outcome} steps={record.n_steps} "
          f"accepted_updates={record.refinement.accepted}")
    print(f"artifacts: {out / 'run.jsonl'}")
    return 0


def cmd_benchmark(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    art_dir = Path(args.artifacts)
    if not art_dir.exists():
        _fail(f"artifact directory not found: {art_dir}", EXIT_USAGE)
    dataset, imdp, dfa, pimdp, values = _load_artifacts(cfg, art_dir)

    from .pipeline import fit_models
    from .partition import Region, build_partition

    plant = make_plant(cfg)
    models = fit_models(cfg, dataset)
    regions = [Region(name, tuple(lo), tuple(hi)) for name, (lo, hi) in cfg.regions.items()]
    partition = build_partition(
        cfg.bounds_lower, cfg.bounds_upper, cfg.cells_per_dim, regions,
        tuple(cfg.propositions), cfg.max_cells,
    )

    configurations = []
    for metrics in cfg.metric_sets:
        if metrics == "offline":
            configurations.append(("offline", "global-static"))
        else:
            for mode in cfg.modes:
                configurations.append((metrics, mode))
    loop_defaults = {
        "ell": cfg.ell, "resynth_every": cfg.resynth_every,
        "neighborhood_radius": cfg.neighborhood_radius, "step_bound": cfg.step_bound,
        "tie_tol": cfg.tie_tol, "distance_support": cfg.distance_support,
        "vi_tol": cfg.vi_tol, "vi_max_iter": cfg.vi_max_iter,
        "delta_grid": tuple(cfg.delta_grid), "eta_grid": tuple(cfg.eta_grid),
        "record_scores": False,
    }
    t0 = time.perf_counter()
    rows, _ = monte_carlo(
        plant, pimdp, partition, plant.noise, models, dataset, values,
        cfg.starts, configurations, cfg.episodes, cfg.seed, loop_defaults,
    )
    total = time.perf_counter() - t0

    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_stats_csv(rows, out / "stats.csv", include_timing=False)
    write_timing_csv(rows, out / "stats_timing.csv")
    write_stats_csv(rows, out / "stats_full.csv", include_timing=True)
    (out / "benchmark_manifest.json").write_text(
        _manifest(cfg, {"n_rows": len(rows), "episodes": cfg.episodes}, {"total": total}) + "\n"
    )
    print(f"benchmark complete: {len(rows)} rows, {cfg.episodes} episodes each -> {out / 'stats.csv'}")
    for r in rows:
        print(f"  start={r.start_id} {r.metrics:9s} {r.gp_mode:13s} "
              f"P_violate={r.p_violate:.3f} P_satisfy={r.p_satisfy:.3f} P_timeout={r.p_timeout:.3f}")
    return 0


def cmd_dfa(args) -> int:
    ap = [s.strip() for s in args.ap.split(",")] if args.ap else None
    if args.config:
        cfg = _load_config(args.config)
        formula = args.formula or cfg.formula
        ap = ap or list(cfg.propositions)
    else:
        formula = args.formula
    if not formula or not ap:
        _fail("provide --config or both --formula and --ap", EXIT_USAGE)
    try:
        dfa = to_dfa(parse(formula, ap), tuple(ap))
    except LtlfError as exc:
        _fail(str(exc), EXIT_USAGE)
    text = dfa.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"DFA written to {args.out}")
    else:
        print(text)
    return 0


def cmd_check_model(args) -> int:
    path = Path(args.model)
    if not path.exists():
        _fail(f"model file not found: {path}", EXIT_USAGE)
    doc = json.loads(path.read_text())
    if "outside" in doc:
        model = Imdp.from_json(path.read_text())
        issues = model.validate()
        kind = "interval model"
    elif "initial_by_cell" in doc:
        issues = _check_product_doc(doc)
        kind = "product model"
    else:
        _fail("unrecognized model file (expected interval or product model JSON)", EXIT_USAGE)
    if issues:
        print(f"{kind}: {len(issues)} issue(s)")
        for issue in issues:
            print(f"  {issue}")
        return EXIT_FAILURE
    print(f"{kind}: OK ({path})")
    return 0


def _check_product_doc(doc) -> list[str]:
    issues = []
    n = len(doc["states"])
    rows: dict[tuple[int, int], list[tuple[float, float]]] = {}
    for src, a, dst, lo, hi in doc["transitions"]:
        if not 0 <= dst < n:
            issues.append(f"transition ({src},{a},{dst}): destination out of range")
        if lo > hi + 1e-9 or lo < -1e-9 or hi > 1 + 1e-9:
            issues.append(f"transition ({src},{a},{dst}): malformed interval [{lo},{hi}]")
        rows.setdefault((src, a), []).append((lo, hi))
    for (src, a), entries in rows.items():
        lo_sum = sum(lo for lo, _ in entries)
        hi_sum = sum(hi for _, hi in entries)
        if lo_sum > 1 + 1e-9 or hi_sum < 1 - 1e-9:
            issues.append(f"row ({src},{a}): infeasible sums ({lo_sum:.6f}, {hi_sum:.6f})")
    terminal = {s["id"] for s in doc["states"] if s["accepting"] or s["violating"]}
    for s in doc["states"]:
        if s["id"] not in terminal and not any((s["id"], a) in rows for a in range(len(doc["actions"]))):
            issues.append(f"state {s['id']}: no available actions")
    return issues


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpimdp",
        description="Data-driven controller synthesis with certified interval abstractions",
    )
    parser.add_argument("--version", action="version", version=f"gpimdp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("offline-synth", help="run the offline pipeline and save artifacts")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: config run.out_dir)")
    p.set_defaults(func=cmd_offline_synth)

    p = sub.add_parser("simulate", help="run one closed-loop episode from saved artifacts")
    p.add_argument("--config", required=True)
    p.add_argument("--artifacts", required=True, help="offline-synth output directory")
    p.add_argument("--x0", required=True, help="comma-separated initial state")
    p.add_argument("--mode", choices=GP_MODES, default="local-update")
    p.add_argument("--metrics", choices=METRICS, default="sink+prog")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="Monte Carlo outcome statistics")
    p.add_argument("--config", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("dfa", help="compile a formula and print its automaton")
    p.add_argument("--config")
    p.add_argument("--formula")
    p.add_argument("--ap", help="comma-separated proposition names")
    p.add_argument("--out")
    p.set_defaults(func=cmd_dfa)

    p = sub.add_parser("check-model", help="validate a saved model file")
    p.add_argument("model")
    p.set_defaults(func=cmd_check_model)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
