"""Benchmark plant, dataset generation, and the Monte Carlo harness.

The bundled plant has four actions whose drift fields combine a constant
push with sinusoidal cross terms, plus isotropic Gaussian noise; a tabulated
plant replays the nearest recorded transition of a user dataset.  Episode
batches run on independent counter-based RNG substreams so results do not
depend on execution order.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .abstraction import NoiseModel
from .gp import Dataset
from .imdp import Pimdp
from .online import LoopParams, RunRecord, control_loop
from .synthesis import ValueResult

BENCHMARK_ACTION_NAMES = ("u1", "u2", "u3", "u4")
RNG_ALGORITHM = "philox4x64 (numpy Philox via SeedSequence spawn keys)"


def benchmark_drift(x: np.ndarray, u: int) -> np.ndarray:
    """Drift field of the four-action benchmark system (no noise)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    s2 = 0.05 * np.sin(x[:, 1])
    c1 = 0.1 * np.cos(x[:, 0])
    s1 = 0.05 * np.sin(x[:, 0])
    c2 = 0.1 * np.cos(x[:, 1])
    if u == 0:
        out = np.stack([0.25 + s2, c1], axis=1)
    elif u == 1:
        out = np.stack([-0.25 + s2, c1], axis=1)
    elif u == 2:
        out = np.stack([c2, 0.25 + s1], axis=1)
    elif u == 3:
        out = np.stack([c2, -0.25 + s1], axis=1)
    else:
        raise ValueError(f"unknown action {u}")
    return out


class Plant:
    """True dynamics used for data generation and closed-loop simulation."""

    def __init__(self, noise: NoiseModel, kind: str = "benchmark",
                 table: Dataset | None = None):
        if kind not in ("benchmark", "tabulated"):
            raise ValueError(f"unknown dynamics kind {kind!r}")
        if kind == "tabulated" and table is None:
            raise ValueError("tabulated dynamics require a transition table")
        self.kind = kind
        self.noise = noise
        self.table = table
        self.n_actions = 4 if kind == "benchmark" else table.n_actions
        self.n_dim = len(noise.std)

    def drift(self, x: np.ndarray, u: int) -> np.ndarray:
        if self.kind == "benchmark":
            return benchmark_drift(x, u)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx = self.table.action_indices(u)
        if len(idx) == 0:
            raise ValueError(f"no table entries for action {u}")
        pts = self.table.x[idx]
        deltas = self.table.x_plus[idx] - pts
        out = np.empty_like(x)
        for i, xi in enumerate(x):
            j = int(np.argmin(np.einsum("ij,ij->i", pts - xi, pts - xi)))
            out[i] = deltas[j]
        return out

    def step(self, x, u: int, rng) -> np.ndarray:
        """One noisy transition from x under action u."""
        x = np.asarray(x, dtype=float)
        drift = self.drift(x[None, :], u)[0]
        return x + drift + self.noise.sample(rng, x.shape)

    def step_batch(self, xs: np.ndarray, u: int, rng) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        return xs + self.drift(xs, u) + self.noise.sample(rng, xs.shape)


def sample_dataset(plant: Plant, m_per_action: int, lower, upper, rng) -> Dataset:
    """m uniform states per action, each stepped once through the plant."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    ds = Dataset(plant.n_dim, plant.n_actions)
    if m_per_action == 0:
        return ds
    xs, us, xps = [], [], []
    for u in range(plant.n_actions):
        x = rng.uniform(lower, upper, (m_per_action, plant.n_dim))
        xs.append(x)
        us.append(np.full(m_per_action, u, dtype=np.int64))
        xps.append(plant.step_batch(x, u, rng))
    return Dataset.from_arrays(np.vstack(xs), np.concatenate(us), np.vstack(xps), plant.n_actions)


def replay_outcome(record: RunRecord, dfa) -> str:
    """Outcome implied by replaying the recorded label trace through the DFA."""
    if record.final_label is None:
        return "violated"
    z = dfa.initial
    for label in record.labels_trace():
        z = dfa.step(z, label)
        if dfa.accepting[z]:
            return "satisfied"
        if dfa.sink[z]:
            return "violated"
    return "timeout"


@dataclass
class StatsRow:
    start_id: int
    x0: tuple
    metrics: str
    gp_mode: str
    n_runs: int
    n_satisfied: int
    n_violated: int
    n_timeout: int
    mean_steps: float
    mean_accepted_updates: float
    mean_attempted_updates: float
    nesting_violations: int
    mean_step_time: float  # timing sidecar only

    @property
    def p_satisfy(self) -> float:
        return self.n_satisfied / self.n_runs

    @property
    def p_violate(self) -> float:
        return self.n_violated / self.n_runs

    @property
    def p_timeout(self) -> float:
        return self.n_timeout / self.n_runs


STATS_COLUMNS = [
    "start_id", "x0", "metrics", "gp_mode", "n_runs",
    "p_violate", "p_satisfy", "p_timeout",
    "mean_steps", "mean_accepted_updates", "mean_attempted_updates", "nesting_violations",
]


def write_stats_csv(rows: list[StatsRow], path, include_timing: bool = False) -> None:
    cols = STATS_COLUMNS + (["mean_step_time"] if include_timing else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            row = [
                r.start_id, ";".join(repr(float(v)) for v in r.x0), r.metrics, r.gp_mode,
                r.n_runs, repr(r.p_violate), repr(r.p_satisfy), repr(r.p_timeout),
                repr(r.mean_steps), repr(r.mean_accepted_updates),
                repr(r.mean_attempted_updates), r.nesting_violations,
            ]
            if include_timing:
                row.append(repr(r.mean_step_time))
            w.writerow(row)


def write_timing_csv(rows: list[StatsRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["start_id", "metrics", "gp_mode", "mean_step_time"])
        for r in rows:
            w.writerow([r.start_id, r.metrics, r.gp_mode, repr(r.mean_step_time)])


def run_episode(plant: Plant, x0, pimdp: Pimdp, partition, noise, global_models,
                dataset: Dataset, values: ValueResult, params: LoopParams, rng,
                fresh_model: bool = True) -> RunRecord:
    """One episode; by default on copies so the shared model stays pristine."""
    if fresh_model and params.gp_mode == "local-update":
        imdp_copy = pimdp.imdp.copy()
        pimdp = Pimdp(imdp_copy, pimdp.dfa)
        dataset = dataset.copy()
    return control_loop(
        plant.step, x0, pimdp, partition, noise, global_models, dataset,
        values, params, rng,
    )


def monte_carlo(plant: Plant, pimdp: Pimdp, partition, noise, global_models,
                dataset: Dataset, values: ValueResult, starts, configurations,
                episodes: int, seed: int, loop_defaults: dict | None = None,
                collect_records: int = 0):
    """Outcome statistics over (start, metrics, gp_mode) and seeded episodes.

    configurations is a list of (metrics, gp_mode) pairs; every episode runs
    on its own RNG substream keyed by (seed, start, configuration, episode).
    Returns the stats rows plus up to collect_records run records per cell.
    """
    loop_defaults = dict(loop_defaults or {})
    rows: list[StatsRow] = []
    kept_records: dict[tuple, list[RunRecord]] = {}
    for start_id, x0 in enumerate(starts):
        for cfg_id, (metrics, gp_mode) in enumerate(configurations):
            params = LoopParams(gp_mode=gp_mode, metrics=metrics, **loop_defaults)
            n_sat = n_vio = n_time = 0
            steps_total = 0
            accepted_total = 0
            attempted_total = 0
            nest_total = 0
            wall_total = 0.0
            records = []
            for ep in range(episodes):
                rng = np.random.Generator(
                    np.random.Philox(np.random.SeedSequence([seed, start_id, cfg_id, ep]))
                )
                t0 = time.perf_counter()
                rec = run_episode(
                    plant, x0, pimdp, partition, noise, global_models, dataset,
                    values, params, rng,
                )
                wall_total += time.perf_counter() - t0
                n_sat += rec.outcome == "satisfied"
                n_vio += rec.outcome == "violated"
                n_time += rec.outcome == "timeout"
                steps_total += rec.n_steps
                accepted_total += rec.refinement.accepted
                attempted_total += rec.refinement.attempted
                nest_total += rec.nesting_violations
                if len(records) < collect_records:
                    records.append(rec)
            rows.append(
                StatsRow(
                    start_id=start_id, x0=tuple(float(v) for v in x0),
                    metrics=metrics, gp_mode=gp_mode, n_runs=episodes,
                    n_satisfied=n_sat, n_violated=n_vio, n_timeout=n_time,
                    mean_steps=steps_total / episodes,
                    mean_accepted_updates=accepted_total / episodes,
                    mean_attempted_updates=attempted_total / episodes,
                    nesting_violations=nest_total,
                    mean_step_time=wall_total / max(steps_total, 1),
                )
            )
            if records:
                kept_records[(start_id, metrics, gp_mode)] = records
    return rows, kept_records