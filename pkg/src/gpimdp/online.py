"""Online control: singleton augmentation, lexicographic action choice,
local-GP transition refinement, and periodic strategy re-synthesis.

Each step reasons from the exact continuous state instead of its cell, which
removes one step of discretization error, so the per-action transition rows
computed here are always at least as tight as the cell rows.  New data feeds
local models; refreshed interval rows replace old ones only when nested
inside them, which keeps every re-synthesized value interval inside its
predecessor.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from scipy.special import ndtr

from .abstraction import (
    DEFAULT_DELTA_GRID,
    DEFAULT_ETA_GRID,
    NoiseModel,
    best_row,
    image_box,
    row_candidates,
)
from .gp import Dataset, GpModel, local_action_models
from .imdp import Pimdp
from .partition import Partition
from ._kernels import extremal_rows
from .synthesis import ValueResult, synthesize

GP_MODES = ("global-static", "local-static", "local-update")
METRICS = ("offline", "sink", "sink+prog")


@dataclass
class AugmentedState:
    """Per-action transition rows computed from the exact continuous state.

    Rows range over all partition cells plus Outside (the last entry); the
    score vectors are gathered over the matching product successors.  plow
    and phigh hold the per-action row selected by certified tightness;
    candidates keeps every (delta, eta) grid row so each score tier can use
    its tightest certified bound, independent of that selection.  nominal
    holds the noise mass of each destination around the point prediction,
    the model's best single estimate of the next-step law.
    """

    x: np.ndarray
    z: int
    plow: np.ndarray  # (n_actions, n_cells + 1)
    phigh: np.ndarray
    nominal: np.ndarray
    selections: list[tuple[float, float, float]]
    candidates: list  # per action: list of RowChoice


@dataclass
class ActionScore:
    action: int
    sat_lower: float
    sat_upper: float
    sink_risk: float
    expected_distance: float


@dataclass
class RefinementLog:
    attempted: int = 0
    accepted: int = 0
    entries: list = field(default_factory=list)  # accepted updates
    row_audits: list = field(default_factory=list)  # (step, src, action, n_dests, n_accepted)

    def record_row(self, step, src, action, old_row, new_plow, new_phigh):
        n_acc = 0
        for i in range(len(old_row.cols)):
            self.attempted += 1
            ol, oh = old_row.plow[i], old_row.phigh[i]
            nl, nh = new_plow[i], new_phigh[i]
            if nl >= ol and nh <= oh and (nl > ol or nh < oh):
                self.entries.append(
                    (step, src, action, int(old_row.cols[i]), float(ol), float(oh), float(nl), float(nh))
                )
                old_row.plow[i] = nl
                old_row.phigh[i] = nh
                n_acc += 1
        self.accepted += n_acc
        self.row_audits.append((step, src, action, len(old_row.cols), n_acc))
        return n_acc


class SuccessorStats:
    """Score inputs per (DFA state): the product successor of each cell, its
    satisfaction bounds, violating flag, and hop distance."""

    def __init__(self, pimdp: Pimdp, values: ValueResult, distances: np.ndarray):
        self.pimdp = pimdp
        self.values = values
        self.distances = distances
        self._cache: dict[int, tuple] = {}

    def for_dfa_state(self, z: int):
        hit = self._cache.get(z)
        if hit is not None:
            return hit
        imdp, dfa = self.pimdp.imdp, self.pimdp.dfa
        nd = imdp.n_states  # cells + outside, outside last
        plo = np.zeros(nd)
        pup = np.zeros(nd)
        viol = np.ones(nd)
        dist = np.full(nd, math.inf)
        for dest in range(nd):
            zd = z if dest == imdp.outside else dfa.step(z, int(imdp.labels[dest]))
            sid = self.pimdp.index.get((dest, zd))
            if sid is None:
                continue  # unreachable in the product: score as doomed
            plo[dest] = self.values.p_lower[sid]
            pup[dest] = self.values.p_upper[sid]
            viol[dest] = 1.0 if self.pimdp.violating[sid] else 0.0
            dist[dest] = self.distances[sid]
        out = (plo, pup, viol, dist)
        self._cache[z] = out
        return out

    def invalidate(self):
        self._cache.clear()


def augment(x, z: int, models_by_action: list[list[GpModel]], partition: Partition,
            noise: NoiseModel, delta_grid=DEFAULT_DELTA_GRID, eta_grid=DEFAULT_ETA_GRID,
            dest_width_mass=None) -> AugmentedState:
    """Transition rows for every action from the exact state x.

    The image is the point prediction and the error radius uses the
    posterior deviation at x itself, so no region supremum enters.
    """
    x = np.asarray(x, dtype=float)
    nd = partition.n_cells + 1
    n_actions = len(models_by_action)
    plow = np.zeros((n_actions, nd))
    phigh = np.zeros((n_actions, nd))
    nominal = np.zeros((n_actions, nd))
    selections = []
    all_candidates = []
    std = np.asarray(noise.std)
    for u, models in enumerate(models_by_action):
        pred = np.array([m.predict_next(x) for m in models])
        stds = [m.posterior(x)[1] for m in models]
        betas = {d: [m.error_params.beta(d) for m in models] for d in delta_grid}
        cands = row_candidates(
            pred, pred.copy(), stds, betas, noise, delta_grid, eta_grid,
            partition.cell_lower, partition.cell_upper,
            partition.lower, partition.upper, dest_width_mass,
        )
        choice = max(cands, key=lambda c: (float(c.plow.sum()), -float(c.phigh.sum())))
        plow[u] = choice.plow
        phigh[u] = choice.phigh
        all_candidates.append(cands)
        cell_mass = np.prod(
            ndtr((partition.cell_upper - pred) / std) - ndtr((partition.cell_lower - pred) / std),
            axis=1,
        )
        nominal[u, : nd - 1] = cell_mass
        nominal[u, nd - 1] = max(0.0, 1.0 - float(cell_mass.sum()))
        selections.append((choice.delta, choice.eta_mult, choice.err_prob))
    return AugmentedState(x, z, plow, phigh, nominal, selections, all_candidates)


def _tie_filter(candidates, score, maximize, tol):
    vals = [score[a] for a in candidates]
    best = max(vals) if maximize else min(vals)
    if maximize:
        return [a for a in candidates if score[a] >= best - tol]
    return [a for a in candidates if score[a] <= best + tol]


def select_action(aug: AugmentedState, stats: SuccessorStats, metrics: str = "sink+prog",
                  tie_tol: float = 1e-9) -> tuple[int, list[ActionScore]]:
    """Lexicographic choice over the augmented rows.

    Tiers: worst-case expected satisfaction lower bound; worst-case expected
    upper bound; worst-case mass into violating successors (minimized);
    expected hop distance under the nominal next-step law (minimized,
    sink+prog only); lowest action id.  The distance tier is deliberately
    not adversarial: on sound dense rows the worst case is always infinite
    and the best case saturates, so neither discriminates.
    """
    if metrics not in ("sink", "sink+prog"):
        raise ValueError(f"metrics must be sink or sink+prog, got {metrics!r}")
    plo, pup, viol, dist = stats.for_dfa_state(aug.z)
    finite = dist[np.isfinite(dist)]
    dist_eff = np.where(np.isfinite(dist), dist, (finite.max() if len(finite) else 0.0) + 3.0)
    n_actions = aug.plow.shape[0]
    # every grid candidate is certified, so each tier may keep its tightest
    # bound; this makes scores comparable across actions even when their
    # selected rows use different (delta, eta).  One batched kernel call
    # per tier covers all actions and candidates.
    n_cands = len(aug.candidates[0])
    nd = aug.plow.shape[1]
    n_rows = n_actions * n_cands
    lo = np.concatenate([c.plow for cands in aug.candidates for c in cands])
    hi = np.concatenate([c.phigh for cands in aug.candidates for c in cands])
    cols = np.tile(np.arange(nd, dtype=np.int64), n_rows)
    row_ptr = np.arange(n_rows + 1, dtype=np.int64) * nd
    out = np.empty(n_rows)
    extremal_rows(np.ascontiguousarray(plo), row_ptr, cols, lo, hi, False, out)
    t1 = out.reshape(n_actions, n_cands).max(axis=1)
    extremal_rows(np.ascontiguousarray(pup), row_ptr, cols, lo, hi, False, out)
    t2 = out.reshape(n_actions, n_cands).max(axis=1)
    extremal_rows(np.ascontiguousarray(viol), row_ptr, cols, lo, hi, True, out)
    t3 = out.reshape(n_actions, n_cands).min(axis=1)
    scores = []
    for a in range(n_actions):
        scores.append(
            ActionScore(
                action=a,
                sat_lower=float(t1[a]),
                sat_upper=float(t2[a]),
                sink_risk=float(t3[a]),
                expected_distance=float(aug.nominal[a] @ dist_eff),
            )
        )
    cands = list(range(n_actions))
    cands = _tie_filter(cands, [s.sat_lower for s in scores], True, tie_tol)
    cands = _tie_filter(cands, [s.sat_upper for s in scores], True, tie_tol)
    cands = _tie_filter(cands, [s.sink_risk for s in scores], False, tie_tol)
    if metrics == "sink+prog":
        cands = _tie_filter(cands, [s.expected_distance for s in scores], False, tie_tol)
    return min(cands), scores


def refine_transitions(pimdp: Pimdp, partition: Partition,
                       models: list[GpModel], action: int, center_cell: int,
                       radius: int, noise: NoiseModel, delta_grid, eta_grid,
                       log: RefinementLog, step: int,
                       dest_width_mass=None) -> int:
    """Recompute rows for the chosen action around the current cell and
    replace each transition interval only when strictly nested in the old."""
    imdp = pimdp.imdp
    if dest_width_mass is None:
        dest_width_mass = np.prod(
            noise.max_interval_mass(partition.cell_upper - partition.cell_lower), axis=-1
        )
    betas = {d: [m.error_params.beta(d) for m in models] for d in delta_grid}
    accepted = 0
    for q in partition.neighborhood(center_cell, radius):
        lo_q = partition.cell_lower[q]
        hi_q = partition.cell_upper[q]
        img_lo, img_hi = image_box(models, lo_q, hi_q)
        sup_stds = [m.sup_std(lo_q, hi_q) for m in models]
        choice = best_row(
            img_lo, img_hi, sup_stds, betas, noise, delta_grid, eta_grid,
            partition.cell_lower, partition.cell_upper,
            partition.lower, partition.upper, dest_width_mass,
        )
        accepted += log.record_row(step, q, action, imdp.rows[(q, action)], choice.plow, choice.phigh)
    if accepted:
        pimdp.invalidate()
    return accepted


@dataclass
class LoopParams:
    gp_mode: str = "local-update"
    metrics: str = "sink+prog"
    ell: int = 75
    resynth_every: int = 50
    neighborhood_radius: int = 1
    step_bound: int = 500
    # scores within this margin count as tied, letting the later tiers act;
    # certified bounds rarely tie exactly, so a zero-ish margin would leave
    # the progression metric dead
    tie_tol: float = 0.05
    # hop distances ignore edges at or below this upper bound: dense rows
    # carry a small confidence floor on every destination, and single-axis
    # noise escapes give whole aligned strips a few percent of upper mass;
    # both would flood the graph with long-range edges and flatten the
    # progression gradient
    distance_support: float = 0.1
    vi_tol: float = 1e-6
    vi_max_iter: int = 10_000
    delta_grid: tuple = DEFAULT_DELTA_GRID
    eta_grid: tuple = DEFAULT_ETA_GRID
    record_scores: bool = True

    def __post_init__(self):
        if self.gp_mode not in GP_MODES:
            raise ValueError(f"gp_mode must be one of {GP_MODES}, got {self.gp_mode!r}")
        if self.metrics not in METRICS:
            raise ValueError(f"metrics must be one of {METRICS}, got {self.metrics!r}")


@dataclass
class StepRecord:
    step: int
    x: tuple
    action: int
    dfa_state: int
    label: int
    accepted_updates: int
    scores: list | None
    wall_time: float


@dataclass
class RunRecord:
    """Closed-loop episode trace with refinement and re-synthesis audit."""

    outcome: str  # satisfied | violated | timeout | aborted
    x0: tuple
    gp_mode: str
    metrics: str
    steps: list[StepRecord]
    refinement: RefinementLog
    final_x: tuple = ()
    final_label: int | None = None  # None when the run left the domain
    final_dfa_state: int = 0
    resynth_count: int = 0
    nesting_violations: int = 0
    nesting_max_excess: float = 0.0
    final_values: ValueResult | None = None

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def labels_trace(self) -> list[int]:
        """Label trace of the visited states, including the final one."""
        trace = [s.label for s in self.steps]
        if self.final_label is not None:
            trace.append(self.final_label)
        return trace

    def to_jsonl(self, path, timing_path=None) -> None:
        """Step records as JSON lines; wall times go to the sidecar so the
        primary artifact is byte-reproducible."""
        with open(path, "w") as fh:
            head = {
                "outcome": self.outcome,
                "x0": [repr(float(v)) for v in self.x0],
                "final_x": [repr(float(v)) for v in self.final_x],
                "final_label": self.final_label,
                "final_dfa_state": self.final_dfa_state,
                "gp_mode": self.gp_mode,
                "metrics": self.metrics,
                "resynth_count": self.resynth_count,
                "nesting_violations": self.nesting_violations,
                "accepted_updates": self.refinement.accepted,
                "attempted_updates": self.refinement.attempted,
            }
            fh.write(json.dumps(head, sort_keys=True) + "\n")
            for s in self.steps:
                doc = {
                    "step": s.step,
                    "x": [repr(float(v)) for v in s.x],
                    "action": s.action,
                    "dfa_state": s.dfa_state,
                    "label": s.label,
                    "accepted_updates": s.accepted_updates,
                }
                if s.scores is not None:
                    doc["scores"] = [
                        {
                            "action": sc.action,
                            "sat_lower": repr(sc.sat_lower),
                            "sat_upper": repr(sc.sat_upper),
                            "sink_risk": repr(sc.sink_risk),
                            "expected_distance": repr(sc.expected_distance),
                        }
                        for sc in s.scores
                    ]
                fh.write(json.dumps(doc, sort_keys=True) + "\n")
        if timing_path is not None:
            with open(timing_path, "w") as fh:
                for s in self.steps:
                    fh.write(json.dumps({"step": s.step, "wall_time": s.wall_time}) + "\n")


def control_loop(step_fn, x0, pimdp: Pimdp, partition: Partition, noise: NoiseModel,
                 global_models: list[list[GpModel]], dataset: Dataset,
                 values: ValueResult, params: LoopParams, rng) -> RunRecord:
    """One closed-loop episode.

    step_fn(x, action, rng) advances the plant.  In local-update mode the
    observed transitions extend the dataset, rows around the current cell
    are refined with local models, and the strategy is re-synthesized after
    every resynth_every accepted updates (plus once at episode end); value
    intervals are checked for nesting at every re-synthesis.
    """
    imdp, dfa = pimdp.imdp, pimdp.dfa
    log = RefinementLog()
    dest_width_mass = np.prod(
        noise.max_interval_mass(partition.cell_upper - partition.cell_lower), axis=-1
    )
    distances = pimdp.distance(params.distance_support)
    stats = SuccessorStats(pimdp, values, distances)

    x = np.asarray(x0, dtype=float)
    q = partition.locate(x)
    record = RunRecord(
        outcome="timeout", x0=tuple(float(v) for v in x), gp_mode=params.gp_mode,
        metrics=params.metrics, steps=[], refinement=log,
        final_x=tuple(float(v) for v in x),
    )
    if q == partition.outside:
        record.outcome = "violated"
        record.final_label = None
        record.final_values = values
        return record
    z = dfa.step(dfa.initial, int(imdp.labels[q]))
    record.final_label = int(imdp.labels[q])
    record.final_dfa_state = z
    if dfa.sink[z]:
        record.outcome = "violated"
        record.final_values = values
        return record
    if dfa.accepting[z]:
        record.outcome = "satisfied"
        record.final_values = values
        return record

    since_resynth = 0

    def resynthesize():
        nonlocal values, distances, stats, since_resynth
        new_values = synthesize(
            pimdp, tol=params.vi_tol, max_iter=params.vi_max_iter, warm_lower=values.p_lower
        )
        drop = float(np.max(values.p_lower - new_values.p_lower))
        rise = float(np.max(new_values.p_upper - values.p_upper))
        excess = max(drop, rise, 0.0)
        if excess > 1e-9:
            record.nesting_violations += 1
        record.nesting_max_excess = max(record.nesting_max_excess, excess)
        record.resynth_count += 1
        values = new_values
        distances = pimdp.distance(params.distance_support)
        stats = SuccessorStats(pimdp, values, distances)
        since_resynth = 0

    for k in range(params.step_bound):
        t0 = time.perf_counter()
        scores = None
        if params.metrics == "offline":
            sid = pimdp.index.get((q, z))
            a = int(values.strategy[sid]) if sid is not None else 0
            if a < 0:
                a = 0
        else:
            if params.gp_mode == "global-static":
                models_by_action = global_models
            else:
                models_by_action = [
                    local_action_models(
                        dataset, x, u, params.ell,
                        global_models[u][0].params, global_models[u][0].error_params,
                        increment=global_models[u][0].increment,
                        center_mean=global_models[u][0].center_mean,
                    )
                    for u in range(imdp.n_actions)
                ]
            aug = augment(
                x, z, models_by_action, partition, noise,
                params.delta_grid, params.eta_grid, dest_width_mass,
            )
            a, scores = select_action(aug, stats, params.metrics, params.tie_tol)
            if params.gp_mode == "local-update":
                accepted = refine_transitions(
                    pimdp, partition, models_by_action[a], a, q,
                    params.neighborhood_radius, noise,
                    params.delta_grid, params.eta_grid, log, k, dest_width_mass,
                )
                since_resynth += accepted
                if since_resynth >= params.resynth_every:
                    resynthesize()

        x_next = step_fn(x, a, rng)
        if params.gp_mode == "local-update":
            dataset.append(x, a, x_next)

        q_next = partition.locate(np.asarray(x_next, dtype=float))
        if q_next == partition.outside:
            label = 0
            z_next = z
            outcome = "violated"
        else:
            label = int(imdp.labels[q_next])
            z_next = dfa.step(z, label)
            if dfa.sink[z_next]:
                outcome = "violated"
            elif dfa.accepting[z_next]:
                outcome = "satisfied"
            else:
                outcome = None

        record.steps.append(
            StepRecord(
                step=k, x=tuple(float(v) for v in x), action=a, dfa_state=z,
                label=int(imdp.labels[q]), accepted_updates=log.accepted,
                scores=scores if params.record_scores else None,
                wall_time=time.perf_counter() - t0,
            )
        )
        x, q, z = np.asarray(x_next, dtype=float), q_next, z_next
        record.final_x = tuple(float(v) for v in x)
        record.final_label = None if q == partition.outside else int(imdp.labels[q])
        record.final_dfa_state = z
        if outcome is not None:
            record.outcome = outcome
            break

    if params.gp_mode == "local-update" and params.metrics != "offline" and since_resynth > 0:
        resynthesize()
    record.final_values = values
    return record
