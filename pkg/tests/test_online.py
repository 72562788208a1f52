"""Singleton augmentation, action selection, refinement, and the loop."""

from types import SimpleNamespace

import numpy as np
import pytest

from gpimdp.abstraction import NoiseModel, RowChoice, image_box, row_candidates
from gpimdp.gp import GpModel, KernelParams, ErrorBoundParams, local_action_models
from gpimdp.imdp import Pimdp
from gpimdp.online import (
    AugmentedState,
    LoopParams,
    RefinementLog,
    SuccessorStats,
    augment,
    control_loop,
    refine_transitions,
    select_action,
)
from gpimdp.pipeline import build_offline, loop_params_from
from gpimdp.sim import replay_outcome, run_episode

from conftest import small_config


def test_augmented_rows_nested_in_cell_rows(offline_small):
    """Singleton rows are sub-intervals of the containing cell's rows when
    computed with the same error radius and noise window."""
    art = offline_small
    part, noise = art.partition, art.noise
    models = art.models[0]
    grids = (tuple(art.config.delta_grid), tuple(art.config.eta_grid))
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = rng.uniform(-1.8, 1.8, 2)
        q = part.locate(x)
        lo, hi = part.cell_lower[q], part.cell_upper[q]
        sup_stds = [m.sup_std(lo, hi) for m in models]
        betas = {d: [m.error_params.beta(d) for m in models] for d in grids[0]}
        cell_rows = row_candidates(
            *image_box(models, lo, hi), sup_stds, betas, noise, grids[0], grids[1],
            part.cell_lower, part.cell_upper, part.lower, part.upper,
        )
        pred = np.array([m.predict_next(x) for m in models])
        point_rows = row_candidates(
            pred, pred.copy(), sup_stds, betas, noise, grids[0], grids[1],
            part.cell_lower, part.cell_upper, part.lower, part.upper,
        )
        for cr, pr in zip(cell_rows, point_rows):
            assert (cr.delta, cr.eta_mult) == (pr.delta, pr.eta_mult)
            assert np.all(pr.plow >= cr.plow - 1e-12)
            assert np.all(pr.phigh <= cr.phigh + 1e-12)


def test_augment_rows_well_formed(offline_small):
    art = offline_small
    x = np.array([0.7, -0.9])
    q = art.partition.locate(x)
    z = art.dfa.step(art.dfa.initial, int(art.imdp.labels[q]))
    aug = augment(x, z, art.models, art.partition, art.noise,
                  tuple(art.config.delta_grid), tuple(art.config.eta_grid))
    for u in range(4):
        assert np.all(aug.plow[u] <= aug.phigh[u] + 1e-12)
        assert aug.plow[u].sum() <= 1 + 1e-9
        assert aug.phigh[u].sum() >= 1 - 1e-9
        assert aug.nominal[u].sum() == pytest.approx(1.0, abs=1e-9)


def test_augment_forced_single_successor():
    """A near-deterministic model concentrates the row on one cell."""
    from gpimdp.partition import build_partition

    part = build_partition((0, 0), (1, 1), (2, 2), [], ("g",))
    noise = NoiseModel((1e-4, 1e-4))
    params = KernelParams((1.0, 1.0), 1e-8, 0.0)
    eb = ErrorBoundParams(0.0, 1e-6, 1.0)
    # empty models in increment mode predict x itself
    models = [[GpModel(np.empty((0, 2)), np.empty(0), params, eb, dim=d, increment=True)
               for d in range(2)]]
    x = np.array([0.25, 0.25])
    aug = augment(x, 0, models, part, noise, (0.001,), (3.0,))
    target = part.locate(x)
    assert aug.plow[0][target] > 0.95
    others = np.delete(np.arange(part.n_cells + 1), target)
    assert np.all(aug.phigh[0][others] < 0.05)


def fake_stats(plo, pup, viol, dist):
    arrays = (np.asarray(plo, float), np.asarray(pup, float),
              np.asarray(viol, float), np.asarray(dist, float))
    return SimpleNamespace(for_dfa_state=lambda z: arrays)


def mk_aug(rows, nominal):
    """AugmentedState stub: one candidate row per action."""
    rows = [(np.asarray(lo, float), np.asarray(hi, float)) for lo, hi in rows]
    nominal = np.asarray(nominal, float)
    return AugmentedState(
        x=np.zeros(2), z=0,
        plow=np.stack([lo for lo, _ in rows]),
        phigh=np.stack([hi for _, hi in rows]),
        nominal=nominal,
        selections=[(0.01, 1.0, 0.98)] * len(rows),
        candidates=[[RowChoice(0.01, 1.0, 0.98, lo, hi)] for lo, hi in rows],
    )


def test_select_action_tier1_primacy():
    # action 0 certifies a 0.9 worst-case lower bound, the rest certify 0
    rows = [
        ([0.9, 0.0, 0.0], [1.0, 0.1, 0.1]),
        ([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]),
    ]
    stats = fake_stats([1.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0, 0, 1], [0, 5, np.inf])
    # action 1's nominal distance is better, but tier 1 decides
    aug = mk_aug(rows, [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
    a, scores = select_action(aug, stats, "sink+prog", tie_tol=0.05)
    assert a == 0
    assert scores[0].sat_lower == pytest.approx(0.9)
    assert scores[1].sat_lower == 0.0


def test_select_action_tier3_sink_mass():
    # tiers 1 and 2 tie at zero; action 1 has no worst-case mass into sinks
    rows = [
        ([0.0, 0.0], [1.0, 1.0]),
        ([1.0, 0.0], [1.0, 0.0]),
    ]
    stats = fake_stats([0.0, 0.0], [0.0, 0.0], [0.0, 1.0], [2.0, np.inf])
    aug = mk_aug(rows, [[0.5, 0.5], [1.0, 0.0]])
    a, scores = select_action(aug, stats, "sink", tie_tol=0.05)
    assert a == 1
    assert scores[0].sink_risk == pytest.approx(1.0)
    assert scores[1].sink_risk == pytest.approx(0.0)


def test_select_action_distance_tier_and_toggle():
    # everything ties through tier 3; nominal distance separates the actions
    rows = [([0.0, 0.0], [1.0, 1.0])] * 3
    stats = fake_stats([0, 0], [1, 1], [0, 0], [4.0, 1.0])
    aug = mk_aug(rows, [[0.9, 0.1], [0.1, 0.9], [0.5, 0.5]])
    a, scores = select_action(aug, stats, "sink+prog", tie_tol=0.05)
    assert a == 1  # heaviest nominal mass on the distance-1 successor
    # with the progression tier disabled the tie falls to the action id
    a2, _ = select_action(aug, stats, "sink", tie_tol=0.05)
    assert a2 == 0
    # determinism
    assert select_action(aug, stats, "sink+prog", tie_tol=0.05)[0] == a


def test_refinement_tightness_gate(offline_small):
    art = offline_small
    pimdp = Pimdp(art.imdp.copy(), art.dfa)
    part, noise = art.partition, art.noise
    x = np.array([0.5, -0.5])
    cell = part.locate(x)
    dataset = art.dataset.copy()
    rng = np.random.default_rng(0)
    for _ in range(40):  # extra local data tightens the local model
        xi = x + rng.uniform(-0.3, 0.3, 2)
        for u in range(4):
            dataset.append(xi, u, art.plant.step(xi, u, rng))
    models = local_action_models(
        dataset, x, 0, 60, art.models[0][0].params, art.models[0][0].error_params,
        increment=True, center_mean=art.models[0][0].center_mean,
    )
    log = RefinementLog()
    grids = (tuple(art.config.delta_grid), tuple(art.config.eta_grid))
    accepted = refine_transitions(pimdp, part, models, 0, cell, 1, noise, *grids, log, 0)
    assert accepted == log.accepted
    assert log.attempted > 0
    # every accepted update is a strict sub-interval of what it replaced
    for (_, _, _, _, ol, oh, nl, nh) in log.entries:
        assert nl >= ol and nh <= oh and (nl > ol or nh < oh)
    # a second pass with identical models is attempted but accepts nothing
    log2 = RefinementLog()
    accepted2 = refine_transitions(pimdp, part, models, 0, cell, 1, noise, *grids, log2, 1)
    assert accepted2 == 0
    assert log2.attempted > 0
    assert log2.entries == []


def test_control_loop_step_bound_and_replay(offline_small):
    art = offline_small
    params = loop_params_from(art.config, "global-static", "sink")
    params.step_bound = 7
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(11)))
    rec = control_loop(
        art.plant.step, np.array([1.7, 1.7]), Pimdp(art.imdp.copy(), art.dfa),
        art.partition, art.noise, art.models, art.dataset.copy(), art.values, params, rng,
    )
    assert rec.n_steps <= 7
    assert replay_outcome(rec, art.dfa) == rec.outcome


def test_control_loop_immediate_outcomes():
    cfg = small_config(formula="F(D2)", step_bound=5)
    art = build_offline(cfg)
    params = loop_params_from(cfg, "global-static", "sink+prog")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(1)))
    rec = run_episode(art.plant, np.array([1.2, 1.2]), art.pimdp, art.partition,
                      art.noise, art.models, art.dataset, art.values, params, rng)
    assert rec.outcome == "satisfied" and rec.n_steps == 0
    s0 = art.pimdp.initial_by_cell[art.partition.locate(np.array([1.2, 1.2]))]
    assert art.values.p_lower[s0] == 1.0
    rec = run_episode(art.plant, np.array([5.0, 5.0]), art.pimdp, art.partition,
                      art.noise, art.models, art.dataset, art.values, params, rng)
    assert rec.outcome == "violated" and rec.n_steps == 0


def test_local_update_nesting_audit(offline_small):
    art = offline_small
    params = loop_params_from(art.config, "local-update", "sink+prog")
    params.step_bound = 25
    params.resynth_every = 20
    params.vi_tol = 1e-12
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(21)))
    rec = run_episode(art.plant, np.array([-1.3, 1.3]), art.pimdp, art.partition,
                      art.noise, art.models, art.dataset, art.values, params, rng)
    assert rec.resynth_count >= 1
    assert rec.nesting_violations == 0
    assert rec.nesting_max_excess <= 1e-9
    assert rec.refinement.accepted > 0
    assert replay_outcome(rec, art.dfa) == rec.outcome


def test_run_record_jsonl(offline_small, tmp_path):
    art = offline_small
    params = loop_params_from(art.config, "global-static", "sink")
    params.step_bound = 5
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(2)))
    rec = run_episode(art.plant, np.array([0.3, -1.0]), art.pimdp, art.partition,
                      art.noise, art.models, art.dataset, art.values, params, rng)
    rec.to_jsonl(tmp_path / "run.jsonl", tmp_path / "run.timing.jsonl")
    import json

    lines = (tmp_path / "run.jsonl").read_text().splitlines()
    head = json.loads(lines[0])
    assert head["outcome"] == rec.outcome
    steps = [json.loads(line) for line in lines[1:]]
    assert len(steps) == rec.n_steps
    assert all("wall_time" not in s for s in steps)
    timing = (tmp_path / "run.timing.jsonl").read_text().splitlines()
    assert len(timing) == rec.n_steps


def test_loop_params_validation():
    with pytest.raises(ValueError):
        LoopParams(gp_mode="bogus")
    with pytest.raises(ValueError):
        LoopParams(metrics="bogus")
