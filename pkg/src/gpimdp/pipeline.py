"""Offline pipeline assembly: data, models, abstraction, product, strategy."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .abstraction import NoiseModel, build_imdp
from .config import Config
from .gp import Dataset, ErrorBoundParams, KernelParams, fit_action_models
from .imdp import Imdp, Pimdp
from .ltlf import Dfa, parse, to_dfa
from .online import LoopParams
from .partition import Partition, Region, build_partition
from .sim import Plant, sample_dataset
from .synthesis import ValueResult, synthesize


@dataclass
class OfflineArtifacts:
    config: Config
    plant: Plant
    dataset: Dataset
    models: list  # per action, per dimension
    partition: Partition
    noise: NoiseModel
    dfa: Dfa
    imdp: Imdp
    pimdp: Pimdp
    values: ValueResult
    timing: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)


def make_plant(cfg: Config) -> Plant:
    noise = NoiseModel(tuple(cfg.noise_std))
    table = None
    if cfg.dynamics == "tabulated":
        table = Dataset.from_csv(cfg.table, len(cfg.actions), tuple(cfg.actions))
    return Plant(noise, kind=cfg.dynamics, table=table)


def make_dataset(cfg: Config, plant: Plant) -> Dataset:
    if cfg.dataset_path:
        return Dataset.from_csv(cfg.dataset_path, len(cfg.actions), tuple(cfg.actions))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, 0])))
    return sample_dataset(plant, cfg.samples_per_action, cfg.bounds_lower, cfg.bounds_upper, rng)


def error_params_for(cfg: Config, action_name: str, m: int) -> ErrorBoundParams:
    sec = cfg.gp_for_action(action_name)
    noise_scale = sec.noise_scale if sec.noise_scale is not None else math.sqrt(sec.noise_var)
    info_gain = sec.info_gain if sec.info_gain is not None else (m * math.log(1.0 + m) if m else 0.0)
    return ErrorBoundParams(sec.rkhs_bound, noise_scale, info_gain)


def fit_models(cfg: Config, dataset: Dataset) -> list:
    models = []
    for u, name in enumerate(cfg.actions):
        sec = cfg.gp_for_action(name)
        params = KernelParams(tuple(sec.lengthscales), sec.signal_var, sec.noise_var)
        ep = error_params_for(cfg, name, len(dataset.action_indices(u)))
        models.append(
            fit_action_models(
                dataset, u, params, ep,
                increment=cfg.gp_increment, center_mean=cfg.gp_center_mean,
            )
        )
    return models


def build_offline(cfg: Config, dataset: Dataset | None = None) -> OfflineArtifacts:
    """Run the whole offline pipeline; wall times land in .timing."""
    timing = {}
    t0 = time.perf_counter()
    plant = make_plant(cfg)
    if dataset is None:
        dataset = make_dataset(cfg, plant)
    timing["dataset"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    models = fit_models(cfg, dataset)
    timing["gp_fit"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    regions = [Region(name, tuple(lo), tuple(hi)) for name, (lo, hi) in cfg.regions.items()]
    partition = build_partition(
        cfg.bounds_lower, cfg.bounds_upper, cfg.cells_per_dim, regions,
        tuple(cfg.propositions), cfg.max_cells,
    )
    timing["partition"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    noise = plant.noise
    imdp = build_imdp(
        partition, models, noise, tuple(cfg.delta_grid), tuple(cfg.eta_grid),
        tuple(cfg.actions),
    )
    timing["abstraction"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    dfa = to_dfa(parse(cfg.formula, cfg.propositions), tuple(cfg.propositions))
    pimdp = Pimdp(imdp, dfa)
    timing["product"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    values = synthesize(pimdp, tol=cfg.vi_tol, max_iter=cfg.vi_max_iter)
    timing["synthesis"] = time.perf_counter() - t0

    info = {
        "n_cells": partition.n_cells,
        "n_dfa_states": dfa.n_states,
        "n_product_states": pimdp.n_states,
        "n_transitions": int(sum(len(r.cols) for r in imdp.rows.values())),
        "dataset_size": len(dataset),
        "vi_iterations": list(values.iterations),
        "vi_residuals": [float(r) for r in values.residuals],
        "vi_converged": bool(values.converged),
    }
    return OfflineArtifacts(
        config=cfg, plant=plant, dataset=dataset, models=models,
        partition=partition, noise=noise, dfa=dfa, imdp=imdp, pimdp=pimdp,
        values=values, timing=timing, info=info,
    )


def loop_params_from(cfg: Config, gp_mode: str, metrics: str | None = None) -> LoopParams:
    return LoopParams(
        gp_mode=gp_mode,
        metrics=metrics if metrics is not None else cfg.metrics,
        ell=cfg.ell,
        resynth_every=cfg.resynth_every,
        neighborhood_radius=cfg.neighborhood_radius,
        step_bound=cfg.step_bound,
        tie_tol=cfg.tie_tol,
        distance_support=cfg.distance_support,
        vi_tol=cfg.vi_tol,
        vi_max_iter=cfg.vi_max_iter,
        delta_grid=tuple(cfg.delta_grid),
        eta_grid=tuple(cfg.eta_grid),
    )
