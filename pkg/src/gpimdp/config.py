"""TOML configuration: schema, field-level validation, canonical hashing."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib


class ConfigError(Exception):
    """Invalid configuration; carries one message per offending field."""

    def __init__(self, issues: list[str]):
        super().__init__("\n".join(issues))
        self.issues = issues


@dataclass
class GpSection:
    lengthscales: list[float]
    signal_var: float
    noise_var: float
    rkhs_bound: float = 2.0
    noise_scale: float | None = None  # defaults to the noise std
    info_gain: float | None = None  # defaults to m ln(1+m) at fit time


@dataclass
class Config:
    # system
    dynamics: str = "benchmark"
    table: str | None = None
    bounds_lower: list[float] = field(default_factory=lambda: [-2.0, -2.0])
    bounds_upper: list[float] = field(default_factory=lambda: [2.0, 2.0])
    noise_std: list[float] = field(default_factory=lambda: [0.1, 0.1])
    actions: list[str] = field(default_factory=lambda: ["u1", "u2", "u3", "u4"])
    # specification
    formula: str = "G(!O) & F(D1) & F(D2)"
    propositions: list[str] = field(default_factory=lambda: ["O", "D1", "D2"])
    regions: dict = field(
        default_factory=lambda: {
            "O": ([-0.4, -0.4], [0.4, 0.4]),
            "D1": ([-1.6, -1.6], [-0.8, -0.8]),
            "D2": ([0.8, 0.8], [1.6, 1.6]),
        }
    )
    # dataset
    dataset_path: str | None = None
    samples_per_action: int = 200
    # gp
    gp_increment: bool = True
    gp_center_mean: bool = True
    gp_default: GpSection = field(
        default_factory=lambda: GpSection(
            lengthscales=[1.5, 1.5], signal_var=0.05, noise_var=0.01,
            rkhs_bound=2.0, noise_scale=0.1, info_gain=5.0,
        )
    )
    gp_by_action: dict = field(default_factory=dict)
    # partition
    cells_per_dim: list[int] = field(default_factory=lambda: [10, 10])
    max_cells: int = 100_000
    # abstraction: small deltas keep the per-destination confidence slack
    # (1 - (1-delta)^n) from handing the adversary phantom mass, and the
    # error radius only grows like sqrt(log(1/delta))
    delta_grid: list[float] = field(default_factory=lambda: [0.1, 0.01, 0.001, 0.0001])
    eta_grid: list[float] = field(default_factory=lambda: [1.0, 2.0, 3.0])
    # synthesis
    vi_tol: float = 1e-6
    vi_max_iter: int = 10_000
    # online
    ell: int = 75
    resynth_every: int = 50
    neighborhood_radius: int = 1
    step_bound: int = 500
    metrics: str = "sink+prog"
    tie_tol: float = 0.05
    distance_support: float = 0.1
    # run
    seed: int = 0
    out_dir: str = "out"
    starts: list = field(default_factory=lambda: [[-1.2, 1.2], [1.2, -1.2]])
    episodes: int = 200
    modes: list[str] = field(default_factory=lambda: ["local-update"])
    metric_sets: list[str] = field(default_factory=lambda: ["offline", "sink", "sink+prog"])

    @property
    def n_dim(self) -> int:
        return len(self.bounds_lower)

    def gp_for_action(self, name: str) -> GpSection:
        return self.gp_by_action.get(name, self.gp_default)

    def canonical(self) -> dict:
        """Canonical form for hashing and manifests; the output location is
        not part of the computation's identity."""
        doc = asdict(self)
        doc["regions"] = {k: [list(v[0]), list(v[1])] for k, v in self.regions.items()}
        doc.pop("out_dir")
        return doc

    def hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.canonical(), sort_keys=True).encode()
        ).hexdigest()


def _gp_section(doc: dict, issues: list[str], where: str) -> GpSection | None:
    try:
        return GpSection(
            lengthscales=[float(v) for v in doc["lengthscales"]],
            signal_var=float(doc["signal_var"]),
            noise_var=float(doc["noise_var"]),
            rkhs_bound=float(doc.get("rkhs_bound", 2.0)),
            noise_scale=float(doc["noise_scale"]) if "noise_scale" in doc else None,
            info_gain=float(doc["info_gain"]) if "info_gain" in doc else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        issues.append(f"{where}: {exc!r}")
        return None


def load_config(path) -> Config:
    """Parse and validate a TOML config; raises ConfigError with one message
    per invalid field."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"])
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"TOML parse error in {path}: {exc}"])

    cfg = Config()
    issues: list[str] = []

    sys_doc = doc.get("system", {})
    cfg.dynamics = sys_doc.get("dynamics", cfg.dynamics)
    cfg.table = sys_doc.get("table")
    cfg.bounds_lower = [float(v) for v in sys_doc.get("bounds_lower", cfg.bounds_lower)]
    cfg.bounds_upper = [float(v) for v in sys_doc.get("bounds_upper", cfg.bounds_upper)]
    cfg.noise_std = [float(v) for v in sys_doc.get("noise_std", cfg.noise_std)]
    cfg.actions = list(sys_doc.get("actions", cfg.actions))

    spec_doc = doc.get("spec", {})
    cfg.formula = spec_doc.get("formula", cfg.formula)
    cfg.propositions = list(spec_doc.get("propositions", cfg.propositions))

    if "regions" in doc:
        cfg.regions = {}
        for name, box in doc["regions"].items():
            try:
                cfg.regions[name] = ([float(v) for v in box["lower"]], [float(v) for v in box["upper"]])
            except (KeyError, TypeError, ValueError):
                issues.append(f"regions.{name}: expected lower/upper float arrays")

    ds_doc = doc.get("dataset", {})
    cfg.dataset_path = ds_doc.get("path") or None
    cfg.samples_per_action = int(ds_doc.get("samples_per_action", cfg.samples_per_action))

    gp_doc = dict(doc.get("gp", {}))
    cfg.gp_increment = bool(gp_doc.pop("increment", cfg.gp_increment))
    cfg.gp_center_mean = bool(gp_doc.pop("center_mean", cfg.gp_center_mean))
    if "default" in gp_doc:
        sec = _gp_section(gp_doc.pop("default"), issues, "gp.default")
        if sec:
            cfg.gp_default = sec
    for name, sub in gp_doc.items():
        if not isinstance(sub, dict):
            issues.append(f"gp.{name}: expected a table")
            continue
        sec = _gp_section(sub, issues, f"gp.{name}")
        if sec:
            cfg.gp_by_action[name] = sec

    part_doc = doc.get("partition", {})
    cfg.cells_per_dim = [int(v) for v in part_doc.get("cells_per_dim", cfg.cells_per_dim)]
    cfg.max_cells = int(part_doc.get("max_cells", cfg.max_cells))

    abs_doc = doc.get("abstraction", {})
    cfg.delta_grid = [float(v) for v in abs_doc.get("delta_grid", cfg.delta_grid)]
    cfg.eta_grid = [float(v) for v in abs_doc.get("eta_grid", cfg.eta_grid)]

    syn_doc = doc.get("synthesis", {})
    cfg.vi_tol = float(syn_doc.get("tol", cfg.vi_tol))
    cfg.vi_max_iter = int(syn_doc.get("max_iter", cfg.vi_max_iter))

    on_doc = doc.get("online", {})
    cfg.ell = int(on_doc.get("ell", cfg.ell))
    cfg.resynth_every = int(on_doc.get("resynth_every", cfg.resynth_every))
    cfg.neighborhood_radius = int(on_doc.get("neighborhood_radius", cfg.neighborhood_radius))
    cfg.step_bound = int(on_doc.get("step_bound", cfg.step_bound))
    cfg.metrics = on_doc.get("metrics", cfg.metrics)
    cfg.tie_tol = float(on_doc.get("tie_tol", cfg.tie_tol))
    cfg.distance_support = float(on_doc.get("distance_support", cfg.distance_support))

    run_doc = doc.get("run", {})
    cfg.seed = int(run_doc.get("seed", cfg.seed))
    cfg.out_dir = run_doc.get("out_dir", cfg.out_dir)
    cfg.starts = [[float(v) for v in s] for s in run_doc.get("starts", cfg.starts)]
    cfg.episodes = int(run_doc.get("episodes", cfg.episodes))
    cfg.modes = list(run_doc.get("modes", cfg.modes))
    cfg.metric_sets = list(run_doc.get("metric_sets", cfg.metric_sets))

    issues.extend(validate_config(cfg))
    if issues:
        raise ConfigError(issues)
    return cfg


def validate_config(cfg: Config) -> list[str]:
    issues = []
    n = cfg.n_dim
    if cfg.dynamics not in ("benchmark", "tabulated"):
        issues.append(f"system.dynamics: unknown kind {cfg.dynamics!r}")
    if cfg.dynamics == "tabulated" and not cfg.table:
        issues.append("system.table: required for tabulated dynamics")
    if cfg.dynamics == "benchmark" and (n != 2 or len(cfg.actions) != 4):
        issues.append("system: benchmark dynamics are 2-dimensional with four actions")
    if len(cfg.bounds_upper) != n or any(
        lo >= hi for lo, hi in zip(cfg.bounds_lower, cfg.bounds_upper)
    ):
        issues.append("system.bounds: lower must be strictly below upper, matching dimensions")
    if len(cfg.noise_std) != n or any(s <= 0 for s in cfg.noise_std):
        issues.append("system.noise_std: positive, one entry per dimension")
    if len(set(cfg.actions)) != len(cfg.actions):
        issues.append("system.actions: duplicate names")
    if len(set(cfg.propositions)) != len(cfg.propositions):
        issues.append("spec.propositions: duplicate names")
    for name, (lo, hi) in cfg.regions.items():
        if name not in cfg.propositions:
            issues.append(f"regions.{name}: not declared in spec.propositions")
        if len(lo) != n or len(hi) != n:
            issues.append(f"regions.{name}: dimension mismatch")
        elif any(a >= b for a, b in zip(lo, hi)):
            issues.append(f"regions.{name}: lower corner must be below upper")
        elif any(a < bl or b > bu for a, b, bl, bu in zip(lo, hi, cfg.bounds_lower, cfg.bounds_upper)):
            issues.append(f"regions.{name}: must lie within the domain bounds")
    if cfg.dataset_path and not os.path.exists(cfg.dataset_path):
        issues.append(f"dataset.path: file not found: {cfg.dataset_path}")
    if cfg.samples_per_action < 0:
        issues.append("dataset.samples_per_action: must be nonnegative")
    for name, sec in [("default", cfg.gp_default)] + list(cfg.gp_by_action.items()):
        if len(sec.lengthscales) != n or any(l <= 0 for l in sec.lengthscales):
            issues.append(f"gp.{name}.lengthscales: positive, one per dimension")
        if sec.signal_var <= 0:
            issues.append(f"gp.{name}.signal_var: must be positive")
        if sec.noise_var < 0:
            issues.append(f"gp.{name}.noise_var: must be nonnegative")
    for name in cfg.gp_by_action:
        if name not in cfg.actions:
            issues.append(f"gp.{name}: unknown action")
    if len(cfg.cells_per_dim) != n or any(c < 1 for c in cfg.cells_per_dim):
        issues.append("partition.cells_per_dim: positive, one entry per dimension")
    if not cfg.delta_grid or any(not 0 < d < 1 for d in cfg.delta_grid):
        issues.append("abstraction.delta_grid: entries must lie in (0, 1)")
    if not cfg.eta_grid or any(e <= 0 for e in cfg.eta_grid):
        issues.append("abstraction.eta_grid: entries must be positive")
    if cfg.vi_tol <= 0:
        issues.append("synthesis.tol: must be positive")
    if cfg.ell < 1:
        issues.append("online.ell: must be at least 1")
    if cfg.resynth_every < 1:
        issues.append("online.resynth_every: must be at least 1")
    if cfg.step_bound < 1:
        issues.append("online.step_bound: must be at least 1")
    if cfg.metrics not in ("offline", "sink", "sink+prog"):
        issues.append(f"online.metrics: unknown value {cfg.metrics!r}")
    if not 0 <= cfg.distance_support < 1:
        issues.append("online.distance_support: must lie in [0, 1)")
    for s in cfg.starts:
        if len(s) != n:
            issues.append(f"run.starts: entry {s} has wrong dimension")
    if cfg.episodes < 1:
        issues.append("run.episodes: must be at least 1")
    for m in cfg.modes:
        if m not in ("global-static", "local-static", "local-update"):
            issues.append(f"run.modes: unknown mode {m!r}")
    for m in cfg.metric_sets:
        if m not in ("offline", "sink", "sink+prog"):
            issues.append(f"run.metric_sets: unknown metrics {m!r}")
    return issues
