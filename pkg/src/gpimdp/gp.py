"""Gaussian-process regression with high-probability error bounds.

One model is fit per (action, output dimension) with a squared-exponential
kernel.  Posterior mean and variance follow the standard Cholesky route;
besides the kernel hyperparameters each model carries the parameters of a
regression-error bound of the form

    |mean(x) - f(x)| <= beta(delta) * std(x),
    beta(delta) = B + R * sqrt(2 * (gamma + 1 + ln(1/delta))),

where B bounds the RKHS norm of the target component, R is the sub-Gaussian
noise scale, and gamma is a configured information-gain surrogate.  B, R and
gamma are frozen when the global model is fit; local models reuse them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

VARIANCE_FLOOR = 1e-12
JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class GpError(Exception):
    pass


class GpNumericalError(GpError):
    """Kernel matrix stayed non positive definite after jitter escalation."""


class EmptyActionError(GpError):
    """No datapoints available for the requested action."""


@dataclass(frozen=True)
class KernelParams:
    """Squared-exponential kernel hyperparameters plus observation noise."""

    lengthscales: tuple[float, ...]
    signal_var: float
    noise_var: float

    def __post_init__(self):
        if any(l <= 0 for l in self.lengthscales):
            raise ValueError("lengthscales must be positive")
        if self.signal_var <= 0:
            raise ValueError("signal variance must be positive")
        if self.noise_var < 0:
            raise ValueError("noise variance must be nonnegative")

    @property
    def signal_std(self) -> float:
        return math.sqrt(self.signal_var)


@dataclass(frozen=True)
class ErrorBoundParams:
    """Parameters of the high-probability regression-error bound."""

    rkhs_bound: float  # B
    noise_scale: float  # R
    info_gain: float  # gamma

    def beta(self, delta: float) -> float:
        if not 0.0 < delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {delta}")
        return self.rkhs_bound + self.noise_scale * math.sqrt(
            2.0 * (self.info_gain + 1.0 + math.log(1.0 / delta))
        )


@dataclass(frozen=True)
class ErrorBound:
    """Per-dimension regression-error radii on a region, at confidence 1-delta each."""

    region_id: int
    action: int
    epsilon: tuple[float, ...]
    delta: float


class Dataset:
    """State-action-state triples (x, u, x_plus) with appends."""

    def __init__(self, n_dim: int, n_actions: int):
        self.n_dim = n_dim
        self.n_actions = n_actions
        self._x = np.empty((0, n_dim))
        self._u = np.empty(0, dtype=np.int64)
        self._xp = np.empty((0, n_dim))

    @classmethod
    def from_arrays(cls, x, u, xp, n_actions: int) -> "Dataset":
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=np.int64)
        xp = np.asarray(xp, dtype=float)
        if x.ndim != 2 or xp.shape != x.shape or u.shape != (x.shape[0],):
            raise ValueError("inconsistent dataset shapes")
        if len(u) and (u.min() < 0 or u.max() >= n_actions):
            raise ValueError("action id outside the declared action set")
        ds = cls(x.shape[1], n_actions)
        ds._x, ds._u, ds._xp = x.copy(), u.copy(), xp.copy()
        return ds

    def __len__(self) -> int:
        return self._x.shape[0]

    @property
    def x(self) -> np.ndarray:
        return self._x

    @property
    def u(self) -> np.ndarray:
        return self._u

    @property
    def x_plus(self) -> np.ndarray:
        return self._xp

    def append(self, x, u: int, x_plus) -> None:
        if not 0 <= u < self.n_actions:
            raise ValueError(f"action id {u} outside the declared action set")
        self._x = np.vstack([self._x, np.asarray(x, dtype=float)[None, :]])
        self._u = np.append(self._u, np.int64(u))
        self._xp = np.vstack([self._xp, np.asarray(x_plus, dtype=float)[None, :]])

    def action_indices(self, u: int) -> np.ndarray:
        return np.flatnonzero(self._u == u)

    def copy(self) -> "Dataset":
        return Dataset.from_arrays(self._x, self._u, self._xp, self.n_actions)

    def to_csv(self, path, action_names: tuple[str, ...] | None = None) -> None:
        names = action_names or tuple(f"u{i+1}" for i in range(self.n_actions))
        n = self.n_dim
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x_{i+1}" for i in range(n)] + ["u"] + [f"xplus_{i+1}" for i in range(n)])
            for x, u, xp in zip(self._x, self._u, self._xp):
                w.writerow([repr(float(v)) for v in x] + [names[u]] + [repr(float(v)) for v in xp])

    @classmethod
    def from_csv(cls, path, n_actions: int, action_names: tuple[str, ...] | None = None) -> "Dataset":
        names = action_names or tuple(f"u{i+1}" for i in range(n_actions))
        index = {name: i for i, name in enumerate(names)}
        xs, us, xps = [], [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            n = (len(header) - 1) // 2
            if header != [f"x_{i+1}" for i in range(n)] + ["u"] + [f"xplus_{i+1}" for i in range(n)]:
                raise ValueError(f"unexpected dataset header in {path}")
            for row in reader:
                xs.append([float(v) for v in row[:n]])
                tok = row[n]
                us.append(index[tok] if tok in index else int(tok))
                xps.append([float(v) for v in row[n + 1 :]])
        return cls.from_arrays(
            np.array(xs).reshape(-1, n), np.array(us, dtype=np.int64), np.array(xps).reshape(-1, n), n_actions
        )


def se_kernel(a: np.ndarray, b: np.ndarray, params: KernelParams) -> np.ndarray:
    """Squared-exponential cross-covariance between two point sets."""
    ls = np.asarray(params.lengthscales)
    diff = (a[:, None, :] - b[None, :, :]) / ls
    return params.signal_var * np.exp(-0.5 * np.einsum("ijk,ijk->ij", diff, diff))


class GpModel:
    """Posterior for one action and one output dimension.

    Immutable after fit; queries are read-only.  In increment mode the
    training targets are x_plus - x along this dimension and predictions add
    the query coordinate back.
    """

    def __init__(self, x_train, y_train, params: KernelParams, error_params: ErrorBoundParams,
                 action: int = 0, dim: int = 0, increment: bool = False,
                 center_mean: bool = False):
        self.params = params
        self.error_params = error_params
        self.action = action
        self.dim = dim
        self.increment = increment
        self.center_mean = center_mean
        self.x_train = np.asarray(x_train, dtype=float)
        if self.x_train.ndim != 2:
            raise ValueError("training inputs must be an (m, n) array")
        self.y_train = np.asarray(y_train, dtype=float)
        self.m = self.x_train.shape[0]
        if self.m == 0:
            self.y_offset = 0.0
            self._chol = None
            self._alpha = None
            return
        # centering the targets keeps the weight vector small when the data
        # carry a constant offset; the posterior just shifts by the offset
        self.y_offset = float(self.y_train.mean()) if center_mean else 0.0
        k = se_kernel(self.x_train, self.x_train, params)
        k[np.diag_indices_from(k)] += params.noise_var
        self._chol = _chol_with_jitter(k)
        resid = self.y_train - self.y_offset
        self._alpha = cho_solve((self._chol, True), resid)
        # RKHS norm bound of the posterior mean: ||mu||_k^2 = a' K a <= y' C^-1 y
        self._nu = float(np.linalg.norm(solve_triangular(self._chol, resid, lower=True)))

    @property
    def n_dim(self) -> int:
        return self.x_train.shape[1] if self.m else len(self.params.lengthscales)

    def posterior(self, x) -> tuple[float, float]:
        """Posterior mean and standard deviation at a single point."""
        mean, std = self.posterior_batch(np.asarray(x, dtype=float)[None, :])
        return float(mean[0]), float(std[0])

    def posterior_batch(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation at a batch of points."""
        xs = np.asarray(xs, dtype=float)
        if self.m == 0:
            mean = np.zeros(xs.shape[0])
            std = np.full(xs.shape[0], self.params.signal_std)
            return mean, std
        kxx = se_kernel(xs, self.x_train, self.params)
        mean = self.y_offset + kxx @ self._alpha
        v = solve_triangular(self._chol, kxx.T, lower=True)
        var = self.params.signal_var - np.einsum("ij,ij->j", v, v)
        std = np.sqrt(np.maximum(var, VARIANCE_FLOOR))
        return mean, std

    def predict_next(self, xs: np.ndarray) -> np.ndarray:
        """Predicted next-state coordinate along this model's dimension."""
        xs = np.asarray(xs, dtype=float)
        single = xs.ndim == 1
        if single:
            xs = xs[None, :]
        mean, _ = self.posterior_batch(xs)
        out = mean + xs[:, self.dim] if self.increment else mean
        return out[0] if single else out

    def sup_std(self, lower, upper, lattice: int = 4) -> float:
        """Upper bound on the posterior std over an axis-aligned box.

        Evaluates a lattice and pads with a Lipschitz term; the prior std is
        a hard cap because the posterior variance never exceeds it.
        """
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if self.m == 0:
            return self.params.signal_std
        if np.allclose(lower, upper):
            _, std = self.posterior_batch(lower[None, :])
            return float(std[0])
        pts, radius = _box_lattice(lower, upper, lattice)
        _, stds = self.posterior_batch(pts)
        lip = self.params.signal_std / min(self.params.lengthscales)
        return float(min(stds.max() + lip * radius, self.params.signal_std))

    def mean_lipschitz(self) -> float:
        """Bound on the gradient norm of the predicted next-state coordinate.

        The SE kernel's partial derivatives are at most s^2 * e^{-1/2} / l,
        so the posterior mean is ||alpha||_1-Lipschitz up to that factor;
        increment mode adds 1 for the identity term.
        """
        base = 1.0 if self.increment else 0.0
        if self.m == 0:
            return base
        grad = self.params.signal_var * math.exp(-0.5) / min(self.params.lengthscales)
        return base + float(np.abs(self._alpha).sum()) * grad

    def mean_pad(self, spacing) -> float:
        """Bound on the posterior-mean deviation within a lattice cell given
        the per-dimension lattice spacing (identity term excluded).

        Minimum of the ||alpha||_1 Lipschitz pad and the RKHS-modulus pad
        |mu(x) - mu(x')| <= nu * sqrt(2 (s^2 - k(x, x'))), the latter stays
        small even when the weight vector oscillates.
        """
        if self.m == 0:
            return 0.0
        spacing = np.asarray(spacing, dtype=float)
        ls = np.asarray(self.params.lengthscales)
        r_euclid = 0.5 * float(np.linalg.norm(spacing))
        lip_pad = (
            float(np.abs(self._alpha).sum())
            * self.params.signal_var
            * math.exp(-0.5)
            / min(self.params.lengthscales)
            * r_euclid
        )
        r_metric = 0.5 * float(np.linalg.norm(spacing / ls))
        mod_pad = self._nu * self.params.signal_std * math.sqrt(
            2.0 * max(1.0 - math.exp(-0.5 * r_metric**2), 0.0)
        )
        return min(lip_pad, mod_pad)

    def mean_range(self, lower, upper) -> tuple[float, float]:
        """Interval bounds of the posterior mean over a box (increment term
        excluded), from the exact per-training-point kernel ranges.

        Intersects the plain interval-arithmetic bound with a bound centered
        at the box midpoint, where only each point's kernel *deviation* over
        the box enters; far points then contribute almost nothing even when
        the weight vector oscillates.
        """
        if self.m == 0:
            return 0.0, 0.0
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        ls = np.asarray(self.params.lengthscales)
        gap_lo = np.maximum(lower - self.x_train, 0.0)
        gap_hi = np.maximum(self.x_train - upper, 0.0)
        dmin = np.maximum(gap_lo, gap_hi)
        dmax = np.maximum(upper - self.x_train, self.x_train - lower)
        kmax = self.params.signal_var * np.exp(-0.5 * np.sum((dmin / ls) ** 2, axis=1))
        kmin = self.params.signal_var * np.exp(-0.5 * np.sum((dmax / ls) ** 2, axis=1))
        hi_k = np.where(self._alpha > 0, kmax, kmin)
        lo_k = np.where(self._alpha > 0, kmin, kmax)
        lo1, hi1 = float(self._alpha @ lo_k), float(self._alpha @ hi_k)

        center = 0.5 * (lower + upper)
        kc = se_kernel(center[None, :], self.x_train, self.params)[0]
        mu_c = float(kc @ self._alpha)
        dev = float(np.abs(self._alpha) @ np.maximum(kmax - kc, kc - kmin))
        return (
            self.y_offset + max(lo1, mu_c - dev),
            self.y_offset + min(hi1, mu_c + dev),
        )


def _chol_with_jitter(k: np.ndarray) -> np.ndarray:
    scale = float(np.mean(np.diag(k)))
    for jitter in JITTERS:
        try:
            return cholesky(k + jitter * scale * np.eye(k.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            continue
    raise GpNumericalError(
        f"kernel matrix of size {k.shape[0]} not positive definite after jitter escalation"
    )


def _box_lattice(lower: np.ndarray, upper: np.ndarray, points_per_dim: int) -> tuple[np.ndarray, float]:
    """Regular lattice over a box and its Euclidean covering radius."""
    axes = [np.linspace(lo, hi, points_per_dim) for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    spacing = (upper - lower) / max(points_per_dim - 1, 1)
    radius = 0.5 * float(np.linalg.norm(spacing))
    return pts, radius


def default_error_params(noise_var: float, m: int, rkhs_bound: float = 2.0) -> ErrorBoundParams:
    """Stated defaults: B = 2, R = noise std, gamma = m ln(1+m) at fit time."""
    return ErrorBoundParams(
        rkhs_bound=rkhs_bound,
        noise_scale=math.sqrt(noise_var),
        info_gain=m * math.log(1.0 + m) if m else 0.0,
    )


def fit(dataset: Dataset, action: int, dim: int, params: KernelParams,
        error_params: ErrorBoundParams | None = None, increment: bool = False,
        center_mean: bool = False) -> GpModel:
    """Fit the posterior for one action and output dimension."""
    idx = dataset.action_indices(action)
    x = dataset.x[idx]
    y = dataset.x_plus[idx, dim] - (x[:, dim] if increment else 0.0)
    ep = error_params or default_error_params(params.noise_var, len(idx))
    return GpModel(x, y, params, ep, action=action, dim=dim, increment=increment,
                   center_mean=center_mean)


def fit_action_models(dataset: Dataset, action: int, params: KernelParams,
                      error_params: ErrorBoundParams | None = None,
                      increment: bool = False, center_mean: bool = False) -> list[GpModel]:
    """Fit one model per output dimension for a single action."""
    return [
        fit(dataset, action, d, params, error_params, increment, center_mean)
        for d in range(dataset.n_dim)
    ]


def error_epsilon(gp: GpModel, lower, upper, delta: float) -> float:
    """Error radius beta(delta) * supStd over the region."""
    return gp.error_params.beta(delta) * gp.sup_std(lower, upper)


def error_bound(models: list[GpModel], lower, upper, delta: float,
                region_id: int = -1) -> ErrorBound:
    """Per-dimension error radii for one action's models on a region."""
    eps = tuple(error_epsilon(g, lower, upper, delta) for g in models)
    return ErrorBound(region_id=region_id, action=models[0].action, epsilon=eps, delta=delta)


def local_gp(dataset: Dataset, x, action: int, ell: int, params: KernelParams,
             error_params: ErrorBoundParams, dim: int, increment: bool = False,
             center_mean: bool = False) -> GpModel:
    """Fit on the ell nearest datapoints (Euclidean on x) for one action.

    Uses the same hyperparameters and error-bound parameters as the global
    model for that action.
    """
    if ell < 1:
        raise ValueError("ell must be at least 1")
    idx = dataset.action_indices(action)
    if len(idx) == 0:
        raise EmptyActionError(f"no datapoints for action {action}")
    pts = dataset.x[idx]
    d2 = np.einsum("ij,ij->i", pts - np.asarray(x), pts - np.asarray(x))
    # stable order: distance then dataset index, deterministic under ties
    order = np.lexsort((idx, d2))[: min(ell, len(idx))]
    sel = idx[order]
    xt = dataset.x[sel]
    yt = dataset.x_plus[sel, dim] - (xt[:, dim] if increment else 0.0)
    return GpModel(xt, yt, params, error_params, action=action, dim=dim, increment=increment,
                   center_mean=center_mean)


def local_action_models(dataset: Dataset, x, action: int, ell: int, params: KernelParams,
                        error_params: ErrorBoundParams, increment: bool = False,
                        center_mean: bool = False) -> list[GpModel]:
    """Local models for all output dimensions of one action."""
    return [
        local_gp(dataset, x, action, ell, params, error_params, d, increment, center_mean)
        for d in range(dataset.n_dim)
    ]
