"""Interval transition bounds over the partition from learned dynamics.

For a source cell and action the one-step image of the posterior mean is
over-approximated by a padded lattice box.  A destination's upper transition
bound checks overlap of the image with the destination expanded by the
regression-error radius eps plus the noise window eta; the lower bound
checks containment in the destination shrunk by the same margin.  The
confidence mass outside the eps and eta events enters additively (upper) or
multiplicatively (lower), so every interval is certified for any choice of
(eps, eta); a small grid of choices is searched and the tightest row kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .gp import GpModel
from .imdp import Imdp, TransitionRow
from .partition import Partition

DEFAULT_DELTA_GRID = (0.2, 0.1, 0.05, 0.01)
DEFAULT_ETA_GRID = (1.0, 2.0, 3.0)
MEAN_LATTICE = 5
STD_LATTICE = 4


@dataclass(frozen=True)
class NoiseModel:
    """Additive per-dimension noise; only the Gaussian family is supported."""

    std: tuple[float, ...]
    kind: str = "gaussian"

    def __post_init__(self):
        if any(s <= 0 for s in self.std):
            raise ValueError("noise scales must be positive")
        if self.kind != "gaussian":
            raise ValueError(f"unsupported noise distribution {self.kind!r}")

    def interval_probs(self, eta) -> np.ndarray:
        """P[|w_i| <= eta_i] per dimension."""
        return erf(np.asarray(eta, dtype=float) / (np.asarray(self.std) * math.sqrt(2.0)))

    def box_prob(self, eta) -> float:
        """Probability that the noise vector lands in the centered eta box."""
        return float(np.prod(self.interval_probs(eta)))

    def max_interval_mass(self, lengths) -> np.ndarray:
        """Largest mass any interval of the given length can capture, per dim.

        Broadcasts: lengths may be a batch of per-dimension widths.
        """
        lengths = np.asarray(lengths, dtype=float)
        return erf(lengths / (2.0 * np.asarray(self.std) * math.sqrt(2.0)))

    def sample(self, rng, size) -> np.ndarray:
        return rng.normal(0.0, self.std, size=size)


def image_box(models: list[GpModel], lower, upper,
              lattice: int = MEAN_LATTICE) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned box containing the predicted next states of a cell.

    Sound over-approximations are intersected per output dimension: lattice
    extrema padded by a posterior-mean modulus bound (plus the exact lattice
    slack of the identity term in increment mode), and interval bounds of
    the mean from per-training-point kernel ranges.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.allclose(lower, upper):
        pred = np.array([m.predict_next(lower) for m in models])
        return pred, pred.copy()
    axes = [np.linspace(lo, hi, lattice) for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    spacing = (upper - lower) / max(lattice - 1, 1)
    lo_out = np.empty(len(models))
    hi_out = np.empty(len(models))
    for i, m in enumerate(models):
        vals = m.predict_next(pts)
        pad = m.mean_pad(spacing)
        if m.increment:
            pad += 0.5 * spacing[m.dim]
        r_lo, r_hi = m.mean_range(lower, upper)
        if m.increment:
            r_lo += lower[m.dim]
            r_hi += upper[m.dim]
        lo_out[i] = max(vals.min() - pad, r_lo)
        hi_out[i] = min(vals.max() + pad, r_hi)
    return lo_out, hi_out


def transition_row(img_lo, img_hi, eps, eta, err_prob, noise_prob,
                   dest_lo, dest_hi):
    """Interval bounds from one image box to a batch of destination boxes.

    Scalar-confidence form: with probability err_prob the regression error
    stays within eps on the source region, in which case a transition into a
    destination requires either the noise to stay in its eta window and the
    (expanded) destination to meet the image, or the noise to escape the
    window; the complement cases contribute their full probability.
    """
    margin = np.asarray(eps, dtype=float) + np.asarray(eta, dtype=float)
    overlap = np.all(
        (img_lo <= dest_hi + margin) & (img_hi >= dest_lo - margin), axis=-1
    )
    contained = np.all(
        (img_lo >= dest_lo + margin) & (img_hi <= dest_hi - margin), axis=-1
    )
    phigh = np.minimum(
        1.0, (overlap * noise_prob + (1.0 - noise_prob)) * err_prob + (1.0 - err_prob)
    )
    plow = np.where(contained, err_prob * noise_prob, 0.0)
    return plow, phigh


def transition_row_perdim(img_lo, img_hi, eps, eta, err_prob, noise_probs,
                          dest_lo, dest_hi, width_mass=None):
    """Tighter batch form using per-dimension noise-window probabilities.

    Dimensions whose expanded destination interval misses the image can only
    be entered by noise escaping that dimension's window, so the upper
    bracket is the product over dimensions of (overlap_i ? 1 : 1 - p_i).
    width_mass optionally caps the upper bound by the largest mass the noise
    can place in an interval of the destination's width, independent of the
    regression error.
    """
    margin = np.asarray(eps, dtype=float) + np.asarray(eta, dtype=float)
    noise_probs = np.asarray(noise_probs, dtype=float)
    ov_dim = (img_lo <= dest_hi + margin) & (img_hi >= dest_lo - margin)
    contained = np.all(
        (img_lo >= dest_lo + margin) & (img_hi <= dest_hi - margin), axis=-1
    )
    bracket = np.prod(np.where(ov_dim, 1.0, 1.0 - noise_probs), axis=-1)
    phigh = np.minimum(1.0, bracket * err_prob + (1.0 - err_prob))
    if width_mass is not None:
        phigh = np.minimum(phigh, width_mass)
    noise_prob = float(np.prod(noise_probs))
    plow = np.where(contained, err_prob * noise_prob, 0.0)
    plow = np.minimum(plow, phigh)
    return plow, phigh


def transition_bounds(img_lo, img_hi, eps, eta, err_prob, noise_prob,
                      dest_lo, dest_hi) -> tuple[float, float]:
    """Single-destination interval; see transition_row."""
    plow, phigh = transition_row(
        np.asarray(img_lo, dtype=float), np.asarray(img_hi, dtype=float),
        eps, eta, err_prob, noise_prob,
        np.asarray(dest_lo, dtype=float)[None, :], np.asarray(dest_hi, dtype=float)[None, :],
    )
    lo, hi = float(plow[0]), float(phigh[0])
    assert lo <= hi
    return lo, hi


@dataclass
class RowChoice:
    """Best (delta, eta) pick for one source-action row."""

    delta: float
    eta_mult: float
    err_prob: float
    plow: np.ndarray
    phigh: np.ndarray


def row_candidates(img_lo, img_hi, sup_stds, betas_by_delta, noise: NoiseModel,
                   delta_grid, eta_grid, dest_lo, dest_hi, domain_lo, domain_hi,
                   dest_width_mass=None) -> list[RowChoice]:
    """One certified interval row per (delta, eta) grid pair.

    Destinations are the partition cells followed by the Outside state,
    whose interval is derived from the bounds for the whole domain box.
    All pairs are computed in one broadcast (this sits in the refinement
    hot path).
    """
    n = len(sup_stds)
    if dest_width_mass is None:
        dest_width_mass = np.prod(noise.max_interval_mass(dest_hi - dest_lo), axis=-1)
    std = np.asarray(noise.std)
    sup_stds = np.asarray(sup_stds)

    pairs = [(d, e) for d in delta_grid for e in eta_grid]
    eps = np.stack([np.asarray(betas_by_delta[d]) * sup_stds for d, _ in pairs])
    eta = np.stack([e * std for _, e in pairs])
    margin = eps + eta  # (P, n)
    err_prob = np.array([(1.0 - d) ** n for d, _ in pairs])
    noise_probs = erf(eta / (std * math.sqrt(2.0)))  # (P, n)

    full_lo = np.concatenate([dest_lo, domain_lo[None, :]])  # domain box last
    full_hi = np.concatenate([dest_hi, domain_hi[None, :]])
    m = margin[:, None, :]
    ov_dim = (img_lo <= full_hi[None] + m) & (img_hi >= full_lo[None] - m)
    contained = np.all(
        (img_lo >= full_lo[None] + m) & (img_hi <= full_hi[None] - m), axis=2
    )
    bracket = np.prod(np.where(ov_dim, 1.0, 1.0 - noise_probs[:, None, :]), axis=2)
    phigh = np.minimum(1.0, bracket * err_prob[:, None] + (1.0 - err_prob[:, None]))
    phigh[:, :-1] = np.minimum(phigh[:, :-1], dest_width_mass)
    box_prob = np.prod(noise_probs, axis=1)
    plow = np.where(contained, (err_prob * box_prob)[:, None], 0.0)
    plow = np.minimum(plow, phigh)

    out = []
    for p, (delta, eta_mult) in enumerate(pairs):
        row_lo = np.append(plow[p, :-1], max(0.0, 1.0 - float(phigh[p, -1])))
        row_hi = np.append(phigh[p, :-1], min(1.0, 1.0 - float(plow[p, -1])))
        out.append(RowChoice(delta, eta_mult, float(err_prob[p]), row_lo, row_hi))
    return out


def best_row(img_lo, img_hi, sup_stds, betas_by_delta, noise: NoiseModel,
             delta_grid, eta_grid, dest_lo, dest_hi, domain_lo, domain_hi,
             dest_width_mass=None) -> RowChoice:
    """The grid candidate with the largest sum of lower bounds (ties:
    smallest sum of upper bounds)."""
    candidates = row_candidates(
        img_lo, img_hi, sup_stds, betas_by_delta, noise, delta_grid, eta_grid,
        dest_lo, dest_hi, domain_lo, domain_hi, dest_width_mass,
    )
    return max(candidates, key=lambda c: (float(c.plow.sum()), -float(c.phigh.sum())))


def build_imdp(partition: Partition, models_by_action: list[list[GpModel]],
               noise: NoiseModel, delta_grid=DEFAULT_DELTA_GRID,
               eta_grid=DEFAULT_ETA_GRID, action_names: tuple[str, ...] | None = None) -> Imdp:
    """Abstraction over the partition: one interval row per (cell, action).

    The Outside state is absorbing under every action.
    """
    n_actions = len(models_by_action)
    nc = partition.n_cells
    names = action_names or tuple(f"u{i+1}" for i in range(n_actions))
    imdp = Imdp(
        n_states=partition.n_states,
        n_actions=n_actions,
        action_names=names,
        labels=np.append(partition.labels, 0),
        outside=partition.outside,
        ap_names=partition.ap_names,
        boxes_lower=partition.cell_lower,
        boxes_upper=partition.cell_upper,
    )
    dest_lo, dest_hi = partition.cell_lower, partition.cell_upper
    dest_width_mass = np.prod(noise.max_interval_mass(dest_hi - dest_lo), axis=-1)
    all_dests = np.arange(nc + 1, dtype=np.int64)
    for u, models in enumerate(models_by_action):
        betas_by_delta = {
            d: [m.error_params.beta(d) for m in models] for d in delta_grid
        }
        for q in range(nc):
            lo = partition.cell_lower[q]
            hi = partition.cell_upper[q]
            img_lo, img_hi = image_box(models, lo, hi)
            sup_stds = [m.sup_std(lo, hi, STD_LATTICE) for m in models]
            choice = best_row(
                img_lo, img_hi, sup_stds, betas_by_delta, noise,
                delta_grid, eta_grid, dest_lo, dest_hi,
                partition.lower, partition.upper, dest_width_mass,
            )
            imdp.rows[(q, u)] = TransitionRow(all_dests.copy(), choice.plow, choice.phigh)
            imdp.selection[(q, u)] = (choice.delta, choice.eta_mult, choice.err_prob)
        outside = partition.outside
        imdp.rows[(outside, u)] = TransitionRow(
            np.array([outside], dtype=np.int64), np.array([1.0]), np.array([1.0])
        )
    return imdp
