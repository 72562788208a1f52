"""Grid partition of the compact domain, aligned with labeled regions.

The domain is cut into axis-aligned cells by per-dimension coordinates: a
uniform grid refined with every face of every region of interest, so each
cell carries a single label set.  One virtual Outside state represents the
complement of the domain.  Points on shared faces belong to the cell on the
lower side, which keeps the point-to-cell map deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_CELL_CAP = 100_000
_COORD_TOL = 1e-9


class PartitionError(Exception):
    pass


class PartitionCapacityError(PartitionError):
    pass


@dataclass(frozen=True)
class Region:
    """Axis-aligned labeled box."""

    name: str
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if any(l >= u for l, u in zip(self.lower, self.upper)):
            raise PartitionError(f"region {self.name}: lower corner must be below upper")

    def contains(self, x) -> bool:
        return bool(np.all(np.asarray(x) >= self.lower) and np.all(np.asarray(x) <= self.upper))


class Partition:
    """Cells tiling the domain plus the Outside state (index n_cells)."""

    def __init__(self, lower, upper, coords: list[np.ndarray], regions: list[Region],
                 ap_names: tuple[str, ...]):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.coords = coords
        self.regions = regions
        self.ap_names = ap_names
        self.n_dim = len(coords)
        self.shape = tuple(len(c) - 1 for c in coords)
        self.n_cells = int(np.prod(self.shape))
        self.outside = self.n_cells

        idx_grids = np.meshgrid(*[np.arange(s) for s in self.shape], indexing="ij")
        multi = np.stack([g.ravel() for g in idx_grids], axis=1)
        self.cell_lower = np.stack(
            [coords[d][multi[:, d]] for d in range(self.n_dim)], axis=1
        )
        self.cell_upper = np.stack(
            [coords[d][multi[:, d] + 1] for d in range(self.n_dim)], axis=1
        )
        centers = 0.5 * (self.cell_lower + self.cell_upper)
        labels = np.zeros(self.n_cells, dtype=np.int64)
        ap_index = {name: i for i, name in enumerate(ap_names)}
        for region in regions:
            bit = 1 << ap_index[region.name]
            inside = np.all(
                (centers >= np.asarray(region.lower)) & (centers <= np.asarray(region.upper)),
                axis=1,
            )
            labels[inside] |= bit
        self.labels = labels

    @property
    def n_states(self) -> int:
        return self.n_cells + 1

    def locate(self, x) -> int:
        """Cell index containing x, or the Outside index."""
        return int(self.locate_batch(np.asarray(x, dtype=float)[None, :])[0])

    def locate_batch(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        out = np.zeros(xs.shape[0], dtype=np.int64)
        inside = np.all((xs >= self.lower) & (xs <= self.upper), axis=1)
        for d in range(self.n_dim):
            # side='left' puts face points into the lower cell
            idx = np.searchsorted(self.coords[d], xs[:, d], side="left") - 1
            idx = np.clip(idx, 0, self.shape[d] - 1)
            out = out * self.shape[d] + idx
        out[~inside] = self.outside
        return out

    def label_of_point(self, x) -> int:
        """Label bitmask by closed-box membership (independent of cells)."""
        mask = 0
        ap_index = {name: i for i, name in enumerate(self.ap_names)}
        for region in self.regions:
            if region.contains(x):
                mask |= 1 << ap_index[region.name]
        return mask

    def multi_index(self, cell: int) -> tuple[int, ...]:
        return tuple(np.unravel_index(cell, self.shape))

    def cell_index(self, multi) -> int:
        return int(np.ravel_multi_index(multi, self.shape))

    def neighborhood(self, cell: int, radius: int) -> list[int]:
        """Cells within Chebyshev distance radius of a cell, including it."""
        if cell == self.outside:
            return []
        center = self.multi_index(cell)
        ranges = [
            range(max(0, c - radius), min(s, c + radius + 1))
            for c, s in zip(center, self.shape)
        ]
        mesh = np.meshgrid(*[np.array(list(r)) for r in ranges], indexing="ij")
        multis = np.stack([m.ravel() for m in mesh], axis=1)
        return [self.cell_index(tuple(m)) for m in multis]


def build_partition(lower, upper, cells_per_dim, regions: list[Region],
                    ap_names: tuple[str, ...], max_cells: int = DEFAULT_CELL_CAP) -> Partition:
    """Uniform grid refined by region faces so labels are uniform per cell."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = len(lower)
    if len(cells_per_dim) != n:
        raise PartitionError("cells_per_dim length must match the dimension")
    names = {r.name for r in regions}
    if not names <= set(ap_names):
        raise PartitionError(f"regions {names - set(ap_names)} not in the proposition set")
    for r in regions:
        if np.any(np.asarray(r.lower) < lower - _COORD_TOL) or np.any(
            np.asarray(r.upper) > upper + _COORD_TOL
        ):
            raise PartitionError(f"region {r.name} must lie within the domain bounds")

    coords = []
    for d in range(n):
        cuts = list(np.linspace(lower[d], upper[d], cells_per_dim[d] + 1))
        for r in regions:
            for face in (r.lower[d], r.upper[d]):
                if lower[d] + _COORD_TOL < face < upper[d] - _COORD_TOL:
                    cuts.append(float(face))
        cuts = sorted(cuts)
        merged = [cuts[0]]
        scale = max(abs(upper[d] - lower[d]), 1.0)
        for c in cuts[1:]:
            if c - merged[-1] > _COORD_TOL * scale:
                merged.append(c)
        merged[-1] = float(upper[d])
        coords.append(np.asarray(merged))

    n_cells = int(np.prod([len(c) - 1 for c in coords]))
    if n_cells > max_cells:
        raise PartitionCapacityError(f"{n_cells} cells exceed the cap of {max_cells}")
    return Partition(lower, upper, coords, regions, tuple(ap_names))
