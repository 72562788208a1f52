"""Interval MDP and its product with a specification DFA.

The interval model keeps one sparse row of [plow, phigh] destinations per
(state, action).  The product tracks (region, DFA state) pairs: entering a
destination cell consumes that cell's label, the initial states consume the
initial label once, and leaving the domain or entering a DFA sink makes the
product state violating.  Rows of the product reference the interval rows of
the underlying model, so online refinements propagate automatically.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .ltlf import Dfa


class ModelError(Exception):
    pass


@dataclass
class TransitionRow:
    cols: np.ndarray  # destination state ids
    plow: np.ndarray
    phigh: np.ndarray

    def copy(self) -> "TransitionRow":
        return TransitionRow(self.cols.copy(), self.plow.copy(), self.phigh.copy())


@dataclass
class Imdp:
    """Interval Markov decision process over partition cells plus Outside."""

    n_states: int
    n_actions: int
    action_names: tuple[str, ...]
    labels: np.ndarray  # proposition bitmask per state
    outside: int
    ap_names: tuple[str, ...]
    boxes_lower: np.ndarray | None = None  # per cell, Outside excluded
    boxes_upper: np.ndarray | None = None
    rows: dict[tuple[int, int], TransitionRow] = field(default_factory=dict)
    selection: dict[tuple[int, int], tuple[float, float, float]] = field(default_factory=dict)

    def available_actions(self, q: int) -> list[int]:
        return [a for a in range(self.n_actions) if (q, a) in self.rows]

    def copy(self) -> "Imdp":
        """Deep copy of the transition rows; static arrays are shared."""
        out = Imdp(
            n_states=self.n_states,
            n_actions=self.n_actions,
            action_names=self.action_names,
            labels=self.labels,
            outside=self.outside,
            ap_names=self.ap_names,
            boxes_lower=self.boxes_lower,
            boxes_upper=self.boxes_upper,
        )
        out.rows = {key: row.copy() for key, row in self.rows.items()}
        out.selection = dict(self.selection)
        return out

    def validate(self, tol: float = 1e-9) -> list[str]:
        """Well-formedness: interval order and row sum conditions."""
        issues = []
        for (q, a), row in self.rows.items():
            if np.any(row.plow < -tol) or np.any(row.phigh > 1 + tol):
                issues.append(f"row ({q},{a}): bounds outside [0,1]")
            if np.any(row.plow > row.phigh + tol):
                issues.append(f"row ({q},{a}): plow exceeds phigh")
            if row.plow.sum() > 1 + tol:
                issues.append(f"row ({q},{a}): sum of lower bounds {row.plow.sum():.6f} > 1")
            if row.phigh.sum() < 1 - tol:
                issues.append(f"row ({q},{a}): sum of upper bounds {row.phigh.sum():.6f} < 1")
            if np.any(row.cols < 0) or np.any(row.cols >= self.n_states):
                issues.append(f"row ({q},{a}): destination out of range")
            if len(np.unique(row.cols)) != len(row.cols):
                issues.append(f"row ({q},{a}): duplicate destinations")
        for q in range(self.n_states):
            if not self.available_actions(q):
                issues.append(f"state {q}: no available actions")
        return issues

    def to_json(self) -> str:
        states = []
        for q in range(self.n_states):
            entry: dict = {"id": q, "labels": _mask_to_names(self.labels[q], self.ap_names)}
            if q == self.outside:
                entry["box"] = None
            elif self.boxes_lower is not None:
                entry["box"] = [
                    [float(self.boxes_lower[q, d]), float(self.boxes_upper[q, d])]
                    for d in range(self.boxes_lower.shape[1])
                ]
            states.append(entry)
        transitions = []
        for (q, a) in sorted(self.rows):
            row = self.rows[(q, a)]
            for c, lo, hi in zip(row.cols, row.plow, row.phigh):
                transitions.append([int(q), int(a), int(c), float(lo), float(hi)])
        doc = {
            "states": states,
            "actions": list(self.action_names),
            "ap": list(self.ap_names),
            "outside": self.outside,
            "transitions": transitions,
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Imdp":
        doc = json.loads(text)
        ap = tuple(doc["ap"])
        names = {name: i for i, name in enumerate(ap)}
        n_states = len(doc["states"])
        labels = np.zeros(n_states, dtype=np.int64)
        boxes = [None] * n_states
        for entry in doc["states"]:
            mask = 0
            for nm in entry["labels"]:
                mask |= 1 << names[nm]
            labels[entry["id"]] = mask
            boxes[entry["id"]] = entry.get("box")
        n_dim = next((len(b) for b in boxes if b), 0)
        blo = np.zeros((n_states, n_dim))
        bhi = np.zeros((n_states, n_dim))
        for q, b in enumerate(boxes):
            if b:
                blo[q] = [lo for lo, _ in b]
                bhi[q] = [hi for _, hi in b]
        model = cls(
            n_states=n_states,
            n_actions=len(doc["actions"]),
            action_names=tuple(doc["actions"]),
            labels=labels,
            outside=int(doc["outside"]),
            ap_names=ap,
            boxes_lower=blo,
            boxes_upper=bhi,
        )
        grouped: dict[tuple[int, int], list[tuple[int, float, float]]] = {}
        for q, a, c, lo, hi in doc["transitions"]:
            grouped.setdefault((q, a), []).append((c, lo, hi))
        for key, triples in grouped.items():
            triples.sort()
            model.rows[key] = TransitionRow(
                np.array([t[0] for t in triples], dtype=np.int64),
                np.array([t[1] for t in triples]),
                np.array([t[2] for t in triples]),
            )
        return model


def _mask_to_names(mask: int, ap_names: tuple[str, ...]) -> list[str]:
    return [name for i, name in enumerate(ap_names) if mask >> i & 1]


class Pimdp:
    """Product of an interval model with a DFA, pruned to reachable states.

    Product states are (region, DFA state) pairs; the DFA component has
    already consumed the labels up to and including the current region, so
    the accepting set directly encodes satisfaction of the trace so far.
    """

    def __init__(self, imdp: Imdp, dfa: Dfa):
        if tuple(dfa.ap_names) != tuple(imdp.ap_names):
            raise ModelError(
                f"proposition mismatch: model {imdp.ap_names} vs automaton {dfa.ap_names}"
            )
        self.imdp = imdp
        self.dfa = dfa
        self._build_states()
        self._csr = None
        self._structure = None
        self._rev = None
        self._values_fresh = False

    def _initial_z(self, q: int) -> int:
        return self.dfa.step(self.dfa.initial, int(self.imdp.labels[q]))

    def _build_states(self):
        imdp, dfa = self.imdp, self.dfa
        index: dict[tuple[int, int], int] = {}
        states: list[tuple[int, int]] = []

        def intern(q: int, z: int) -> int:
            sid = index.get((q, z))
            if sid is None:
                sid = len(states)
                index[(q, z)] = sid
                states.append((q, z))
            return sid

        self.initial_by_cell: dict[int, int] = {}
        queue = deque()
        seen = set()
        for q in range(imdp.n_states):
            if q == imdp.outside:
                continue
            z = self._initial_z(q)
            sid = intern(q, z)
            self.initial_by_cell[q] = sid
            if (q, z) not in seen:
                seen.add((q, z))
                queue.append((q, z))
        while queue:
            q, z = queue.popleft()
            if q == imdp.outside or dfa.sink[z] or dfa.accepting[z]:
                continue  # terminal for the run: successors are irrelevant
            for a in imdp.available_actions(q):
                row = imdp.rows[(q, a)]
                for dest, hi in zip(row.cols, row.phigh):
                    if hi <= 0.0:
                        continue
                    zd = z if dest == imdp.outside else dfa.step(z, int(imdp.labels[dest]))
                    key = (int(dest), zd)
                    intern(*key)
                    if key not in seen:
                        seen.add(key)
                        queue.append(key)

        self.states = states
        self.index = index
        self.n_states = len(states)
        qs = np.array([q for q, _ in states], dtype=np.int64)
        zs = np.array([z for _, z in states], dtype=np.int64)
        self.region_of = qs
        self.dfa_state_of = zs
        self.violating = (qs == imdp.outside) | self.dfa.sink[zs]
        self.accepting = ~self.violating & self.dfa.accepting[zs]

    @property
    def n_actions(self) -> int:
        return self.imdp.n_actions

    def state_kind(self) -> np.ndarray:
        """0 = ordinary, 1 = accepting (value 1), 2 = violating (value 0)."""
        kind = np.zeros(self.n_states, dtype=np.int8)
        kind[self.accepting] = 1
        kind[self.violating] = 2
        return kind

    def invalidate(self) -> None:
        """Mark interval values stale after a row refinement.

        The sparsity structure never changes (refinement only tightens
        values), so only the payload is refreshed on the next build_csr.
        """
        self._values_fresh = False

    def _build_structure(self):
        imdp, dfa = self.imdp, self.dfa
        n_rows = self.n_states * self.n_actions
        counts = np.zeros(n_rows, dtype=np.int64)
        row_refs: list[TransitionRow | None] = [None] * n_rows
        for sid, (q, z) in enumerate(self.states):
            if self.accepting[sid] or self.violating[sid]:
                continue
            for a in imdp.available_actions(q):
                row = imdp.rows[(q, a)]
                r = sid * self.n_actions + a
                row_refs[r] = row
                counts[r] = len(row.cols)
        row_ptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(counts, out=row_ptr[1:])
        nnz = int(row_ptr[-1])
        cols = np.empty(nnz, dtype=np.int64)
        for sid, (q, z) in enumerate(self.states):
            for a in range(self.n_actions):
                r = sid * self.n_actions + a
                row = row_refs[r]
                if row is None:
                    continue
                start = row_ptr[r]
                for k, dest in enumerate(row.cols):
                    zd = z if dest == imdp.outside else dfa.step(z, int(imdp.labels[dest]))
                    cols[start + k] = self.index[(int(dest), zd)]
        self._structure = (row_ptr, cols, row_refs)
        # reverse adjacency for distance computations
        order = np.argsort(cols, kind="stable")
        src_state = np.repeat(
            np.arange(n_rows, dtype=np.int64) // self.n_actions, np.diff(row_ptr)
        )
        self._rev = (cols[order], src_state[order], order)

    def build_csr(self):
        """Rows ordered sid * n_actions + a; terminal states get empty rows.

        The structure is built once; interval payloads are refreshed from
        the underlying rows whenever a refinement invalidated them.
        """
        if self._csr is not None and self._values_fresh:
            return self._csr
        if self._structure is None:
            self._build_structure()
        row_ptr, cols, row_refs = self._structure
        if self._csr is None:
            plow = np.empty(len(cols))
            phigh = np.empty(len(cols))
            self._csr = (row_ptr, cols, plow, phigh)
        _, _, plow, phigh = self._csr
        for r, row in enumerate(row_refs):
            if row is None:
                continue
            start, end = row_ptr[r], row_ptr[r + 1]
            plow[start:end] = row.plow
            phigh[start:end] = row.phigh
        self._values_fresh = True
        return self._csr

    def distance(self, min_phigh: float = 0.0) -> np.ndarray:
        """Hop distance to the accepting set over phigh > min_phigh edges.

        A small positive threshold keeps the confidence-slack floor of dense
        rows from making the graph complete and the distances meaningless.
        """
        _, _, _, phigh = self.build_csr()
        rev_dst, rev_src, rev_pos = self._rev
        alive = phigh[rev_pos] > min_phigh
        dist = np.full(self.n_states, math.inf)
        dist[self.accepting] = 0.0
        frontier = self.accepting.copy()
        reached = self.accepting.copy()
        level = 0.0
        while frontier.any():
            level += 1.0
            into_frontier = frontier[rev_dst] & alive
            preds = rev_src[into_frontier]
            frontier = np.zeros(self.n_states, dtype=bool)
            frontier[preds] = True
            frontier &= ~reached
            dist[frontier] = level
            reached |= frontier
        return dist

    def validate(self, tol: float = 1e-9) -> list[str]:
        issues = self.imdp.validate(tol)
        row_ptr, cols, plow, phigh = self.build_csr()
        for sid in range(self.n_states):
            if self.accepting[sid] or self.violating[sid]:
                continue
            for a in range(self.n_actions):
                r = sid * self.n_actions + a
                lo = plow[row_ptr[r] : row_ptr[r + 1]]
                hi = phigh[row_ptr[r] : row_ptr[r + 1]]
                if len(lo) and (lo.sum() > 1 + tol or hi.sum() < 1 - tol):
                    issues.append(f"product row ({sid},{a}): infeasible sums")
        return issues

    def to_json(self) -> str:
        row_ptr, cols, plow, phigh = self.build_csr()
        transitions = []
        for sid in range(self.n_states):
            for a in range(self.n_actions):
                r = sid * self.n_actions + a
                for k in range(row_ptr[r], row_ptr[r + 1]):
                    transitions.append(
                        [sid, a, int(cols[k]), float(plow[k]), float(phigh[k])]
                    )
        doc = {
            "states": [
                {
                    "id": sid,
                    "region": int(q),
                    "dfa_state": int(z),
                    "accepting": bool(self.accepting[sid]),
                    "violating": bool(self.violating[sid]),
                }
                for sid, (q, z) in enumerate(self.states)
            ],
            "actions": list(self.imdp.action_names),
            "accepting": np.flatnonzero(self.accepting).tolist(),
            "initial_by_cell": {str(q): sid for q, sid in self.initial_by_cell.items()},
            "transitions": transitions,
        }
        return json.dumps(doc, sort_keys=True)


def product(imdp: Imdp, dfa: Dfa) -> Pimdp:
    """Product construction; unreachable product states are pruned."""
    return Pimdp(imdp, dfa)
