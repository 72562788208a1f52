"""Shared builders and independent oracles for the test suite.

The oracles here deliberately avoid the package's algorithms: row
extremization is done by vertex enumeration (every vertex of the feasible
polytope has at most one coordinate away from its bounds), acyclic models
are solved by backward induction, and small cyclic models by literal
enumeration of stationary policies and vertex adversaries with dense linear
solves.
"""

import itertools

import numpy as np

from gpimdp.imdp import Imdp, Pimdp, TransitionRow
from gpimdp.ltlf import parse, to_dfa

# bit 0 = goal label, bit 1 = dead label
REACH_AVOID = parse("(!b) U g", ("g", "b"))


def toy_pimdp(n_states, rows, accepting, violating, n_actions=2):
    """Interval model with designated absorbing goal/dead states, wrapped in
    the product with the reach-avoid automaton (isomorphic to the model)."""
    labels = np.zeros(n_states + 1, dtype=np.int64)
    for q in accepting:
        labels[q] = 1
    for q in violating:
        labels[q] = 2
    imdp = Imdp(
        n_states=n_states + 1,
        n_actions=n_actions,
        action_names=tuple(f"u{i+1}" for i in range(n_actions)),
        labels=labels,
        outside=n_states,
        ap_names=("g", "b"),
    )
    for (q, a), (cols, lo, hi) in rows.items():
        imdp.rows[(q, a)] = TransitionRow(
            np.asarray(cols, dtype=np.int64), np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        )
    for q in list(accepting) + list(violating):
        for a in range(n_actions):
            imdp.rows.setdefault(
                (q, a),
                TransitionRow(np.array([q], dtype=np.int64), np.array([1.0]), np.array([1.0])),
            )
    for a in range(n_actions):
        imdp.rows[(n_states, a)] = TransitionRow(
            np.array([n_states], dtype=np.int64), np.array([1.0]), np.array([1.0])
        )
    dfa = to_dfa(REACH_AVOID, ("g", "b"))
    return Pimdp(imdp, dfa)


def feasible_row(rng, k):
    """Random interval row around a random distribution (always feasible)."""
    base = rng.dirichlet(np.ones(k))
    lo = np.maximum(base - rng.uniform(0, 0.5, k), 0.0)
    hi = np.minimum(base + rng.uniform(0, 0.5, k), 1.0)
    return lo, hi


def row_vertices(lo, hi):
    """All vertices of {p : sum p = 1, lo <= p <= hi}.

    Every vertex fixes all coordinates at a bound except at most one pivot.
    """
    k = len(lo)
    verts = []
    others = list(range(k))
    for pivot in range(k):
        rest = [j for j in others if j != pivot]
        for bits in itertools.product((0, 1), repeat=k - 1):
            p = np.empty(k)
            for j, b in zip(rest, bits):
                p[j] = hi[j] if b else lo[j]
            p[pivot] = 1.0 - p[rest].sum() if rest else 1.0
            if lo[pivot] - 1e-12 <= p[pivot] <= hi[pivot] + 1e-12:
                verts.append(np.clip(p, lo, hi))
    return verts


def oracle_extremal(values, lo, hi, maximize):
    """Vertex-enumeration oracle for the extremal expectation of one row."""
    values = np.asarray(values, dtype=float)
    best = -np.inf if maximize else np.inf
    for p in row_vertices(lo, hi):
        finite = p > 0
        if np.any(finite & np.isinf(values)):
            e = np.inf
        else:
            e = float(np.dot(p[finite], values[finite]))
        best = max(best, e) if maximize else min(best, e)
    return best


def random_dag_instance(rng, n_states=20, n_actions=2, max_deg=4):
    """Layered acyclic instance: ordinary states only reach higher ids."""
    accepting = {n_states - 1}
    violating = {n_states - 2}
    rows = {}
    for q in range(n_states - 2):
        for a in range(n_actions):
            hi_states = np.arange(q + 1, n_states)
            deg = int(rng.integers(2, min(max_deg, len(hi_states)) + 1))
            cols = np.sort(rng.choice(hi_states, size=deg, replace=False))
            lo, hi = feasible_row(rng, deg)
            rows[(q, a)] = (cols, lo, hi)
    return n_states, rows, accepting, violating


def oracle_dag_values(n_states, rows, accepting, violating, n_actions, adversary_max):
    """Exact backward induction with per-row vertex enumeration."""
    v = np.zeros(n_states)
    for q in accepting:
        v[q] = 1.0
    for q in reversed(range(n_states)):
        if q in accepting or q in violating:
            continue
        best = -np.inf
        for a in range(n_actions):
            if (q, a) not in rows:
                continue
            cols, lo, hi = rows[(q, a)]
            best = max(best, oracle_extremal(v[np.asarray(cols)], lo, hi, adversary_max))
        v[q] = 0.0 if best == -np.inf else best
    return v


def random_cyclic_instance(rng, n_ordinary=5):
    """Small cyclic instance with two-destination rows and guaranteed exit
    mass, so every policy/adversary chain has a nonsingular linear system."""
    goal = n_ordinary
    dead = n_ordinary + 1
    n_states = n_ordinary + 2
    rows = {}
    for q in range(n_ordinary):
        for a in range(2):
            other = int(rng.integers(0, n_ordinary))
            term = goal if rng.random() < 0.5 else dead
            t_lo = rng.uniform(0.15, 0.5)
            t_hi = rng.uniform(t_lo, min(1.0, t_lo + 0.4))
            o_lo = max(0.0, 1.0 - t_hi)
            o_hi = 1.0 - t_lo
            if other == term:  # degenerate: single destination
                rows[(q, a)] = (np.array([term]), np.array([1.0]), np.array([1.0]))
            else:
                cols = np.array(sorted((other, term)))
                if cols[0] == other:
                    lo, hi = np.array([o_lo, t_lo]), np.array([o_hi, t_hi])
                else:
                    lo, hi = np.array([t_lo, o_lo]), np.array([t_hi, o_hi])
                rows[(q, a)] = (cols, lo, hi)
    return n_states, rows, {goal}, {dead}


def oracle_enumerate_cyclic(n_states, rows, accepting, violating, n_actions,
                            optimize_max_adversary):
    """max over stationary policies of the extremal-over-vertex-adversaries
    reachability, solved exactly per chain with a dense linear system."""
    ordinary = [q for q in range(n_states) if q not in accepting and q not in violating]
    best = np.full(n_states, -np.inf)
    best[list(accepting)] = 1.0
    best[list(violating)] = 0.0
    for policy in itertools.product(range(n_actions), repeat=len(ordinary)):
        vert_lists = []
        for q, a in zip(ordinary, policy):
            cols, lo, hi = rows[(q, a)]
            vert_lists.append([(np.asarray(cols), p) for p in row_vertices(lo, hi)])
        extreme = None
        for combo in itertools.product(*vert_lists):
            a_mat = np.zeros((len(ordinary), len(ordinary)))
            b = np.zeros(len(ordinary))
            pos = {q: i for i, q in enumerate(ordinary)}
            for i, (cols, p) in enumerate(combo):
                for c, mass in zip(cols, p):
                    if c in accepting:
                        b[i] += mass
                    elif c in pos:
                        a_mat[i, pos[c]] += mass
            v = np.linalg.solve(np.eye(len(ordinary)) - a_mat, b)
            if extreme is None:
                extreme = v
            else:
                extreme = np.maximum(extreme, v) if optimize_max_adversary else np.minimum(extreme, v)
        best[ordinary] = np.maximum(best[ordinary], extreme)
    return best
