"""Robust interval value iteration and strategy synthesis on the product.

Pessimistic values maximize, over actions, the worst-case (adversary
minimizing) expected probability of reaching the accepting set; optimistic
values use the best-case adversary.  Iterations are Jacobi style from zero
(accepting states pinned at one, violating at zero), which converges
monotonically from below, and can be warm-started from any sub-fixpoint,
which is how online re-synthesis stays cheap.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ._kernels import extremal_rows
from .imdp import ModelError, Pimdp

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 10_000
_FEAS_TOL = 1e-9


def extremal_expectation(values, plow, phigh, mode: str = "minimize") -> float:
    """Extremal expectation of values over one interval distribution row."""
    values = np.ascontiguousarray(values, dtype=float)
    plow = np.ascontiguousarray(plow, dtype=float)
    phigh = np.ascontiguousarray(phigh, dtype=float)
    if mode not in ("minimize", "maximize"):
        raise ValueError(f"mode must be minimize or maximize, got {mode!r}")
    if np.any(plow > phigh + _FEAS_TOL) or plow.sum() > 1 + _FEAS_TOL or phigh.sum() < 1 - _FEAS_TOL:
        raise ModelError("infeasible interval row")
    k = len(values)
    out = np.empty(1)
    extremal_rows(
        values,
        np.array([0, k], dtype=np.int64),
        np.arange(k, dtype=np.int64),
        plow,
        phigh,
        mode == "maximize",
        out,
    )
    return float(out[0])


@dataclass
class ReachResult:
    values: np.ndarray
    q_values: np.ndarray  # (n_states, n_actions), NaN where unavailable
    iterations: int
    residual: float
    converged: bool
    min_step: float  # most negative per-state change seen across iterations


def _value_iteration(n_states, n_actions, csr, kind, maximize_adversary,
                     tol, max_iter, warm=None) -> ReachResult:
    row_ptr, cols, plow, phigh = csr
    v = np.zeros(n_states)
    if warm is not None:
        v = np.asarray(warm, dtype=float).copy()
    v[kind == 1] = 1.0
    v[kind == 2] = 0.0
    out_rows = np.empty(n_states * n_actions)
    min_step = 0.0
    residual = np.inf
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        extremal_rows(v, row_ptr, cols, plow, phigh, maximize_adversary, out_rows)
        q = out_rows.reshape(n_states, n_actions)
        filled = np.where(np.isnan(q), -np.inf, q)
        v_new = filled.max(axis=1)
        v_new[v_new == -np.inf] = 0.0  # states with no actions keep value 0
        v_new[kind == 1] = 1.0
        v_new[kind == 2] = 0.0
        step = v_new - v
        min_step = min(min_step, float(step.min()))
        residual = float(np.abs(step).max())
        v = v_new
        if residual < tol:
            converged = True
            break
    extremal_rows(v, row_ptr, cols, plow, phigh, maximize_adversary, out_rows)
    q = out_rows.reshape(n_states, n_actions)
    return ReachResult(v, q, iterations, residual, converged, min_step)


def robust_reach(pimdp: Pimdp, mode: str = "pessimistic", tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER, warm=None) -> ReachResult:
    """Optimal reachability bounds of the accepting set.

    pessimistic: max over actions of the minimizing adversary's expectation;
    optimistic: max over actions of the maximizing adversary's expectation.
    """
    if mode not in ("pessimistic", "optimistic"):
        raise ValueError(f"mode must be pessimistic or optimistic, got {mode!r}")
    return _value_iteration(
        pimdp.n_states, pimdp.n_actions, pimdp.build_csr(), pimdp.state_kind(),
        maximize_adversary=(mode == "optimistic"), tol=tol, max_iter=max_iter, warm=warm,
    )


@dataclass
class ValueResult:
    """Satisfaction bounds and the synthesized strategy per product state."""

    p_lower: np.ndarray
    p_upper: np.ndarray
    strategy: np.ndarray  # action id, -1 on terminal states
    iterations: tuple[int, int]
    residuals: tuple[float, float]
    converged: bool

    def to_csv(self, pimdp: Pimdp, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["state", "region", "dfa_state", "action", "p_lower", "p_upper"])
            for sid, (q, z) in enumerate(pimdp.states):
                a = int(self.strategy[sid])
                name = pimdp.imdp.action_names[a] if a >= 0 else ""
                w.writerow([sid, q, z, name, repr(float(self.p_lower[sid])), repr(float(self.p_upper[sid]))])


def synthesize(pimdp: Pimdp, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
               warm_lower=None) -> ValueResult:
    """Pessimistic and optimistic bounds plus the argmax strategy.

    Ties on the pessimistic action value prefer the higher optimistic value,
    then the lowest action id.  The optimistic pass warm-starts from the
    pessimistic values, a valid sub-fixpoint.
    """
    pess = robust_reach(pimdp, "pessimistic", tol, max_iter, warm=warm_lower)
    opt = robust_reach(pimdp, "optimistic", tol, max_iter, warm=pess.values)

    qp = np.where(np.isnan(pess.q_values), -1.0, pess.q_values)
    qo = np.where(np.isnan(opt.q_values), -1.0, opt.q_values)
    best_p = qp.max(axis=1)
    tie = qp == best_p[:, None]
    qo_masked = np.where(tie, qo, -np.inf)
    best_o = qo_masked.max(axis=1)
    tie &= qo_masked == best_o[:, None]
    strategy = tie.argmax(axis=1).astype(np.int32)
    kind = pimdp.state_kind()
    strategy[kind != 0] = -1
    no_action = np.isnan(pess.q_values).all(axis=1) & (kind == 0)
    strategy[no_action] = -1

    return ValueResult(
        p_lower=pess.values,
        p_upper=opt.values,
        strategy=strategy,
        iterations=(pess.iterations, opt.iterations),
        residuals=(pess.residual, opt.residual),
        converged=pess.converged and opt.converged,
    )


def satisfaction_intervals(pimdp: Pimdp, strategy, tol: float = DEFAULT_TOL,
                           max_iter: int = DEFAULT_MAX_ITER) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-strategy satisfaction bounds (minimizing and maximizing adversary)."""
    row_ptr, cols, plow, phigh = pimdp.build_csr()
    kind = pimdp.state_kind()
    n = pimdp.n_states
    na = pimdp.n_actions
    counts = np.zeros(n, dtype=np.int64)
    for sid in range(n):
        a = int(strategy[sid])
        if kind[sid] != 0 or a < 0:
            continue
        r = sid * na + a
        if row_ptr[r + 1] == row_ptr[r]:
            raise ModelError(f"strategy picks unavailable action {a} at state {sid}")
        counts[sid] = row_ptr[r + 1] - row_ptr[r]
    pol_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=pol_ptr[1:])
    nnz = int(pol_ptr[-1])
    pol_cols = np.empty(nnz, dtype=np.int64)
    pol_lo = np.empty(nnz)
    pol_hi = np.empty(nnz)
    for sid in range(n):
        if counts[sid] == 0:
            continue
        r = sid * na + int(strategy[sid])
        s, e = row_ptr[r], row_ptr[r + 1]
        t = pol_ptr[sid]
        pol_cols[t : t + e - s] = cols[s:e]
        pol_lo[t : t + e - s] = plow[s:e]
        pol_hi[t : t + e - s] = phigh[s:e]
    csr = (pol_ptr, pol_cols, pol_lo, pol_hi)
    lower = _value_iteration(n, 1, csr, kind, False, tol, max_iter)
    upper = _value_iteration(n, 1, csr, kind, True, tol, max_iter, warm=lower.values)
    return lower.values, upper.values
