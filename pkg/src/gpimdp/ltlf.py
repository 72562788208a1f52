"""Finite-trace temporal logic: parsing, trace semantics, and DFA compilation.

Formulas are built over a declared finite proposition set and interpreted on
finite traces, where each trace symbol is the subset of propositions that
hold at that step (encoded as a bitmask).  Compilation to a deterministic
finite automaton works by formula progression: rewriting a formula against a
symbol yields the obligation on the remainder of the trace, canonical
obligations become automaton states, and a state accepts when its resident
formula is satisfied by the empty suffix.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

MAX_PROPOSITIONS = 16
DEFAULT_STATE_CAP = 100_000


class LtlfError(Exception):
    """Base class for formula handling errors."""


class FormulaSyntaxError(LtlfError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownAtomError(LtlfError):
    def __init__(self, name: str, position: int, known: tuple[str, ...]):
        super().__init__(
            f"unknown proposition '{name}' (at position {position}); "
            f"declared: {', '.join(known) or '<none>'}"
        )
        self.position = position


class DfaCapacityError(LtlfError):
    """Raised when DFA construction exceeds the configured state cap."""


# ---------------------------------------------------------------------------
# Formula AST


class Formula:
    """Immutable, interned formula node.

    kind is one of: true, false, atom, not, and, or, next, wnext, until,
    release, ever, always.  Atoms carry the bit index of their proposition.
    Nodes are hash-consed: structurally equal formulas are the same object,
    so equality and hashing are identity-based and safe on the deeply shared
    graphs that progression produces.  And/Or produced by the canonical
    constructors have flattened, sorted, duplicate-free children; parsing
    preserves the written shape instead.
    """

    __slots__ = ("kind", "children", "ap", "uid")

    _intern: dict = {}
    _next_uid = 0

    def __new__(cls, kind: str, children: tuple = (), ap: int = -1):
        key = (kind, tuple(c.uid for c in children), ap)
        node = cls._intern.get(key)
        if node is None:
            node = object.__new__(cls)
            node.kind = kind
            node.children = children
            node.ap = ap
            node.uid = cls._next_uid
            Formula._next_uid += 1
            cls._intern[key] = node
        return node

    def __repr__(self) -> str:
        return f"Formula({self})"

    def __str__(self) -> str:
        return _fmt(self, _AP_NAMES_FALLBACK)

    def pretty(self, ap_names: tuple[str, ...]) -> str:
        return _fmt(self, ap_names)


_AP_NAMES_FALLBACK: tuple[str, ...] = tuple(f"p{i}" for i in range(MAX_PROPOSITIONS))

TRUE = Formula("true")
FALSE = Formula("false")


def atom(i: int) -> Formula:
    return Formula("atom", ap=i)


def not_(f: Formula) -> Formula:
    return Formula("not", (f,))


def and_(a: Formula, b: Formula) -> Formula:
    return Formula("and", (a, b))


def or_(a: Formula, b: Formula) -> Formula:
    return Formula("or", (a, b))


def next_(f: Formula) -> Formula:
    return Formula("next", (f,))


def wnext(f: Formula) -> Formula:
    return Formula("wnext", (f,))


def until(a: Formula, b: Formula) -> Formula:
    return Formula("until", (a, b))


def release(a: Formula, b: Formula) -> Formula:
    return Formula("release", (a, b))


def ever(f: Formula) -> Formula:
    return Formula("ever", (f,))


def always(f: Formula) -> Formula:
    return Formula("always", (f,))


_UNARY_SYMBOL = {"not": "!", "next": "X", "wnext": "WX", "ever": "F", "always": "G"}
_BINARY_SYMBOL = {"until": "U", "release": "R", "and": "&", "or": "|"}


def _fmt(f: Formula, names: tuple[str, ...]) -> str:
    if f.kind == "true":
        return "true"
    if f.kind == "false":
        return "false"
    if f.kind == "atom":
        return names[f.ap] if f.ap < len(names) else f"p{f.ap}"
    if f.kind in _UNARY_SYMBOL:
        return f"{_UNARY_SYMBOL[f.kind]}({_fmt(f.children[0], names)})"
    sym = _BINARY_SYMBOL[f.kind]
    parts = (f"({_fmt(c, names)})" for c in f.children)
    return f" {sym} ".join(parts)


# ---------------------------------------------------------------------------
# Parser
#
# Grammar (ASCII): true | false | ident | !phi | X phi | WX phi | F phi |
# G phi | phi U phi | phi R phi | phi & phi | phi | phi | (phi).
# Precedence: unary > U/R (right-associative) > & > |.

_KEYWORDS = {"true", "false", "X", "WX", "U", "R", "F", "G"}


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in "!&|()":
            tokens.append((c, c, i))
            i += 1
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            kind = word if word in _KEYWORDS else "ident"
            tokens.append((kind, word, i))
            i = j
            continue
        raise FormulaSyntaxError(f"unexpected character {c!r}", i)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, tokens, ap: tuple[str, ...]):
        self.tokens = tokens
        self.pos = 0
        self.ap = ap
        self.ap_index = {name: i for i, name in enumerate(ap)}

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str):
        tok = self.advance()
        if tok[0] != kind:
            raise FormulaSyntaxError(f"expected {kind!r}, found {tok[1]!r}", tok[2])
        return tok

    def parse(self) -> Formula:
        f = self.parse_or()
        tok = self.peek()
        if tok[0] != "end":
            raise FormulaSyntaxError(f"unexpected token {tok[1]!r}", tok[2])
        return f

    def parse_or(self) -> Formula:
        f = self.parse_and()
        while self.peek()[0] == "|":
            self.advance()
            f = or_(f, self.parse_and())
        return f

    def parse_and(self) -> Formula:
        f = self.parse_until()
        while self.peek()[0] == "&":
            self.advance()
            f = and_(f, self.parse_until())
        return f

    def parse_until(self) -> Formula:
        f = self.parse_unary()
        tok = self.peek()
        if tok[0] in ("U", "R"):
            self.advance()
            rhs = self.parse_until()  # right-associative
            f = until(f, rhs) if tok[0] == "U" else release(f, rhs)
        return f

    def parse_unary(self) -> Formula:
        tok = self.advance()
        kind = tok[0]
        if kind == "!":
            return not_(self.parse_unary())
        if kind == "X":
            return next_(self.parse_unary())
        if kind == "WX":
            return wnext(self.parse_unary())
        if kind == "F":
            return ever(self.parse_unary())
        if kind == "G":
            return always(self.parse_unary())
        if kind == "(":
            f = self.parse_or()
            self.expect(")")
            return f
        if kind == "true":
            return TRUE
        if kind == "false":
            return FALSE
        if kind == "ident":
            if tok[1] not in self.ap_index:
                raise UnknownAtomError(tok[1], tok[2], self.ap)
            return atom(self.ap_index[tok[1]])
        raise FormulaSyntaxError(f"unexpected token {tok[1]!r}", tok[2])


def parse(text: str, ap: list[str] | tuple[str, ...]) -> Formula:
    """Parse a formula over the declared proposition names.

    Derived operators (F, G, WX, R) are preserved as AST nodes.
    """
    ap = tuple(ap)
    if len(ap) > MAX_PROPOSITIONS:
        raise LtlfError(f"at most {MAX_PROPOSITIONS} propositions supported, got {len(ap)}")
    if len(set(ap)) != len(ap):
        raise LtlfError("duplicate proposition names")
    return _Parser(_tokenize(text), ap).parse()


# ---------------------------------------------------------------------------
# Trace semantics
#
# A trace is a sequence of symbols, each a bitmask over the proposition set.
# Evaluation at index i == len(trace) is the empty-suffix convention: atoms
# and strong operators (X, F, U) are false, weak ones (WX, G, R) are true.


def eval_trace(f: Formula, trace, i: int = 0) -> bool:
    """Decide trace, i |= f for a finite trace of symbol bitmasks."""
    n = len(trace)
    if not 0 <= i <= n:
        raise ValueError(f"index {i} outside 0..{n}")
    memo: dict[tuple[Formula, int], bool] = {}

    def ev(g: Formula, j: int) -> bool:
        key = (g, j)
        hit = memo.get(key)
        if hit is not None:
            return hit
        k = g.kind
        if k == "true":
            r = True
        elif k == "false":
            r = False
        elif k == "atom":
            r = j < n and bool(trace[j] >> g.ap & 1)
        elif k == "not":
            r = not ev(g.children[0], j)
        elif k == "and":
            r = all(ev(c, j) for c in g.children)
        elif k == "or":
            r = any(ev(c, j) for c in g.children)
        elif k == "next":
            r = n > j + 1 and ev(g.children[0], j + 1)
        elif k == "wnext":
            r = j + 1 >= n or ev(g.children[0], j + 1)
        elif k == "until":
            a, b = g.children
            r = False
            for m in range(j, n):
                if ev(b, m):
                    r = True
                    break
                if not ev(a, m):
                    break
        elif k == "release":
            a, b = g.children
            r = True
            for m in range(j, n):
                if not ev(b, m):
                    r = False
                    break
                if ev(a, m):
                    break
        elif k == "ever":
            r = any(ev(g.children[0], m) for m in range(j, n))
        elif k == "always":
            r = all(ev(g.children[0], m) for m in range(j, n))
        else:  # pragma: no cover
            raise LtlfError(f"unknown node kind {k!r}")
        memo[key] = r
        return r

    return ev(f, i)


# ---------------------------------------------------------------------------
# Canonical negation normal form
#
# Canonical formulas use only true/false, literals (atom or negated atom),
# flattened sorted And/Or, X, WX, U, R.  F and G are normalized into U and R
# so equivalent spellings share automaton states.  Simplifications must be
# valid at the empty suffix too: F(true) is *not* true (it fails on the
# empty trace), so only pointwise boolean absorptions are applied.


def _sort_key(f: Formula) -> int:
    # interned nodes have stable creation ids; any total order works for
    # canonical child sorting as long as it is consistent within a process
    return f.uid


@lru_cache(maxsize=None)
def _negate(f: Formula) -> Formula:
    """Negation of a canonical formula, in canonical form."""
    k = f.kind
    if k == "true":
        return FALSE
    if k == "false":
        return TRUE
    if k == "atom":
        return Formula("not", (f,))
    if k == "not":
        return f.children[0]
    if k == "and":
        return _mk_or(tuple(_negate(c) for c in f.children))
    if k == "or":
        return _mk_and(tuple(_negate(c) for c in f.children))
    if k == "next":
        return Formula("wnext", (_negate(f.children[0]),))
    if k == "wnext":
        return Formula("next", (_negate(f.children[0]),))
    if k == "until":
        a, b = f.children
        return _mk_release(_negate(a), _negate(b))
    if k == "release":
        a, b = f.children
        return _mk_until(_negate(a), _negate(b))
    raise LtlfError(f"non-canonical node {k!r}")  # pragma: no cover


def _prune_subsumed(uniq: list[Formula], inner: str) -> list[Formula]:
    """Boolean absorption: inside an Or, a conjunction implied by another
    sibling is redundant (x | (x & y) = x); dually inside an And."""
    sets = {c: frozenset(c.children) if c.kind == inner else frozenset((c,)) for c in uniq}
    kept = []
    for c in uniq:
        if any(d is not c and sets[d] <= sets[c] for d in uniq if sets[d] != sets[c]):
            continue
        kept.append(c)
    return kept


def _mk_and(items: tuple[Formula, ...]) -> Formula:
    flat: list[Formula] = []
    for c in items:
        if c.kind == "and":
            flat.extend(c.children)
        elif c.kind == "false":
            return FALSE
        elif c.kind != "true":
            flat.append(c)
    uniq = sorted(set(flat), key=_sort_key)
    for c in uniq:
        if _negate(c) in uniq:
            return FALSE
    # keep canonical formulas in disjunctive normal form: distribute over
    # the first disjunctive conjunct, recursion clears the rest, so that
    # progression obligations reach a fixed point instead of nesting forever
    for i, c in enumerate(uniq):
        if c.kind == "or":
            rest = tuple(uniq[:i] + uniq[i + 1 :])
            return _mk_or(tuple(_mk_and((d,) + rest) for d in c.children))
    if not uniq:
        return TRUE
    if len(uniq) == 1:
        return uniq[0]
    return Formula("and", tuple(uniq))


def _mk_or(items: tuple[Formula, ...]) -> Formula:
    flat: list[Formula] = []
    for c in items:
        if c.kind == "or":
            flat.extend(c.children)
        elif c.kind == "true":
            return TRUE
        elif c.kind != "false":
            flat.append(c)
    uniq = sorted(set(flat), key=_sort_key)
    for c in uniq:
        if _negate(c) in uniq:
            return TRUE
    uniq = _prune_subsumed(uniq, "and")
    if not uniq:
        return FALSE
    if len(uniq) == 1:
        return uniq[0]
    return Formula("or", tuple(uniq))


def _mk_until(a: Formula, b: Formula) -> Formula:
    if b.kind == "false":
        return FALSE  # no step can ever discharge the obligation
    return Formula("until", (a, b))


def _mk_release(a: Formula, b: Formula) -> Formula:
    if b.kind == "true":
        return TRUE  # holds at every step and at the empty suffix
    return Formula("release", (a, b))


@lru_cache(maxsize=None)
def to_nnf(f: Formula) -> Formula:
    """Canonicalize a parsed formula into negation normal form."""
    k = f.kind
    if k in ("true", "false", "atom"):
        return f
    if k == "not":
        return _negate(to_nnf(f.children[0]))
    if k == "and":
        return _mk_and(tuple(to_nnf(c) for c in f.children))
    if k == "or":
        return _mk_or(tuple(to_nnf(c) for c in f.children))
    if k == "next":
        return Formula("next", (to_nnf(f.children[0]),))
    if k == "wnext":
        return Formula("wnext", (to_nnf(f.children[0]),))
    if k == "until":
        return _mk_until(to_nnf(f.children[0]), to_nnf(f.children[1]))
    if k == "release":
        return _mk_release(to_nnf(f.children[0]), to_nnf(f.children[1]))
    if k == "ever":
        return _mk_until(TRUE, to_nnf(f.children[0]))
    if k == "always":
        return _mk_release(FALSE, to_nnf(f.children[0]))
    raise LtlfError(f"unknown node kind {k!r}")  # pragma: no cover


# true on every nonempty suffix, false on the empty one; guards strong Next
_SOME_STEP = Formula("until", (TRUE, TRUE))
# the dual: true only on the empty suffix
_NO_STEP = Formula("release", (FALSE, FALSE))


@lru_cache(maxsize=None)
def _empty_suffix(f: Formula) -> bool:
    k = f.kind
    if k in ("true", "release", "wnext", "not"):
        # literals: atoms are false at the empty suffix, so "not atom" is true
        return True
    if k in ("false", "atom", "until", "next"):
        return False
    if k == "and":
        return all(_empty_suffix(c) for c in f.children)
    if k == "or":
        return any(_empty_suffix(c) for c in f.children)
    raise LtlfError(f"non-canonical node {k!r}")  # pragma: no cover


@lru_cache(maxsize=None)
def _progress(f: Formula, sym: int) -> Formula:
    """Obligation on the rest of the trace after consuming one symbol."""
    k = f.kind
    if k == "true" or k == "false":
        return f
    if k == "atom":
        return TRUE if sym >> f.ap & 1 else FALSE
    if k == "not":  # canonical: child is an atom
        return FALSE if sym >> f.children[0].ap & 1 else TRUE
    if k == "and":
        return _mk_and(tuple(_progress(c, sym) for c in f.children))
    if k == "or":
        return _mk_or(tuple(_progress(c, sym) for c in f.children))
    if k == "next":
        # strong: a further step must exist for the obligation to be met
        return _mk_and((f.children[0], _SOME_STEP))
    if k == "wnext":
        return _mk_or((f.children[0], _NO_STEP))
    if k == "until":
        a, b = f.children
        return _mk_or((_progress(b, sym), _mk_and((_progress(a, sym), f))))
    if k == "release":
        a, b = f.children
        return _mk_and((_progress(b, sym), _mk_or((_progress(a, sym), f))))
    raise LtlfError(f"non-canonical node {k!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# DFA


@dataclass
class Dfa:
    """Total deterministic finite automaton over symbol bitmasks.

    transitions has shape (n_states, 2**n_ap).  sink[z] is true when no path
    from z reaches an accepting state.
    """

    n_ap: int
    ap_names: tuple[str, ...]
    transitions: np.ndarray
    initial: int
    accepting: np.ndarray  # bool per state
    sink: np.ndarray  # bool per state
    state_labels: tuple[str, ...] = field(default_factory=tuple)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.transitions.shape[1]

    def step(self, z: int, sym: int) -> int:
        return int(self.transitions[z, sym])

    def accepts(self, trace) -> bool:
        z = self.initial
        for sym in trace:
            z = self.transitions[z, sym]
        return bool(self.accepting[z])

    def run(self, trace) -> list[int]:
        states = [self.initial]
        z = self.initial
        for sym in trace:
            z = int(self.transitions[z, sym])
            states.append(z)
        return states

    def to_json(self) -> str:
        table = {
            str(sym): self.transitions[:, sym].tolist()
            for sym in range(self.n_symbols)
        }
        doc = {
            "ap": list(self.ap_names),
            "n_states": self.n_states,
            "initial": self.initial,
            "accepting": np.flatnonzero(self.accepting).tolist(),
            "sinks": np.flatnonzero(self.sink).tolist(),
            "transitions": table,
            "state_labels": list(self.state_labels),
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Dfa":
        doc = json.loads(text)
        ap = tuple(doc["ap"])
        n_states = int(doc["n_states"])
        n_symbols = 2 ** len(ap)
        transitions = np.zeros((n_states, n_symbols), dtype=np.int32)
        for sym_str, col in doc["transitions"].items():
            transitions[:, int(sym_str)] = col
        accepting = np.zeros(n_states, dtype=bool)
        accepting[doc["accepting"]] = True
        sink = np.zeros(n_states, dtype=bool)
        sink[doc["sinks"]] = True
        return cls(
            n_ap=len(ap),
            ap_names=ap,
            transitions=transitions,
            initial=int(doc["initial"]),
            accepting=accepting,
            sink=sink,
            state_labels=tuple(doc.get("state_labels", ())),
        )


def to_dfa(f: Formula, ap: list[str] | tuple[str, ...], max_states: int = DEFAULT_STATE_CAP) -> Dfa:
    """Compile a formula to a language-equivalent DFA by progression.

    States are canonical obligations discovered breadth-first from the
    initial formula, so the numbering is deterministic.
    """
    ap = tuple(ap)
    n_ap = len(ap)
    if n_ap > MAX_PROPOSITIONS:
        raise LtlfError(f"at most {MAX_PROPOSITIONS} propositions supported")
    n_symbols = 2**n_ap

    init = to_nnf(f)
    index: dict[Formula, int] = {init: 0}
    order: list[Formula] = [init]
    rows: list[list[int]] = []
    queue = deque([init])
    while queue:
        g = queue.popleft()
        row = []
        for sym in range(n_symbols):
            h = _progress(g, sym)
            j = index.get(h)
            if j is None:
                j = len(order)
                if j >= max_states:
                    raise DfaCapacityError(
                        f"DFA construction exceeded {max_states} states"
                    )
                index[h] = j
                order.append(h)
                queue.append(h)
            row.append(j)
        rows.append(row)

    transitions = np.array(rows, dtype=np.int32)
    accepting = np.array([_empty_suffix(g) for g in order], dtype=bool)

    sink = _compute_sinks(transitions, accepting)
    labels = tuple(g.pretty(ap) for g in order)
    return Dfa(
        n_ap=n_ap,
        ap_names=ap,
        transitions=transitions,
        initial=0,
        accepting=accepting,
        sink=sink,
        state_labels=labels,
    )


def _compute_sinks(transitions: np.ndarray, accepting: np.ndarray) -> np.ndarray:
    """States from which the accepting set is unreachable (backward search)."""
    n = transitions.shape[0]
    preds: list[set[int]] = [set() for _ in range(n)]
    for z in range(n):
        for zn in transitions[z]:
            preds[int(zn)].add(z)
    reach = accepting.copy()
    frontier = deque(np.flatnonzero(accepting).tolist())
    while frontier:
        z = frontier.popleft()
        for p in preds[z]:
            if not reach[p]:
                reach[p] = True
                frontier.append(p)
    return ~reach


def dfa_distance(dfa: Dfa) -> np.ndarray:
    """Hop distance from each state to the accepting set (inf on sinks)."""
    dist = np.full(dfa.n_states, math.inf)
    dist[dfa.accepting] = 0.0
    frontier = deque(np.flatnonzero(dfa.accepting).tolist())
    preds: list[set[int]] = [set() for _ in range(dfa.n_states)]
    for z in range(dfa.n_states):
        for zn in dfa.transitions[z]:
            preds[int(zn)].add(z)
    while frontier:
        z = frontier.popleft()
        for p in preds[z]:
            if math.isinf(dist[p]):
                dist[p] = dist[z] + 1.0
                frontier.append(p)
    return dist
