"""Weighted finite-state transducers over the tropical semiring.

Weights are costs (negative log probabilities). ``plus`` is ``min``, ``times``
is ``+``, the semiring zero is ``inf`` and the semiring one is ``0.0``.
Label 0 is epsilon on both tapes.

An :class:`Fst` is built with :meth:`Fst.add_state` / :meth:`Fst.add_arc` and
treated as read-only afterwards; every operation below returns a new object.
"""

from __future__ import annotations

import math
from collections import deque
from typing import Iterable, Iterator, NamedTuple, Optional, Sequence

EPSILON = 0
EPS_SYMBOL = "<eps>"

ZERO = math.inf
ONE = 0.0


class FstError(ValueError):
    pass


def plus(a: float, b: float) -> float:
    return a if a <= b else b


def times(a: float, b: float) -> float:
    return a + b


def is_zero(w: float) -> bool:
    return w == ZERO


class Arc(NamedTuple):
    ilabel: int
    olabel: int
    weight: float
    nextstate: int


class SymbolTable:
    """Bidirectional symbol <-> id map with ``<eps>`` fixed at id 0."""

    def __init__(self, symbols: Iterable[str] = ()):
        self._sym2id = {EPS_SYMBOL: EPSILON}
        self._id2sym = {EPSILON: EPS_SYMBOL}
        for s in symbols:
            self.add_symbol(s)

    def add_symbol(self, symbol: str, key: Optional[int] = None) -> int:
        if symbol in self._sym2id:
            if key is not None and self._sym2id[symbol] != key:
                raise FstError(f"symbol {symbol!r} already has id {self._sym2id[symbol]}")
            return self._sym2id[symbol]
        if key is None:
            key = max(self._id2sym) + 1
        if key in self._id2sym:
            raise FstError(f"id {key} already bound to {self._id2sym[key]!r}")
        self._sym2id[symbol] = key
        self._id2sym[key] = symbol
        return key

    def find(self, key):
        """Id for a symbol string, or symbol string for an id."""
        if isinstance(key, str):
            return self._sym2id[key]
        return self._id2sym[key]

    def __contains__(self, symbol) -> bool:
        return symbol in self._sym2id

    def __len__(self) -> int:
        return len(self._sym2id)

    def __eq__(self, other) -> bool:
        return isinstance(other, SymbolTable) and self._id2sym == other._id2sym

    def __hash__(self):
        return hash(tuple(sorted(self._id2sym.items())))

    def __repr__(self) -> str:
        return f"SymbolTable({len(self)} symbols)"

    def symbols(self) -> list[str]:
        """Real (non-epsilon) symbols in id order."""
        return [self._id2sym[k] for k in sorted(self._id2sym) if k != EPSILON]

    def items(self) -> list[tuple[str, int]]:
        return [(self._id2sym[k], k) for k in sorted(self._id2sym)]

    def write_text(self) -> str:
        return "".join(f"{s} {k}\n" for s, k in self.items())

    @classmethod
    def read_text(cls, text: str) -> "SymbolTable":
        table = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 2:
                raise FstError(f"line {lineno}: expected 'symbol id', got {line!r}")
            try:
                key = int(fields[1])
            except ValueError:
                raise FstError(f"line {lineno}: bad id {fields[1]!r}") from None
            if key == EPSILON and fields[0] != EPS_SYMBOL:
                raise FstError(f"line {lineno}: id 0 is reserved for {EPS_SYMBOL}")
            table.add_symbol(fields[0], key)
        return table


class Fst:
    def __init__(self, isymbols: Optional[SymbolTable] = None,
                 osymbols: Optional[SymbolTable] = None):
        self._arcs: list[list[Arc]] = []
        self._final: dict[int, float] = {}
        self.start: Optional[int] = None
        self.isymbols = isymbols
        self.osymbols = osymbols

    # construction

    def add_state(self) -> int:
        self._arcs.append([])
        return len(self._arcs) - 1

    def add_states(self, n: int) -> range:
        first = len(self._arcs)
        self._arcs.extend([] for _ in range(n))
        return range(first, first + n)

    def set_start(self, state: int) -> None:
        self._check_state(state)
        self.start = state

    def set_final(self, state: int, weight: float = ONE) -> None:
        self._check_state(state)
        if is_zero(weight):
            self._final.pop(state, None)
        else:
            self._final[state] = float(weight)

    def add_arc(self, state: int, arc: Arc) -> None:
        self._check_state(state)
        self._check_state(arc.nextstate)
        self._arcs[state].append(arc)

    def _check_state(self, state: int) -> None:
        if not 0 <= state < len(self._arcs):
            raise FstError(f"invalid state id {state}")

    # inspection

    @property
    def num_states(self) -> int:
        return len(self._arcs)

    def states(self) -> range:
        return range(len(self._arcs))

    def arcs(self, state: int) -> Sequence[Arc]:
        return tuple(self._arcs[state])

    def num_arcs(self, state: Optional[int] = None) -> int:
        if state is None:
            return sum(len(a) for a in self._arcs)
        return len(self._arcs[state])

    def final(self, state: int) -> float:
        return self._final.get(state, ZERO)

    def is_final(self, state: int) -> bool:
        return state in self._final

    def final_states(self) -> list[int]:
        return sorted(self._final)

    def is_empty(self) -> bool:
        return self.start is None or not self._arcs

    def copy(self) -> "Fst":
        f = Fst(self.isymbols, self.osymbols)
        f._arcs = [list(a) for a in self._arcs]
        f._final = dict(self._final)
        f.start = self.start
        return f

    def __repr__(self) -> str:
        return f"Fst(states={self.num_states}, arcs={self.num_arcs()}, start={self.start})"


def _require_nonempty(*fsts: Fst) -> None:
    for f in fsts:
        if f.is_empty():
            raise FstError("empty operand")


def _merge_symbols(a: Optional[SymbolTable], b: Optional[SymbolTable]) -> Optional[SymbolTable]:
    if a is not None and b is not None and a != b:
        raise FstError("alphabet mismatch between operands")
    return a if a is not None else b


def union_merged_start(a: Fst, b: Fst) -> Fst:
    """Union of ``a`` and ``b`` in which ``b``'s start state is identified
    with ``a``'s start state rather than joined through a fresh state.

    The result has ``|a| + |b| - 1`` states; states of ``a`` keep their ids and
    the non-start states of ``b`` follow in their original order.
    """
    _require_nonempty(a, b)
    out = a.copy()
    out.isymbols = _merge_symbols(a.isymbols, b.isymbols)
    out.osymbols = _merge_symbols(a.osymbols, b.osymbols)
    remap = {}
    for s in b.states():
        remap[s] = a.start if s == b.start else out.add_state()
    for s in b.states():
        for arc in b.arcs(s):
            out.add_arc(remap[s], arc._replace(nextstate=remap[arc.nextstate]))
        if b.is_final(s):
            t = remap[s]
            out.set_final(t, plus(out.final(t), b.final(s)))
    return out


def closure(f: Fst) -> Fst:
    """Kleene star: accepts epsilon plus any concatenation of strings of ``f``.

    Epsilon arcs run from every final state back to the start with that
    state's final weight, and the start becomes final with weight one. When
    arcs already enter the start state, a fresh final start is prepended so
    that no proper prefix of a string of ``f`` is accepted spuriously.
    """
    _require_nonempty(f)
    out = f.copy()
    loop_to = f.start
    enters_start = any(arc.nextstate == f.start for s in f.states() for arc in f.arcs(s))
    for s in f.final_states():
        if s == loop_to:
            continue
        out.add_arc(s, Arc(EPSILON, EPSILON, f.final(s), loop_to))
    if enters_start:
        new_start = out.add_state()
        out.add_arc(new_start, Arc(EPSILON, EPSILON, ONE, loop_to))
        out.set_start(new_start)
        out.set_final(new_start, ONE)
    else:
        out.set_final(loop_to, plus(out.final(loop_to), ONE))
    return out


def connect(f: Fst) -> Fst:
    """Remove states that are not both accessible and co-accessible.

    Surviving states keep their relative order. If the start state itself is
    useless the result is the empty machine (no states).
    """
    out = Fst(f.isymbols, f.osymbols)
    if f.is_empty():
        return out
    access = {f.start}
    stack = [f.start]
    while stack:
        s = stack.pop()
        for arc in f.arcs(s):
            if arc.nextstate not in access:
                access.add(arc.nextstate)
                stack.append(arc.nextstate)
    incoming: list[list[int]] = [[] for _ in f.states()]
    for s in f.states():
        for arc in f.arcs(s):
            incoming[arc.nextstate].append(s)
    coaccess = set(f.final_states())
    stack = list(coaccess)
    while stack:
        s = stack.pop()
        for p in incoming[s]:
            if p not in coaccess:
                coaccess.add(p)
                stack.append(p)
    keep = [s for s in f.states() if s in access and s in coaccess]
    if f.start not in coaccess:
        return out
    remap = {s: i for i, s in enumerate(keep)}
    out.add_states(len(keep))
    out.set_start(remap[f.start])
    for s in keep:
        for arc in f.arcs(s):
            if arc.nextstate in remap:
                out.add_arc(remap[s], arc._replace(nextstate=remap[arc.nextstate]))
        if f.is_final(s):
            out.set_final(remap[s], f.final(s))
    return out


def compose(a: Fst, b: Fst) -> Fst:
    """Composition ``a o b`` with a three-state epsilon filter.

    Filter state 0 permits every move; after ``a`` advances alone on an output
    epsilon (state 1) only further ``a``-alone moves or real matches are
    allowed, and symmetrically for ``b`` (state 2). Simultaneous epsilon moves
    are only taken from state 0. Each pair of compatible paths therefore
    yields exactly one composed path. The result is connected.
    """
    isyms = a.isymbols
    osyms = b.osymbols
    if a.osymbols is not None and b.isymbols is not None and a.osymbols != b.isymbols:
        raise FstError("alphabet mismatch: output symbols of left operand "
                       "differ from input symbols of right operand")
    out = Fst(isyms, osyms)
    if a.is_empty() or b.is_empty():
        return out

    b_by_ilabel: list[dict[int, list[Arc]]] = []
    for s in b.states():
        index: dict[int, list[Arc]] = {}
        for arc in b.arcs(s):
            index.setdefault(arc.ilabel, []).append(arc)
        b_by_ilabel.append(index)

    ids: dict[tuple[int, int, int], int] = {}
    queue: deque[tuple[int, int, int]] = deque()

    def state_of(triple):
        sid = ids.get(triple)
        if sid is None:
            sid = ids[triple] = out.add_state()
            queue.append(triple)
        return sid

    out.set_start(state_of((a.start, b.start, 0)))
    while queue:
        q1, q2, filt = triple = queue.popleft()
        src = ids[triple]
        if a.is_final(q1) and b.is_final(q2):
            out.set_final(src, times(a.final(q1), b.final(q2)))
        index = b_by_ilabel[q2]
        b_eps = index.get(EPSILON, ())
        for arc_a in a.arcs(q1):
            if arc_a.olabel == EPSILON:
                if filt in (0, 1):
                    dst = state_of((arc_a.nextstate, q2, 1))
                    out.add_arc(src, Arc(arc_a.ilabel, EPSILON, arc_a.weight, dst))
                if filt == 0:
                    for arc_b in b_eps:
                        dst = state_of((arc_a.nextstate, arc_b.nextstate, 0))
                        out.add_arc(src, Arc(arc_a.ilabel, arc_b.olabel,
                                             times(arc_a.weight, arc_b.weight), dst))
            else:
                for arc_b in index.get(arc_a.olabel, ()):
                    dst = state_of((arc_a.nextstate, arc_b.nextstate, 0))
                    out.add_arc(src, Arc(arc_a.ilabel, arc_b.olabel,
                                         times(arc_a.weight, arc_b.weight), dst))
        if filt in (0, 2):
            for arc_b in b_eps:
                dst = state_of((q1, arc_b.nextstate, 2))
                out.add_arc(src, Arc(EPSILON, arc_b.olabel, arc_b.weight, dst))
    return connect(out)


class Path(NamedTuple):
    ilabels: tuple[int, ...]
    olabels: tuple[int, ...]
    weight: float
    states: tuple[int, ...]


def _distances(f: Fst) -> list[float]:
    """Single-source shortest distances from the start (label-correcting)."""
    n = f.num_states
    dist = [ZERO] * n
    dist[f.start] = ONE
    queue = deque([f.start])
    queued = [False] * n
    queued[f.start] = True
    relaxations = [0] * n
    while queue:
        s = queue.popleft()
        queued[s] = False
        relaxations[s] += 1
        if relaxations[s] > n + 1:
            raise FstError("negative-cost cycle: shortest path undefined")
        ds = dist[s]
        for arc in f.arcs(s):
            nd = ds + arc.weight
            if nd < dist[arc.nextstate]:
                dist[arc.nextstate] = nd
                if not queued[arc.nextstate]:
                    queued[arc.nextstate] = True
                    queue.append(arc.nextstate)
    return dist


def shortest_path(f: Fst) -> Optional[Path]:
    """Minimum-cost accepting path, or ``None`` when nothing is accepted.

    Ties are broken by backtracking: the lowest-numbered final state among
    the optimal ones, then at each step the optimal incoming arc with the
    smallest ``(source state, arc index)``. This picks the optimal path whose
    reversed (state, arc) sequence is lexicographically smallest.
    """
    if f.is_empty():
        return None
    dist = _distances(f)
    best, best_state = ZERO, None
    for s in f.final_states():
        total = dist[s] + f.final(s)
        if total < best:
            best, best_state = total, s
    if best_state is None:
        return None

    incoming: list[list[tuple[int, int, Arc]]] = [[] for _ in f.states()]
    for s in f.states():
        for k, arc in enumerate(f.arcs(s)):
            incoming[arc.nextstate].append((s, k, arc))

    arcs: list[Arc] = []
    states = [best_state]
    v = best_state
    while v != f.start:
        if len(arcs) > f.num_states:
            raise FstError("zero-cost cycle prevents a unique backtrace")
        chosen = None
        for u, k, arc in incoming[v]:
            if dist[u] + arc.weight == dist[v]:
                if chosen is None or (u, k) < chosen[:2]:
                    chosen = (u, k, arc)
        u, _, arc = chosen
        arcs.append(arc)
        states.append(u)
        v = u
    arcs.reverse()
    states.reverse()
    return Path(
        ilabels=tuple(a.ilabel for a in arcs if a.ilabel != EPSILON),
        olabels=tuple(a.olabel for a in arcs if a.olabel != EPSILON),
        weight=best,
        states=tuple(states),
    )


def identity_fst(symbols: SymbolTable) -> Fst:
    """One-state acceptor looping over every real symbol with weight one."""
    f = Fst(symbols, symbols)
    s = f.add_state()
    f.set_start(s)
    f.set_final(s)
    for sym in symbols.symbols():
        k = symbols.find(sym)
        f.add_arc(s, Arc(k, k, ONE, s))
    return f


def linear_fst(ilabels: Sequence[int], olabels: Optional[Sequence[int]] = None,
               weight: float = ONE, isymbols=None, osymbols=None) -> Fst:
    """Chain transducer for one string pair (``olabels`` defaults to ``ilabels``).

    The shorter tape is padded with epsilons.
    """
    if olabels is None:
        olabels = ilabels
        osymbols = osymbols or isymbols
    n = max(len(ilabels), len(olabels))
    ins = list(ilabels) + [EPSILON] * (n - len(ilabels))
    outs = list(olabels) + [EPSILON] * (n - len(olabels))
    f = Fst(isymbols, osymbols)
    prev = f.add_state()
    f.set_start(prev)
    for i, o in zip(ins, outs):
        nxt = f.add_state()
        f.add_arc(prev, Arc(i, o, ONE, nxt))
        prev = nxt
    f.set_final(prev, weight)
    return f


# text format

def _fmt(w: float) -> str:
    return "0" if w == 0 else repr(float(w))


def write_text(f: Fst) -> str:
    """Arc lines ``src dst ilabel olabel weight`` and final lines
    ``state weight``; the start state is written first."""
    if f.is_empty():
        return ""
    lines = []
    order = [f.start] + [s for s in f.states() if s != f.start]
    for s in order:
        for arc in f.arcs(s):
            lines.append(f"{s} {arc.nextstate} {arc.ilabel} {arc.olabel} {_fmt(arc.weight)}")
        if f.is_final(s):
            lines.append(f"{s} {_fmt(f.final(s))}")
    return "\n".join(lines) + "\n"


def read_text(text: str, isymbols: Optional[SymbolTable] = None,
              osymbols: Optional[SymbolTable] = None) -> Fst:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        try:
            if len(fields) in (1, 2):
                rows.append((lineno, int(fields[0]),
                             float(fields[1]) if len(fields) == 2 else ONE))
            elif len(fields) == 5:
                rows.append((lineno, int(fields[0]), int(fields[1]), int(fields[2]),
                             int(fields[3]), float(fields[4])))
            elif len(fields) == 4:
                rows.append((lineno, int(fields[0]), int(fields[1]), int(fields[2]),
                             int(fields[3]), ONE))
            else:
                raise ValueError
        except ValueError:
            raise FstError(f"line {lineno}: malformed FST line {line!r}") from None
    f = Fst(isymbols, osymbols)
    if not rows:
        return f
    max_state = 0
    for row in rows:
        if row[1] < 0 or (len(row) == 6 and row[2] < 0):
            raise FstError(f"line {row[0]}: negative state id")
        max_state = max(max_state, row[1], row[2] if len(row) == 6 else 0)
    f.add_states(max_state + 1)
    f.set_start(rows[0][1])
    for row in rows:
        if len(row) == 3:
            f.set_final(row[1], row[2])
        else:
            _, src, dst, il, ol, w = row
            f.add_arc(src, Arc(il, ol, w, dst))
    return f


def iter_arcs(f: Fst) -> Iterator[tuple[int, int, Arc]]:
    """Yield ``(state, arc_index, arc)`` in state then arc order."""
    for s in f.states():
        for k, arc in enumerate(f.arcs(s)):
            yield s, k, arc
