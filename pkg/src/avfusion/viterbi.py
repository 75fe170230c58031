"""Lambda-weighted Viterbi decoding over an audio-visual decode graph.

Everything runs in cost space (negative log). A token's cost at frame ``t``
in state ``j`` is

    min_i [cost_{t-1}(i) + a_ij] - log(lambda_j) - log b_j(O_t)

where ``lambda_j`` is ``lambda_a`` for audio pdfs and ``1 - lambda_a`` for
visual pdfs. Emitting arcs consume one frame; epsilon-input arcs are relaxed
inside the frame until nothing improves. The start state carries the
initial distribution (cost 0 there, impossible elsewhere).
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .hmm import Modality
from .wfst import EPSILON

DEFAULT_BEAM = 80.0
DEFAULT_MAX_ACTIVE = 2000

_BIG = np.iinfo(np.int64).max


class DecodeError(ValueError):
    pass


@dataclass
class EmissionSequence:
    """``T x (N+M)`` matrix of log emission scores, audio block first."""

    scores: np.ndarray
    n_audio: int
    n_visual: int

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2 and self.scores.size == 0:
            self.scores = self.scores.reshape(0, self.n_audio + self.n_visual)
        if self.scores.ndim != 2 or self.scores.shape[1] != self.n_audio + self.n_visual:
            raise DecodeError(f"emission matrix has shape {self.scores.shape}, "
                              f"expected (T, {self.n_audio + self.n_visual})")
        if np.isnan(self.scores).any():
            raise DecodeError("emission matrix contains NaN")
        if (self.scores == np.inf).any():
            raise DecodeError("emission matrix contains +inf")

    @property
    def T(self) -> int:
        return self.scores.shape[0]

    @property
    def audio(self) -> np.ndarray:
        return self.scores[:, :self.n_audio]

    @property
    def visual(self) -> np.ndarray:
        return self.scores[:, self.n_audio:]

    def check_blocks(self, tol: float = 1e-6) -> None:
        """Each block must exponentiate to at most a distribution per row."""
        for name, block in (("audio", self.audio), ("visual", self.visual)):
            if block.shape[1] and (np.exp(block).sum(axis=1) > 1 + tol).any():
                raise DecodeError(f"{name} block rows sum to more than 1")

    def audio_only(self) -> "EmissionSequence":
        return EmissionSequence(self.audio.copy(), self.n_audio, 0)

    def visual_only(self) -> "EmissionSequence":
        """Visual block relabelled as a stand-alone model (``N = 0``)."""
        return EmissionSequence(self.visual.copy(), 0, self.n_visual)

    def swapped(self) -> "EmissionSequence":
        return EmissionSequence(np.hstack([self.visual, self.audio]), self.n_visual, self.n_audio)


def write_emissions(path: Union[str, Path], obs: EmissionSequence) -> None:
    """Binary little-endian (int64 T, N, M; float64 row-major) or CSV by suffix."""
    path = Path(path)
    if path.suffix == ".csv":
        path.write_text(emissions_to_csv(obs))
        return
    with open(path, "wb") as fh:
        fh.write(struct.pack("<qqq", obs.T, obs.n_audio, obs.n_visual))
        fh.write(np.ascontiguousarray(obs.scores, dtype="<f8").tobytes())


def read_emissions(path: Union[str, Path]) -> EmissionSequence:
    path = Path(path)
    if path.suffix == ".csv":
        return emissions_from_csv(path.read_text())
    data = path.read_bytes()
    if len(data) < 24:
        raise DecodeError(f"{path}: truncated header")
    T, n, m = struct.unpack("<qqq", data[:24])
    if min(T, n, m) < 0 or len(data) != 24 + 8 * T * (n + m):
        raise DecodeError(f"{path}: size does not match header T={T} N={n} M={m}")
    scores = np.frombuffer(data[24:], dtype="<f8").reshape(T, n + m).astype(np.float64)
    return EmissionSequence(scores, n, m)


def emissions_to_csv(obs: EmissionSequence) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"a{i + 1}" for i in range(obs.n_audio)]
                    + [f"v{i + 1}" for i in range(obs.n_visual)])
    for row in obs.scores:
        writer.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def emissions_from_csv(text: str) -> EmissionSequence:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DecodeError("empty emissions CSV")
    header = rows[0]
    n = sum(1 for h in header if h.startswith("a"))
    m = sum(1 for h in header if h.startswith("v"))
    if n + m != len(header):
        raise DecodeError("emissions CSV header must list a1..aN then v1..vM")
    try:
        scores = np.array([[float(x) for x in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as e:
        raise DecodeError(f"bad number in emissions CSV: {e}") from None
    return EmissionSequence(scores.reshape(len(rows) - 1, n + m), n, m)


@dataclass(frozen=True)
class WfstFusionWeights:
    lambda_a: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.lambda_a <= 1.0:
            raise DecodeError(f"lambda_a must lie in [0, 1], got {self.lambda_a}")

    def pdf_costs(self, n_audio: int, n_visual: int) -> np.ndarray:
        """``-log lambda_i`` for every pdf (impossible when lambda_i is 0)."""
        with np.errstate(divide="ignore"):
            a = -np.log(self.lambda_a)
            v = -np.log(1.0 - self.lambda_a)
        return np.concatenate([np.full(n_audio, a), np.full(n_visual, v)])


@dataclass
class ViterbiResult:
    words: tuple[str, ...]
    state_seq: tuple[int, ...]
    log_score: float
    occupancy: tuple[int, int]
    beam_occupancy: tuple[int, int]
    transitions: tuple[int, ...] = ()

    @property
    def found(self) -> bool:
        return self.log_score > -math.inf


def occupancy_fraction(r: ViterbiResult, beam_wide: bool = False) -> float:
    """Share of emitting frames on the best path that used audio pdfs.

    With ``beam_wide`` the share is taken over every surviving token entered
    by an emitting arc, summed over frames.
    """
    audio, visual = r.beam_occupancy if beam_wide else r.occupancy
    if audio + visual == 0:
        raise DecodeError("no emitting frames to attribute")
    return audio / (audio + visual)


class CompiledGraph:
    """Flat arc arrays of a decode graph, grouped by destination state.

    Arc keys are positions in (source state, arc index) order, the order
    used to break ties between equal-cost predecessors.
    """

    def __init__(self, fst, table, word_symbols):
        self.num_states = fst.num_states
        self.start = fst.start
        self.word_symbols = word_symbols
        src, dst, il, ol, w = [], [], [], [], []
        for s in fst.states():
            for arc in fst.arcs(s):
                src.append(s)
                dst.append(arc.nextstate)
                il.append(arc.ilabel)
                ol.append(arc.olabel)
                w.append(arc.weight)
        self.src = np.array(src, dtype=np.int64)
        self.dst = np.array(dst, dtype=np.int64)
        self.ilabel = np.array(il, dtype=np.int64)
        self.olabel = np.array(ol, dtype=np.int64)
        self.weight = np.array(w, dtype=np.float64)
        self.final = np.full(self.num_states, np.inf)
        for s in fst.final_states():
            self.final[s] = fst.final(s)

        emitting = self.ilabel != EPSILON
        pdf = np.zeros(len(il), dtype=np.int64)
        audio = np.zeros(len(il), dtype=bool)
        for k in np.flatnonzero(emitting):
            info = table.entries[int(self.ilabel[k])]
            pdf[k] = info.pdf_id - 1
            audio[k] = info.modality is Modality.AUDIO
        self.pdf = pdf
        self.is_audio = audio
        self.emitting = emitting
        self.num_pdfs = table.num_pdfs
        self.n_audio = table.n_audio_pdfs
        self.n_visual = table.n_visual_pdfs
        self.emit = _Group(np.flatnonzero(emitting), self.dst)
        self.eps = _Group(np.flatnonzero(~emitting), self.dst)

    @classmethod
    def from_graph(cls, graph) -> "CompiledGraph":
        return cls(graph.fst, graph.table, graph.word_symbols)


class _Group:
    """Subset of arcs sorted by (destination, key) for segmented reductions."""

    def __init__(self, keys: np.ndarray, dst: np.ndarray):
        order = np.lexsort((keys, dst[keys]))
        self.keys = keys[order]
        d = dst[self.keys]
        if len(d):
            starts = np.flatnonzero(np.r_[True, d[1:] != d[:-1]])
        else:
            starts = np.zeros(0, dtype=np.int64)
        self.starts = starts
        self.targets = d[starts] if len(d) else d
        self.lengths = np.diff(np.r_[starts, len(d)])

    def __len__(self):
        return len(self.keys)

    def best(self, cand: np.ndarray):
        """Per-target minimum of ``cand`` and the smallest key attaining it."""
        mins = np.minimum.reduceat(cand, self.starts)
        hit = cand == np.repeat(mins, self.lengths)
        first = np.minimum.reduceat(np.where(hit, self.keys, _BIG), self.starts)
        return self.targets, mins, first


def _epsilon_closure(g: CompiledGraph, cost: np.ndarray, bp: np.ndarray) -> None:
    if not len(g.eps):
        return
    w = g.weight[g.eps.keys]
    srcs = g.src[g.eps.keys]
    for _ in range(g.num_states + 1):
        cand = cost[srcs] + w
        targets, mins, first = g.eps.best(cand)
        cur = cost[targets]
        better = (mins < cur) | ((mins == cur) & (mins < np.inf) & (first < bp[targets]))
        if not better.any():
            return
        cost[targets[better]] = mins[better]
        bp[targets[better]] = first[better]
    raise DecodeError("epsilon relaxation did not converge (zero-cost epsilon cycle)")


def _prune(cost: np.ndarray, beam: float, max_active: Optional[int]) -> None:
    best = cost.min()
    if best == np.inf:
        return
    if beam < math.inf:
        cost[cost > best + beam] = np.inf
    if max_active is not None:
        alive = np.flatnonzero(cost < np.inf)
        if len(alive) > max_active:
            order = np.lexsort((alive, cost[alive]))
            cost[alive[order[max_active:]]] = np.inf


def viterbi_decode(graph, obs: EmissionSequence, w: WfstFusionWeights = WfstFusionWeights(),
                   beam: float = DEFAULT_BEAM,
                   max_active: Optional[int] = DEFAULT_MAX_ACTIVE) -> ViterbiResult:
    """Best frame-aligned accepting path through ``graph`` for ``obs``.

    When two predecessors tie, backtracking takes the one with the smallest
    (source state, arc index); among tied final states the lowest id wins.
    If no token reaches a final state the result has ``log_score = -inf``
    and no words (see :attr:`ViterbiResult.found`).
    """
    if beam <= 0:
        raise DecodeError("beam must be positive")
    if max_active is not None and max_active < 1:
        raise DecodeError("max_active must be positive")
    g: CompiledGraph = graph.compiled if hasattr(graph, "compiled") else graph
    if (obs.n_audio, obs.n_visual) != (g.n_audio, g.n_visual):
        raise DecodeError(f"emissions have N={obs.n_audio}, M={obs.n_visual} but the graph "
                          f"expects N={g.n_audio}, M={g.n_visual}")

    # column k of frame_cost is -log(lambda) - log b for pdf k
    frame_cost = w.pdf_costs(obs.n_audio, obs.n_visual)[None, :] - obs.scores

    S = g.num_states
    T = obs.T
    backptr = np.full((T + 1, S), -1, dtype=np.int64)
    cost = np.full(S, np.inf)
    cost[g.start] = 0.0
    _epsilon_closure(g, cost, backptr[0])
    _prune(cost, beam, max_active)

    emit = g.emit
    e_src = g.src[emit.keys]
    e_w = g.weight[emit.keys]
    e_pdf = g.pdf[emit.keys]
    beam_audio = beam_visual = 0
    for t in range(1, T + 1):
        cand = cost[e_src] + e_w + frame_cost[t - 1, e_pdf]
        cost = np.full(S, np.inf)
        bp = backptr[t]
        if len(emit):
            targets, mins, first = emit.best(cand)
            ok = mins < np.inf
            cost[targets[ok]] = mins[ok]
            bp[targets[ok]] = first[ok]
        _epsilon_closure(g, cost, bp)
        _prune(cost, beam, max_active)
        alive = np.flatnonzero(cost < np.inf)
        arcs_in = bp[alive]
        arcs_in = arcs_in[g.emitting[arcs_in]]
        n_audio = int(g.is_audio[arcs_in].sum())
        beam_audio += n_audio
        beam_visual += len(arcs_in) - n_audio
        if not len(alive):
            break

    total = cost + g.final
    best_state = int(np.argmin(total))
    if total[best_state] == np.inf:
        return ViterbiResult((), (), -math.inf, (0, 0), (beam_audio, beam_visual))

    arcs = []
    v, t = best_state, T
    for _ in range((T + 1) * (S + 1)):
        a = int(backptr[t, v])
        if a < 0:
            break
        arcs.append(a)
        v = int(g.src[a])
        if g.emitting[a]:
            t -= 1
    else:
        raise DecodeError("backtrace did not terminate")
    if (v, t) != (g.start, 0):
        raise DecodeError("backtrace did not reach the start state")
    arcs.reverse()
    arcs = np.array(arcs, dtype=np.int64)
    emitted = arcs[g.emitting[arcs]] if len(arcs) else arcs
    words = tuple(g.word_symbols.find(int(o)) for o in g.olabel[arcs] if o != EPSILON)
    n_audio = int(g.is_audio[emitted].sum())
    return ViterbiResult(
        words=words,
        state_seq=tuple(int(s) for s in g.dst[emitted]),
        log_score=-float(total[best_state]),
        occupancy=(n_audio, len(emitted) - n_audio),
        beam_occupancy=(beam_audio, beam_visual),
        transitions=tuple(int(i) for i in g.ilabel[emitted]),
    )
