"""Beam search over per-step class distributions, single or fused.

Three decoders share one search loop and differ only in the per-step score
vector they rank:

* :func:`beam_search` uses one scorer's log probabilities.
* :func:`shallow_fusion_decode` uses ``lam * log P_a + (1 - lam) * log P_v``.
* :func:`lambda_free_decode` uses ``max(log P_a, log P_v)`` per class and
  records which scorer supplied each emitted class.

Both scorers always see the prefix committed on the shared beam.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass
from typing import Callable, Hashable, Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from .hmm import Modality

DEFAULT_WIDTH = 20
DEFAULT_MAX_LEN = 200


class BeamError(ValueError):
    pass


@runtime_checkable
class StepScorer(Protocol):
    """Next-class log probabilities for an utterance given an emitted prefix.

    Implementations must be deterministic for identical ``(handle, prefix)``
    and safe for concurrent read-only calls.
    """

    num_classes: int

    def log_probs(self, handle: Hashable, prefix: tuple[int, ...]) -> np.ndarray: ...


@dataclass(frozen=True)
class TokenAlphabet:
    symbols: tuple[str, ...]
    start: Optional[int] = None
    end: Optional[int] = None

    def __len__(self) -> int:
        return len(self.symbols)

    def index(self, symbol: str) -> int:
        return self.symbols.index(symbol)

    def encode(self, text: str) -> tuple[int, ...]:
        try:
            return tuple(self.symbols.index(ch) for ch in text)
        except ValueError:
            bad = sorted({ch for ch in text if ch not in self.symbols})
            raise BeamError(f"characters outside the alphabet: {bad}") from None

    def decode(self, tokens: Sequence[int]) -> str:
        return "".join(self.symbols[t] for t in tokens if t not in (self.start, self.end))


# 26 letters, space, start, end
CHARS = TokenAlphabet(tuple(string.ascii_lowercase) + (" ", "<s>", "</s>"), start=27, end=28)


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    score: float
    origins: tuple[Modality, ...]
    finished: bool = False
    forced: bool = False


def origin_fraction(h: Hypothesis) -> float:
    if not h.origins:
        raise BeamError("empty hypothesis has no origins")
    return sum(o is Modality.AUDIO for o in h.origins) / len(h.origins)


@dataclass
class BeamStats:
    """Origin counts over every step of a search.

    ``kept_*`` count the last token of each hypothesis surviving a step;
    ``expanded_*`` count every finite-scoring candidate that was ranked.
    """

    kept_audio: int = 0
    kept_visual: int = 0
    expanded_audio: int = 0
    expanded_visual: int = 0
    steps: int = 0

    def kept_fraction(self) -> float:
        total = self.kept_audio + self.kept_visual
        return self.kept_audio / total if total else math.nan


StepFn = Callable[[tuple[int, ...]], tuple[np.ndarray, Optional[np.ndarray]]]


def _search(step: StepFn, n_classes: int, alphabet: TokenAlphabet, width: int, max_len: int,
            stats: Optional[BeamStats]) -> Hypothesis:
    if width < 1:
        raise BeamError("beam width must be at least 1")
    if max_len < 1:
        raise BeamError("max_len must be at least 1")
    if len(alphabet) != n_classes:
        raise BeamError(f"scorer has {n_classes} classes, alphabet has {len(alphabet)}")
    live = [Hypothesis((), 0.0, ())]
    done: list[Hypothesis] = []
    for _ in range(max_len):
        totals, visual = [], []
        for h in live:
            scores, vis = step(h.tokens)
            scores = np.array(scores, dtype=np.float64)
            if alphabet.start is not None:
                scores[alphabet.start] = -np.inf
            totals.append(h.score + scores)
            visual.append(np.zeros(n_classes, dtype=bool) if vis is None else vis)
        totals = np.concatenate(totals)
        visual = np.concatenate(visual)
        finite = np.flatnonzero(totals > -np.inf)
        if stats is not None:
            stats.expanded_visual += int(visual[finite].sum())
            stats.expanded_audio += len(finite) - int(visual[finite].sum())
        if not len(finite):
            live = []
            break
        if len(finite) > width:
            kth = np.partition(totals[finite], len(finite) - width)[len(finite) - width]
            finite = finite[totals[finite] >= kth]
        cands = []
        for k in finite:
            parent, c = divmod(int(k), n_classes)
            h = live[parent]
            cands.append((-float(totals[k]), h.tokens + (c,), h, c, bool(visual[k])))
        cands.sort(key=lambda x: (x[0], x[1]))
        nxt = []
        for neg, tokens, h, c, vis in cands[:width]:
            origin = Modality.VISUAL if vis else Modality.AUDIO
            hyp = Hypothesis(tokens, -neg, h.origins + (origin,), c == alphabet.end)
            (done if hyp.finished else nxt).append(hyp)
            if stats is not None:
                if vis:
                    stats.kept_visual += 1
                else:
                    stats.kept_audio += 1
        if stats is not None:
            stats.steps += 1
        live = nxt
        if not live:
            break
        best_done = max((h.score for h in done), default=-math.inf)
        if best_done > live[0].score:
            live = []
            break
    done.extend(Hypothesis(h.tokens, h.score, h.origins, True, True) for h in live)
    if not done:
        raise BeamError("every hypothesis has probability zero")
    return min(done, key=lambda h: (-h.score, h.tokens))


def _check_pair(sa: StepScorer, sv: StepScorer) -> int:
    if sa.num_classes != sv.num_classes:
        raise BeamError(f"class-count mismatch: audio {sa.num_classes}, visual {sv.num_classes}")
    return sa.num_classes


def beam_search(s: StepScorer, x: Hashable, width: int = DEFAULT_WIDTH,
                max_len: int = DEFAULT_MAX_LEN, alphabet: TokenAlphabet = CHARS,
                stats: Optional[BeamStats] = None) -> Hypothesis:
    """Keep the ``width`` best prefixes per step by cumulative log probability.

    Hypotheses that emit the end class are frozen; search stops once the best
    frozen hypothesis beats every live one. Hypotheses still live after
    ``max_len`` steps are returned with ``forced=True``. Equal scores are
    ordered by token sequence.
    """
    return _search(lambda p: (s.log_probs(x, p), None), s.num_classes, alphabet,
                   width, max_len, stats)


def shallow_fusion_decode(sa: StepScorer, sv: StepScorer, xa: Hashable, xv: Hashable,
                          lam: float, width: int = DEFAULT_WIDTH,
                          max_len: int = DEFAULT_MAX_LEN, alphabet: TokenAlphabet = CHARS,
                          stats: Optional[BeamStats] = None) -> Hypothesis:
    """Weighted sum of the two scorers' log probabilities at every step.

    A term with weight zero is dropped rather than multiplied, so ``lam = 1``
    and ``lam = 0`` reproduce the single-scorer searches exactly.
    """
    if not 0.0 <= lam <= 1.0:
        raise BeamError(f"lambda must lie in [0, 1], got {lam}")
    n = _check_pair(sa, sv)

    def step(prefix):
        if lam == 1.0:
            return sa.log_probs(xa, prefix), None
        if lam == 0.0:
            return sv.log_probs(xv, prefix), None
        return lam * sa.log_probs(xa, prefix) + (1.0 - lam) * sv.log_probs(xv, prefix), None

    return _search(step, n, alphabet, width, max_len, stats)


def lambda_free_decode(sa: StepScorer, sv: StepScorer, xa: Hashable, xv: Hashable,
                       width: int = DEFAULT_WIDTH, max_len: int = DEFAULT_MAX_LEN,
                       alphabet: TokenAlphabet = CHARS,
                       stats: Optional[BeamStats] = None) -> Hypothesis:
    """Element-wise maximum of the two log-probability vectors before ranking.

    The origin of an emitted class is the scorer that attained the maximum;
    exact ties go to audio.
    """
    n = _check_pair(sa, sv)

    def step(prefix):
        la = np.asarray(sa.log_probs(xa, prefix), dtype=np.float64)
        lv = np.asarray(sv.log_probs(xv, prefix), dtype=np.float64)
        return np.maximum(la, lv), lv > la

    return _search(step, n, alphabet, width, max_len, stats)

