"""Lexicon (L) and n-gram grammar (G) transducers and the H o L o G cascade.

The context-dependency transducer is the identity (monophone models), so the
cascade is ``H o (L o G)``.
"""

from __future__ import annotations

import math
from pathlib import Path
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

from .hmm import HmmGraph, TransitionTable
from .wfst import (EPSILON, ONE, Arc, Fst, FstError, SymbolTable, closure, compose, read_text,
                   write_text)

BOS = "<s>"
EOS = "</s>"


class GraphError(ValueError):
    pass


@dataclass
class Lexicon:
    entries: tuple[tuple[str, tuple[str, ...]], ...]
    word_symbols: SymbolTable
    phone_symbols: SymbolTable

    @classmethod
    def build(cls, pronunciations: Iterable[tuple[str, Sequence[str]]],
              phones: Sequence[str] | SymbolTable,
              words: Optional[Iterable[str]] = None) -> "Lexicon":
        """Validate pronunciations and assign word ids in sorted order.

        Duplicate (word, pronunciation) pairs collapse to a single entry.
        """
        phone_symbols = phones if isinstance(phones, SymbolTable) else SymbolTable(phones)
        entries = sorted({(w, tuple(p)) for w, p in pronunciations})
        for word, pron in entries:
            if not pron:
                raise GraphError(f"word {word!r} has an empty pronunciation")
            unknown = [p for p in pron if p not in phone_symbols or p == "<eps>"]
            if unknown:
                raise GraphError(f"word {word!r} uses unknown phones {unknown}")
        vocab = sorted({w for w, _ in entries} | set(words or ()))
        if any(w in (BOS, EOS, "<eps>") for w in vocab):
            raise GraphError("reserved symbol used as a word")
        return cls(tuple(entries), SymbolTable(vocab), phone_symbols)

    @property
    def words(self) -> list[str]:
        return self.word_symbols.symbols()

    def pronunciations(self, word: str) -> list[tuple[str, ...]]:
        return [p for w, p in self.entries if w == word]


def read_lexicon(text: str) -> list[tuple[str, tuple[str, ...]]]:
    """Parse ``word phone phone ...`` lines."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) < 2:
            raise GraphError(f"line {lineno}: word {fields[0]!r} has no phones")
        out.append((fields[0], tuple(fields[1:])))
    return out


def read_corpus(text: str) -> list[tuple[str, ...]]:
    return [tuple(line.split()) for line in text.splitlines() if line.split()]


def build_lexicon_fst(lex: Lexicon) -> Fst:
    """Phone-to-word transducer, closed over word sequences.

    Pronunciations share a prefix tree; the word label sits on the last
    phone arc, which leads to a common word-end state. Closure adds the
    epsilon separator from word-end back to the start.
    """
    f = Fst(lex.phone_symbols, lex.word_symbols)
    start = f.add_state()
    word_end = f.add_state()
    f.set_start(start)
    f.set_final(word_end)
    children: dict[tuple[int, int], int] = {}
    for word, pron in lex.entries:
        s = start
        for phone in pron[:-1]:
            p = lex.phone_symbols.find(phone)
            nxt = children.get((s, p))
            if nxt is None:
                nxt = children[(s, p)] = f.add_state()
                f.add_arc(s, Arc(p, EPSILON, ONE, nxt))
            s = nxt
        f.add_arc(s, Arc(lex.phone_symbols.find(pron[-1]), lex.word_symbols.find(word),
                         ONE, word_end))
    return closure(f)


@dataclass
class Grammar:
    """Add-one smoothed n-gram model over a closed vocabulary.

    Histories that never occur as a context (with ``<s>`` padding) are
    replaced by their longest suffix that does; this is the only backoff.
    Sentence end is a regular event whose probability becomes the final
    weight of the history state.
    """

    order: int
    vocab: tuple[str, ...]
    counts: list[dict[tuple[str, ...], dict[str, int]]] = field(repr=False)

    @classmethod
    def estimate(cls, corpus: Iterable[Sequence[str] | str], order: int = 2,
                 vocab: Optional[Iterable[str]] = None) -> "Grammar":
        sentences = [tuple(s.split()) if isinstance(s, str) else tuple(s) for s in corpus]
        if not sentences:
            raise GraphError("corpus is empty")
        if not 1 <= order <= 5:
            raise GraphError(f"n-gram order must be in 1..5, got {order}")
        seen = {w for s in sentences for w in s}
        words = tuple(sorted(set(vocab) if vocab is not None else seen))
        oov = seen - set(words)
        if oov:
            raise GraphError(f"corpus words missing from vocabulary: {sorted(oov)}")
        counts: list[dict] = [defaultdict(lambda: defaultdict(int)) for _ in range(order)]
        for sent in sentences:
            events = list(sent) + [EOS]
            for k in range(order):
                padded = [BOS] * k + list(sent)
                for i, e in enumerate(events):
                    counts[k][tuple(padded[i:i + k])][e] += 1
        frozen = [{h: dict(c) for h, c in level.items()} for level in counts]
        frozen[0].setdefault((), {})
        return cls(order, words, frozen)

    @cached_property
    def _totals(self) -> list[dict[tuple[str, ...], int]]:
        return [{h: sum(c.values()) for h, c in level.items()} for level in self.counts]

    def reduce(self, history: Sequence[str]) -> tuple[str, ...]:
        """Longest suffix of ``history`` (at most order-1 long) seen as a context."""
        h = tuple(history)[-(self.order - 1):] if self.order > 1 else ()
        while h and h not in self.counts[len(h)]:
            h = h[1:]
        return h

    @property
    def start_history(self) -> tuple[str, ...]:
        return self.reduce((BOS,) * (self.order - 1))

    def prob(self, event: str, history: Sequence[str]) -> float:
        h = self.reduce(history)
        level = self.counts[len(h)]
        c = level.get(h, {}).get(event, 0)
        return (c + 1) / (self._totals[len(h)].get(h, 0) + len(self.vocab) + 1)

    def sentence_cost(self, sentence: Sequence[str]) -> float:
        """Negative log probability of a full sentence including its end."""
        history = self.start_history
        cost = 0.0
        for w in sentence:
            cost += -math.log(self.prob(w, history))
            history = self.reduce(history + (w,))
        return cost - math.log(self.prob(EOS, history))

    def to_fst(self, word_symbols: Optional[SymbolTable] = None) -> Fst:
        syms = word_symbols or SymbolTable(self.vocab)
        missing = [w for w in self.vocab if w not in syms]
        if missing:
            raise GraphError(f"words missing from symbol table: {missing}")
        f = Fst(syms, syms)
        ids: dict[tuple[str, ...], int] = {}
        order = []

        def state(h):
            if h not in ids:
                ids[h] = f.add_state()
                order.append(h)
            return ids[h]

        f.set_start(state(self.start_history))
        words = sorted(self.vocab, key=syms.find)
        i = 0
        while i < len(order):
            h = order[i]
            src = ids[h]
            for w in words:
                dst = state(self.reduce(h + (w,)))
                f.add_arc(src, Arc(syms.find(w), syms.find(w), -math.log(self.prob(w, h)), dst))
            f.set_final(src, -math.log(self.prob(EOS, h)))
            i += 1
        return f


def build_grammar_fst(corpus, order: int = 2, word_symbols: Optional[SymbolTable] = None) -> Fst:
    vocab = word_symbols.symbols() if word_symbols is not None else None
    return Grammar.estimate(corpus, order, vocab).to_fst(word_symbols)


GRAPH_FILES = ("graph.fst", "words.txt", "phones.txt", "transitions.txt")


@dataclass
class DecodeGraph:
    fst: Fst
    table: TransitionTable
    word_symbols: SymbolTable = field(repr=False)
    phone_symbols: Optional[SymbolTable] = field(default=None, repr=False)

    @cached_property
    def compiled(self):
        from .viterbi import CompiledGraph
        return CompiledGraph.from_graph(self)


def build_decode_graph(h: HmmGraph, l: Fst, g: Fst) -> DecodeGraph:
    """``H o (L o G)``, connected."""
    try:
        lg = compose(l, g)
        hlg = compose(h.fst, lg)
    except FstError as e:
        raise GraphError(str(e)) from e
    for s in hlg.states():
        for arc in hlg.arcs(s):
            if arc.ilabel != EPSILON and arc.ilabel not in h.table.entries:
                raise GraphError(f"input label {arc.ilabel} is not a transition id")
    return DecodeGraph(hlg, h.table, g.osymbols or l.osymbols, h.phone_symbols)


def write_graph_dir(graph: DecodeGraph, directory) -> None:
    """Text forms of the graph, word and phone tables and transition table."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    phones = graph.phone_symbols or SymbolTable()
    contents = (write_text(graph.fst), graph.word_symbols.write_text(), phones.write_text(),
                graph.table.dump())
    for name, text in zip(GRAPH_FILES, contents):
        (d / name).write_text(text)


def read_graph_dir(directory) -> DecodeGraph:
    d = Path(directory)
    fst_text, words, phones, transitions = (
        (d / name).read_text() for name in GRAPH_FILES)
    word_symbols = SymbolTable.read_text(words)
    try:
        fst = read_text(fst_text, None, word_symbols)
    except FstError as e:
        raise GraphError(f"graph.fst: {e}") from e
    return DecodeGraph(fst, TransitionTable.parse(transitions), word_symbols,
                       SymbolTable.read_text(phones))
