"""HMM (H) transducers: three-state phone loops and audio-visual fusion.

Input labels are transition ids (1-based, 0 stays epsilon); each transition
id names the emitting state it enters through a :class:`TransitionInfo`.
Output labels are phone ids. Audio pdf ids occupy ``1..N`` and visual pdf
ids ``N+1..N+M``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .wfst import EPSILON, ONE, Arc, Fst, SymbolTable, closure, union_merged_start

DEFAULT_TRANSITIONS = ((0.5, 0.5), (0.5, 0.5), (0.5, 0.5))


class HmmError(ValueError):
    pass


class Modality(enum.Enum):
    AUDIO = "audio"
    VISUAL = "visual"

    def other(self) -> "Modality":
        return Modality.VISUAL if self is Modality.AUDIO else Modality.AUDIO


@dataclass(frozen=True)
class TransitionInfo:
    pdf_id: int
    modality: Modality
    phone: str
    position: int
    is_self_loop: bool


@dataclass
class TransitionTable:
    entries: dict[int, TransitionInfo]
    n_audio_pdfs: int
    n_visual_pdfs: int

    @property
    def num_pdfs(self) -> int:
        return self.n_audio_pdfs + self.n_visual_pdfs

    @property
    def num_transitions(self) -> int:
        return len(self.entries)

    def __getitem__(self, tid: int) -> TransitionInfo:
        return self.entries[tid]

    def pdf_of(self, tid: int) -> int:
        return self.entries[tid].pdf_id

    def pdf_for(self, phone: str, position: int, modality: Modality) -> int:
        for info in self.entries.values():
            if (info.phone, info.position, info.modality) == (phone, position, modality):
                return info.pdf_id
        raise KeyError((phone, position, modality))

    def pdf_map(self) -> dict[tuple[str, int, Modality], int]:
        return {(i.phone, i.position, i.modality): i.pdf_id for i in self.entries.values()}

    def dump(self) -> str:
        """One ``tid pdf modality phone position self_loop`` line per entry."""
        return "".join(
            f"{tid} {i.pdf_id} {i.modality.value} {i.phone} {i.position} {int(i.is_self_loop)}\n"
            for tid, i in sorted(self.entries.items())
        )

    @classmethod
    def parse(cls, text: str) -> "TransitionTable":
        entries = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            fields = line.split()
            if not fields:
                continue
            try:
                tid, pdf, mod, phone, pos, loop = fields
                entries[int(tid)] = TransitionInfo(int(pdf), Modality(mod), phone,
                                                   int(pos), bool(int(loop)))
            except ValueError:
                raise HmmError(f"line {lineno}: malformed transition line {line!r}") from None
        audio = {i.pdf_id for i in entries.values() if i.modality is Modality.AUDIO}
        visual = {i.pdf_id for i in entries.values() if i.modality is Modality.VISUAL}
        table = cls(entries, len(audio), len(visual))
        table.validate()
        return table

    def validate(self) -> None:
        n = self.n_audio_pdfs
        seen: dict[tuple[str, int, Modality], int] = {}
        for tid, info in self.entries.items():
            expected = Modality.AUDIO if info.pdf_id <= n else Modality.VISUAL
            if not 1 <= info.pdf_id <= self.num_pdfs or info.modality is not expected:
                raise HmmError(f"transition {tid}: pdf {info.pdf_id} outside the "
                               f"{info.modality.value} range")
            key = (info.phone, info.position, info.modality)
            if seen.setdefault(key, info.pdf_id) != info.pdf_id:
                raise HmmError(f"{key} maps to more than one pdf id")


@dataclass
class HmmGraph:
    fst: Fst
    table: TransitionTable
    phone_set: tuple[str, ...]
    phone_symbols: SymbolTable = field(repr=False)


def modality_of(pdf_id: int, table: TransitionTable) -> Modality:
    if not 1 <= pdf_id <= table.num_pdfs:
        raise HmmError(f"pdf id {pdf_id} out of range 1..{table.num_pdfs}")
    return Modality.AUDIO if pdf_id <= table.n_audio_pdfs else Modality.VISUAL


def _check_probs(transition_probs) -> list[tuple[float, float]]:
    probs = [tuple(map(float, p)) for p in transition_probs]
    if len(probs) == 1:
        probs = probs * 3
    if len(probs) != 3:
        raise HmmError("need one (self_loop_p, forward_p) pair per position")
    for pos, (loop, fwd) in enumerate(probs, 1):
        if loop < 0 or fwd <= 0 or abs(loop + fwd - 1.0) > 1e-9:
            raise HmmError(f"position {pos}: self_loop_p + forward_p must equal 1 "
                           f"(got {loop} + {fwd})")
    return probs


def _cost(p: float) -> float:
    return -math.log(p) if p > 0 else math.inf


def build_phone_loop(phones: Sequence[str],
                     transition_probs=DEFAULT_TRANSITIONS,
                     modality: Modality = Modality.AUDIO,
                     phone_symbols: Optional[SymbolTable] = None) -> HmmGraph:
    """Three emitting states per phone hanging off a shared start state.

    The start-to-position-1 arc carries the phone as output; all other arcs
    output epsilon. Every arc entering an emitting state (self-loops
    included) consumes a frame with that state's pdf. The position-3 states
    return to the start through the epsilon arcs added by :func:`closure`,
    weighted with the position-3 forward probability.
    """
    phones = tuple(phones)
    if not phones:
        raise HmmError("phone list is empty")
    if len(set(phones)) != len(phones):
        raise HmmError("duplicate phones")
    probs = _check_probs(transition_probs)
    if phone_symbols is None:
        phone_symbols = SymbolTable(phones)
    missing = [p for p in phones if p not in phone_symbols]
    if missing:
        raise HmmError(f"phones missing from symbol table: {missing}")

    f = Fst(None, phone_symbols)
    start = f.add_state()
    f.set_start(start)
    entries: dict[int, TransitionInfo] = {}
    for k, phone in enumerate(phones):
        s1, s2, s3 = f.add_states(3)
        pdfs = [1 + 3 * k + j for j in range(3)]
        tid = 1 + 6 * k

        def emit(src, dst, pos, loop, weight, olabel=EPSILON):
            nonlocal tid
            entries[tid] = TransitionInfo(pdfs[pos - 1], modality, phone, pos, loop)
            f.add_arc(src, Arc(tid, olabel, weight, dst))
            tid += 1

        emit(start, s1, 1, False, ONE, phone_symbols.find(phone))
        emit(s1, s1, 1, True, _cost(probs[0][0]))
        emit(s1, s2, 2, False, _cost(probs[0][1]))
        emit(s2, s2, 2, True, _cost(probs[1][0]))
        emit(s2, s3, 3, False, _cost(probs[1][1]))
        emit(s3, s3, 3, True, _cost(probs[2][0]))
        f.set_final(s3, _cost(probs[2][1]))

    n = 3 * len(phones)
    if modality is Modality.AUDIO:
        table = TransitionTable(entries, n, 0)
    else:
        table = TransitionTable(entries, 0, n)
    return HmmGraph(closure(f), table, phones, phone_symbols)


def relabel_modality(graph: HmmGraph, modality: Modality) -> HmmGraph:
    """Same topology and pdf numbering, tagged with another modality."""
    n = graph.table.num_pdfs
    entries = {tid: TransitionInfo(i.pdf_id, modality, i.phone, i.position, i.is_self_loop)
               for tid, i in graph.table.entries.items()}
    sizes = (n, 0) if modality is Modality.AUDIO else (0, n)
    return HmmGraph(graph.fst.copy(), TransitionTable(entries, *sizes),
                    graph.phone_set, graph.phone_symbols)


def fuse_hmms(audio: HmmGraph, visual: HmmGraph) -> HmmGraph:
    """Merge the start states of an audio and a visual H graph.

    Visual transition ids are shifted past the audio ones and visual pdf ids
    are shifted by N, so the fused graph holds one audio and one visual copy
    of every phone loop behind a single start state. Visual output labels are
    mapped onto the audio phone table.
    """
    if set(audio.phone_set) != set(visual.phone_set):
        raise HmmError("audio and visual HMMs must use the same phoneme set so the "
                       "fused HMM can be composed with a common lexicon/grammar")
    if audio.table.n_visual_pdfs or visual.table.n_audio_pdfs:
        raise HmmError("fuse_hmms expects a pure audio graph and a pure visual graph")

    n = audio.table.n_audio_pdfs
    tid_offset = max(audio.table.entries, default=0)
    vsyms = visual.phone_symbols
    asyms = audio.phone_symbols

    def olabel(k):
        return EPSILON if k == EPSILON else asyms.find(vsyms.find(k))

    shifted = Fst(None, asyms)
    shifted.add_states(visual.fst.num_states)
    shifted.set_start(visual.fst.start)
    for s in visual.fst.states():
        for arc in visual.fst.arcs(s):
            il = arc.ilabel + tid_offset if arc.ilabel != EPSILON else EPSILON
            shifted.add_arc(s, Arc(il, olabel(arc.olabel), arc.weight, arc.nextstate))
        if visual.fst.is_final(s):
            shifted.set_final(s, visual.fst.final(s))

    entries = dict(audio.table.entries)
    for tid, i in visual.table.entries.items():
        entries[tid + tid_offset] = TransitionInfo(i.pdf_id + n, Modality.VISUAL, i.phone,
                                                   i.position, i.is_self_loop)
    table = TransitionTable(entries, n, visual.table.n_visual_pdfs)
    table.validate()
    return HmmGraph(union_merged_start(audio.fst, shifted), table, audio.phone_set, asyms)


def read_phone_set(text: str) -> list[str]:
    phones = []
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 1:
            raise HmmError(f"line {lineno}: expected one phone symbol, got {line!r}")
        phones.append(fields[0])
    return phones


def write_phone_set(phones: Iterable[str]) -> str:
    return "".join(f"{p}\n" for p in phones)
