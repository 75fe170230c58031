"""WER scoring, SNR x lambda sweeps and table-style reports."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Iterable, Optional, Sequence

import numpy as np

from .beam import CHARS, BeamError, beam_search, lambda_free_decode, origin_fraction, \
    shallow_fusion_decode
from .synthetic import (DEFAULT_CHAR_CONFUSION, DEFAULT_CONFUSION, DEFAULT_SHARPNESS, DEFAULT_VISUAL_ACCURACY,
                        VISUAL_FRAME_RATIO, SnrModel, SyntheticWorld, emit_observations,
                        modality_scorers, sample_utterance)
from .viterbi import (DEFAULT_BEAM, DEFAULT_MAX_ACTIVE, WfstFusionWeights, occupancy_fraction,
                      viterbi_decode)

METHODS = ("wfst", "shallow", "lambda_free")
CSV_HEADER = ("snr_db", "method", "lambda", "audio_wer", "visual_wer", "fused_wer",
              "aux_fraction", "seeds")


@dataclass(frozen=True)
class WerReport:
    ref_words: int
    substitutions: int
    deletions: int
    insertions: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return 100.0 * self.errors / self.ref_words

    def __add__(self, other: "WerReport") -> "WerReport":
        return WerReport(self.ref_words + other.ref_words,
                         self.substitutions + other.substitutions,
                         self.deletions + other.deletions,
                         self.insertions + other.insertions)


def wer(reference: Sequence[str], hypothesis: Sequence[str]) -> WerReport:
    """Levenshtein alignment with unit costs.

    Among minimal alignments the one with the most substitutions (fewest
    insertion plus deletion pairs) is reported. The DP runs on a combined
    integer cost ``errors * big + (insertions + deletions)``.
    """
    ref, hyp = list(reference), list(hypothesis)
    if not ref:
        raise ValueError("reference must contain at least one word")
    n, m = len(ref), len(hyp)
    big = n + m + 1
    sub, gap = big, big + 1
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1) * gap
    d[0, :] = np.arange(m + 1) * gap
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = d[i - 1, j - 1] + (sub if ref[i - 1] != hyp[j - 1] else 0)
            d[i, j] = min(diag, d[i - 1, j] + gap, d[i, j - 1] + gap)
    i, j = n, m
    s = dl = ins = 0
    while i or j:
        if i and j and d[i, j] == d[i - 1, j - 1] + (sub if ref[i - 1] != hyp[j - 1] else 0):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i and d[i, j] == d[i - 1, j] + gap:
            dl += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return WerReport(n, int(s), dl, ins)


def pooled(reports: Iterable[WerReport]) -> WerReport:
    total = WerReport(0, 0, 0, 0)
    for r in reports:
        total = total + r
    return total


def relative_improvement(audio_wer: float, fused_wer: float) -> float:
    if audio_wer <= 0:
        raise ValueError("audio WER must be positive")
    return 100.0 * (audio_wer - fused_wer) / audio_wer


@dataclass
class SweepConfig:
    snr_grid: tuple[float, ...] = (-5.0, 0.0, 5.0, 10.0, 15.0)
    methods: tuple[str, ...] = ("wfst",)
    lambda_grid: tuple[float, ...] = (0.5,)
    shallow_lambdas: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)
    seeds: int = 50
    seed_base: int = 0
    beam: float = DEFAULT_BEAM
    max_active: int = DEFAULT_MAX_ACTIVE
    width: int = 20
    max_len: int = 200
    sharpness: float = DEFAULT_SHARPNESS
    confusion: float = DEFAULT_CONFUSION
    char_confusion: float = DEFAULT_CHAR_CONFUSION
    visual_accuracy: float = DEFAULT_VISUAL_ACCURACY
    visual_ratio: int = VISUAL_FRAME_RATIO
    select_lambda_on_validation: bool = True
    workers: int = 1

    def __post_init__(self):
        self.snr_grid = tuple(float(x) for x in self.snr_grid)
        self.lambda_grid = tuple(float(x) for x in self.lambda_grid)
        self.shallow_lambdas = tuple(float(x) for x in self.shallow_lambdas)
        self.methods = tuple(self.methods)
        if not self.snr_grid or not self.lambda_grid or not self.shallow_lambdas:
            raise ValueError("sweep grids must be non-empty")
        if self.seeds < 1:
            raise ValueError("need at least one seed per cell")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        for lam in self.lambda_grid + self.shallow_lambdas:
            if not 0.0 <= lam <= 1.0:
                raise ValueError(f"lambda {lam} outside [0, 1]")

    @property
    def test_seeds(self) -> range:
        return range(self.seed_base, self.seed_base + self.seeds)

    @property
    def validation_seeds(self) -> range:
        return range(self.seed_base + self.seeds, self.seed_base + 2 * self.seeds)

    def snr_model(self, snr: float) -> SnrModel:
        return SnrModel(snr, self.visual_accuracy)


@dataclass(frozen=True)
class SweepRow:
    snr_db: float
    method: str
    lam: Optional[float]
    audio_wer: float
    visual_wer: float
    fused_wer: float
    aux_fraction: Optional[float]
    seeds: int


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.rows:
            writer.writerow([_num(r.snr_db), r.method, _num(r.lam), _num(r.audio_wer),
                             _num(r.visual_wer), _num(r.fused_wer), _num(r.aux_fraction),
                             r.seeds])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SweepResult":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        rows = []
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            if len(rec) != len(CSV_HEADER):
                raise ValueError(f"line {lineno}: expected {len(CSV_HEADER)} fields")
            snr, method, lam, a, v, f, aux, seeds = rec
            rows.append(SweepRow(float(snr), method, _opt(lam), float(a), float(v), float(f),
                                 _opt(aux), int(seeds)))
        return cls(rows)

    def select(self, method: str, lam: Optional[float] = None) -> list[SweepRow]:
        return [r for r in self.rows
                if r.method == method and (lam is None or r.lam == lam)]


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def _opt(s: str) -> Optional[float]:
    return None if s == "" else float(s)


def _words(tokens) -> list[str]:
    return CHARS.decode(tokens).split()


def _wfst_cell(world: SyntheticWorld, cfg: SweepConfig, snr: float) -> list[SweepRow]:
    graphs = {k: world.decode_graph(k) for k in ("audio", "visual", "fused")}
    table = graphs["fused"].table
    audio, visual = [], []
    fused = {lam: [] for lam in cfg.lambda_grid}
    occ = {lam: [] for lam in cfg.lambda_grid}
    for seed in cfg.test_seeds:
        a = sample_utterance(world, seed)
        obs = emit_observations(a, cfg.snr_model(snr), table, cfg.sharpness,
                                confusion=cfg.confusion, visual_ratio=cfg.visual_ratio)
        dec = dict(beam=cfg.beam, max_active=cfg.max_active)
        audio.append(wer(a.words, viterbi_decode(graphs["audio"], obs.audio_only(),
                                                 WfstFusionWeights(1.0), **dec).words))
        visual.append(wer(a.words, viterbi_decode(graphs["visual"], obs.visual_only(),
                                                  WfstFusionWeights(0.0), **dec).words))
        for lam in cfg.lambda_grid:
            r = viterbi_decode(graphs["fused"], obs, WfstFusionWeights(lam), **dec)
            fused[lam].append(wer(a.words, r.words))
            if r.found and sum(r.occupancy):
                occ[lam].append(occupancy_fraction(r))
    a_wer, v_wer = pooled(audio).wer, pooled(visual).wer
    return [SweepRow(snr, "wfst", lam, a_wer, v_wer, pooled(fused[lam]).wer,
                     float(np.mean(occ[lam])) if occ[lam] else None, cfg.seeds)
            for lam in cfg.lambda_grid]


def _safe(decode, *args, **kw):
    try:
        return decode(*args, **kw)
    except BeamError:
        return None


def _seq2seq_utterances(world, cfg, snr, seeds):
    for seed in seeds:
        a = sample_utterance(world, seed)
        sa, sv = modality_scorers(world, a, cfg.snr_model(snr), cfg.char_confusion)
        yield a, sa, sv, seed


def _shallow_errors(world, cfg, snr, lam, seeds) -> WerReport:
    out = []
    for a, sa, sv, seed in _seq2seq_utterances(world, cfg, snr, seeds):
        h = _safe(shallow_fusion_decode, sa, sv, seed, seed, lam, cfg.width, cfg.max_len)
        out.append(wer(a.words, _words(h.tokens) if h else []))
    return pooled(out)


def _seq2seq_cell(world: SyntheticWorld, cfg: SweepConfig, snr: float,
                  method: str) -> list[SweepRow]:
    audio, visual, fused, frac = [], [], [], []
    if method == "shallow":
        if cfg.select_lambda_on_validation:
            pick_on = cfg.validation_seeds
        else:
            pick_on = cfg.test_seeds
        scored = [(_shallow_errors(world, cfg, snr, lam, pick_on).errors, -lam)
                  for lam in cfg.shallow_lambdas]
        best_lam = -min(scored)[1]
    for a, sa, sv, seed in _seq2seq_utterances(world, cfg, snr, cfg.test_seeds):
        ha = _safe(beam_search, sa, seed, cfg.width, cfg.max_len)
        hv = _safe(beam_search, sv, seed, cfg.width, cfg.max_len)
        audio.append(wer(a.words, _words(ha.tokens) if ha else []))
        visual.append(wer(a.words, _words(hv.tokens) if hv else []))
        if method == "shallow":
            hf = _safe(shallow_fusion_decode, sa, sv, seed, seed, best_lam, cfg.width,
                       cfg.max_len)
        else:
            hf = _safe(lambda_free_decode, sa, sv, seed, seed, cfg.width, cfg.max_len)
            if hf is not None and hf.origins:
                frac.append(origin_fraction(hf))
        fused.append(wer(a.words, _words(hf.tokens) if hf else []))
    lam = best_lam if method == "shallow" else None
    aux = float(np.mean(frac)) if frac else None
    return [SweepRow(snr, method, lam, pooled(audio).wer, pooled(visual).wer,
                     pooled(fused).wer, aux, cfg.seeds)]


def _cell(world, cfg, snr, method):
    if method == "wfst":
        return _wfst_cell(world, cfg, snr)
    return _seq2seq_cell(world, cfg, snr, method)


def run_sweep(config: SweepConfig, world: SyntheticWorld) -> SweepResult:
    """Evaluate every (method, SNR) cell and average over the seeds.

    WER is pooled per cell (total errors over total reference words). A
    failed decode counts as an empty hypothesis. For shallow fusion the
    reported lambda is the one with the fewest errors on the validation
    seeds (ties go to the larger lambda).
    """
    cells = [(m, snr) for m in config.methods for snr in config.snr_grid]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            futures = [pool.submit(_cell, world, config, snr, m) for m, snr in cells]
            parts = [f.result() for f in futures]
    else:
        parts = [_cell(world, config, snr, m) for m, snr in cells]
    return SweepResult([row for part in parts for row in part])


def _fmt(x: Optional[float], digits: int = 2) -> str:
    return "-" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.{digits}f}"


def render_report(result: SweepResult) -> str:
    """Plain-text tables, one per (method, lambda) block, SNR descending."""
    titles = {"wfst": "WFST fusion", "shallow": "Log-prob interpolation",
              "lambda_free": "Lambda-free fusion"}
    aux_names = {"wfst": "audio occ.", "lambda_free": "audio origin", "shallow": ""}
    out = []
    blocks: dict[tuple, list[SweepRow]] = {}
    for r in result.rows:
        key = (r.method, r.lam if r.method == "wfst" else None)
        blocks.setdefault(key, []).append(r)
    for (method, lam), rows in blocks.items():
        title = titles.get(method, method)
        if lam is not None:
            title += f" (lambda_a={lam:g})"
        out.append(f"Results (WER %) for {title}, {rows[0].seeds} seeds per row")
        head = f"{'SNR':>8} {'Audio':>8} {'Visual':>8} {'Fused':>8} {'lambda':>7} " \
               f"{aux_names.get(method, 'aux'):>13}"
        out.append(head)
        out.append("-" * len(head))
        improvements = []
        for r in sorted(rows, key=lambda r: -r.snr_db):
            snr = "inf" if math.isinf(r.snr_db) else f"{r.snr_db:g} dB"
            out.append(f"{snr:>8} {_fmt(r.audio_wer):>8} {_fmt(r.visual_wer):>8} "
                       f"{_fmt(r.fused_wer):>8} {_fmt(r.lam, 1):>7} {_fmt(r.aux_fraction, 3):>13}")
            if r.audio_wer > 0:
                improvements.append(relative_improvement(r.audio_wer, r.fused_wer))
        if improvements:
            out.append(f"average relative improvement over audio: "
                       f"{np.mean(improvements):.2f}% ({len(improvements)} rows)")
        out.append("")
    return "\n".join(out)


def config_fields() -> list[str]:
    return [f.name for f in fields(SweepConfig)]
