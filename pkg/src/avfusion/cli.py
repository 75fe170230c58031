"""Command-line entry point: ``avfusion <subcommand> ...``.

Exit codes: 0 success, 1 I/O error, 2 invalid input, 3 no decoding path.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path
from typing import Optional, Sequence

from .beam import CHARS, BeamError, beam_search, lambda_free_decode, origin_fraction, \
    shallow_fusion_decode
from .evaluation import METHODS, SweepConfig, SweepResult, render_report, run_sweep
from .graph import (Grammar, Lexicon, build_decode_graph, build_lexicon_fst, read_corpus,
                    read_graph_dir, read_lexicon, write_graph_dir)
from .hmm import Modality, build_phone_loop, fuse_hmms, read_phone_set, write_phone_set
from .synthetic import (DEFAULT_SHARPNESS, DEFAULT_VISUAL_ACCURACY, SnrModel, SyntheticWorld,
                        emit_observations, modality_scorers, sample_utterance)
from .viterbi import (DEFAULT_BEAM, DEFAULT_MAX_ACTIVE, WfstFusionWeights, occupancy_fraction,
                      read_emissions, viterbi_decode, write_emissions)

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_NO_PATH = 0, 1, 2, 3


class NoPath(Exception):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _words(text: str) -> tuple[str, ...]:
    return tuple(text.replace(",", " ").split())


# config schema: section -> key -> parser
CONFIG_SCHEMA = {
    "world": {"seed": int, "order": int, "heldout": float},
    "model": {"sharpness": float, "confusion": float, "char_confusion": float,
              "visual_accuracy": float, "visual_ratio": int},
    "sweep": {"snr_grid": _floats, "methods": _words, "lambda_grid": _floats,
              "shallow_lambdas": _floats, "seeds": int, "seed_base": int, "beam": float,
              "max_active": int, "width": int, "max_len": int, "workers": int},
}


def load_config(path: Optional[str]) -> dict[str, dict]:
    """Parse an INI-style file against :data:`CONFIG_SCHEMA`; unknown keys fail."""
    out: dict[str, dict] = {s: {} for s in CONFIG_SCHEMA}
    if path is None:
        return out
    parser = configparser.ConfigParser(interpolation=None)
    with open(path) as fh:
        parser.read_file(fh)
    for section in parser.sections():
        if section not in CONFIG_SCHEMA:
            raise ValueError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            conv = CONFIG_SCHEMA[section].get(key)
            if conv is None:
                raise ValueError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                out[section][key] = conv(raw)
            except ValueError:
                raise ValueError(f"{path}: bad value for {section}.{key}: {raw!r}") from None
    return out


def _merged(cfg: dict, args: argparse.Namespace, section: str) -> dict:
    """File values overridden by any flag of the same name that was given."""
    values = dict(cfg[section])
    for key in CONFIG_SCHEMA[section]:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return values


def _world(cfg: dict, args) -> SyntheticWorld:
    w = _merged(cfg, args, "world")
    return SyntheticWorld.default(seed=w.get("seed", 0), order=w.get("order", 2),
                                  heldout=w.get("heldout", 0.2))


def _model(cfg: dict, args) -> dict:
    return _merged(cfg, args, "model")


def _read(path: str) -> str:
    return Path(path).read_text()


def cmd_build_graph(args, cfg) -> int:
    phones = read_phone_set(_read(args.phones))
    visual = read_phone_set(_read(args.visual_phones)) if args.visual_phones else phones
    lex = Lexicon.build(read_lexicon(_read(args.lexicon)), phones)
    corpus = read_corpus(_read(args.corpus))
    order = _merged(cfg, args, "world").get("order", 2)
    audio_h = build_phone_loop(phones, modality=Modality.AUDIO,
                               phone_symbols=lex.phone_symbols)
    visual_h = build_phone_loop(visual, modality=Modality.VISUAL)
    fused = fuse_hmms(audio_h, visual_h)
    g = Grammar.estimate(corpus, order, lex.words).to_fst(lex.word_symbols)
    graph = build_decode_graph(fused, build_lexicon_fst(lex), g)
    write_graph_dir(graph, args.out)
    print(f"wrote {args.out}: {graph.fst.num_states} states, {graph.fst.num_arcs()} arcs, "
          f"{len(graph.table.entries)} transition ids")
    return EXIT_OK


def cmd_simulate(args, cfg) -> int:
    world = _world(cfg, args)
    m = _model(cfg, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "phones.txt").write_text(write_phone_set(world.phones))
    (out / "lexicon.txt").write_text("".join(
        f"{w} {' '.join(p)}\n" for w, p in world.lexicon.entries))
    (out / "corpus.txt").write_text("".join(" ".join(s) + "\n" for s in world.corpus))
    snr = SnrModel(args.snr, m.get("visual_accuracy", DEFAULT_VISUAL_ACCURACY))
    table = world.fused_hmm.table
    kw = {k: m[k] for k in ("confusion", "visual_ratio") if k in m}
    suffix = ".csv" if args.format == "csv" else ".emis"
    refs = []
    for i in range(args.utterances):
        a = sample_utterance(world, i)
        obs = emit_observations(a, snr, table, m.get("sharpness", DEFAULT_SHARPNESS), **kw)
        utt = f"utt{i:04d}"
        write_emissions(out / f"{utt}{suffix}", obs)
        refs.append(f"{utt} {a.text}\n")
    (out / "text").write_text("".join(refs))
    print(f"wrote {args.utterances} utterances at {args.snr:g} dB to {out}")
    return EXIT_OK


def cmd_decode_wfst(args, cfg) -> int:
    graph = read_graph_dir(args.graph)
    obs = read_emissions(args.emissions)
    r = viterbi_decode(graph, obs, WfstFusionWeights(args.lambda_a), beam=args.beam,
                       max_active=args.max_active)
    if not r.found:
        raise NoPath(f"no path reaches a final state for {args.emissions}")
    occ = occupancy_fraction(r) if sum(r.occupancy) else float("nan")
    print(f"{' '.join(r.words)}\t{r.log_score!r}\t{occ!r}")
    return EXIT_OK


def cmd_decode_seq2seq(args, cfg) -> int:
    world = _world(cfg, args)
    m = _model(cfg, args)
    snr = SnrModel(args.snr, m.get("visual_accuracy", DEFAULT_VISUAL_ACCURACY))
    kw = {} if "char_confusion" not in m else {"confusion": m["char_confusion"]}
    for i in range(args.utterances):
        a = sample_utterance(world, i)
        sa, sv = modality_scorers(world, a, snr, **kw)
        common = dict(width=args.width, max_len=args.max_len)
        try:
            if args.method == "audio":
                h = beam_search(sa, i, **common)
            elif args.method == "visual":
                h = beam_search(sv, i, **common)
            elif args.method == "shallow":
                h = shallow_fusion_decode(sa, sv, i, i, args.lam, **common)
            else:
                h = lambda_free_decode(sa, sv, i, i, **common)
        except BeamError as e:
            raise NoPath(f"utt{i:04d}: {e}") from e
        frac = origin_fraction(h) if h.origins else float("nan")
        print(f"utt{i:04d}\t{CHARS.decode(h.tokens)}\t{h.score!r}\t{frac!r}")
    return EXIT_OK


def sweep_config(cfg: dict, args) -> SweepConfig:
    values = _merged(cfg, args, "sweep")
    values.update(_merged(cfg, args, "model"))
    return SweepConfig(**values)


def cmd_sweep(args, cfg) -> int:
    config = sweep_config(cfg, args)
    result = run_sweep(config, _world(cfg, args))
    Path(args.out).write_text(result.to_csv())
    report = render_report(result)
    if args.report:
        Path(args.report).write_text(report)
    else:
        print(report, end="")
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    print(render_report(SweepResult.from_csv(_read(args.csv))), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="avfusion", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="INI file with [world], [model] and [sweep] sections")
    p.add_argument("--seed", type=int, help="world seed; keys every random stream")
    sub = p.add_subparsers(dest="command", required=True)

    def model_flags(sp):
        sp.add_argument("--sharpness", type=float, help="evidence sharpness (> 0)")
        sp.add_argument("--confusion", type=float, help="frame substitution scale in [0, 1]")
        sp.add_argument("--char-confusion", type=float, dest="char_confusion",
                        help="character misread scale in [0, 1]")
        sp.add_argument("--visual-accuracy", type=float, dest="visual_accuracy",
                        help="fixed visual accuracy in (0, 1)")
        sp.add_argument("--visual-ratio", type=int, dest="visual_ratio",
                        help="audio frames per visual frame")

    sp = sub.add_parser("build-graph", help="compile a fused H o L o G graph directory")
    sp.add_argument("--lexicon", required=True, help="'word phone ...' lines")
    sp.add_argument("--corpus", required=True, help="one sentence per line")
    sp.add_argument("--phones", required=True, help="audio phone set, one per line")
    sp.add_argument("--visual-phones", dest="visual_phones",
                    help="visual phone set (defaults to --phones); must match it")
    sp.add_argument("--order", type=int, help="n-gram order (default 2)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_build_graph)

    sp = sub.add_parser("simulate", help="write synthetic emissions and world files")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--utterances", type=int, default=10, help="number of utterances")
    sp.add_argument("--snr", type=float, default=0.0, help="audio SNR in dB")
    sp.add_argument("--format", choices=("binary", "csv"), default="binary",
                    help="emission file format")
    model_flags(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("decode-wfst", help="Viterbi-decode one emission file")
    sp.add_argument("--graph", required=True, help="directory written by build-graph")
    sp.add_argument("--emissions", required=True, help="binary or .csv emission file")
    sp.add_argument("--lambda-a", type=float, dest="lambda_a", default=0.5,
                    help="audio weight in [0, 1] (default 0.5)")
    sp.add_argument("--beam", type=float, default=DEFAULT_BEAM, help="pruning beam")
    sp.add_argument("--max-active", type=int, dest="max_active", default=DEFAULT_MAX_ACTIVE,
                    help="maximum active states per frame")
    sp.set_defaults(func=cmd_decode_wfst)

    sp = sub.add_parser("decode-seq2seq", help="beam-search synthetic character scorers")
    sp.add_argument("--method", choices=("audio", "visual", "shallow", "lambda_free"),
                    default="lambda_free", help="decoder")
    sp.add_argument("--lambda", type=float, dest="lam", default=0.5,
                    help="audio weight for shallow fusion")
    sp.add_argument("--utterances", type=int, default=10, help="number of utterances")
    sp.add_argument("--snr", type=float, default=0.0, help="audio SNR in dB")
    sp.add_argument("--width", type=int, default=20, help="beam width")
    sp.add_argument("--max-len", type=int, dest="max_len", default=200, help="step limit")
    model_flags(sp)
    sp.set_defaults(func=cmd_decode_seq2seq)

    sp = sub.add_parser("sweep", help="SNR x lambda sweep; writes a CSV and a report")
    sp.add_argument("--method", dest="methods", action="append", choices=METHODS,
                    help="method to run (repeatable; default wfst)")
    sp.add_argument("--snr-grid", dest="snr_grid", type=_floats, help="e.g. '-5,0,5,10,15'")
    sp.add_argument("--lambda-grid", dest="lambda_grid", type=_floats,
                    help="WFST audio weights (default 0.5)")
    sp.add_argument("--shallow-lambdas", dest="shallow_lambdas", type=_floats,
                    help="candidate lambdas for shallow fusion")
    sp.add_argument("--seeds", type=int, help="utterances per cell (default 50)")
    sp.add_argument("--beam", type=float, help="WFST pruning beam")
    sp.add_argument("--max-active", dest="max_active", type=int, help="WFST active-state cap")
    sp.add_argument("--width", type=int, help="seq2seq beam width")
    sp.add_argument("--max-len", dest="max_len", type=int, help="seq2seq step limit")
    sp.add_argument("--workers", type=int, help="parallel processes for cells")
    sp.add_argument("--out", required=True, help="CSV output path")
    sp.add_argument("--report", help="text report path (default stdout)")
    model_flags(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="render a sweep CSV as text tables")
    sp.add_argument("--csv", required=True, help="CSV written by sweep")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except NoPath as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NO_PATH
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
