"""Late fusion of audio and visual speech recognisers.

Two fusion back ends share the same synthetic test bed:

* WFST fusion: audio and visual HMM topologies are joined at a common start
  state, composed with a lexicon and n-gram grammar, and decoded with a
  token-passing Viterbi search whose audio/visual weights are ``lambda_a``
  and ``1 - lambda_a``.
* Sequence fusion: two character scorers drive one beam, combined either by
  weighted log-probabilities or by an element-wise maximum.
"""

from .beam import (CHARS, BeamStats, Hypothesis, StepScorer, TokenAlphabet, beam_search,
                   lambda_free_decode, origin_fraction, shallow_fusion_decode)
from .evaluation import (SweepConfig, SweepResult, SweepRow, WerReport, relative_improvement,
                         render_report, run_sweep, wer)
from .graph import (DecodeGraph, Grammar, Lexicon, build_decode_graph, build_grammar_fst,
                    build_lexicon_fst)
from .hmm import Modality, TransitionTable, build_phone_loop, fuse_hmms
from .synthetic import SnrModel, SyntheticWorld, emit_observations, sample_utterance
from .viterbi import EmissionSequence, ViterbiResult, WfstFusionWeights, occupancy_fraction, \
    viterbi_decode
from .wfst import Arc, Fst, SymbolTable, closure, compose, connect, shortest_path, \
    union_merged_start

__all__ = [name for name in dir() if not name.startswith("_")]
