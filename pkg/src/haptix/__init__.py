"""Desk-scale haptic captioning: synthesis, tokenization, training, rating.

The pipeline runs end to end on a CPU with no learned dependencies:

1. :mod:`haptix.waveform` synthesizes and transforms vibration signals.
2. :mod:`haptix.corpus` builds the 704-signal collection, its caption
   grammar, splits and rating campaigns.
3. :mod:`haptix.freq_tokenizer` / :mod:`haptix.rvq` turn waveforms into
   discrete token sequences.
4. :mod:`haptix.prompts` merges haptic tokens and byte-level text into
   one vocabulary and assembles training prompts.
5. :mod:`haptix.model` is a small decoder-only transformer trained via
   low-rank adapters; :mod:`haptix.dpo` adds preference optimization
   over rated caption pairs.
6. :mod:`haptix.metrics` scores captions (BLEU/ROUGE-L/METEOR);
   :mod:`haptix.service` collects ratings over HTTP.
"""

from .waveform import (
    DEFAULT_SAMPLE_RATE,
    F_MAX_HZ,
    F_MIN_HZ,
    MAX_DURATION_S,
    SYNTH_KINDS,
    SynthSpec,
    Waveform,
    WaveformError,
    low_pass,
    mix,
    normalize,
    pad_or_truncate,
    read_wav,
    repeat,
    reverse,
    synthesize,
    write_wav,
)
from .freq_tokenizer import FrequencyTokenizer
from .rvq import ResidualVectorQuantizer
from .prompts import (
    BOS,
    CATEGORIES,
    EOS,
    PAD,
    TEXT_BASE,
    PromptSample,
    Vocabulary,
    assemble,
)
from .model import (
    Model,
    ModelConfig,
    MomentumSGD,
    forward,
    generate,
    init_model,
    load_checkpoint_extra,
    load_model,
    merge_adapters,
    save_model,
    train_sft,
)
from .dpo import (
    RATING_MIDPOINT,
    PreferencePair,
    build_pairs,
    dpo_loss_and_grads,
    train_dpo,
)
from .metrics import (
    EvalSample,
    MetricReport,
    bleu,
    evaluate_corpus,
    meteor,
    rouge_l,
)
from .corpus import (
    SOURCES,
    SOURCE_COUNTS,
    SPLITS,
    VARIANTS,
    SignalRecord,
    assign_splits,
    build_campaign,
    build_caption_dataset,
    build_collection,
    load_collection,
    reference_captions,
    split_dataset,
    write_collection,
)
from .service import RatingService, RatingStore, StoreCorruption, serve

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_SAMPLE_RATE", "F_MAX_HZ", "F_MIN_HZ", "MAX_DURATION_S",
    "SYNTH_KINDS", "SynthSpec", "Waveform", "WaveformError", "low_pass",
    "mix", "normalize", "pad_or_truncate", "read_wav", "repeat", "reverse",
    "synthesize", "write_wav",
    "FrequencyTokenizer", "ResidualVectorQuantizer",
    "BOS", "CATEGORIES", "EOS", "PAD", "TEXT_BASE", "PromptSample",
    "Vocabulary", "assemble",
    "Model", "ModelConfig", "MomentumSGD", "forward", "generate",
    "init_model", "load_checkpoint_extra", "load_model", "merge_adapters",
    "save_model", "train_sft",
    "RATING_MIDPOINT", "PreferencePair", "build_pairs", "dpo_loss_and_grads",
    "train_dpo",
    "EvalSample", "MetricReport", "bleu", "evaluate_corpus", "meteor",
    "rouge_l",
    "SOURCES", "SOURCE_COUNTS", "SPLITS", "VARIANTS", "SignalRecord",
    "assign_splits", "build_campaign", "build_caption_dataset",
    "build_collection", "load_collection", "reference_captions",
    "split_dataset", "write_collection",
    "RatingService", "RatingStore", "StoreCorruption", "serve",
    "__version__",
]
