"""Self-training speech enhancement with bootstrapped remixing (teacher/student)."""
from .data import Corpus, CorpusItem, SynthSpec, generate_corpus, load_manifest, write_corpus
from .estimators import MixITEnhancer, RemixITEnhancer, SupervisedEnhancer
from .exceptions import (AnalysisError, CheckpointError, ConfigError, CorpusError, DivergenceError,
                         RemixITError, SignalError)
from .metrics import error_decomposition, si_sdr, snr
from .model import ModelArch, MaskNetParams, init_params, load_checkpoint, save_checkpoint, separate
from .selftrain import (TeacherProtocol, TrainConfig, evaluate, run_remixit, train_mixit, train_supervised,
                        zero_shot_adapt)

__version__ = "0.1.0"

__all__ = [
    "AnalysisError", "CheckpointError", "ConfigError", "Corpus", "CorpusError", "CorpusItem",
    "DivergenceError", "MaskNetParams", "MixITEnhancer", "ModelArch", "RemixITEnhancer", "RemixITError",
    "SignalError", "SupervisedEnhancer", "SynthSpec", "TeacherProtocol", "TrainConfig", "error_decomposition",
    "evaluate", "generate_corpus", "init_params", "load_checkpoint", "load_manifest", "run_remixit",
    "save_checkpoint", "separate", "si_sdr", "snr", "train_mixit", "train_supervised", "write_corpus",
    "zero_shot_adapt",
]
