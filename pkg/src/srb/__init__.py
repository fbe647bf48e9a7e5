"""ASR robustness evaluation: perturbation bank, metrics, toy recognizer,
white-box attacks, and a reproducible evaluation harness."""

__version__ = "0.1.0"

from .audio import AudioBuffer, add_noise_at_snr, measure_snr, read_wav, write_wav
from .metrics import (
    DifficultyTable,
    EvalRecord,
    corpus_error_rate,
    edit_distance,
    lwerr,
    normalize_difficulty,
    normalize_text,
    nwerd,
    werd,
)
from .perturb import (
    PerturbationKind,
    PerturbationSpec,
    apply_perturbation,
    severity_params,
)

__all__ = [
    "AudioBuffer",
    "DifficultyTable",
    "EvalRecord",
    "PerturbationKind",
    "PerturbationSpec",
    "__version__",
    "add_noise_at_snr",
    "apply_perturbation",
    "corpus_error_rate",
    "edit_distance",
    "lwerr",
    "measure_snr",
    "normalize_difficulty",
    "normalize_text",
    "nwerd",
    "severity_params",
    "werd",
]
