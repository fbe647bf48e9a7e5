"""White-box attacks against a gradient oracle.

Per-utterance PGD maximizes CTC loss inside an L2 ball; the universal
attack accumulates a single reusable perturbation inside an L-inf ball.
Budgets are stated as signal-to-noise ratios and converted to norm bounds
per utterance.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Sequence, Union

import numpy as np

from .audio import AudioBuffer, NoiseClip, add_noise_at_snr, read_wav, write_wav
from .errors import ValidationError
from .metrics import cer

ATTACK_SNR_GRID_DB = (40.0, 30.0, 20.0, 10.0)

Audio = Union[AudioBuffer, np.ndarray]


class GradientOracle(Protocol):
    """A recognizer the attacks can query for text, loss, and input gradient."""

    def transcribe(self, audio: Audio) -> str: ...

    def loss(self, audio: Audio, reference: str) -> float: ...

    def grad_input(self, audio: Audio, reference: str) -> np.ndarray: ...


def _samples_of(audio: Audio) -> np.ndarray:
    if isinstance(audio, AudioBuffer):
        return audio.samples
    return np.asarray(audio, dtype=np.float64)


def snr_to_epsilon(x: Audio, snr_db: float, norm: str = "l2") -> float:
    """Perturbation-norm budget that realizes the SNR against this signal.

    With snr = 20 log10(||x|| / ||d||), the bound is ||x|| 10^(-snr/20);
    the L-inf variant applies the same relation to the max magnitude.
    """
    samples = _samples_of(x)
    if norm == "l2":
        ref = float(np.linalg.norm(samples))
    elif norm == "linf":
        ref = float(np.max(np.abs(samples))) if len(samples) else 0.0
    else:
        raise ValueError(f"unknown norm {norm!r}, expected 'l2' or 'linf'")
    if ref == 0.0:
        raise ValueError("signal is identically zero, SNR budget undefined")
    return ref * 10.0 ** (-snr_db / 20.0)


@dataclass(frozen=True)
class PgdConfig:
    """Projected gradient ascent settings; step_size None means epsilon/5."""

    snr_db: float = 20.0
    steps: int = 50
    step_size: Optional[float] = None

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")


def _project_l2(delta: np.ndarray, epsilon: float) -> np.ndarray:
    norm = float(np.linalg.norm(delta))
    if norm > epsilon:
        return delta * (epsilon / norm)
    return delta


def pgd_attack(
    oracle: GradientOracle, x: Audio, y: str, cfg: PgdConfig = PgdConfig()
) -> np.ndarray:
    """Loss-ascending perturbation delta with ||delta||_2 <= epsilon.

    Each step moves along the normalized input gradient of the loss
    against the true transcript, then projects back onto the ball.
    """
    samples = _samples_of(x)
    epsilon = snr_to_epsilon(samples, cfg.snr_db, "l2")
    step = cfg.step_size if cfg.step_size is not None else epsilon / 5.0
    delta = np.zeros_like(samples)
    for _ in range(cfg.steps):
        grad = np.asarray(oracle.grad_input(samples + delta, y), dtype=np.float64)
        if grad.shape != samples.shape:
            raise ValueError(f"gradient shape {grad.shape} != input shape {samples.shape}")
        if not np.all(np.isfinite(grad)):
            raise ValueError("oracle returned a non-finite gradient")
        norm = float(np.linalg.norm(grad))
        if norm == 0.0:
            break
        delta = _project_l2(delta + step * grad / norm, epsilon)
    return delta


@dataclass(frozen=True)
class UniversalConfig:
    """Accumulation settings for the universal perturbation.

    alpha None means epsilon/5.  e_max bounds passes over the dev set,
    i_max bounds refinements per utterance, t_sr is the success rate at
    which accumulation stops, t_cer the per-utterance success threshold.
    An odd i_max is the safer choice: when the sign refinement oscillates
    without flipping the transcript, an even count lands back on zero and
    contributes nothing to the accumulator.
    """

    snr_db: float = 20.0
    alpha: Optional[float] = None
    e_max: int = 20
    i_max: int = 15
    t_sr: float = 0.5
    t_cer: float = 0.3

    def __post_init__(self):
        if self.e_max < 1 or self.i_max < 1:
            raise ValueError("e_max and i_max must be at least 1")
        if not 0.0 <= self.t_sr <= 1.0:
            raise ValueError("t_sr must lie in [0, 1]")
        if self.t_cer < 0.0:
            raise ValueError("t_cer must be non-negative")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class UniversalPerturbation:
    """The accumulated vector with its budget and fitting telemetry."""

    v: np.ndarray
    epsilon: float
    snr_db: float
    success_rate: float
    epochs: int
    dev_hash: str

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64).copy()
        v.flags.writeable = False
        object.__setattr__(self, "v", v)


def _fit_to_length(v: np.ndarray, n: int) -> np.ndarray:
    """Tile or truncate v to exactly n samples."""
    if len(v) >= n:
        return v[:n]
    reps = -(-n // len(v))
    return np.tile(v, reps)[:n]


def _dev_hash(dev_set: Sequence) -> str:
    h = hashlib.sha256()
    for utt in dev_set:
        h.update(utt.text.encode("utf-8"))
        h.update(np.ascontiguousarray(utt.audio.samples).tobytes())
    return h.hexdigest()[:16]


def universal_attack(
    oracle: GradientOracle, dev_set: Sequence, cfg: UniversalConfig = UniversalConfig()
) -> UniversalPerturbation:
    """Accumulate one perturbation that degrades the whole dev set.

    The loss gradient is taken against each utterance's reference text,
    while progress is judged by how far the transcript moves from the
    model's own clean transcript.  For each utterance still transcribed
    too faithfully, a per-utterance refinement r is pushed by sign steps,
    clipped so the combined r + v stays inside the shared L-inf ball, and
    folded back into v.  Accumulation ends when the success rate over the
    dev set reaches t_sr or after e_max passes.
    """
    if not dev_set:
        raise ValidationError("dev set is empty")
    epsilons = [snr_to_epsilon(utt.audio, cfg.snr_db, "linf") for utt in dev_set]
    epsilon = float(np.mean(epsilons))
    alpha = cfg.alpha if cfg.alpha is not None else epsilon / 5.0
    clean = [oracle.transcribe(utt.audio) for utt in dev_set]
    max_len = max(len(utt.audio) for utt in dev_set)
    v = np.zeros(max_len)
    rate = _success_against(oracle, dev_set, clean, v, cfg.t_cer)
    epochs = 0
    while rate < cfg.t_sr and epochs < cfg.e_max:
        epochs += 1
        for utt, clean_text in zip(dev_set, clean):
            x = utt.audio.samples
            n = len(x)
            vx = v[:n]
            hyp = oracle.transcribe(x + vx)
            r = np.zeros(n)
            i = 0
            # refine while the perturbed transcript is still close enough
            # to the clean one to count as a failure
            while cer(hyp, clean_text) <= cfg.t_cer and i < cfg.i_max:
                grad = np.asarray(
                    oracle.grad_input(x + vx + r, utt.text), dtype=np.float64
                )
                r = np.clip(r - alpha * np.sign(r - grad) + vx, -epsilon, epsilon) - vx
                hyp = oracle.transcribe(x + vx + r)
                i += 1
            v[:n] = np.clip(r + vx, -epsilon, epsilon)
        rate = _success_against(oracle, dev_set, clean, v, cfg.t_cer)
    return UniversalPerturbation(
        v=v,
        epsilon=epsilon,
        snr_db=cfg.snr_db,
        success_rate=rate,
        epochs=epochs,
        dev_hash=_dev_hash(dev_set),
    )


def _success_against(
    oracle: GradientOracle,
    utt_set: Sequence,
    references: Sequence[str],
    v: np.ndarray,
    t_cer: float,
) -> float:
    hits = 0
    for utt, reference in zip(utt_set, references):
        x = utt.audio.samples
        hyp = oracle.transcribe(x + _fit_to_length(v, len(x)))
        if cer(hyp, reference) > t_cer:
            hits += 1
    return hits / len(utt_set)


def success_rate(
    oracle: GradientOracle, utt_set: Sequence, v: np.ndarray, t_cer: float = 0.3
) -> float:
    """Fraction of utterances whose transcript moves by more than t_cer.

    The reference for each utterance is the oracle's transcript of the
    unperturbed audio, so the rate isolates the perturbation's effect
    from the recognizer's baseline errors.
    """
    if not utt_set:
        raise ValidationError("utterance set is empty")
    v = np.asarray(v, dtype=np.float64)
    if len(v) == 0:
        raise ValidationError("perturbation is empty")
    references = [oracle.transcribe(utt.audio) for utt in utt_set]
    return _success_against(oracle, utt_set, references, v, t_cer)


def apply_universal(utt_set: Sequence, v: np.ndarray, snr_db: float) -> list:
    """Mix v into each utterance at the given SNR, like any other noise.

    Returns (utterance, perturbed AudioBuffer) pairs; v is tiled or
    truncated to each utterance and rescaled per utterance, so the
    realized SNR is exact rather than inherited from the fitting budget.
    """
    v = np.asarray(v, dtype=np.float64)
    if len(v) == 0 or not np.any(v):
        raise ValidationError("perturbation is empty or all zero")
    out = []
    for utt in utt_set:
        n = len(utt.audio)
        clip = NoiseClip(_fit_to_length(v, n), utt.audio.sample_rate, source_tag="universal")
        out.append((utt, add_noise_at_snr(utt.audio, clip, snr_db)))
    return out


def save_universal(
    path, perturbation: UniversalPerturbation, sample_rate: int = 16000
) -> None:
    """Float WAV of v plus a JSON sidecar with budget and telemetry."""
    path = Path(path)
    write_wav(path, AudioBuffer(perturbation.v, sample_rate), float32=True)
    sidecar = {
        "epsilon": perturbation.epsilon,
        "snr_db": perturbation.snr_db,
        "success_rate": perturbation.success_rate,
        "epochs": perturbation.epochs,
        "dev_hash": perturbation.dev_hash,
    }
    with open(path.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)


def load_universal(path) -> UniversalPerturbation:
    path = Path(path)
    buffer = read_wav(path)
    with open(path.with_suffix(".json"), encoding="utf-8") as fh:
        sidecar = json.load(fh)
    return UniversalPerturbation(
        v=buffer.samples,
        epsilon=sidecar["epsilon"],
        snr_db=sidecar["snr_db"],
        success_rate=sidecar["success_rate"],
        epochs=sidecar["epochs"],
        dev_hash=sidecar["dev_hash"],
    )
