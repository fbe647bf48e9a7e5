"""A miniature differentiable CTC recognizer over tone-coded characters.

The model is a bias-free linear map from 20 ms frames to per-character
logits, trained on synthetic utterances where each character is a 100 ms
pure tone.  It exists to give the adversarial attacks an in-process
gradient oracle, not to be a good recognizer.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .audio import AudioBuffer
from .errors import InfeasibleTargetError, TrainingBudgetError
from .metrics import edit_distance

DEFAULT_FRAME_LEN = 320
DEFAULT_HOP = 160
DEFAULT_SAMPLE_RATE = 16000

CHAR_DURATION_S = 0.1
TONE_BASE_HZ = 400.0
TONE_STEP_HZ = 200.0
TONE_AMPLITUDE = 0.3

Audio = Union[AudioBuffer, np.ndarray]


@dataclass(frozen=True, eq=False)
class ToyCtcModel:
    """Linear frame classifier with a trailing blank label."""

    weights: np.ndarray
    alphabet: str
    frame_len: int = DEFAULT_FRAME_LEN
    hop: int = DEFAULT_HOP
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        expected = (self.frame_len, len(self.alphabet) + 1)
        if weights.shape != expected:
            raise ValueError(f"weights shape {weights.shape}, expected {expected}")
        if not np.all(np.isfinite(weights)):
            raise ValueError("weights contain NaN or Inf")
        weights = weights.copy()
        weights.flags.writeable = False
        object.__setattr__(self, "weights", weights)

    @property
    def blank(self) -> int:
        return len(self.alphabet)


def _samples_of(audio: Audio) -> np.ndarray:
    if isinstance(audio, AudioBuffer):
        return audio.samples
    return np.asarray(audio, dtype=np.float64)


def frame_signal(
    audio: Audio, frame_len: int = DEFAULT_FRAME_LEN, hop: int = DEFAULT_HOP
) -> np.ndarray:
    """Overlapping frames, count = 1 + floor((len - frame_len)/hop)."""
    x = _samples_of(audio)
    if len(x) < frame_len:
        raise ValueError(f"signal of {len(x)} samples shorter than one {frame_len}-sample frame")
    count = 1 + (len(x) - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(count)[:, None]
    return x[idx]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(model: ToyCtcModel, audio: Audio) -> np.ndarray:
    """Per-frame log-probabilities, rows log-sum-exp to zero."""
    if isinstance(audio, AudioBuffer) and audio.sample_rate != model.sample_rate:
        raise ValueError(
            f"audio at {audio.sample_rate} Hz, model expects {model.sample_rate} Hz"
        )
    frames = frame_signal(audio, model.frame_len, model.hop)
    return _log_softmax(frames @ model.weights)


def encode_target(text: str, alphabet: str) -> list[int]:
    """Map a transcript to label indices (no blanks)."""
    try:
        return [alphabet.index(ch) for ch in text]
    except ValueError:
        bad = next(ch for ch in text if ch not in alphabet)
        raise ValueError(f"character {bad!r} not in alphabet {alphabet!r}") from None


def _augment(target: Sequence[int], blank: int) -> np.ndarray:
    lab = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    lab[1::2] = target
    return lab


def _min_frames(target: Sequence[int]) -> int:
    repeats = sum(1 for i in range(1, len(target)) if target[i] == target[i - 1])
    return len(target) + repeats


def _ctc_alpha(logprobs: np.ndarray, lab: np.ndarray, blank: int) -> np.ndarray:
    T = logprobs.shape[0]
    S = len(lab)
    neg = -np.inf
    skip_ok = np.zeros(S, dtype=bool)
    skip_ok[2:] = (lab[2:] != blank) & (lab[2:] != lab[:-2])
    alpha = np.full((T, S), neg)
    alpha[0, 0] = logprobs[0, lab[0]]
    if S > 1:
        alpha[0, 1] = logprobs[0, lab[1]]
    for t in range(1, T):
        stay = alpha[t - 1]
        step = np.concatenate([[neg], alpha[t - 1, :-1]])
        skip = np.concatenate([[neg, neg], alpha[t - 1, :-2]])[:S]
        skip = np.where(skip_ok, skip, neg)
        alpha[t] = np.logaddexp(np.logaddexp(stay, step), skip) + logprobs[t, lab]
    return alpha


def _ctc_beta(logprobs: np.ndarray, lab: np.ndarray, blank: int) -> np.ndarray:
    # beta[t, s] excludes the emission at t: probability of completing the
    # label sequence with emissions t+1..T-1 starting from state s
    T = logprobs.shape[0]
    S = len(lab)
    neg = -np.inf
    skip_from = np.zeros(S, dtype=bool)
    skip_from[: S - 2] = (lab[2:] != blank) & (lab[2:] != lab[:-2])
    beta = np.full((T, S), neg)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        scored = beta[t + 1] + logprobs[t + 1, lab]
        stay = scored
        step = np.concatenate([scored[1:], [neg]])
        skip = np.concatenate([scored[2:], [neg, neg]])[:S]
        skip = np.where(skip_from, skip, neg)
        beta[t] = np.logaddexp(np.logaddexp(stay, step), skip)
    return beta


def ctc_loss(logprobs: np.ndarray, target: Sequence[int]) -> float:
    """-log P(target | logprobs) by the forward algorithm in log space."""
    logprobs = np.asarray(logprobs, dtype=np.float64)
    T, n_labels = logprobs.shape
    blank = n_labels - 1
    target = list(target)
    if any(not 0 <= t < blank for t in target):
        raise ValueError(f"target labels must lie in [0, {blank - 1}]")
    if T < _min_frames(target):
        raise InfeasibleTargetError(
            f"target of {len(target)} labels needs at least {_min_frames(target)} frames, got {T}"
        )
    lab = _augment(target, blank)
    alpha = _ctc_alpha(logprobs, lab, blank)
    tail = alpha[T - 1, -1]
    if len(lab) > 1:
        tail = np.logaddexp(tail, alpha[T - 1, -2])
    if not np.isfinite(tail):
        raise InfeasibleTargetError("no feasible alignment for target")
    return float(-tail)


def ctc_grad_input(model: ToyCtcModel, audio: Audio, target: Sequence[int]) -> np.ndarray:
    """Analytic d(ctc_loss)/d(samples), same shape as the input signal.

    Forward-backward posterior -> softmax Jacobian -> weight transpose ->
    overlap-add over frames; samples past the last full frame get zero.
    """
    x = _samples_of(audio)
    frames = frame_signal(x, model.frame_len, model.hop)
    logits = frames @ model.weights
    logprobs = _log_softmax(logits)
    T, n_labels = logprobs.shape
    blank = n_labels - 1
    target = list(target)
    if T < _min_frames(target):
        raise InfeasibleTargetError(
            f"target of {len(target)} labels needs at least {_min_frames(target)} frames, got {T}"
        )
    lab = _augment(target, blank)
    alpha = _ctc_alpha(logprobs, lab, blank)
    beta = _ctc_beta(logprobs, lab, blank)
    log_z = alpha[T - 1, -1]
    if len(lab) > 1:
        log_z = np.logaddexp(log_z, alpha[T - 1, -2])
    if not np.isfinite(log_z):
        raise InfeasibleTargetError("no feasible alignment for target")
    state_post = np.exp(alpha + beta - log_z)
    label_post = np.zeros((T, n_labels))
    for s, k in enumerate(lab):
        label_post[:, k] += state_post[:, s]
    dlogits = np.exp(logprobs) - label_post
    dframes = dlogits @ model.weights.T
    grad = np.zeros(len(x))
    for t in range(T):
        start = t * model.hop
        grad[start : start + model.frame_len] += dframes[t]
    return grad


def greedy_decode(logprobs: np.ndarray, alphabet: str) -> str:
    """Per-frame argmax, collapse repeats, drop blanks."""
    blank = len(alphabet)
    out = []
    prev = -1
    for idx in np.argmax(np.asarray(logprobs), axis=1):
        if idx != prev and idx != blank:
            out.append(alphabet[idx])
        prev = idx
    return "".join(out)


# ---------------------------------------------------------------------------
# synthetic speech and training


def tone_frequency(alphabet: str, ch: str) -> float:
    """The pure-tone frequency encoding one character."""
    return TONE_BASE_HZ + TONE_STEP_HZ * alphabet.index(ch)


def synth_utterance(
    text: str, alphabet: str, sample_rate: int = DEFAULT_SAMPLE_RATE
) -> AudioBuffer:
    """Concatenated 100 ms character tones.

    Frequencies are multiples of 100 Hz, so at the default rate every tone
    repeats exactly per 160-sample hop and frames within a character are
    identical; a linear frame classifier can then learn the task.
    """
    if not text:
        raise ValueError("empty transcript")
    per_char = int(round(CHAR_DURATION_S * sample_rate))
    t = np.arange(per_char) / sample_rate
    parts = [
        TONE_AMPLITUDE * np.sin(2.0 * np.pi * tone_frequency(alphabet, ch) * t)
        for ch in text
    ]
    return AudioBuffer(np.concatenate(parts), sample_rate)


@dataclass(frozen=True)
class ToyUtterance:
    """A synthetic utterance with manifest-shaped metadata."""

    id: str
    text: str
    audio: AudioBuffer
    gender: str
    language: str = "und"
    dataset: str = "toy"


def _sample_text(rng: np.random.Generator, alphabet: str, length: int) -> str:
    # no adjacent repeats: identical consecutive tones would be
    # indistinguishable from one long tone under CTC collapse
    chars = [alphabet[int(rng.integers(len(alphabet)))]]
    while len(chars) < length:
        choices = [c for c in alphabet if c != chars[-1]]
        chars.append(choices[int(rng.integers(len(choices)))])
    return "".join(chars)


def make_corpus(
    rng: np.random.Generator, alphabet: str, n_utts: int, prefix: str = "toy"
) -> list[ToyUtterance]:
    utts = []
    for i in range(n_utts):
        length = int(rng.integers(2, 6))
        text = _sample_text(rng, alphabet, length)
        utts.append(
            ToyUtterance(
                id=f"{prefix}-{i:04d}",
                text=text,
                audio=synth_utterance(text, alphabet),
                gender="m" if i % 2 == 0 else "f",
            )
        )
    return utts


def _corpus_cer(model: ToyCtcModel, utts: Sequence[ToyUtterance]) -> float:
    total_ed = 0
    total_len = 0
    for utt in utts:
        hyp = greedy_decode(forward(model, utt.audio), model.alphabet)
        total_ed += edit_distance(list(hyp), list(utt.text))
        total_len += len(utt.text)
    return total_ed / total_len


def train_toy(
    seed: int = 0,
    n_utts: int = 20,
    alphabet: str = "abcd",
    max_steps: int = 1000,
    learn_rate: float = 0.5,
    target_cer: float = 0.05,
) -> tuple[ToyCtcModel, list[ToyUtterance]]:
    """Gradient-descend a linear CTC model until training CER <= 5%.

    Deterministic given the seed; raises TrainingBudgetError if the budget
    runs out first.
    """
    if len(alphabet) > 8:
        raise ValueError(f"alphabet of {len(alphabet)} symbols exceeds the limit of 8")
    if len(set(alphabet)) != len(alphabet):
        raise ValueError("alphabet has duplicate symbols")
    rng = np.random.default_rng(seed)
    utts = make_corpus(rng, alphabet, n_utts)
    n_labels = len(alphabet) + 1
    weights = np.zeros((DEFAULT_FRAME_LEN, n_labels))
    frames_list = [frame_signal(u.audio) for u in utts]
    targets = [encode_target(u.text, alphabet) for u in utts]
    blank = n_labels - 1
    for step in range(1, max_steps + 1):
        grad = np.zeros_like(weights)
        for frames, target in zip(frames_list, targets):
            logits = frames @ weights
            logprobs = _log_softmax(logits)
            lab = _augment(target, blank)
            alpha = _ctc_alpha(logprobs, lab, blank)
            beta = _ctc_beta(logprobs, lab, blank)
            log_z = np.logaddexp(alpha[-1, -1], alpha[-1, -2])
            state_post = np.exp(alpha + beta - log_z)
            label_post = np.zeros_like(logprobs)
            for s, k in enumerate(lab):
                label_post[:, k] += state_post[:, s]
            grad += frames.T @ (np.exp(logprobs) - label_post)
        weights -= learn_rate * grad / len(utts)
        if step % 10 == 0 or step == max_steps:
            model = ToyCtcModel(weights, alphabet)
            if _corpus_cer(model, utts) <= target_cer:
                return model, utts
    raise TrainingBudgetError(
        f"training CER still above {target_cer:.0%} after {max_steps} steps"
    )


# ---------------------------------------------------------------------------
# checkpoints and the gradient-oracle binding


def save_model(path, model: ToyCtcModel) -> None:
    payload = {
        "alphabet": model.alphabet,
        "frame_len": model.frame_len,
        "hop": model.hop,
        "sample_rate": model.sample_rate,
        "weights": model.weights.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_model(path) -> ToyCtcModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return ToyCtcModel(
        np.array(payload["weights"], dtype=np.float64),
        payload["alphabet"],
        frame_len=payload["frame_len"],
        hop=payload["hop"],
        sample_rate=payload["sample_rate"],
    )


class CtcOracle:
    """GradientOracle over a ToyCtcModel (transcribe / loss / grad_input)."""

    def __init__(self, model: ToyCtcModel, oracle_id: str = "toy-ctc"):
        self.model = model
        self.oracle_id = oracle_id

    def transcribe(self, audio: Audio) -> str:
        return greedy_decode(forward(self.model, audio), self.model.alphabet)

    def loss(self, audio: Audio, reference: str) -> float:
        return ctc_loss(
            forward(self.model, audio), encode_target(reference, self.model.alphabet)
        )

    def grad_input(self, audio: Audio, reference: str) -> np.ndarray:
        return ctc_grad_input(
            self.model, audio, encode_target(reference, self.model.alphabet)
        )
