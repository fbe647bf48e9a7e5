"""Severity-graded perturbation registry and every non-adversarial effect.

Each perturbation kind carries a 4-level severity grid; severity_params
resolves a (kind, severity) cell to concrete parameters and
apply_perturbation dispatches to the matching procedure.  All procedures
are pure given (params, seed, input), so reruns are bit-identical.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.signal import fftconvolve, firwin, lfilter, resample_poly

from .audio import (
    AudioBuffer,
    ImpulseResponse,
    NoiseClip,
    RoomMeta,
    add_noise_at_snr,
    convolve,
    read_wav,
    resample,
    time_stretch,
)
from .errors import DecayRangeError, ValidationError


class PerturbationKind(str, Enum):
    GAUSSIAN_NOISE = "gaussian_noise"
    ENV_NOISE = "env_noise"
    MUSIC = "music"
    CROSSTALK = "crosstalk"
    RIR = "rir"
    REAL_RIR = "real_rir"
    ECHO = "echo"
    BASS = "bass"
    TREBLE = "treble"
    PHASER = "phaser"
    TEMPO_UP = "tempo_up"
    TEMPO_DOWN = "tempo_down"
    SPEED_UP = "speed_up"
    SLOW_DOWN = "slow_down"
    PITCH_UP = "pitch_up"
    PITCH_DOWN = "pitch_down"
    CHORUS = "chorus"
    TREMOLO = "tremolo"
    RESAMPLE = "resample"
    GAIN = "gain"
    LOWPASS = "lowpass"
    HIGHPASS = "highpass"


_KIND_ALIASES = {
    "gnoise": PerturbationKind.GAUSSIAN_NOISE,
    "white_noise": PerturbationKind.GAUSSIAN_NOISE,
    "speedup": PerturbationKind.SPEED_UP,
    "slowdown": PerturbationKind.SLOW_DOWN,
}


def parse_kind(token) -> PerturbationKind:
    """Resolve a kind name (enum value, alias, or spaced/hyphenated form)."""
    if isinstance(token, PerturbationKind):
        return token
    name = str(token).strip().lower().replace("-", "_").replace(" ", "_")
    if name in _KIND_ALIASES:
        return _KIND_ALIASES[name]
    try:
        return PerturbationKind(name)
    except ValueError:
        raise ValidationError(f"unknown perturbation kind {token!r}") from None


@dataclass(frozen=True)
class SeverityRow:
    """Parameter name and the four severity values for one kind."""

    param: str
    values: tuple[float, float, float, float]


DEFAULT_SEVERITY_TABLE: dict[PerturbationKind, SeverityRow] = {
    PerturbationKind.GAUSSIAN_NOISE: SeverityRow("snr_db", (30.0, 20.0, 10.0, 0.0)),
    PerturbationKind.ENV_NOISE: SeverityRow("snr_db", (30.0, 20.0, 10.0, 0.0)),
    PerturbationKind.MUSIC: SeverityRow("snr_db", (30.0, 20.0, 10.0, 0.0)),
    PerturbationKind.CROSSTALK: SeverityRow("snr_db", (30.0, 20.0, 10.0, 0.0)),
    PerturbationKind.RIR: SeverityRow("rt60_s", (0.27, 0.58, 0.99, 1.33)),
    PerturbationKind.REAL_RIR: SeverityRow("srmr", (9.1, 7.1, 4.1, 1.8)),
    PerturbationKind.ECHO: SeverityRow("delay_ms", (125.0, 250.0, 500.0, 1000.0)),
    PerturbationKind.BASS: SeverityRow("gain_db", (20.0, 30.0, 40.0, 50.0)),
    PerturbationKind.TREBLE: SeverityRow("gain_db", (10.0, 23.0, 36.0, 50.0)),
    PerturbationKind.PHASER: SeverityRow("decay", (0.3, 0.5, 0.7, 0.9)),
    PerturbationKind.TEMPO_UP: SeverityRow("factor", (1.25, 1.5, 1.75, 2.0)),
    PerturbationKind.TEMPO_DOWN: SeverityRow("factor", (0.875, 0.75, 0.625, 0.5)),
    PerturbationKind.SPEED_UP: SeverityRow("factor", (1.25, 1.5, 1.75, 2.0)),
    PerturbationKind.SLOW_DOWN: SeverityRow("factor", (0.875, 0.75, 0.625, 0.5)),
    PerturbationKind.PITCH_UP: SeverityRow("octaves", (0.25, 0.5, 0.75, 1.0)),
    PerturbationKind.PITCH_DOWN: SeverityRow("octaves", (0.25, 0.5, 0.75, 1.0)),
    PerturbationKind.CHORUS: SeverityRow("delay_ms", (30.0, 50.0, 70.0, 90.0)),
    PerturbationKind.TREMOLO: SeverityRow("depth", (50.0, 66.0, 83.0, 100.0)),
    PerturbationKind.RESAMPLE: SeverityRow("factor", (0.75, 0.5, 0.25, 0.125)),
    PerturbationKind.GAIN: SeverityRow("factor", (10.0, 20.0, 30.0, 40.0)),
    PerturbationKind.LOWPASS: SeverityRow("cutoff_hz", (4000.0, 2833.0, 1666.0, 500.0)),
    PerturbationKind.HIGHPASS: SeverityRow("cutoff_hz", (500.0, 1333.0, 2166.0, 3000.0)),
}

SEVERITIES = (1, 2, 3, 4)


def severity_params(
    kind, severity: int, table: Optional[Mapping[PerturbationKind, SeverityRow]] = None
) -> dict[str, float]:
    """The parameter record for one severity cell of the registry."""
    kind = parse_kind(kind)
    if severity not in SEVERITIES:
        raise ValueError(f"severity must be 1-4, got {severity}")
    row = (table or DEFAULT_SEVERITY_TABLE)[kind]
    return {row.param: row.values[severity - 1]}


def load_severity_table(path) -> dict[PerturbationKind, SeverityRow]:
    """Default registry with rows overridden from a JSON or TOML file.

    The file maps kind names to four-value lists, e.g.
    ``{"gaussian_noise": [35, 25, 15, 5]}``; parameter names stay those of
    the built-in rows.
    """
    path = Path(path)
    if path.suffix.lower() == ".toml":
        try:
            import tomllib as toml_parser
        except ModuleNotFoundError:
            import tomli as toml_parser

        raw = toml_parser.loads(path.read_text("utf-8"))
    else:
        raw = json.loads(path.read_text("utf-8"))
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: severity table must be a mapping")
    table = dict(DEFAULT_SEVERITY_TABLE)
    for key, values in raw.items():
        kind = parse_kind(key)
        if not isinstance(values, (list, tuple)) or len(values) != 4:
            raise ValidationError(f"{path}: row {key!r} needs exactly 4 values")
        table[kind] = SeverityRow(table[kind].param, tuple(float(v) for v in values))
    return table


@dataclass(frozen=True)
class PerturbationSpec:
    """A fully resolved perturbation: kind, severity cell, params, seed.

    params defaults to the registry cell; pass explicitly to override.
    """

    kind: PerturbationKind
    severity: int
    params: Mapping[str, float] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", parse_kind(self.kind))
        if self.severity not in SEVERITIES:
            raise ValueError(f"severity must be 1-4, got {self.severity}")
        if self.params is None:
            object.__setattr__(self, "params", severity_params(self.kind, self.severity))
        else:
            object.__setattr__(self, "params", dict(self.params))


def derive_seed(run_seed: int, utterance_id: str, kind, severity: int) -> int:
    """Stable 64-bit per-utterance seed.

    Hash-derived so parallel execution order cannot change any utterance's
    randomness, and reruns with the same run seed reproduce it.
    """
    kind_name = kind.value if isinstance(kind, PerturbationKind) else str(kind)
    key = f"{run_seed}\x1f{utterance_id}\x1f{kind_name}\x1f{severity}"
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


# ---------------------------------------------------------------------------
# additive noise


def gaussian_noise(audio: AudioBuffer, snr: float, seed: int) -> AudioBuffer:
    """White noise drawn from a seeded standard normal, mixed at snr dB."""
    rng = np.random.default_rng(seed)
    noise = NoiseClip(rng.standard_normal(len(audio)), audio.sample_rate, "gaussian")
    return add_noise_at_snr(audio, noise, snr)


@dataclass(frozen=True)
class NoiseBank:
    """A pool of noise clips sampled uniformly per utterance."""

    clips: tuple[NoiseClip, ...]

    @classmethod
    def from_dir(cls, path) -> "NoiseBank":
        path = Path(path)
        clips = []
        for wav in sorted(path.glob("*.wav")):
            buf = read_wav(wav)
            clips.append(NoiseClip(buf.samples, buf.sample_rate, wav.name))
        if not clips:
            raise ValidationError(f"no WAV files in noise bank directory {path}")
        return cls(tuple(clips))


def env_noise_mix(audio: AudioBuffer, bank: NoiseBank, snr: float, seed: int) -> AudioBuffer:
    """Mix one uniformly sampled bank clip at snr dB.

    The clip is truncated if longer than the speech and tiled end-to-end
    if shorter.  Serves env_noise, music, and crosstalk (same procedure,
    different banks).
    """
    if not bank.clips:
        raise ValidationError("noise bank is empty")
    rng = np.random.default_rng(seed)
    clip = bank.clips[int(rng.integers(len(bank.clips)))]
    samples = clip.samples
    if clip.sample_rate != audio.sample_rate:
        samples = resample(AudioBuffer(samples, clip.sample_rate), audio.sample_rate).samples
    if len(samples) == 0:
        raise ValidationError(f"noise clip {clip.source_tag!r} is empty")
    n = len(audio)
    if len(samples) >= n:
        fitted = samples[:n]
    else:
        fitted = np.tile(samples, -(-n // len(samples)))[:n]
    return add_noise_at_snr(
        audio, NoiseClip(fitted, audio.sample_rate, clip.source_tag), snr
    )


# ---------------------------------------------------------------------------
# reverberation

RT60_ANCHORS = (0.27, 0.58, 0.99, 1.33)
SRMR_ANCHORS = (9.1, 7.1, 4.1, 1.8)

_SABINE_COEFF = 0.161
_SCHROEDER_FIT_DB = (-5.0, -35.0)


def estimate_rt60(ir: ImpulseResponse) -> float:
    """RT60 in seconds, via Sabine's formula or Schroeder integration.

    With room metadata: RT60 = 0.161 * V / (S * a).  Otherwise the decay
    slope is fit on the -5 to -35 dB span of the backward-integrated
    energy curve and extrapolated to 60 dB; an IR whose curve never
    reaches -35 dB raises DecayRangeError.
    """
    if ir.room_meta is not None:
        meta = ir.room_meta
        return _SABINE_COEFF * meta.volume_m3 / (meta.surface_m2 * meta.absorption)
    if ir.duration_seconds < 0.1:
        raise ValueError(
            f"impulse response of {ir.duration_seconds:.3f} s too short for Schroeder estimation"
        )
    energy = ir.samples**2
    edc = np.cumsum(energy[::-1])[::-1]
    if edc[0] <= 0.0:
        raise DecayRangeError("silent impulse response has no decay curve")
    with np.errstate(divide="ignore"):
        edc_db = 10.0 * np.log10(edc / edc[0])
    hi, lo = _SCHROEDER_FIT_DB
    start = int(np.argmax(edc_db <= hi))
    below = np.nonzero(edc_db <= lo)[0]
    if edc_db[start] > hi or len(below) == 0:
        raise DecayRangeError("energy decay spans less than 30 dB; cannot fit RT60")
    stop = int(below[0])
    if stop - start < 2:
        raise DecayRangeError("decay from -5 to -35 dB too abrupt to fit")
    times = np.arange(start, stop + 1) / ir.sample_rate
    slope, _ = np.polyfit(times, edc_db[start : stop + 1], 1)
    if slope >= 0.0:
        raise DecayRangeError("energy decay curve is not decreasing")
    return float(-60.0 / slope)


def assign_rir_severity(
    bank: Iterable[ImpulseResponse],
) -> list[tuple[ImpulseResponse, int]]:
    """Label each IR with the severity of its nearest Table anchor.

    Real IRs (srmr populated) use the SRMR anchors; simulated ones use
    RT60, estimated on demand from room metadata or the decay curve.
    Ties break toward the lower severity.
    """
    labeled = []
    for ir in bank:
        if ir.srmr is not None:
            anchors, value = SRMR_ANCHORS, float(ir.srmr)
        else:
            value = ir.rt60_seconds if ir.rt60_seconds is not None else estimate_rt60(ir)
            anchors, value = RT60_ANCHORS, float(value)
        best = min(range(len(anchors)), key=lambda i: (abs(value - anchors[i]), i))
        labeled.append((ir, best + 1))
    return labeled


def load_rir_bank(path) -> list[ImpulseResponse]:
    """Read a directory of IR WAVs with an optional meta.jsonl sidecar.

    Sidecar lines: {"file": name, "rt60": s?, "srmr": score?,
    "room": {"volume_m3", "surface_m2", "absorption"}?}.
    """
    path = Path(path)
    meta: dict[str, dict] = {}
    sidecar = path / "meta.jsonl"
    if sidecar.exists():
        for lineno, line in enumerate(sidecar.read_text("utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
                meta[entry["file"]] = entry
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"{sidecar}:{lineno}: bad sidecar entry: {exc}") from exc
    irs = []
    for wav in sorted(path.glob("*.wav")):
        buf = read_wav(wav)
        entry = meta.get(wav.name, {})
        room = RoomMeta(**entry["room"]) if "room" in entry else None
        irs.append(
            ImpulseResponse(
                buf.samples,
                buf.sample_rate,
                rt60_seconds=entry.get("rt60"),
                srmr=entry.get("srmr"),
                room_meta=room,
            )
        )
    if not irs:
        raise ValidationError(f"no WAV files in RIR bank directory {path}")
    return irs


# ---------------------------------------------------------------------------
# SoX-style effects

_ECHO_GAIN_IN, _ECHO_GAIN_OUT, _ECHO_DECAY = 0.8, 0.9, 0.3
_PHASER_GAIN_IN, _PHASER_GAIN_OUT = 0.6, 0.8
_PHASER_DELAY_MS, _PHASER_SPEED_HZ = 3.0, 2.0
_TREMOLO_RATE_HZ = 20.0
_CHORUS_GAIN_IN, _CHORUS_GAIN_OUT = 0.9, 0.9
# (decay, speed Hz, depth ms, shape); the second voice sits 10 ms behind the first
_CHORUS_VOICE1 = (0.4, 0.25, 2.0, "triangle")
_CHORUS_VOICE2 = (0.3, 0.4, 2.0, "sine")
# Shelf midpoints sit two octaves past the named corners (100 Hz bass,
# 3 kHz treble) so the corner frequencies get the full shelf gain rather
# than the biquad's half-gain midpoint.
_BASS_MIDPOINT_HZ = 400.0
_TREBLE_MIDPOINT_HZ = 750.0

_SOX_KINDS = (
    PerturbationKind.ECHO,
    PerturbationKind.PHASER,
    PerturbationKind.TREMOLO,
    PerturbationKind.CHORUS,
    PerturbationKind.BASS,
    PerturbationKind.TREBLE,
)


def sox_effect(kind, params: Mapping[str, float], audio: AudioBuffer) -> AudioBuffer:
    """Reimplementation of the benchmark's six SoX effects.

    Matches SoX semantics and argument conventions, not SoX bit-for-bit;
    the spectral/envelope behavior is the contract.
    """
    kind = parse_kind(kind)
    if kind not in _SOX_KINDS:
        raise ValueError(f"{kind.value} is not a SoX-style effect")
    _warn_if_outside_registry(kind, params)
    x = audio.samples
    rate = audio.sample_rate
    if kind is PerturbationKind.ECHO:
        out = _echo(x, rate, params["delay_ms"])
    elif kind is PerturbationKind.PHASER:
        out = _phaser(x, rate, params["decay"])
    elif kind is PerturbationKind.TREMOLO:
        out = _tremolo(x, rate, params["depth"])
    elif kind is PerturbationKind.CHORUS:
        out = _chorus(x, rate, params["delay_ms"])
    elif kind is PerturbationKind.BASS:
        out = _shelf(x, rate, params["gain_db"], _BASS_MIDPOINT_HZ, low=True)
    else:
        out = _shelf(x, rate, params["gain_db"], _TREBLE_MIDPOINT_HZ, low=False)
    return AudioBuffer(out, rate)


def _warn_if_outside_registry(kind: PerturbationKind, params: Mapping[str, float]) -> None:
    row = DEFAULT_SEVERITY_TABLE[kind]
    value = params.get(row.param)
    if value is None:
        raise ValueError(f"{kind.value} needs parameter {row.param!r}")
    lo, hi = min(row.values), max(row.values)
    if not lo <= float(value) <= hi:
        warnings.warn(
            f"{kind.value} {row.param}={value} outside the default severity range "
            f"[{lo}, {hi}]; applying anyway",
            stacklevel=3,
        )


def _echo(x: np.ndarray, rate: int, delay_ms: float) -> np.ndarray:
    dry = _ECHO_GAIN_IN * x
    out = dry.copy()
    d = int(round(delay_ms * rate / 1000.0))
    if 0 < d < len(x):
        out[d:] += _ECHO_DECAY * dry[: len(x) - d]
    elif d == 0:
        out += _ECHO_DECAY * dry
    return _ECHO_GAIN_OUT * out


def _tremolo(x: np.ndarray, rate: int, depth_pct: float) -> np.ndarray:
    depth = depth_pct / 100.0
    t = np.arange(len(x)) / rate
    # raised cosine starts at zero so the clip opens at full amplitude
    lfo = 0.5 - 0.5 * np.cos(2.0 * np.pi * _TREMOLO_RATE_HZ * t)
    return x * (1.0 - depth * lfo)


def _phaser(x: np.ndarray, rate: int, decay: float) -> np.ndarray:
    max_delay = _PHASER_DELAY_MS * rate / 1000.0
    t = np.arange(len(x)) / rate
    phase = (t * _PHASER_SPEED_HZ) % 1.0
    tri = np.where(phase < 0.5, 2.0 * phase, 2.0 - 2.0 * phase)
    lag = 1 + np.minimum(len(x) - 1, (max_delay * tri).astype(np.int64))
    out = np.zeros_like(x)
    gx = _PHASER_GAIN_IN * x
    for n in range(len(x)):
        back = n - lag[n]
        fb = out[back] if back >= 0 else 0.0
        out[n] = gx[n] + decay * fb
    return _PHASER_GAIN_OUT * out


def _chorus_voice(
    x: np.ndarray, rate: int, delay_ms: float, decay: float, speed_hz: float,
    depth_ms: float, shape: str,
) -> np.ndarray:
    t = np.arange(len(x)) / rate
    if shape == "triangle":
        phase = (t * speed_hz) % 1.0
        osc = np.where(phase < 0.5, 2.0 * phase, 2.0 - 2.0 * phase)
    else:
        osc = 0.5 - 0.5 * np.cos(2.0 * np.pi * speed_hz * t)
    delay = (delay_ms + depth_ms * osc) * rate / 1000.0
    pos = np.arange(len(x)) - delay
    base = np.floor(pos).astype(np.int64)
    frac = pos - base
    valid = base >= 0
    lo = np.clip(base, 0, len(x) - 1)
    hi = np.clip(base + 1, 0, len(x) - 1)
    voice = np.where(valid, (1.0 - frac) * x[lo] + frac * x[hi], 0.0)
    return decay * voice


def _chorus(x: np.ndarray, rate: int, delay_ms: float) -> np.ndarray:
    out = _CHORUS_GAIN_IN * x.copy()
    out += _chorus_voice(x, rate, delay_ms, *_CHORUS_VOICE1)
    out += _chorus_voice(x, rate, delay_ms + 10.0, *_CHORUS_VOICE2)
    return _CHORUS_GAIN_OUT * out


def _shelf(x: np.ndarray, rate: int, gain_db: float, midpoint_hz: float, *, low: bool) -> np.ndarray:
    # RBJ audio-EQ-cookbook shelving biquad, shelf slope S = 1
    amp = 10.0 ** (gain_db / 40.0)
    w0 = 2.0 * np.pi * midpoint_hz / rate
    cosw, sinw = np.cos(w0), np.sin(w0)
    alpha = sinw / 2.0 * math.sqrt(2.0)
    two_rt = 2.0 * math.sqrt(amp) * alpha
    if low:
        b0 = amp * ((amp + 1) - (amp - 1) * cosw + two_rt)
        b1 = 2 * amp * ((amp - 1) - (amp + 1) * cosw)
        b2 = amp * ((amp + 1) - (amp - 1) * cosw - two_rt)
        a0 = (amp + 1) + (amp - 1) * cosw + two_rt
        a1 = -2 * ((amp - 1) + (amp + 1) * cosw)
        a2 = (amp + 1) + (amp - 1) * cosw - two_rt
    else:
        b0 = amp * ((amp + 1) + (amp - 1) * cosw + two_rt)
        b1 = -2 * amp * ((amp - 1) + (amp + 1) * cosw)
        b2 = amp * ((amp + 1) + (amp - 1) * cosw - two_rt)
        a0 = (amp + 1) - (amp - 1) * cosw + two_rt
        a1 = 2 * ((amp - 1) - (amp + 1) * cosw)
        a2 = (amp + 1) - (amp - 1) * cosw - two_rt
    b = np.array([b0, b1, b2]) / a0
    a = np.array([1.0, a1 / a0, a2 / a0])
    return lfilter(b, a, x)


# ---------------------------------------------------------------------------
# tempo / speed / pitch

_TEMPO_KINDS = (PerturbationKind.TEMPO_UP, PerturbationKind.TEMPO_DOWN)
_SPEED_KINDS = (PerturbationKind.SPEED_UP, PerturbationKind.SLOW_DOWN)
_PITCH_KINDS = (PerturbationKind.PITCH_UP, PerturbationKind.PITCH_DOWN)


def _speed_change(audio: AudioBuffer, speed: float) -> AudioBuffer:
    """Play speed times faster: duration and pitch both scale."""
    ratio = Fraction(speed).limit_denominator(512)
    out = resample_poly(audio.samples, ratio.denominator, ratio.numerator)
    return AudioBuffer(out, audio.sample_rate)


def tempo_speed_pitch(kind, params: Mapping[str, float], audio: AudioBuffer) -> AudioBuffer:
    """Tempo (duration only), speed (duration and pitch), pitch (pitch only).

    Tempo is a phase-vocoder stretch; speed is resample-and-relabel; pitch
    composes the two so duration is preserved while pitch scales by
    2^(+-octaves).
    """
    kind = parse_kind(kind)
    if kind in _TEMPO_KINDS:
        return time_stretch(audio, float(params["factor"]))
    if kind in _SPEED_KINDS:
        factor = float(params["factor"])
        if not 0.25 <= factor <= 4.0:
            raise ValueError(f"speed factor {factor} outside [0.25, 4]")
        return _speed_change(audio, factor)
    if kind in _PITCH_KINDS:
        octaves = float(params["octaves"])
        step = 2.0**octaves if kind is PerturbationKind.PITCH_UP else 2.0**-octaves
        if not 0.25 <= step <= 4.0:
            raise ValueError(f"pitch step {step} outside [0.25, 4]")
        shifted = _speed_change(audio, step)
        return time_stretch(shifted, len(shifted) / len(audio))
    raise ValueError(f"{kind.value} is not a tempo/speed/pitch kind")


# ---------------------------------------------------------------------------
# filters, resampling degradation, gain

_FIR_TAPS = 511


def filter_effect(kind, params: Mapping[str, float], audio: AudioBuffer) -> AudioBuffer:
    """Windowed-sinc low/high-pass, resampling degradation, or scalar gain."""
    kind = parse_kind(kind)
    x = audio.samples
    rate = audio.sample_rate
    if kind is PerturbationKind.GAIN:
        return AudioBuffer(x * float(params["factor"]), rate)
    if kind is PerturbationKind.RESAMPLE:
        factor = float(params["factor"])
        if factor <= 0:
            raise ValueError(f"resample factor must be positive, got {factor}")
        low_rate = int(round(rate * factor))
        if low_rate <= 0:
            raise ValueError(f"resample factor {factor} collapses the rate to zero")
        down_up = resample(resample(audio, low_rate), rate).samples
        if len(down_up) < len(x):
            down_up = np.pad(down_up, (0, len(x) - len(down_up)))
        return AudioBuffer(down_up[: len(x)], rate)
    if kind in (PerturbationKind.LOWPASS, PerturbationKind.HIGHPASS):
        cutoff = float(params["cutoff_hz"])
        if cutoff >= rate / 2:
            raise ValueError(f"cutoff {cutoff} Hz is at or above Nyquist ({rate / 2} Hz)")
        if cutoff <= 0:
            raise ValueError(f"cutoff must be positive, got {cutoff}")
        taps = firwin(
            _FIR_TAPS,
            cutoff,
            window="hann",
            pass_zero=(kind is PerturbationKind.LOWPASS),
            fs=rate,
        )
        return AudioBuffer(fftconvolve(x, taps, mode="same"), rate)
    raise ValueError(f"{kind.value} is not a filter/resample/gain kind")


# ---------------------------------------------------------------------------
# dispatch

_BANK_KINDS = (
    PerturbationKind.ENV_NOISE,
    PerturbationKind.MUSIC,
    PerturbationKind.CROSSTALK,
)
_RIR_KINDS = (PerturbationKind.RIR, PerturbationKind.REAL_RIR)
_FILTER_KINDS = (
    PerturbationKind.RESAMPLE,
    PerturbationKind.GAIN,
    PerturbationKind.LOWPASS,
    PerturbationKind.HIGHPASS,
)


def apply_perturbation(
    spec: PerturbationSpec,
    audio: AudioBuffer,
    noise_bank: Optional[NoiseBank] = None,
    rir_bank: Optional[Sequence[ImpulseResponse]] = None,
) -> AudioBuffer:
    """Apply one severity cell to one utterance, deterministically."""
    if len(audio) == 0:
        raise ValueError("empty audio")
    kind = spec.kind
    if kind is PerturbationKind.GAUSSIAN_NOISE:
        return gaussian_noise(audio, float(spec.params["snr_db"]), spec.seed)
    if kind in _BANK_KINDS:
        if noise_bank is None:
            raise ValidationError(f"{kind.value} requires a noise bank")
        return env_noise_mix(audio, noise_bank, float(spec.params["snr_db"]), spec.seed)
    if kind in _RIR_KINDS:
        if rir_bank is None:
            raise ValidationError(f"{kind.value} requires an RIR bank")
        pool = [ir for ir, sev in assign_rir_severity(rir_bank) if sev == spec.severity]
        if not pool:
            raise ValidationError(
                f"RIR bank has no responses labeled severity {spec.severity}"
            )
        rng = np.random.default_rng(spec.seed)
        return convolve(audio, pool[int(rng.integers(len(pool)))])
    if kind in _SOX_KINDS:
        return sox_effect(kind, spec.params, audio)
    if kind in _TEMPO_KINDS + _SPEED_KINDS + _PITCH_KINDS:
        return tempo_speed_pitch(kind, spec.params, audio)
    if kind in _FILTER_KINDS:
        return filter_effect(kind, spec.params, audio)
    raise ValueError(f"no procedure for kind {kind!r}")
