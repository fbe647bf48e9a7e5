"""Audio containers, WAV I/O, SNR arithmetic, and shared DSP kernels.

Everything downstream works on mono float64 buffers at an explicit sample
rate.  No operation clips; saturation happens only when exporting PCM16.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.io import wavfile
from scipy.signal import fftconvolve, get_window, resample_poly

from .errors import AudioFormatError, SnrUndefinedError

PCM16_SCALE = 32768.0


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """A mono audio signal.

    Args:
        samples: amplitude sequence, nominally in [-1, 1] (values outside
            the range are legal and survive until PCM export).
        sample_rate: sampling frequency in Hz, positive integer.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"expected mono samples, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf")
        rate = self.sample_rate
        if not float(rate).is_integer() or rate <= 0:
            raise ValueError(f"sample rate must be a positive integer, got {rate!r}")
        samples = samples.copy()
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(rate))

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True, eq=False)
class NoiseClip(AudioBuffer):
    """An additive-noise source tagged with where the clip came from."""

    source_tag: str = ""


@dataclass(frozen=True)
class RoomMeta:
    """Geometry for Sabine's reverberation formula."""

    volume_m3: float
    surface_m2: float
    absorption: float

    def __post_init__(self):
        if self.volume_m3 <= 0 or self.surface_m2 <= 0:
            raise ValueError("room volume and surface must be positive")
        if not 0.0 < self.absorption <= 1.0:
            raise ValueError(f"absorption coefficient must be in (0, 1], got {self.absorption}")


@dataclass(frozen=True, eq=False)
class ImpulseResponse(AudioBuffer):
    """A room impulse response with optional reverberation annotations.

    Severity assignment needs at least one of rt60_seconds, srmr, or
    room_meta to be populated; construction does not enforce that.
    """

    rt60_seconds: Optional[float] = None
    srmr: Optional[float] = None
    room_meta: Optional[RoomMeta] = None


def read_wav(path) -> AudioBuffer:
    """Read a PCM16 or IEEE float32 WAV file as a mono AudioBuffer.

    Multichannel input is downmixed by channel averaging; PCM16 samples
    are scaled by 1/32768 so full-scale positive maps to 32767/32768.
    """
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise AudioFormatError(f"cannot read {path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioFormatError(
            f"{path}: unsupported sample format {data.dtype}, expected PCM16 or float32"
        )
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioBuffer(samples, int(rate))


def write_wav(path, buffer: AudioBuffer, *, float32: bool = False) -> None:
    """Write a buffer as PCM16 (default) or IEEE float32.

    PCM export saturates values outside [-1, 1]; float32 export preserves
    them.
    """
    wavfile.write(path, buffer.sample_rate, wav_payload(buffer, float32=float32))


def wav_payload(buffer: AudioBuffer, *, float32: bool = False) -> np.ndarray:
    """The sample array write_wav would put in the file."""
    if float32:
        return buffer.samples.astype(np.float32)
    clipped = np.clip(buffer.samples, -1.0, 1.0)
    return np.round(clipped * (PCM16_SCALE - 1)).astype(np.int16)


def wav_file_bytes(buffer: AudioBuffer, *, float32: bool = False) -> bytes:
    """The complete WAV file write_wav would produce, as bytes."""
    bio = io.BytesIO()
    wavfile.write(bio, buffer.sample_rate, wav_payload(buffer, float32=float32))
    return bio.getvalue()


def measure_snr(signal: AudioBuffer, noise: AudioBuffer) -> float:
    """Signal-to-noise ratio 20*log10(||signal||2 / ||noise||2) in dB.

    A silent signal measures -inf; silent noise makes the ratio undefined
    and raises.
    """
    if len(signal) != len(noise):
        raise ValueError(f"length mismatch: signal {len(signal)} vs noise {len(noise)}")
    sig_norm = float(np.linalg.norm(signal.samples))
    noise_norm = float(np.linalg.norm(noise.samples))
    if noise_norm == 0.0:
        raise SnrUndefinedError("noise has zero energy, SNR undefined")
    if sig_norm == 0.0:
        return float("-inf")
    return 20.0 * math.log10(sig_norm / noise_norm)


def noise_component_of(mixture: AudioBuffer, signal: AudioBuffer) -> NoiseClip:
    """The additive residual mixture - signal, as a NoiseClip."""
    if len(mixture) != len(signal):
        raise ValueError("mixture and signal lengths differ")
    return NoiseClip(mixture.samples - signal.samples, signal.sample_rate, "residual")


def add_noise_at_snr(signal: AudioBuffer, noise: AudioBuffer, target_snr: float) -> AudioBuffer:
    """Mix noise into signal scaled so the measured SNR equals target_snr.

    The noise must already match the signal's length (see env_noise_mix
    for fitting).  No clipping is applied: the mixture may exceed [-1, 1]
    and only saturates at PCM export.
    """
    if signal.sample_rate != noise.sample_rate:
        raise ValueError(
            f"sample rate mismatch: {signal.sample_rate} vs {noise.sample_rate}"
        )
    if len(signal) != len(noise):
        raise ValueError(f"length mismatch: signal {len(signal)} vs noise {len(noise)}")
    sig_norm = float(np.linalg.norm(signal.samples))
    noise_norm = float(np.linalg.norm(noise.samples))
    if sig_norm == 0.0:
        raise SnrUndefinedError("signal has zero energy, cannot scale noise to a finite SNR")
    if noise_norm == 0.0:
        raise SnrUndefinedError("noise has zero energy, SNR undefined")
    scale = sig_norm / (noise_norm * 10.0 ** (target_snr / 20.0))
    return AudioBuffer(signal.samples + scale * noise.samples, signal.sample_rate)


def convolve(signal: AudioBuffer, ir: ImpulseResponse) -> AudioBuffer:
    """Full linear convolution truncated to len(signal), peak-renormalized.

    The output peak is rescaled to the input peak so IR gain cannot
    confound downstream SNR measurements.
    """
    if signal.sample_rate != ir.sample_rate:
        raise ValueError(
            f"sample rate mismatch: signal {signal.sample_rate} vs ir {ir.sample_rate}"
        )
    if len(ir) == 0:
        raise ValueError("empty impulse response")
    if len(signal) == 0:
        raise ValueError("empty signal")
    wet = fftconvolve(signal.samples, ir.samples)[: len(signal)]
    peak_in = float(np.max(np.abs(signal.samples)))
    peak_out = float(np.max(np.abs(wet)))
    if peak_in > 0.0 and peak_out > 0.0:
        wet = wet * (peak_in / peak_out)
    return AudioBuffer(wet, signal.sample_rate)


def resample(signal: AudioBuffer, new_rate: int) -> AudioBuffer:
    """Band-limited rate conversion via windowed-sinc polyphase filtering.

    Same-rate input is returned unchanged (bit-for-bit); otherwise the
    duration is preserved within one sample period.
    """
    new_rate = int(new_rate)
    if new_rate <= 0:
        raise ValueError(f"target rate must be positive, got {new_rate}")
    if new_rate == signal.sample_rate:
        return signal
    g = math.gcd(new_rate, signal.sample_rate)
    out = resample_poly(signal.samples, new_rate // g, signal.sample_rate // g)
    return AudioBuffer(out, new_rate)


_STRETCH_FFT = 1024
_STRETCH_HOP = 256


def time_stretch(signal: AudioBuffer, factor: float) -> AudioBuffer:
    """Change duration by 1/factor while preserving pitch (phase vocoder).

    factor 2 halves the duration, factor 0.5 doubles it; allowed range is
    [0.25, 4].
    """
    if not 0.25 <= factor <= 4.0:
        raise ValueError(f"stretch factor {factor} outside [0.25, 4]")
    if factor == 1.0:
        return signal
    target_len = max(1, int(round(len(signal) / factor)))
    return AudioBuffer(
        _phase_vocoder(signal.samples, factor, target_len), signal.sample_rate
    )


def _stft(x: np.ndarray, n_fft: int, hop: int, window: np.ndarray) -> np.ndarray:
    pad = n_fft // 2
    mode = "reflect" if len(x) > pad else "constant"
    xp = np.pad(x, (pad, pad), mode=mode)
    n_frames = 1 + (len(xp) - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.fft.rfft(xp[idx] * window, axis=1).T


def _istft(spec: np.ndarray, n_fft: int, hop: int, window: np.ndarray, length: int) -> np.ndarray:
    frames = np.fft.irfft(spec, n=n_fft, axis=0).T * window
    n_frames = frames.shape[0]
    total = n_fft + hop * (n_frames - 1)
    out = np.zeros(total)
    wsum = np.zeros(total)
    for t in range(n_frames):
        start = t * hop
        out[start : start + n_fft] += frames[t]
        wsum[start : start + n_fft] += window**2
    out /= np.where(wsum > 1e-10, wsum, 1.0)
    pad = n_fft // 2
    out = out[pad : pad + length]
    if len(out) < length:
        out = np.pad(out, (0, length - len(out)))
    return out


def _phase_vocoder(x: np.ndarray, rate: float, target_len: int) -> np.ndarray:
    n_fft, hop = _STRETCH_FFT, _STRETCH_HOP
    window = get_window("hann", n_fft, fftbins=True)
    spec = _stft(x, n_fft, hop, window)
    n_bins, n_frames = spec.shape
    spec = np.concatenate([spec, np.zeros((n_bins, 1), dtype=spec.dtype)], axis=1)
    steps = np.arange(0.0, n_frames, rate)
    # expected per-hop phase advance of each bin's center frequency
    omega = 2.0 * np.pi * np.arange(n_bins) * hop / n_fft
    out = np.empty((n_bins, len(steps)), dtype=complex)
    phase = np.angle(spec[:, 0])
    for j, step in enumerate(steps):
        i = int(step)
        frac = step - i
        left, right = spec[:, i], spec[:, i + 1]
        mag = (1.0 - frac) * np.abs(left) + frac * np.abs(right)
        out[:, j] = mag * np.exp(1j * phase)
        dphi = np.angle(right) - np.angle(left) - omega
        dphi -= 2.0 * np.pi * np.round(dphi / (2.0 * np.pi))
        phase += omega + dphi
    return _istft(out, n_fft, hop, window, target_len)


def dominant_frequency(buffer: AudioBuffer) -> float:
    """Frequency of the strongest spectral peak, in Hz.

    Hann-windowed zero-padded FFT with parabolic peak interpolation;
    intended for verifying tone-based contracts, not general pitch
    tracking.
    """
    x = buffer.samples
    if len(x) < 16:
        raise ValueError("buffer too short for a frequency estimate")
    trim = len(x) // 10
    if len(x) - 2 * trim >= 64:
        x = x[trim : len(x) - trim]
    window = get_window("hann", len(x), fftbins=True)
    n = 1 << (len(x) * 8 - 1).bit_length()
    mag = np.abs(np.fft.rfft(x * window, n=n))
    k = int(np.argmax(mag))
    if 0 < k < len(mag) - 1:
        a, b, c = mag[k - 1], mag[k], mag[k + 1]
        denom = a - 2 * b + c
        if denom != 0.0:
            k = k + 0.5 * (a - c) / denom
    return float(k * buffer.sample_rate / n)
