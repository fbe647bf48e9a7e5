"""Signal builders, corpus builders, and oracle wrappers shared across
test modules."""

import json
import sys
from pathlib import Path

import numpy as np

from srb.audio import AudioBuffer, write_wav


class BallSpyOracle:
    """Delegates to an oracle while recording how far each query strays
    from the nearest registered clean signal of the same length."""

    def __init__(self, oracle, norm="l2"):
        self.oracle = oracle
        self.norm = norm
        self.clean = {}
        self.max_excursion = 0.0
        self.queries = 0

    def register(self, samples):
        samples = np.asarray(getattr(samples, "samples", samples), dtype=np.float64)
        self.clean.setdefault(len(samples), []).append(samples)

    def _note(self, audio):
        q = np.asarray(getattr(audio, "samples", audio), dtype=np.float64)
        candidates = self.clean.get(len(q), [])
        if candidates:
            if self.norm == "l2":
                dist = min(float(np.linalg.norm(q - c)) for c in candidates)
            else:
                dist = min(float(np.max(np.abs(q - c))) for c in candidates)
            self.max_excursion = max(self.max_excursion, dist)
            self.queries += 1
        return audio

    def transcribe(self, audio):
        return self.oracle.transcribe(self._note(audio))

    def loss(self, audio, reference):
        return self.oracle.loss(self._note(audio), reference)

    def grad_input(self, audio, reference):
        return self.oracle.grad_input(self._note(audio), reference)


def tone(freq_hz, duration_s=0.5, sample_rate=16000, amplitude=0.3):
    t = np.arange(int(round(duration_s * sample_rate))) / sample_rate
    return AudioBuffer(amplitude * np.sin(2.0 * np.pi * freq_hz * t), sample_rate)


def speechlike(rng, duration_s=0.5, sample_rate=16000):
    """A harmonic stack plus weak noise, loosely shaped like voiced speech."""
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    x = np.zeros(n)
    for freq, amp in ((220.0, 0.4), (440.0, 0.25), (880.0, 0.15), (1760.0, 0.08)):
        x += amp * np.sin(2.0 * np.pi * freq * t + rng.uniform(0.0, 2.0 * np.pi))
    x += 0.05 * rng.standard_normal(n)
    return AudioBuffer(0.3 * x / np.max(np.abs(x)), sample_rate)


def write_manifest(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


def tone_corpus(root, n=3, sample_rate=16000):
    """n short tone WAVs under root plus manifest rows referencing them."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(n):
        buf = tone(300 + 100 * i, duration_s=0.2, sample_rate=sample_rate)
        write_wav(root / f"u{i}.wav", buf)
        rows.append(
            {
                "id": f"u{i}",
                "audio_path": f"u{i}.wav",
                "text": "a b c",
                "gender": "m" if i % 2 == 0 else "f",
            }
        )
    return rows


def echo_command(text):
    return [sys.executable, "-m", "srb.adapters.echo", "--text", text]
