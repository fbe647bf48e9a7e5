"""Adapter that serves a trained toy recognizer checkpoint."""
from __future__ import annotations

import argparse
import os

from ..audio import read_wav, resample
from ..toyasr import forward, greedy_decode, load_model
from . import serve


def main() -> None:
    parser = argparse.ArgumentParser(prog="srb-toy-adapter")
    parser.add_argument("--checkpoint", required=True)
    args = parser.parse_args()
    model = load_model(args.checkpoint)

    def run(path: str) -> str:
        audio = read_wav(path)
        if audio.sample_rate != model.sample_rate:
            audio = resample(audio, model.sample_rate)
        return greedy_decode(forward(model, audio), model.alphabet)

    serve(run, log_path=os.environ.get("SRB_ADAPTER_LOG"))


if __name__ == "__main__":
    main()
