"""Adapter that answers every request with a fixed transcript.

Useful for exercising the harness without a real recognizer; the output
is trivially deterministic.
"""
from __future__ import annotations

import argparse
import os

from . import serve


def main() -> None:
    parser = argparse.ArgumentParser(prog="srb-echo-adapter")
    parser.add_argument("--text", default="test", help="transcript for every utterance")
    args = parser.parse_args()
    serve(lambda _path: args.text, log_path=os.environ.get("SRB_ADAPTER_LOG"))


if __name__ == "__main__":
    main()
