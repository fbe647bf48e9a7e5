"""Reference adapter processes speaking the line-JSON transcription protocol.

An adapter reads {"id", "audio"} objects from stdin, one per line, and
writes {"id", "text"} objects to stdout, flushing each line.  stderr is
free for logging.  Run them as ``python -m srb.adapters.echo`` etc.
"""
from __future__ import annotations

import json
import sys
from typing import Callable, TextIO


def serve(
    transcribe_path: Callable[[str], str],
    stdin: TextIO = sys.stdin,
    stdout: TextIO = sys.stdout,
    log_path: str = None,
) -> None:
    """Answer requests until stdin closes.

    log_path (or the SRB_ADAPTER_LOG environment variable via the entry
    points) appends each raw request line to a file, which lets tests
    count how many requests actually reached the adapter.
    """
    log = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for line in stdin:
            line = line.strip()
            if not line:
                continue
            if log:
                log.write(line + "\n")
                log.flush()
            request = json.loads(line)
            text = transcribe_path(request["audio"])
            stdout.write(json.dumps({"id": request["id"], "text": text}) + "\n")
            stdout.flush()
    finally:
        if log:
            log.close()
