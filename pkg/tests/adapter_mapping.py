"""Test adapter that answers each request id from a JSON mapping file.

Speaks the line-JSON pipe protocol with nothing but the stdlib, so the
harness tests do not depend on the package being importable inside the
adapter subprocess.
"""
import argparse
import json
import os
import sys


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--map", required=True, help="JSON file of id -> transcript")
    parser.add_argument("--default", default="", help="transcript for unmapped ids")
    args = parser.parse_args()
    with open(args.map, encoding="utf-8") as fh:
        table = json.load(fh)
    log_path = os.environ.get("SRB_ADAPTER_LOG")
    log = open(log_path, "a", encoding="utf-8") if log_path else None
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        if log:
            log.write(line + "\n")
            log.flush()
        request = json.loads(line)
        text = table.get(request["id"], args.default)
        sys.stdout.write(json.dumps({"id": request["id"], "text": text}) + "\n")
        sys.stdout.flush()
    if log:
        log.close()


if __name__ == "__main__":
    main()
