"""Append-only metrics log: one JSON record per line.

Each line is independently parseable, so a log truncated at any line
boundary is still a valid prefix; readers can tail or grep it while a
run is writing.  Record kinds are "step", "epoch", and "eval".
"""

import json
import time
from dataclasses import dataclass


@dataclass
class MetricsRecord:
    ts: float
    run: str
    kind: str
    payload: dict


class MetricsLogger:
    """Writes records to a line-delimited UTF-8 log, flushing per line."""

    def __init__(self, path, run_id: str):
        self.path = str(path)
        self.run_id = run_id
        self._fh = open(self.path, "a", encoding="utf-8")

    def log(self, kind: str, payload: dict):
        rec = {"ts": time.time(), "run": self.run_id, "kind": kind, "payload": payload}
        self._fh.write(json.dumps(rec, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def iter_records(path):
    """Parse a metrics log; yields MetricsRecord per line."""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            yield MetricsRecord(ts=raw["ts"], run=raw["run"],
                                kind=raw["kind"], payload=raw["payload"])
