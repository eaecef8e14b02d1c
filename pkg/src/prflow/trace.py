"""JSONL iteration traces.

One file per run: a header line holding the full config and instance
metadata, then one record per accepted iteration.  Reruns with the same
config and instance produce byte-identical files except for the wall_time
field, which is the only nondeterministic entry; comparisons should null it
out first (see read_trace).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import IO, Iterator


@dataclass(frozen=True)
class TraceRecord:
    """Per-iteration measurements, one line of the trace body."""

    iteration: int
    mode: str                  # "warmup" | "weighted"
    F: float
    gap: float
    delta: float
    potential: float           # m log1p(gap/m) + barrier value
    rho_inf: float             # max congestion of the accepted step
    w_norm1: float
    w_inc_norm1: float         # ||w''||_1 of this iteration (0 in warm-up)
    coupling_inf: float        # residual of the coupling condition, inf-norm
    fhat_inf: float            # largest per-edge magnitude of the accepted step
    inner_iters: int
    u_hat_precond_min: float   # smallest residual capacity on a preconditioner edge
    wall_time: float           # seconds since run start; excluded from comparisons

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class TraceWriter:
    """Streams a header line and then TraceRecords to a JSONL file."""

    def __init__(self, path: str, header: dict):
        self._fh: IO[str] | None = open(path, "w", encoding="utf-8")
        self._fh.write(json.dumps(header, sort_keys=True) + "\n")

    def record(self, rec: TraceRecord) -> None:
        assert self._fh is not None
        self._fh.write(rec.to_json() + "\n")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_trace(path: str) -> tuple[dict, list[dict]]:
    """Header dict and the list of record dicts."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    header = json.loads(lines[0])
    return header, [json.loads(line) for line in lines[1:]]


def comparable_lines(path: str) -> Iterator[str]:
    """Trace lines with wall_time nulled, for byte-level determinism checks."""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if "wall_time" in obj:
                obj["wall_time"] = None
            yield json.dumps(obj, sort_keys=True)
