"""Run ledger: per-stage records of input/output content hashes for resume.

Hashes are 64-bit FNV-1a over file bytes.  Collisions are possible in
principle; for deciding whether a stage must rerun that risk is accepted.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .stats import FNV_OFFSET, fnv1a64


@numba.njit(cache=True)
def _fnv_kernel(data, h):
    prime = np.uint64(0x100000001B3)
    for b in data:
        h = (h ^ np.uint64(b)) * prime
    return h


def hash_bytes(data: bytes) -> int:
    if len(data) < 256:
        return fnv1a64(data)
    return int(_fnv_kernel(np.frombuffer(data, dtype=np.uint8), np.uint64(FNV_OFFSET)))


def hash_file(path) -> str:
    with open(path, "rb") as fh:
        return f"{hash_bytes(fh.read()):016x}"


def hash_text(text: str) -> str:
    return f"{hash_bytes(text.encode('utf-8')):016x}"


@dataclass
class StageRecord:
    config: str
    inputs: dict[str, str]
    outputs: dict[str, str]
    seconds: float = 0.0


@dataclass
class RunLedger:
    root: Path
    stages: dict[str, StageRecord] = field(default_factory=dict)

    @property
    def path(self) -> Path:
        return self.root / "ledger.json"

    @classmethod
    def load(cls, root) -> "RunLedger":
        root = Path(root)
        ledger = cls(root)
        if ledger.path.exists():
            raw = json.loads(ledger.path.read_text(encoding="utf-8"))
            ledger.stages = {k: StageRecord(**v) for k, v in raw.get("stages", {}).items()}
        return ledger

    def save(self) -> None:
        payload = {"hash": "fnv1a64", "stages": {k: vars(v) for k, v in self.stages.items()}}
        self.path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    def _current(self, rel_paths) -> dict[str, str] | None:
        out = {}
        for rel in rel_paths:
            p = self.root / rel
            if not p.is_file():
                return None
            out[rel] = hash_file(p)
        return out

    def is_current(self, stage: str, config_hash: str, inputs: dict[str, str]) -> bool:
        rec = self.stages.get(stage)
        if rec is None or rec.config != config_hash or rec.inputs != inputs:
            return False
        return self._current(rec.outputs) == rec.outputs

    def record(self, stage: str, config_hash: str, inputs: dict[str, str], outputs, started: float) -> StageRecord:
        current = self._current(sorted(outputs))
        if current is None:
            raise RuntimeError(f"stage {stage} did not produce all of its outputs")
        rec = StageRecord(config_hash, inputs, current, round(time.perf_counter() - started, 3))
        self.stages[stage] = rec
        self.save()
        return rec

    def invalidate_from(self, stages) -> None:
        for s in stages:
            self.stages.pop(s, None)
        self.save()
