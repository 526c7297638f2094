"""Metrics records, trailing windows, evaluation reports and replica
aggregation.

The metrics stream is line-delimited JSON.  Records carry no wallclock so
that single-worker runs with identical seeds produce byte-identical
streams.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field


def _round(x, nd=6):
    if isinstance(x, float):
        if math.isnan(x) or math.isinf(x):
            return x
        return round(x, nd)
    return x


def format_record(record: dict) -> str:
    clean = {k: _round(v) for k, v in record.items()}
    return json.dumps(clean, sort_keys=True, separators=(",", ":"))


def parse_records(path):
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


class TrailingWindow:
    """Trailing mean over the last ``window`` episodes."""

    def __init__(self, window: int = 1000):
        self.window = window
        self.values = deque(maxlen=window)

    def add(self, v: float):
        self.values.append(float(v))

    def reset(self):
        self.values.clear()

    @property
    def full(self) -> bool:
        return len(self.values) >= self.window

    @property
    def count(self) -> int:
        return len(self.values)

    def mean(self) -> float:
        if not self.values:
            return 0.0
        return sum(self.values) / len(self.values)


@dataclass
class EvalReport:
    split: str
    episodes: int
    successes: int
    mean_reward: float
    step: int = 0
    global_episode: int = 0

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes if self.episodes else 0.0

    @property
    def stderr_band(self) -> float:
        """+-1 standard deviation of the mean success rate."""
        if self.episodes == 0:
            return 0.0
        p = self.success_rate
        return math.sqrt(max(p * (1.0 - p), 0.0) / self.episodes)

    def record(self) -> dict:
        return {
            "type": "eval", "split": self.split, "step": self.step,
            "episode": self.global_episode, "episodes": self.episodes,
            "success_rate": self.success_rate, "band": self.stderr_band,
            "mean_reward": self.mean_reward,
        }


def aggregate_replicas(values, best_k: int | None = None):
    """Mean and +-1 standard deviation of the mean across replicas, with the
    optional best-k-of-n reporting rule."""
    vals = sorted(float(v) for v in values)
    if best_k is not None and best_k < len(vals):
        vals = vals[-best_k:]
    n = len(vals)
    if n == 0:
        return 0.0, 0.0
    mean = sum(vals) / n
    if n == 1:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in vals) / (n - 1)
    return mean, math.sqrt(var / n)


class MetricsWriter:
    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w") if path is not None else None

    def write(self, record: dict):
        if self._fh is not None:
            self._fh.write(format_record(record) + "\n")

    def flush(self):
        if self._fh is not None:
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None
