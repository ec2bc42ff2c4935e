"""Per-episode metric series, evaluation summaries and curve smoothing."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

CSV_COLUMNS = ("episode", "true_reward", "length", "fallback_count", "prompt_tokens_estimate")


def smooth(series, window: int) -> list[float]:
    """Trailing moving average; entry i averages the last min(i + 1, window) values."""
    if window < 1:
        raise ValueError("window must be >= 1")
    out = []
    acc = 0.0
    values = [float(v) for v in series]
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        out.append(acc / min(i + 1, window))
    return out


def _fmt(x: float) -> str:
    x = float(x)
    if x.is_integer():
        return str(int(x))
    return repr(x)


@dataclass
class MetricSeries:
    rows: list[tuple[int, float, int, int, int]] = field(default_factory=list)

    def add(self, true_reward: float, length: int, fallback_count: int = 0,
            prompt_tokens_estimate: int = 0) -> None:
        self.rows.append((len(self.rows) + 1, float(true_reward), int(length),
                          int(fallback_count), int(prompt_tokens_estimate)))

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def rewards(self) -> list[float]:
        return [r[1] for r in self.rows]

    @property
    def lengths(self) -> list[int]:
        return [r[2] for r in self.rows]

    @property
    def fallbacks(self) -> int:
        return sum(r[3] for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for ep, rew, length, fb, tok in self.rows:
            w.writerow([ep, _fmt(rew), length, fb, tok])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "MetricSeries":
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        series = cls()
        for i, row in enumerate(reader, 1):
            if int(row["episode"]) != i:
                raise ValueError("episodes must be consecutive from 1")
            series.add(float(row["true_reward"]), int(row["length"]), int(row["fallback_count"]),
                       int(row["prompt_tokens_estimate"]))
        return series

    @classmethod
    def read_csv(cls, path) -> "MetricSeries":
        with open(path, encoding="utf-8") as fh:
            return cls.from_csv(fh.read())


@dataclass(frozen=True)
class EvalReport:
    mean_reward: float
    std_reward: float
    mean_length: float
    std_length: float
    episodes: int

    @classmethod
    def from_episodes(cls, rewards, lengths) -> "EvalReport":
        rewards = [float(r) for r in rewards]
        lengths = [float(n) for n in lengths]
        if not rewards or len(rewards) != len(lengths):
            raise ValueError("need matching, non-empty reward and length lists")
        return cls(_mean(rewards), _std(rewards), _mean(lengths), _std(lengths), len(rewards))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def row(self) -> str:
        return (f"{self.mean_reward:.2f} ({self.std_reward:.2f})  "
                f"len {self.mean_length:.2f} ({self.std_length:.2f})  n={self.episodes}")


def _mean(xs) -> float:
    return math.fsum(xs) / len(xs)


def _std(xs) -> float:
    # population standard deviation
    m = _mean(xs)
    return math.sqrt(math.fsum((x - m) ** 2 for x in xs) / len(xs))
