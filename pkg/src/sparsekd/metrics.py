"""Line-delimited JSON metrics records written during training runs.

Records are serialized deterministically (sorted keys, shortest-repr
floats), so a re-run with identical seeds reproduces the log byte for
byte.  Wallclock timing is therefore optional and off by default; when a
record carries no ``wallclock_ms`` the key is omitted entirely.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

PHASES = ("pretrain", "finetune", "distill", "eval")


@dataclass
class MetricsRecord:
    step: int
    phase: str
    target_sparsity: float | None = None
    actual_sparsity: float | None = None
    loss_total: float | None = None
    loss_emb: float | None = None
    loss_att: float | None = None
    loss_hid: float | None = None
    loss_prd: float | None = None
    task_loss: float | None = None
    dev_accuracy: float | None = None
    wallclock_ms: float | None = None

    def to_json_line(self) -> str:
        d = asdict(self)
        if d.get("wallclock_ms") is None:
            d.pop("wallclock_ms", None)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))


def parse_metrics_line(line: str) -> MetricsRecord:
    return MetricsRecord(**json.loads(line))


def write_metrics(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json_line() + "\n")


def read_metrics(path) -> list[MetricsRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(parse_metrics_line(line))
    return out
