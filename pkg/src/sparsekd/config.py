"""Strict YAML run-configuration files.

A run config has up to six sections: ``encoder``, ``task``, ``mlm_task``,
``train``, ``sparsity``, ``distill``, plus an optional ``bench`` section for
the throughput benchmark.  Parsing is total: unknown keys are rejected with
their dotted field path, as are missing required sections and out-of-range
values (range checks live in the dataclasses themselves).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import yaml

from .distill import AugmentPolicy, DistillConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .pipelines import TrainConfig
from .pruning import SparsitySchedule
from .tasks import SyntheticTask

_SECTIONS = ("encoder", "task", "mlm_task", "train", "sparsity", "distill", "bench")


@dataclass
class BenchConfig:
    batch_size: int = 8
    seq_len: int = 16
    ratios: tuple[float, ...] = (1, 2, 4, 8, 16, 20)
    repeats: int = 5
    warmup: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.seq_len < 1:
            raise ConfigError("bench batch_size and seq_len must be >= 1")
        if self.repeats < 1:
            raise ConfigError("bench repeats must be >= 1")
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))


@dataclass
class RunConfig:
    encoder: EncoderConfig
    task: SyntheticTask | None = None
    mlm_task: SyntheticTask | None = None
    train: TrainConfig | None = None
    bench: BenchConfig | None = None


def _require_mapping(value, path):
    if not isinstance(value, dict):
        raise ConfigError(f"expected a mapping, got {type(value).__name__}", path=path)
    return value


def _build(cls, data: dict, path: str, transforms: dict | None = None):
    data = _require_mapping(data, path)
    fields = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError("unknown field", path=f"{path}.{key}")
        if transforms and key in transforms:
            value = transforms[key](value, f"{path}.{key}")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        if exc.path is None:
            raise ConfigError(str(exc), path=path) from exc
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path=path) from exc


def _parse_layer_map(value, path):
    if value is None or value == "identity":
        return None
    if not isinstance(value, list):
        raise ConfigError("expected 'identity' or a list of [student, teacher] pairs",
                          path=path)
    pairs = []
    for i, pair in enumerate(value):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ConfigError("each entry must be a [student, teacher] pair",
                              path=f"{path}[{i}]")
        pairs.append((int(pair[0]), int(pair[1])))
    return tuple(pairs)


def _parse_augment(value, path):
    if value is None:
        return None
    return _build(AugmentPolicy, value, path)


def _parse_active_terms(value, path):
    if not isinstance(value, (list, tuple)):
        raise ConfigError("expected a list of term names", path=path)
    return tuple(value)


def parse_distill(data, path="distill") -> DistillConfig:
    return _build(DistillConfig, data, path, transforms={
        "layer_map": _parse_layer_map,
        "augment": _parse_augment,
        "active_terms": _parse_active_terms,
    })


def parse_run_config(data: dict) -> RunConfig:
    """Assemble a RunConfig from a parsed YAML mapping."""
    data = _require_mapping(data, "<root>")
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError("unknown section", path=sorted(unknown)[0])
    if "encoder" not in data:
        raise ConfigError("missing required section", path="encoder")
    encoder = _build(EncoderConfig, data["encoder"], "encoder")
    task = _build(SyntheticTask, data["task"], "task") if "task" in data else None
    mlm = _build(SyntheticTask, data["mlm_task"], "mlm_task") if "mlm_task" in data else None
    sparsity = (
        _build(SparsitySchedule, data["sparsity"], "sparsity")
        if "sparsity" in data else None
    )
    distill = parse_distill(data["distill"]) if "distill" in data else None
    train = None
    if "train" in data:
        tdata = _require_mapping(data["train"], "train")
        for reserved in ("sparsity", "distill"):
            if reserved in tdata:
                raise ConfigError(
                    "configure this in its own top-level section",
                    path=f"train.{reserved}",
                )
        train = _build(TrainConfig, dict(tdata, sparsity=sparsity, distill=distill), "train")
    bench = _build(BenchConfig, data["bench"], "bench") if "bench" in data else None
    return RunConfig(encoder=encoder, task=task, mlm_task=mlm, train=train, bench=bench)


def load_run_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from exc
    if data is None:
        raise ConfigError("empty config file")
    return parse_run_config(data)
