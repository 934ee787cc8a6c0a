"""Run configuration: one JSON document mirroring TrainerConfig.

Layout (every key optional; missing keys take the defaults shown by
``default_config_dict()``; unknown keys are rejected)::

    {
      "total_epochs": 200, "batch_size": 4, "samples_per_domain": 256,
      "seed": 0, "checkpoint_every": 10, "output_dir": "runs/cyclet",
      "data_root": null,
      "adam": {"beta1": 0.5, "beta2": 0.999, "eps": 1e-08},
      "schedule": {"total_epochs": ..., "lambda_start": 10.0, "lambda_end": 1.0,
                   "gamma_start": 0.0, "gamma_end": 0.9, "lr_base": 0.0002,
                   "lr_constant_epochs": null, "lambda_ramp_start": 0,
                   "lambda_ramp_end": null, "gamma_ramp_start": 0,
                   "gamma_ramp_end": null},
      "loss": {"gan_form": "least_squares", "quality_mode": "generated"}
    }

``null`` schedule entries resolve from total_epochs (half-way constant lr,
full-span ramps).  ``schedule.total_epochs``, if given, must equal the
top-level value.
"""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .losses import LossConfig
from .schedules import ScheduleConfig
from .trainer import AdamConfig, TrainerConfig


class ConfigError(ValueError):
    pass


_TOP = {f.name for f in dataclasses.fields(TrainerConfig)}
_ADAM = {f.name for f in dataclasses.fields(AdamConfig)}
_SCHEDULE = {f.name for f in dataclasses.fields(ScheduleConfig)}
_LOSS = {"gan_form", "quality_mode"}

_INT_FIELDS = {"total_epochs", "batch_size", "samples_per_domain", "seed", "checkpoint_every"}


def _check_keys(section: str, given: dict, allowed: set[str]) -> None:
    if not isinstance(given, dict):
        raise ConfigError(f"{section or 'config'} must be a JSON object")
    unknown = sorted(set(given) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section or 'config'}: {', '.join(unknown)}")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def config_from_dict(doc: dict) -> TrainerConfig:
    _check_keys("", doc, _TOP)
    for k in _INT_FIELDS & set(doc):
        if not _is_int(doc[k]):
            raise ConfigError(f"{k} must be an integer, got {doc[k]!r}")
    adam_doc = doc.get("adam", {})
    sched_doc = dict(doc.get("schedule", {}))
    loss_doc = doc.get("loss", {})
    _check_keys("adam", adam_doc, _ADAM)
    _check_keys("schedule", sched_doc, _SCHEDULE)
    _check_keys("loss", loss_doc, _LOSS)

    total = doc.get("total_epochs", TrainerConfig.total_epochs)
    if "total_epochs" in sched_doc and sched_doc["total_epochs"] != total:
        raise ConfigError(f"schedule.total_epochs={sched_doc['total_epochs']} disagrees with total_epochs={total}")
    sched_doc["total_epochs"] = total

    top = {k: v for k, v in doc.items() if k not in ("adam", "schedule", "loss")}
    try:
        cfg = TrainerConfig(
            **top,
            adam=AdamConfig(**adam_doc),
            schedule=ScheduleConfig(**sched_doc),
            loss=LossConfig(**loss_doc),
        )
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path) -> TrainerConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(doc)


def dump_config(cfg: TrainerConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def default_config_dict() -> dict:
    return TrainerConfig().to_dict()
