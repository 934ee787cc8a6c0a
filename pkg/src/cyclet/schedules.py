"""Epoch-indexed schedules for the cycle weight, feature fraction and learning rate."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass
class ScheduleConfig:
    total_epochs: int = 200
    lambda_start: float = 10.0
    lambda_end: float = 1.0
    gamma_start: float = 0.0
    gamma_end: float = 0.9
    lr_base: float = 2e-4
    lr_constant_epochs: int | None = None  # None -> total_epochs // 2
    lambda_ramp_start: int = 0
    lambda_ramp_end: int | None = None  # None -> total_epochs
    gamma_ramp_start: int = 0
    gamma_ramp_end: int | None = None

    def resolved(self) -> "ScheduleConfig":
        """Copy with every ``None`` replaced by its total_epochs-derived default."""
        e = self.total_epochs
        return ScheduleConfig(
            total_epochs=e,
            lambda_start=self.lambda_start, lambda_end=self.lambda_end,
            gamma_start=self.gamma_start, gamma_end=self.gamma_end,
            lr_base=self.lr_base,
            lr_constant_epochs=e // 2 if self.lr_constant_epochs is None else self.lr_constant_epochs,
            lambda_ramp_start=self.lambda_ramp_start,
            lambda_ramp_end=e if self.lambda_ramp_end is None else self.lambda_ramp_end,
            gamma_ramp_start=self.gamma_ramp_start,
            gamma_ramp_end=e if self.gamma_ramp_end is None else self.gamma_ramp_end,
        )

    def validate(self) -> None:
        c = self.resolved()
        if c.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")
        if not 0.0 < c.lambda_end <= c.lambda_start:
            raise ValueError(f"need 0 < lambda_end <= lambda_start, got {c.lambda_end}, {c.lambda_start}")
        if not 0.0 <= c.gamma_start <= c.gamma_end < 1.0:
            raise ValueError(f"need 0 <= gamma_start <= gamma_end < 1, got {c.gamma_start}, {c.gamma_end}")
        if c.lr_base < 0:
            raise ValueError("lr_base must be >= 0")
        if not 0 <= c.lr_constant_epochs <= c.total_epochs:
            raise ValueError("lr_constant_epochs must lie in [0, total_epochs]")
        for name in ("lambda", "gamma"):
            lo, hi = getattr(c, f"{name}_ramp_start"), getattr(c, f"{name}_ramp_end")
            if not 0 <= lo <= hi <= c.total_epochs:
                raise ValueError(f"{name} ramp [{lo}, {hi}] must satisfy 0 <= start <= end <= total_epochs")


def _check_epoch(cfg: ScheduleConfig, t: float) -> None:
    if not 0 <= t <= cfg.total_epochs:
        raise ValueError(f"epoch {t} outside [0, {cfg.total_epochs}]")


def _ramp(t: float, lo: int, hi: int, start: float, end: float) -> float:
    # a zero-width ramp is a step at lo
    if t >= hi:
        return end
    if t <= lo:
        return start
    frac = (t - lo) / (hi - lo)
    return start + (end - start) * frac


def lambda_at(cfg: ScheduleConfig, t: float) -> float:
    """Cycle weight: linear from lambda_start to lambda_end over its ramp, clamped."""
    _check_epoch(cfg, t)
    c = cfg.resolved()
    return _ramp(t, c.lambda_ramp_start, c.lambda_ramp_end, c.lambda_start, c.lambda_end)


def gamma_at(cfg: ScheduleConfig, t: float) -> float:
    _check_epoch(cfg, t)
    c = cfg.resolved()
    return _ramp(t, c.gamma_ramp_start, c.gamma_ramp_end, c.gamma_start, c.gamma_end)


def lr_at(cfg: ScheduleConfig, t: float) -> float:
    """lr_base for t < lr_constant_epochs, then linear to 0 at total_epochs."""
    _check_epoch(cfg, t)
    c = cfg.resolved()
    if t < c.lr_constant_epochs:
        return c.lr_base
    span = c.total_epochs - c.lr_constant_epochs
    if span == 0:
        return 0.0
    return c.lr_base * (c.total_epochs - t) / span
