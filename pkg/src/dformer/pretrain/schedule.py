"""Learning-rate schedules indexed by optimizer step."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class CosineWarmup:
    base: float
    warmup_steps: int
    total_steps: int


@dataclass(frozen=True)
class Poly:
    base: float
    total_steps: int
    power: float = 0.9
    warmup_steps: int = 0


Schedule = CosineWarmup | Poly


def lr_at(step: int, schedule: Schedule) -> float:
    """Learning rate at ``step`` for 0 <= step <= total_steps."""
    total = schedule.total_steps
    if step < 0 or step > total:
        raise ValueError(f"step {step} outside [0, {total}]")
    warm = schedule.warmup_steps
    if warm and step < warm:
        return schedule.base * step / warm
    if isinstance(schedule, CosineWarmup):
        if total == warm:
            return 0.0
        t = (step - warm) / (total - warm)
        return schedule.base * 0.5 * (1.0 + math.cos(math.pi * t))
    if isinstance(schedule, Poly):
        return schedule.base * (1.0 - step / total) ** schedule.power
    raise TypeError(f"unknown schedule {schedule!r}")


def schedule_to_dict(schedule: Schedule) -> dict:
    return {"kind": "cosine_warmup" if isinstance(schedule, CosineWarmup) else "poly", **asdict(schedule)}


def schedule_from_dict(d: dict) -> Schedule:
    d = dict(d)
    kind = d.pop("kind")
    return CosineWarmup(**d) if kind == "cosine_warmup" else Poly(**d)
