"""Benchmark domains: each builder returns a :class:`DomainSpec`."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..hierarchy import TaskGraph
from ..model import DecisionModel


@dataclass(eq=False)
class DomainSpec:
    name: str
    model: DecisionModel
    graph: TaskGraph
    initial: np.ndarray | None = None
    params: dict = field(default_factory=dict)


from .micro import build_micro  # noqa: E402
from .taxi import build_taxi, build_taxi2  # noqa: E402
from .nursebot import build_nursebot  # noqa: E402

BUILDERS = {
    "taxi": build_taxi,
    "taxi2": build_taxi2,
    "nursebot": lambda: build_nursebot("full"),
    "nursebot-small": lambda: build_nursebot("small"),
    "micro": build_micro,
}


def build(name: str) -> DomainSpec:
    if name not in BUILDERS:
        raise KeyError(f"unknown domain {name!r}; choose from {sorted(BUILDERS)}")
    return BUILDERS[name]()


__all__ = ["DomainSpec", "BUILDERS", "build", "build_micro", "build_taxi", "build_taxi2", "build_nursebot"]
