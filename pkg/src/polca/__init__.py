"""Hierarchical planning with policy-contingent state abstraction for MDPs and POMDPs."""

__version__ = "0.1.0"

from .domains import build as build_domain  # noqa: E402
from .hierarchy import PlanOptions, polca_plan  # noqa: E402

__all__ = ["PlanOptions", "build_domain", "polca_plan"]
