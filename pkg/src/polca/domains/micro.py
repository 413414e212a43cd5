"""A 4-state chain with a two-subtask hierarchy.

``h_1`` owns the moves; ``h_0`` chooses between staying put and handing
control to ``h_1``. Moving right out of ``s2`` pays +5, staying at ``s3``
pays +10 per step, so ``h_1`` walks right from ``s0..s2`` and left from
``s3`` while the root walks right and then stays.
"""

import numpy as np

from ..hierarchy import Subtask, TaskGraph
from ..model import FeatureSpace, make_model
from . import DomainSpec


def build_micro(discount: float = 0.95) -> DomainSpec:
    space = FeatureSpace.from_features([("pos", ["s0", "s1", "s2", "s3"])])
    actions = ("stay", "right", "left")
    t = np.zeros((3, 4, 4))
    r = np.zeros((4, 3))
    for s in range(4):
        t[0, s, s] = 1.0
        t[1, s, min(s + 1, 3)] = 1.0
        t[2, s, max(s - 1, 0)] = 1.0
        r[s, 1] = r[s, 2] = -1.0
    r[3, 0] = 10.0
    r[2, 1] = 5.0
    model = make_model(space, actions, t, r, discount)
    graph = TaskGraph.build("h_0", [
        Subtask("h_0", ("stay", "h_1")),
        Subtask("h_1", ("right", "left")),
    ])
    return DomainSpec("micro", model, graph)
