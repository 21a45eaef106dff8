"""Fixed attacker strategies.

Both attackers are pure functions of the true system state: B-LINE walks the
connectivity chain straight to the target server, MEANDER sweeps subnets and
roots every host it finds in random order. Which service an attacker exploits
on a scanned host is governed by an :class:`ExploitSelectionPolicy`; decoys
are indistinguishable inside the scanned set, so they can be (and deliberately
are) selected, which is how deception pays off for the defender.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels
from .dynamics import AttackerAction, State
from .scenario import Scenario


class AttackerStrategyId(Enum):
    BLINE = "bline"
    MEANDER = "meander"


@dataclass(frozen=True)
class ExploitSelectionPolicy:
    """Service-choice rule for exploits: a priority permutation of all
    services, optionally replaced by uniform random choice."""

    priority: tuple[int, ...]
    uniform: bool = False

    def __post_init__(self):
        if sorted(self.priority) != list(range(len(self.priority))):
            raise ValueError("priority must be a permutation of all service indices")

    @classmethod
    def default(cls, scn: Scenario) -> "ExploitSelectionPolicy":
        """Rank services by the best access any host grants for them
        (superuser first, then user, then the rest), ties in scenario order."""
        best = np.zeros(scn.n_services, dtype=np.int64)
        for i in range(scn.n_hosts):
            for j in range(scn.n_services):
                g = scn.tables.taccess[i, j]
                if g > best[j]:
                    best[j] = g
        order = sorted(range(scn.n_services), key=lambda j: (-best[j], j))
        return cls(priority=tuple(order))

    @classmethod
    def uniform_random(cls, scn: Scenario) -> "ExploitSelectionPolicy":
        return cls(priority=tuple(range(scn.n_services)), uniform=True)

    def priority_array(self) -> np.ndarray:
        arr = np.array(self.priority, dtype=np.int64)
        arr.setflags(write=False)
        return arr


def bline_action(scn: Scenario, st: State, sel: ExploitSelectionPolicy,
                 rng: np.random.Generator | None = None) -> AttackerAction:
    """Next B-LINE action for the given state (deterministic unless the
    selection policy is uniform, which needs a random stream)."""
    if sel.uniform and rng is None:
        raise ValueError("uniform exploit selection needs a random stream")
    u = rng.random() if sel.uniform else 0.0
    t = scn.tables
    kind, target, service = kernels.bline_action_kernel(
        st.access, st.scanned, t.subnet_of, t.gm, sel.priority_array(),
        scn.n_services, t.target_index, t.entry_subnet,
        1 if sel.uniform else 0, u)
    return AttackerAction.from_kernel(kind, target, service)


def meander_action(scn: Scenario, st: State, sel: ExploitSelectionPolicy,
                   rng: np.random.Generator) -> AttackerAction:
    """Next MEANDER action; consumes exactly one uniform from ``rng``."""
    t = scn.tables
    kind, target, service = kernels.meander_action_kernel(
        st.access, st.scanned, t.subnet_of, t.gm, sel.priority_array(),
        scn.n_services, t.target_index, t.entry_subnet, t.subnet_ids,
        1 if sel.uniform else 0, rng.random())
    return AttackerAction.from_kernel(kind, target, service)


@dataclass(frozen=True, eq=False)
class AttackerStrategy:
    """Strategy bound to a scenario, in the form the simulator kernels use."""

    strategy_id: AttackerStrategyId
    selection: ExploitSelectionPolicy
    priority_array: np.ndarray
    sel_uniform: int

    @property
    def ident(self) -> int:
        return 0 if self.strategy_id is AttackerStrategyId.BLINE else 1

    def action(self, scn: Scenario, st: State,
               rng: np.random.Generator) -> AttackerAction:
        if self.strategy_id is AttackerStrategyId.BLINE:
            if self.selection.uniform:
                return bline_action(scn, st, self.selection, rng)
            return bline_action(scn, st, self.selection)
        return meander_action(scn, st, self.selection, rng)


def make_strategy(strategy_id: AttackerStrategyId, scn: Scenario,
                  sel: ExploitSelectionPolicy | None = None) -> AttackerStrategy:
    if sel is None:
        sel = ExploitSelectionPolicy.default(scn)
    return AttackerStrategy(strategy_id=strategy_id, selection=sel,
                            priority_array=sel.priority_array(),
                            sel_uniform=1 if sel.uniform else 0)


@dataclass(frozen=True)
class AttackerDistribution:
    """Distribution over attacker strategies, sampled once per episode."""

    weights: tuple[tuple[AttackerStrategyId, float], ...]

    def __post_init__(self):
        total = sum(w for _, w in self.weights)
        if any(w < 0 for _, w in self.weights) or abs(total - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")

    @classmethod
    def point_mass(cls, strategy_id: AttackerStrategyId) -> "AttackerDistribution":
        return cls(weights=((strategy_id, 1.0),))

    @classmethod
    def from_dict(cls, raw: dict) -> "AttackerDistribution":
        return cls(weights=tuple(
            (AttackerStrategyId(k), float(v)) for k, v in raw.items()))

    def to_dict(self) -> dict:
        return {sid.value: w for sid, w in self.weights}


def sample_attacker(dist: AttackerDistribution,
                    rng: np.random.Generator) -> AttackerStrategyId:
    u = rng.random()
    acc = 0.0
    for sid, w in dist.weights:
        acc += w
        if u < acc:
            return sid
    return dist.weights[-1][0]
