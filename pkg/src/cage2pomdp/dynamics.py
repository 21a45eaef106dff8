"""POMDP core: state/action/observation types, the two-phase transition,
the stochastic observation function and the reward function.

All operations are pure functions of immutable inputs plus an explicit
random stream. The :class:`CageSimulator` bundles a scenario with a fixed
attacker strategy and the observation/reward parameters, and exposes the
step primitive used by both live episodes and the particle filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from types import MappingProxyType

import numpy as np

from . import kernels
from .scenario import Scenario

DEFAULT_DETECTION_PROBABILITY = 0.95  # engineering default, not a published value


class AccessState(IntEnum):
    """Per-host attacker progress marker."""

    HIDDEN = kernels.A_H
    KNOWN = kernels.A_K
    SCANNED = kernels.A_S
    USER = kernels.A_U          # user-level exploit succeeded
    ROOT = kernels.A_R          # superuser-level exploit succeeded
    PRIVILEGED = kernels.A_P    # escalation complete
    INTERRUPTED = kernels.A_I

    @property
    def letter(self) -> str:
        return kernels.ACCESS_LETTERS[self.value]


COMPROMISED_STATES = (AccessState.USER, AccessState.ROOT,
                      AccessState.PRIVILEGED, AccessState.INTERRUPTED)


class HostObservation(IntEnum):
    """Per-host defender observation."""

    NOTHING_KNOWN = kernels.O_H   # host not (visibly) scanned yet
    SCAN_SEEN = kernels.O_S
    ALERT = kernels.O_C           # IDS alarm / analyse found a compromise
    PRIVILEGED = kernels.O_P
    NEUTRALISED = kernels.O_U
    NO_ACTIVITY = kernels.O_N

    @property
    def letter(self) -> str:
        return kernels.OBS_LETTERS[self.value]


class DefenderActionKind(IntEnum):
    IDLE = kernels.D_IDLE
    ANALYSE = kernels.D_ANALYSE
    DECOY = kernels.D_DECOY
    NEUTRALISE = kernels.D_NEUTRALISE
    RESTORE = kernels.D_RESTORE


class AttackerActionKind(IntEnum):
    DISCOVER = kernels.ATK_DISCOVER
    SCAN = kernels.ATK_SCAN
    EXPLOIT = kernels.ATK_EXPLOIT
    ESCALATE = kernels.ATK_ESCALATE
    INTERRUPT = kernels.ATK_INTERRUPT


@dataclass(frozen=True)
class State:
    """Packed system state: one access code plus running/scanned service
    bitmasks per host. Arrays are read-only; hosts are indexed in scenario
    order."""

    access: np.ndarray   # int8[n]
    running: np.ndarray  # int64[n]
    scanned: np.ndarray  # int64[n]

    def __post_init__(self):
        for arr in (self.access, self.running, self.scanned):
            arr.setflags(write=False)

    def __eq__(self, other):
        if not isinstance(other, State):
            return NotImplemented
        return (np.array_equal(self.access, other.access)
                and np.array_equal(self.running, other.running)
                and np.array_equal(self.scanned, other.scanned))

    def __hash__(self):
        return hash((self.access.tobytes(), self.running.tobytes(),
                     self.scanned.tobytes()))

    @property
    def n_hosts(self) -> int:
        return self.access.shape[0]

    def access_of(self, index: int) -> AccessState:
        return AccessState(int(self.access[index]))

    def running_services(self, scn: Scenario, index: int) -> frozenset[str]:
        return _mask_services(scn, int(self.running[index]))

    def scanned_services(self, scn: Scenario, index: int) -> frozenset[str]:
        return _mask_services(scn, int(self.scanned[index]))

    def digest(self) -> str:
        """Compact exact encoding: access letters, running and scanned masks."""
        letters = "".join(kernels.ACCESS_LETTERS[a] for a in self.access)
        run = ",".join(format(int(v), "x") for v in self.running)
        sca = ",".join(format(int(v), "x") for v in self.scanned)
        return f"{letters}|{run}|{sca}"

    @classmethod
    def from_digest(cls, digest: str) -> "State":
        letters, run, sca = digest.split("|")
        access = np.array([kernels.ACCESS_LETTERS.index(c) for c in letters],
                          dtype=np.int8)
        running = np.array([int(v, 16) for v in run.split(",")], dtype=np.int64)
        scanned = np.array([int(v, 16) for v in sca.split(",")], dtype=np.int64)
        return cls(access=access, running=running, scanned=scanned)


def _mask_services(scn: Scenario, mask: int) -> frozenset[str]:
    return frozenset(e for i, e in enumerate(scn.services) if mask >> i & 1)


@dataclass(frozen=True)
class DefenderAction:
    kind: DefenderActionKind
    host: int | None = None
    service: int | None = None

    def __post_init__(self):
        if self.kind is DefenderActionKind.IDLE:
            if self.host is not None or self.service is not None:
                raise ValueError("idle takes no target")
        else:
            if self.host is None:
                raise ValueError(f"{self.kind.name} needs a target host")
            if (self.service is not None) != (self.kind is DefenderActionKind.DECOY):
                raise ValueError("service is set exactly for decoy actions")

    @classmethod
    def idle(cls) -> "DefenderAction":
        return cls(DefenderActionKind.IDLE)

    def label(self, scn: Scenario) -> str:
        if self.kind is DefenderActionKind.IDLE:
            return "Idle"
        name = scn.hosts[self.host].name
        if self.kind is DefenderActionKind.DECOY:
            return f"Decoy[{scn.services[self.service]}] {name}"
        return f"{self.kind.name.capitalize()} {name}"

    def kernel_args(self) -> tuple[int, int, int]:
        return (int(self.kind),
                -1 if self.host is None else self.host,
                -1 if self.service is None else self.service)


@dataclass(frozen=True)
class AttackerAction:
    kind: AttackerActionKind
    host: int | None = None
    subnet: int | None = None
    service: int | None = None

    def __post_init__(self):
        if self.kind is AttackerActionKind.DISCOVER:
            if self.subnet is None or self.host is not None:
                raise ValueError("discover targets a subnet")
        else:
            if self.host is None or self.subnet is not None:
                raise ValueError(f"{self.kind.name} targets a host")
            if (self.service is not None) != (self.kind is AttackerActionKind.EXPLOIT):
                raise ValueError("service is set exactly for exploit actions")

    @classmethod
    def from_kernel(cls, kind: int, target: int, service: int) -> "AttackerAction":
        k = AttackerActionKind(kind)
        if k is AttackerActionKind.DISCOVER:
            return cls(k, subnet=target)
        return cls(k, host=target, service=None if service < 0 else service)

    def kernel_args(self) -> tuple[int, int, int]:
        target = self.subnet if self.kind is AttackerActionKind.DISCOVER else self.host
        return (int(self.kind), target,
                -1 if self.service is None else self.service)

    def label(self, scn: Scenario) -> str:
        if self.kind is AttackerActionKind.DISCOVER:
            return f"Discover subnet {self.subnet}"
        name = scn.hosts[self.host].name
        if self.kind is AttackerActionKind.EXPLOIT:
            return f"Exploit[{scn.services[self.service]}] {name}"
        return f"{self.kind.name.capitalize()} {name}"


@dataclass(frozen=True)
class RewardTable:
    """Defender reward parameters; every entry is a cost (<= 0)."""

    action_cost: MappingProxyType        # DefenderActionKind -> float
    subnet_compromise_cost: MappingProxyType  # subnet id -> float
    interruption_cost: MappingProxyType  # host name -> float

    def __post_init__(self):
        for m in (self.action_cost, self.subnet_compromise_cost,
                  self.interruption_cost):
            for k, v in m.items():
                if v > 0:
                    raise ValueError(f"reward parameter {k!r} must be <= 0, got {v}")

    @classmethod
    def build(cls, action_cost: dict, subnet_cost: dict, interruption_cost: dict) -> "RewardTable":
        return cls(MappingProxyType(dict(action_cost)),
                   MappingProxyType(dict(subnet_cost)),
                   MappingProxyType(dict(interruption_cost)))

    @classmethod
    def cage2_defaults(cls, scn: Scenario) -> "RewardTable":
        action = {k: 0.0 for k in DefenderActionKind}
        action[DefenderActionKind.RESTORE] = -1.0
        subnet = {z: -1.0 for z in scn.subnets}
        if 1 in subnet:
            subnet[1] = -0.1
        interruption = {h.name: 0.0 for h in scn.hosts}
        interruption[scn.target_host] = -10.0
        return cls.build(action, subnet, interruption)

    def arrays(self, scn: Scenario):
        action = np.zeros(len(DefenderActionKind), dtype=np.float64)
        for k, v in self.action_cost.items():
            action[int(k)] = v
        host_subnet = np.array(
            [self.subnet_compromise_cost[h.subnet] for h in scn.hosts],
            dtype=np.float64)
        host_interrupt = np.array(
            [self.interruption_cost.get(h.name, 0.0) for h in scn.hosts],
            dtype=np.float64)
        for arr in (action, host_subnet, host_interrupt):
            arr.setflags(write=False)
        return action, host_subnet, host_interrupt


@dataclass(frozen=True)
class ObservationConfig:
    detection_probability: float = DEFAULT_DETECTION_PROBABILITY

    def __post_init__(self):
        if not 0.0 <= self.detection_probability <= 1.0:
            raise ValueError("detection_probability must be in [0, 1]")


# ---------------------------------------------------------------------------
# pure operations


def initial_state(scn: Scenario) -> State:
    """Every host hidden, running exactly its real services, nothing scanned."""
    n = scn.n_hosts
    return State(
        access=np.zeros(n, dtype=np.int8),
        running=scn.tables.ehost_mask.copy(),
        scanned=np.zeros(n, dtype=np.int64),
    )


def _work_arrays(st: State):
    return st.access.copy(), st.running.copy(), st.scanned.copy()


def apply_defender(scn: Scenario, st: State, d: DefenderAction) -> State:
    access, running, scanned = _work_arrays(st)
    dk, dh, ds = d.kernel_args()
    kernels.defender_phase(access, running, dk, dh, ds, scn.tables.ehost_mask)
    return State(access=access, running=running, scanned=scanned)


def apply_attacker(scn: Scenario, st: State, a: AttackerAction) -> State:
    access, running, scanned = _work_arrays(st)
    ak, at, ae = a.kernel_args()
    t = scn.tables
    kernels.attacker_phase(access, running, scanned, ak, at, ae, t.subnet_of,
                           t.gm, t.taccess, t.entry_subnet,
                           np.zeros(scn.n_hosts, dtype=np.int8))
    return State(access=access, running=running, scanned=scanned)


def observe_with_nd(scn: Scenario, st_next: State, d_prev: DefenderAction,
                    a_prev: AttackerAction, nd: int) -> np.ndarray:
    """Observation vector given an already-drawn detection outcome."""
    obs = np.empty(scn.n_hosts, dtype=np.int8)
    dk, dh, _ = d_prev.kernel_args()
    ak, at, _ = a_prev.kernel_args()
    kernels.observe_phase(st_next.access, ak, at, dk, dh, nd, obs)
    obs.setflags(write=False)
    return obs


def observe(scn: Scenario, st_next: State, d_prev: DefenderAction,
            a_prev: AttackerAction, rng: np.random.Generator,
            detection_probability: float = DEFAULT_DETECTION_PROBABILITY) -> np.ndarray:
    """Draw the detection variable once and produce the observation vector."""
    nd = 1 if rng.random() < detection_probability else 0
    return observe_with_nd(scn, st_next, d_prev, a_prev, nd)


def initial_observation(scn: Scenario) -> np.ndarray:
    obs = np.full(scn.n_hosts, kernels.O_H, dtype=np.int8)
    obs.setflags(write=False)
    return obs


def obs_to_str(obs: np.ndarray) -> str:
    return "".join(kernels.OBS_LETTERS[o] for o in obs)


def obs_from_str(text: str) -> np.ndarray:
    obs = np.array([kernels.OBS_LETTERS.index(c) for c in text], dtype=np.int8)
    obs.setflags(write=False)
    return obs


def reward(scn: Scenario, st: State, d: DefenderAction, tbl: RewardTable) -> float:
    action, host_subnet, host_interrupt = tbl.arrays(scn)
    return float(kernels.reward_of(st.access, int(d.kind), action,
                                   host_subnet, host_interrupt))


@dataclass(frozen=True)
class StepResult:
    state: State
    observation: np.ndarray
    reward: float
    attacker_action: AttackerAction


class CageSimulator:
    """Scenario + fixed attacker strategy + observation/reward parameters.

    ``step`` consumes two uniforms from the given random stream (attacker
    randomness, detection draw); ``propagate`` is the same transition with the
    uniforms passed explicitly, which is what the particle filter uses.
    """

    def __init__(self, scn: Scenario, attacker, rewards: RewardTable | None = None,
                 detection_probability: float = DEFAULT_DETECTION_PROBABILITY):
        self.scenario = scn
        self.attacker = attacker
        self.rewards = rewards if rewards is not None else RewardTable.cage2_defaults(scn)
        self.detection_probability = float(detection_probability)
        self._reward_arrays = self.rewards.arrays(scn)
        t = scn.tables
        self._kernel_tail = (t.subnet_of, t.gm, t.ehost_mask, t.taccess,
                             attacker.priority_array, scn.n_services,
                             t.target_index, t.entry_subnet, t.subnet_ids,
                             attacker.sel_uniform)

    def initial_state(self) -> State:
        return initial_state(self.scenario)

    def initial_observation(self) -> np.ndarray:
        return initial_observation(self.scenario)

    def reward(self, st: State, d: DefenderAction) -> float:
        action, host_subnet, host_interrupt = self._reward_arrays
        return float(kernels.reward_of(st.access, int(d.kind), action,
                                       host_subnet, host_interrupt))

    def propagate(self, st: State, d: DefenderAction, u_attacker: float,
                  u_detect: float):
        """Deterministic step primitive: returns (next state, observation,
        attacker action)."""
        access, running, scanned = _work_arrays(st)
        obs = np.empty(self.scenario.n_hosts, dtype=np.int8)
        scratch = np.empty(self.scenario.n_hosts, dtype=np.int8)
        dk, dh, ds = d.kernel_args()
        ak, at, ae = kernels.step_state_kernel(
            access, running, scanned, dk, dh, ds, self.attacker.ident,
            u_attacker, u_detect, self.detection_probability, obs, scratch,
            *self._kernel_tail)
        obs.setflags(write=False)
        return (State(access=access, running=running, scanned=scanned), obs,
                AttackerAction.from_kernel(ak, at, ae))

    def step(self, st: State, d: DefenderAction, rng: np.random.Generator) -> StepResult:
        r = self.reward(st, d)
        u = rng.random(2)
        nxt, obs, act = self.propagate(st, d, u[0], u[1])
        return StepResult(state=nxt, observation=obs, reward=r,
                          attacker_action=act)

    # -- particle-filter fast path ------------------------------------------

    def observation_mismatch(self, o1: np.ndarray, o2: np.ndarray) -> int:
        return int(np.count_nonzero(o1 != o2))

    def filter_batch(self, particles, d_prev: DefenderAction, obs: np.ndarray,
                     u: np.ndarray, refill_u: np.ndarray):
        """Run the rejection-sampling update over packed particle arrays.

        Returns (list of accepted states, raw accepted count, attempts, mode).
        """
        n = self.scenario.n_hosts
        m_out = refill_u.shape[0]
        pa = np.stack([p.access for p in particles])
        pr = np.stack([p.running for p in particles])
        ps = np.stack([p.scanned for p in particles])
        out_a = np.empty((m_out, n), dtype=np.int8)
        out_r = np.empty((m_out, n), dtype=np.int64)
        out_s = np.empty((m_out, n), dtype=np.int64)
        cand_obs = np.empty(n, dtype=np.int8)
        scratch = np.empty(n, dtype=np.int8)
        wa = np.empty(n, dtype=np.int8)
        wr = np.empty(n, dtype=np.int64)
        ws = np.empty(n, dtype=np.int64)
        mismatches = np.empty(u.shape[0], dtype=np.int64)
        best_rows = np.empty(u.shape[0], dtype=np.int64)
        dk, dh, ds = d_prev.kernel_args()
        accepted, attempts, mode = kernels.filter_update_kernel(
            pa, pr, ps, dk, dh, ds, obs, self.attacker.ident,
            self.detection_probability, u, refill_u, out_a, out_r, out_s,
            cand_obs, scratch, wa, wr, ws, mismatches, best_rows,
            *self._kernel_tail)
        states = [State(access=out_a[i].copy(), running=out_r[i].copy(),
                        scanned=out_s[i].copy()) for i in range(m_out)]
        return states, int(accepted), int(attempts), int(mode)


def step(scn: Scenario, st: State, d: DefenderAction, attacker,
         rng: np.random.Generator, rewards: RewardTable | None = None,
         detection_probability: float = DEFAULT_DETECTION_PROBABILITY) -> StepResult:
    """One-shot step without building a simulator (convenience wrapper)."""
    sim = CageSimulator(scn, attacker, rewards, detection_probability)
    return sim.step(st, d, rng)
