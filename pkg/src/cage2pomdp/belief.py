"""Belief-state machinery.

The defender's belief over system states is carried by a multiset of M
particles, updated by rejection sampling: propagate a uniformly drawn
particle through the simulator under the executed defender action, keep the
result only when the simulated observation equals the real one exactly. An
exact Bayes filter over enumerable toy models serves as the correctness
oracle for the particle filter.

The update pre-draws its full attempt budget of uniforms, so results are
bit-for-bit reproducible and identical between the compiled and interpreted
simulator paths.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParticleSet:
    """Multiset of sampled states approximating the belief."""

    particles: tuple

    def __post_init__(self):
        if not self.particles:
            raise ValueError("particle set must be nonempty")

    def __len__(self) -> int:
        return len(self.particles)

    @classmethod
    def initial(cls, state, m: int) -> "ParticleSet":
        """At episode start the state is known: M copies of it."""
        return cls(particles=(state,) * m)

    def unique_count(self) -> int:
        return len(set(self.particles))


def belief_estimate(p: ParticleSet, state) -> float:
    """Belief probability of a state: its frequency among the particles."""
    return sum(1 for s in p.particles if s == state) / len(p)


def representative_state(p: ParticleSet, rng: np.random.Generator):
    """One particle drawn uniformly; the policy's state input."""
    return p.particles[int(rng.integers(len(p)))]


@dataclass(frozen=True)
class FilterLimits:
    """Attempt budget: candidates simulated per update = budget_factor * M."""

    budget_factor: int = 100

    def budget(self, m: int) -> int:
        return self.budget_factor * m


@dataclass(frozen=True)
class FilterStats:
    accepted: int      # candidates accepted before any refill
    attempts: int
    mode: int          # kernels.FILTER_OK / FILTER_PARTIAL / FILTER_NEAREST

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else 0.0

    @property
    def deprived(self) -> bool:
        return self.mode != kernels.FILTER_OK


def _obs_equal(o1, o2) -> bool:
    return bool(np.array_equal(o1, o2))


def particle_filter_update(p: ParticleSet, d_prev, obs, sim,
                           rng: np.random.Generator,
                           limits: FilterLimits = FilterLimits()):
    """One rejection-sampling belief update; returns (particles, stats).

    ``sim`` must provide ``propagate(state, d_prev, u_transition, u_detect)``
    returning at least (next state, observation). When it also provides
    ``filter_batch`` (the packed-array fast path of the CAGE simulator), that
    is used instead of the generic loop; both consume the same pre-drawn
    uniforms and produce identical particle sets.

    On budget exhaustion the accepted subset is resampled up to M; if nothing
    was accepted, the particles are rebuilt from the candidates closest to the
    observation (fewest mismatched components) and a warning is logged.
    """
    m = len(p)
    budget = limits.budget(m)
    u = rng.random((budget, 3))
    refill_u = rng.random(m)

    if hasattr(sim, "filter_batch"):
        states, accepted, attempts, mode = sim.filter_batch(
            p.particles, d_prev, obs, u, refill_u)
        stats = FilterStats(accepted=accepted, attempts=attempts, mode=mode)
        _log_deprivation(stats, m)
        return ParticleSet(particles=tuple(states)), stats

    # generic path (enumerable toys): same algorithm, same stream consumption
    def candidate(i: int):
        j = min(int(u[i, 0] * m), m - 1)
        res = sim.propagate(p.particles[j], d_prev, u[i, 1], u[i, 2])
        return res[0], res[1]

    accepted_states = []
    attempts = 0
    for i in range(budget):
        attempts += 1
        s2, o2 = candidate(i)
        if _obs_equal(o2, obs):
            accepted_states.append(s2)
            if len(accepted_states) == m:
                stats = FilterStats(accepted=m, attempts=attempts,
                                    mode=kernels.FILTER_OK)
                return ParticleSet(particles=tuple(accepted_states)), stats

    raw = len(accepted_states)
    if raw > 0:
        out = list(accepted_states)
        for k in range(raw, m):
            out.append(accepted_states[min(int(refill_u[k] * raw), raw - 1)])
        stats = FilterStats(accepted=raw, attempts=attempts,
                            mode=kernels.FILTER_PARTIAL)
        _log_deprivation(stats, m)
        return ParticleSet(particles=tuple(out)), stats

    mismatch = getattr(sim, "observation_mismatch",
                       lambda a, b: 0 if _obs_equal(a, b) else 1)
    scores = np.empty(budget, dtype=np.int64)
    for i in range(budget):
        _, o2 = candidate(i)
        scores[i] = mismatch(o2, obs)
    best_rows = np.flatnonzero(scores == scores.min())
    out = [candidate(int(best_rows[k % len(best_rows)]))[0] for k in range(m)]
    stats = FilterStats(accepted=0, attempts=attempts,
                        mode=kernels.FILTER_NEAREST)
    _log_deprivation(stats, m)
    return ParticleSet(particles=tuple(out)), stats


def _log_deprivation(stats: FilterStats, m: int) -> None:
    if stats.mode == kernels.FILTER_PARTIAL:
        log.warning("particle deprivation: %d/%d accepted in %d attempts; "
                    "refilled by resampling", stats.accepted, m, stats.attempts)
    elif stats.mode == kernels.FILTER_NEAREST:
        log.warning("particle deprivation: nothing accepted in %d attempts; "
                    "refilled from nearest candidates", stats.attempts)


# ---------------------------------------------------------------------------
# exact Bayes filter over enumerable models (oracle for small instances)


class ImpossibleObservationError(ValueError):
    """The observation has zero probability under the predicted belief."""


@dataclass(frozen=True)
class ExactBelief:
    """Dense distribution over an enumerable state space."""

    probs: np.ndarray

    def __post_init__(self):
        p = self.probs
        if np.any(p < -1e-12) or abs(float(p.sum()) - 1.0) > 1e-9:
            raise ValueError("belief must be a probability distribution")
        p.setflags(write=False)

    @classmethod
    def point_mass(cls, n_states: int, index: int) -> "ExactBelief":
        probs = np.zeros(n_states)
        probs[index] = 1.0
        return cls(probs=probs)


def exact_bayes_update(model, b: ExactBelief, d, o) -> ExactBelief:
    """Recursive belief update: predict with the transition model, weight by
    the observation likelihood, normalize.

    ``model`` provides ``transition_probs(d) -> (S, S)`` (row = from state)
    and ``observation_probs(d) -> (S, O)`` (row = next state).
    """
    trans = model.transition_probs(d)
    zobs = model.observation_probs(d)
    predicted = trans.T @ b.probs
    unnorm = zobs[:, o] * predicted
    eta = float(unnorm.sum())
    if eta <= 0.0:
        raise ImpossibleObservationError(
            f"observation {o!r} has zero probability")
    return ExactBelief(probs=unnorm / eta)


def total_variation(b1: ExactBelief, b2: ExactBelief) -> float:
    return 0.5 * float(np.abs(b1.probs - b2.probs).sum())


def particle_belief_over(p: ParticleSet, states) -> ExactBelief:
    """Project a particle set onto an enumerated state list."""
    probs = np.array([belief_estimate(p, s) for s in states])
    total = probs.sum()
    if abs(total - 1.0) > 1e-9:
        raise ValueError("particles contain states outside the enumeration")
    return ExactBelief(probs=probs)
