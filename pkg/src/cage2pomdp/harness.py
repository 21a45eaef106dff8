"""Training, action selection, evaluation and trace tooling.

A training run is ``iterations`` policy updates, each preceded by
``episodes_per_iteration`` rollouts collected with belief-filter action
selection (particle filter -> representative state -> policy sample). All
randomness derives from ``numpy.random.SeedSequence([seed, iteration,
episode, stream])`` so runs are reproducible byte-for-byte.

Outputs under the run directory: ``curves.csv`` (schema
``seed,iteration,mean_reward,std_reward,particle_accept_rate``), one
``checkpoint-<seed>`` per seed, and ``config-snapshot``.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import belief, policy as policy_mod
from .adversary import (AttackerDistribution, AttackerStrategyId,
                        ExploitSelectionPolicy, make_strategy, sample_attacker)
from .belief import FilterLimits, FilterStats, ParticleSet
from .dynamics import (DEFAULT_DETECTION_PROBABILITY, CageSimulator,
                       DefenderAction, DefenderActionKind, RewardTable, State,
                       obs_to_str)
from .policy import (PolicyParams, PPOConfig, TrajectoryBuffer, encode_state,
                     encoded_dim, forward, init_optimizer, init_policy,
                     load_policy, ppo_update, sample_action, save_policy)
from .scenario import Scenario, default_scenario, dump_scenario, load_scenario_file

log = logging.getLogger(__name__)

CURVES_HEADER = "seed,iteration,mean_reward,std_reward,particle_accept_rate"
EVAL_HEADER = "attacker,horizon,episodes,mean_reward,std_reward"

# stream tags for per-episode seed derivation
_STREAM_EPISODE = 0
_STREAM_FILTER = 1


# ---------------------------------------------------------------------------
# defender action space


def action_space(scn: Scenario) -> list[DefenderAction]:
    """Idle plus every (type, host) pair, decoys expanded per service."""
    actions = [DefenderAction.idle()]
    kinds: list[tuple[DefenderActionKind, int | None]] = [(DefenderActionKind.ANALYSE, None)]
    kinds += [(DefenderActionKind.DECOY, e) for e in range(scn.n_services)]
    kinds += [(DefenderActionKind.NEUTRALISE, None), (DefenderActionKind.RESTORE, None)]
    for kind, service in kinds:
        for h in range(scn.n_hosts):
            actions.append(DefenderAction(kind, host=h, service=service))
    return actions


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 400
    episodes_per_iteration: int = 100
    horizon: int = 100
    seeds: tuple[int, ...] = (0, 108, 153, 701)
    attacker: AttackerDistribution = field(
        default_factory=lambda: AttackerDistribution.point_mass(AttackerStrategyId.BLINE))
    particles: int = 100
    particles_eval: int = 1000
    budget_factor: int = 100
    detection_probability: float = DEFAULT_DETECTION_PROBABILITY
    ppo: PPOConfig = field(default_factory=PPOConfig)
    hidden: tuple[int, ...] = (64, 64)
    uniform_exploit_selection: bool = False
    output_dir: str = "runs/default"
    scenario_path: str | None = None

    def __post_init__(self):
        for name in ("iterations", "episodes_per_iteration", "horizon",
                     "particles", "particles_eval", "budget_factor"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    def load_scenario(self) -> Scenario:
        if self.scenario_path is None:
            return default_scenario()
        return load_scenario_file(self.scenario_path)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "episodes_per_iteration": self.episodes_per_iteration,
            "horizon": self.horizon,
            "seeds": list(self.seeds),
            "attacker": self.attacker.to_dict(),
            "particles": self.particles,
            "particles_eval": self.particles_eval,
            "budget_factor": self.budget_factor,
            "detection_probability": self.detection_probability,
            "learning_rate": self.ppo.learning_rate,
            "clip": self.ppo.clip,
            "epochs": self.ppo.epochs,
            "discount": self.ppo.gamma,
            "adam_beta1": self.ppo.adam_beta1,
            "adam_beta2": self.ppo.adam_beta2,
            "adam_eps": self.ppo.adam_eps,
            "entropy_coef": self.ppo.entropy_coef,
            "hidden": list(self.hidden),
            "uniform_exploit_selection": self.uniform_exploit_selection,
            "output_dir": self.output_dir,
            "scenario_path": self.scenario_path,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        ppo = PPOConfig(
            learning_rate=raw.pop("learning_rate", 5e-4),
            clip=raw.pop("clip", 0.2),
            epochs=raw.pop("epochs", 10),
            gamma=raw.pop("discount", 0.99),
            adam_beta1=raw.pop("adam_beta1", 0.9),
            adam_beta2=raw.pop("adam_beta2", 0.99),
            adam_eps=raw.pop("adam_eps", 1e-8),
            entropy_coef=raw.pop("entropy_coef", 0.0),
        )
        if "attacker" in raw:
            raw["attacker"] = AttackerDistribution.from_dict(raw["attacker"])
        if "seeds" in raw:
            raw["seeds"] = tuple(raw["seeds"])
        if "hidden" in raw:
            raw["hidden"] = tuple(raw["hidden"])
        return cls(ppo=ppo, **raw)

    @classmethod
    def from_yaml_file(cls, path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        return cls.from_dict(raw)

    def snapshot(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def _episode_rngs(seed: int, iteration: int, episode: int):
    ep = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((seed, iteration, episode, _STREAM_EPISODE))))
    flt = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((seed, iteration, episode, _STREAM_FILTER))))
    return ep, flt


# ---------------------------------------------------------------------------
# action selection (belief filter -> representative state -> policy)


@dataclass
class SelectResult:
    action: DefenderAction
    particles: ParticleSet
    sample_state: State
    action_index: int
    logp: float
    stats: FilterStats | None


def select_action(particles: ParticleSet | None, obs, d_prev,
                  params: PolicyParams, sim: CageSimulator,
                  ep_rng: np.random.Generator, f_rng: np.random.Generator,
                  limits: FilterLimits, actions: list[DefenderAction],
                  scn: Scenario, m: int, greedy: bool = False) -> SelectResult:
    """One action-selection step. With no prior particles (t=1) the belief is
    M copies of the known initial state and no filter update runs."""
    stats = None
    if particles is None:
        particles = ParticleSet.initial(sim.initial_state(), m)
    else:
        particles, stats = belief.particle_filter_update(
            particles, d_prev, obs, sim, f_rng, limits)
    sample = belief.representative_state(particles, ep_rng)
    probs, _ = forward(params, encode_state(scn, sample))
    if greedy:
        idx = int(np.argmax(probs))
        logp = float(np.log(probs[idx]))
    else:
        idx, logp = sample_action(probs, ep_rng)
    return SelectResult(action=actions[idx], particles=particles,
                        sample_state=sample, action_index=idx, logp=logp,
                        stats=stats)


# ---------------------------------------------------------------------------
# episode rollout


@dataclass
class EpisodeResult:
    cumulative_reward: float
    accept_rates: list[float]
    trace: list[dict] | None = None


def run_episode(sim: CageSimulator, params: PolicyParams, horizon: int, m: int,
                limits: FilterLimits, ep_rng, f_rng, actions, scn: Scenario,
                buffer: TrajectoryBuffer | None = None, greedy: bool = False,
                collect_trace: bool = False) -> EpisodeResult:
    """Roll one episode with belief-filter action selection.

    Rewards accumulate undiscounted; discounting happens at update time.
    """
    state = sim.initial_state()
    obs = sim.initial_observation()
    particles: ParticleSet | None = None
    d_prev = None
    total = 0.0
    accept_rates = []
    trace = [] if collect_trace else None
    for t in range(1, horizon + 1):
        sel = select_action(particles, obs, d_prev, params, sim, ep_rng,
                            f_rng, limits, actions, scn, m, greedy)
        if sel.stats is not None:
            accept_rates.append(sel.stats.acceptance_rate)
        step = sim.step(state, sel.action, ep_rng)
        if buffer is not None:
            buffer.add(encode_state(scn, sel.sample_state), sel.action_index,
                       sel.logp, step.reward, t == horizon)
        if trace is not None:
            trace.append(_trace_record(t, step, sel.action, scn))
        total += step.reward
        state, obs = step.state, step.observation
        particles, d_prev = sel.particles, sel.action
    return EpisodeResult(cumulative_reward=total, accept_rates=accept_rates,
                         trace=trace)


def run_scripted_episode(sim: CageSimulator, horizon: int, ep_rng,
                         pick_action, collect_trace: bool = False) -> EpisodeResult:
    """Roll one episode with a state-free defender (baselines: idle, random)."""
    state = sim.initial_state()
    total = 0.0
    trace = [] if collect_trace else None
    for t in range(1, horizon + 1):
        action = pick_action(t, ep_rng)
        step = sim.step(state, action, ep_rng)
        if trace is not None:
            trace.append(_trace_record(t, step, action, scn=sim.scenario))
        total += step.reward
        state = step.state
    return EpisodeResult(cumulative_reward=total, accept_rates=[], trace=trace)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    run_dir: Path
    curves_csv: Path
    checkpoints: dict[int, Path]


def _build_simulator(cfg: TrainConfig, scn: Scenario,
                     strategy_id: AttackerStrategyId) -> CageSimulator:
    sel = (ExploitSelectionPolicy.uniform_random(scn)
           if cfg.uniform_exploit_selection else ExploitSelectionPolicy.default(scn))
    return CageSimulator(scn, make_strategy(strategy_id, scn, sel),
                         RewardTable.cage2_defaults(scn),
                         cfg.detection_probability)


def train(cfg: TrainConfig) -> TrainResult:
    """Train one policy per seed; writes curves.csv, checkpoints and the
    config snapshot under ``cfg.output_dir``."""
    scn = cfg.load_scenario()
    actions = action_space(scn)
    limits = FilterLimits(cfg.budget_factor)
    run_dir = Path(cfg.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config-snapshot").write_text(cfg.snapshot(), encoding="utf-8")
    curves_path = run_dir / "curves.csv"
    checkpoints: dict[int, Path] = {}

    sims = {sid: _build_simulator(cfg, scn, sid)
            for sid, w in cfg.attacker.weights if w > 0}

    with open(curves_path, "w", encoding="utf-8") as curves:
        curves.write(CURVES_HEADER + "\n")
        for seed in cfg.seeds:
            params = init_policy(encoded_dim(scn), len(actions), cfg.hidden,
                                 seed=seed)
            opt = init_optimizer(params, cfg.ppo)
            ckpt_path = run_dir / f"checkpoint-{seed}"
            t_start = time.time()
            for iteration in range(1, cfg.iterations + 1):
                buffer = TrajectoryBuffer()
                rewards = []
                accept_rates = []
                for episode in range(cfg.episodes_per_iteration):
                    ep_rng, f_rng = _episode_rngs(seed, iteration, episode)
                    sid = sample_attacker(cfg.attacker, ep_rng)
                    result = run_episode(sims[sid], params, cfg.horizon,
                                         cfg.particles, limits, ep_rng, f_rng,
                                         actions, scn, buffer=buffer)
                    rewards.append(result.cumulative_reward)
                    accept_rates.extend(result.accept_rates)
                try:
                    params, opt, _ = ppo_update(params, opt, buffer, cfg.ppo)
                except policy_mod.NonFiniteLossError:
                    save_policy(ckpt_path, params, scn.fingerprint())
                    log.exception("non-finite loss at seed %d iteration %d; "
                                  "checkpoint saved", seed, iteration)
                    raise
                mean_r = float(np.mean(rewards))
                std_r = float(np.std(rewards))
                rate = float(np.mean(accept_rates)) if accept_rates else 1.0
                curves.write(f"{seed},{iteration},{mean_r:.6f},{std_r:.6f},{rate:.6f}\n")
                if iteration % 10 == 0 or iteration == cfg.iterations:
                    log.info("seed %d iteration %d/%d mean reward %.2f "
                             "(%.1fs elapsed)", seed, iteration,
                             cfg.iterations, mean_r, time.time() - t_start)
            save_policy(ckpt_path, params, scn.fingerprint())
            checkpoints[seed] = ckpt_path
    return TrainResult(run_dir=run_dir, curves_csv=curves_path,
                       checkpoints=checkpoints)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalCell:
    attacker: AttackerStrategyId
    horizon: int
    episodes: int
    mean_reward: float
    std_reward: float

    def csv_row(self) -> str:
        return (f"{self.attacker.value},{self.horizon},{self.episodes},"
                f"{self.mean_reward:.6f},{self.std_reward:.6f}")


def evaluate_params(params: PolicyParams, scn: Scenario,
                    attacker: AttackerStrategyId, horizon: int, episodes: int,
                    seed: int, particles: int = 1000, budget_factor: int = 100,
                    detection_probability: float = DEFAULT_DETECTION_PROBABILITY,
                    greedy: bool = False, trace_dir: Path | None = None,
                    uniform_exploit_selection: bool = False) -> EvalCell:
    """Undiscounted cumulative reward, mean and sample std over episodes."""
    sel = (ExploitSelectionPolicy.uniform_random(scn)
           if uniform_exploit_selection else ExploitSelectionPolicy.default(scn))
    sim = CageSimulator(scn, make_strategy(attacker, scn, sel),
                        RewardTable.cage2_defaults(scn), detection_probability)
    actions = action_space(scn)
    limits = FilterLimits(budget_factor)
    totals = []
    for episode in range(episodes):
        ep_rng, f_rng = _episode_rngs(seed, 0, episode)
        result = run_episode(sim, params, horizon, particles, limits, ep_rng,
                             f_rng, actions, scn,
                             collect_trace=trace_dir is not None,
                             greedy=greedy)
        totals.append(result.cumulative_reward)
        if trace_dir is not None:
            write_trace(trace_dir / f"trace-ep{episode}.jsonl", result.trace,
                        scn, result.cumulative_reward)
    totals = np.array(totals)
    std = float(totals.std(ddof=1)) if episodes > 1 else 0.0
    return EvalCell(attacker=attacker, horizon=horizon, episodes=episodes,
                    mean_reward=float(totals.mean()), std_reward=std)


def evaluate(checkpoint_path, attacker: AttackerStrategyId, horizon: int,
             episodes: int = 100, seed: int = 0,
             scenario: Scenario | None = None, **kwargs) -> EvalCell:
    """Evaluate a checkpoint; the checkpoint's scenario fingerprint must match."""
    scn = scenario if scenario is not None else default_scenario()
    params, _ = load_policy(checkpoint_path, expected_fingerprint=scn.fingerprint())
    return evaluate_params(params, scn, attacker, horizon, episodes, seed,
                           **kwargs)


def evaluate_baseline(kind: str, scn: Scenario, attacker: AttackerStrategyId,
                      horizon: int, episodes: int, seed: int,
                      detection_probability: float = DEFAULT_DETECTION_PROBABILITY) -> EvalCell:
    """Reference defenders: ``idle`` never acts, ``random`` picks uniformly."""
    sim = CageSimulator(scn, make_strategy(attacker, scn),
                        RewardTable.cage2_defaults(scn), detection_probability)
    actions = action_space(scn)
    if kind == "idle":
        pick = lambda t, rng: actions[0]
    elif kind == "random":
        pick = lambda t, rng: actions[int(rng.integers(len(actions)))]
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    totals = []
    for episode in range(episodes):
        ep_rng, _ = _episode_rngs(seed, 0, episode)
        totals.append(run_scripted_episode(sim, horizon, ep_rng, pick).cumulative_reward)
    totals = np.array(totals)
    std = float(totals.std(ddof=1)) if episodes > 1 else 0.0
    return EvalCell(attacker=attacker, horizon=horizon, episodes=episodes,
                    mean_reward=float(totals.mean()), std_reward=std)


# ---------------------------------------------------------------------------
# trajectory dump and replay


class TraceError(ValueError):
    pass


def _trace_record(t: int, step, action: DefenderAction, scn: Scenario) -> dict:
    return {
        "t": t,
        "state": step.state.digest(),
        "defender": action.label(scn),
        "attacker": step.attacker_action.label(scn),
        "observation": obs_to_str(step.observation),
        "reward": step.reward,
    }


def write_trace(path, records: list[dict], scn: Scenario,
                cumulative_reward: float) -> None:
    """Line-delimited JSON: a header record then one record per step."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "type": "header",
        "scenario_fingerprint": scn.fingerprint(),
        "hosts": [h.name for h in scn.hosts],
        "steps": len(records),
        "cumulative_reward": cumulative_reward,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_trace(path):
    """Returns (header, records); validates structure."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [line for line in fh.read().splitlines() if line.strip()]
    except OSError as exc:
        raise TraceError(f"cannot read trace: {exc}") from exc
    if not lines:
        raise TraceError("empty trace file")
    try:
        header = json.loads(lines[0])
        records = [json.loads(line) for line in lines[1:]]
    except json.JSONDecodeError as exc:
        raise TraceError(f"malformed trace line: {exc}") from exc
    if header.get("type") != "header":
        raise TraceError("trace does not start with a header record")
    for rec in records:
        for key in ("t", "state", "defender", "attacker", "observation", "reward"):
            if key not in rec:
                raise TraceError(f"step record missing {key!r}: {rec}")
    return header, records


def replay(path) -> str:
    """Render a dumped trajectory as a step-by-step table."""
    header, records = read_trace(path)
    hosts = header.get("hosts", [])
    lines = [f"episode of {header['steps']} steps, "
             f"cumulative reward {header['cumulative_reward']:.4f}",
             f"hosts: {', '.join(hosts)}",
             f"{'t':>4}  {'defender':<22} {'attacker':<26} "
             f"{'access':<{max(len(hosts), 6)}} {'obs':<{max(len(hosts), 3)}} {'reward':>8}"]
    total = 0.0
    for rec in records:
        access = rec["state"].split("|")[0]
        total += rec["reward"]
        lines.append(f"{rec['t']:>4}  {rec['defender']:<22} {rec['attacker']:<26} "
                     f"{access:<{max(len(hosts), 6)}} {rec['observation']:<{max(len(hosts), 3)}} "
                     f"{rec['reward']:>8.2f}")
    lines.append(f"replayed cumulative reward: {total:.4f}")
    if abs(total - header["cumulative_reward"]) > 1e-6:
        raise TraceError(
            f"replayed reward {total} does not match recorded "
            f"{header['cumulative_reward']}")
    return "\n".join(lines)
