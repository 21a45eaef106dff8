"""Neural defender policy: state encoding, tanh actor-critic MLPs with
manually derived gradients, Monte Carlo advantages, the clipped-surrogate
update and Adam. Self-contained numpy, double precision throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dynamics import State
from .scenario import Scenario

N_ACCESS_STATES = 7

CHECKPOINT_FORMAT = "cage2pomdp-policy"
CHECKPOINT_VERSION = 1


class NonFiniteLossError(RuntimeError):
    """A PPO loss or gradient went non-finite; carries diagnostics."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message}: {diagnostics}")
        self.diagnostics = diagnostics


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# state encoding


def encoded_dim(scn: Scenario) -> int:
    return scn.n_hosts * (N_ACCESS_STATES + 2 * scn.n_services)


def encode_state(scn: Scenario, st: State) -> np.ndarray:
    """Per host: one-hot access state, running-service bits, scanned bits."""
    n, m = scn.n_hosts, scn.n_services
    x = np.zeros((n, N_ACCESS_STATES + 2 * m))
    x[np.arange(n), st.access.astype(np.int64)] = 1.0
    bits = np.arange(m, dtype=np.int64)
    x[:, N_ACCESS_STATES:N_ACCESS_STATES + m] = (st.running[:, None] >> bits) & 1
    x[:, N_ACCESS_STATES + m:] = (st.scanned[:, None] >> bits) & 1
    return x.reshape(-1)


# ---------------------------------------------------------------------------
# MLP with manual backprop


class MLP:
    """Fully connected network, tanh hidden activations, linear output.

    Weights are initialized uniformly scaled by fan-in. ``forward`` returns
    the output and the activation caches ``backward`` needs.
    """

    def __init__(self, sizes, rng: np.random.Generator):
        self.sizes = tuple(int(s) for s in sizes)
        self.w = []
        self.b = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.w.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.b.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.w)

    def forward(self, x: np.ndarray):
        h = x
        caches = [x]
        for i in range(self.n_layers):
            z = h @ self.w[i] + self.b[i]
            if i < self.n_layers - 1:
                h = np.tanh(z)
                caches.append(h)
            else:
                h = z
        return h, caches

    def backward(self, caches, dout: np.ndarray):
        """Gradients of a scalar loss given d(loss)/d(output)."""
        grads = [None] * (2 * self.n_layers)
        delta = dout
        for i in reversed(range(self.n_layers)):
            grads[2 * i] = caches[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.w[i].T) * (1.0 - caches[i] ** 2)
        return grads

    def parameters(self):
        out = []
        for w, b in zip(self.w, self.b):
            out.append(w)
            out.append(b)
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1) for p in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for p in self.parameters():
            p[...] = flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size


@dataclass
class PolicyParams:
    """Separate actor and critic networks plus the dimensions they assume."""

    actor: MLP
    critic: MLP
    input_dim: int
    n_actions: int
    hidden: tuple[int, ...]


def init_policy(input_dim: int, n_actions: int, hidden=(64, 64),
                rng: np.random.Generator | None = None,
                seed: int | None = 0) -> PolicyParams:
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    hidden = tuple(hidden)
    return PolicyParams(
        actor=MLP((input_dim, *hidden, n_actions), rng),
        critic=MLP((input_dim, *hidden, 1), rng),
        input_dim=input_dim,
        n_actions=n_actions,
        hidden=hidden,
    )


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def forward(params: PolicyParams, x: np.ndarray):
    """Action distribution and value estimate for one encoded state."""
    if x.shape != (params.input_dim,):
        raise ValueError(f"expected input of shape ({params.input_dim},), got {x.shape}")
    logits, _ = params.actor.forward(x[None, :])
    value, _ = params.critic.forward(x[None, :])
    probs = np.exp(_log_softmax(logits[0]))
    return probs, float(value[0, 0])


def forward_batch(params: PolicyParams, xs: np.ndarray):
    logits, _ = params.actor.forward(xs)
    values, _ = params.critic.forward(xs)
    return np.exp(_log_softmax(logits)), values[:, 0]


def sample_action(probs: np.ndarray, rng: np.random.Generator):
    """Draw an action index; returns (index, log probability at that index)."""
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u))
    idx = min(idx, len(probs) - 1)
    return idx, float(np.log(probs[idx]))


# ---------------------------------------------------------------------------
# trajectory buffer and Monte Carlo advantages


class TrajectoryBuffer:
    """Per-step (encoded state, action, behavior log-prob, reward, episode-end
    flag) tuples, episodes stored contiguously."""

    def __init__(self):
        self._states = []
        self._actions = []
        self._logps = []
        self._rewards = []
        self._dones = []

    def __len__(self) -> int:
        return len(self._states)

    def add(self, encoded_state: np.ndarray, action: int, logp: float,
            reward: float, done: bool) -> None:
        self._states.append(encoded_state)
        self._actions.append(action)
        self._logps.append(logp)
        self._rewards.append(reward)
        self._dones.append(done)

    def arrays(self):
        if not self._states:
            raise ValueError("empty buffer")
        if not self._dones[-1]:
            raise ValueError("buffer ends inside an episode")
        return (np.stack(self._states),
                np.array(self._actions, dtype=np.int64),
                np.array(self._logps),
                np.array(self._rewards),
                np.array(self._dones, dtype=bool))


def discounted_returns(rewards: np.ndarray, dones: np.ndarray,
                       gamma: float) -> np.ndarray:
    """Reward-to-go within each episode."""
    returns = np.empty_like(rewards)
    acc = 0.0
    for t in reversed(range(len(rewards))):
        if dones[t]:
            acc = 0.0
        acc = rewards[t] + gamma * acc
        returns[t] = acc
    return returns


def monte_carlo_advantages(rewards: np.ndarray, dones: np.ndarray,
                           values: np.ndarray, gamma: float):
    """Monte Carlo return minus the critic baseline, batch-normalized.

    Returns (normalized advantages, returns, raw advantages).
    """
    if len(rewards) == 0:
        raise ValueError("empty buffer")
    returns = discounted_returns(rewards, dones, gamma)
    raw = returns - values
    std = raw.std()
    normalized = (raw - raw.mean()) / (std + 1e-8)
    return normalized, returns, raw


# ---------------------------------------------------------------------------
# PPO update


@dataclass(frozen=True)
class PPOConfig:
    learning_rate: float = 5e-4
    clip: float = 0.2
    epochs: int = 10
    gamma: float = 0.99
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    entropy_coef: float = 0.0


class AdamState:
    """First/second moment accumulators for one parameter list."""

    def __init__(self, arrays, lr: float, beta1: float, beta2: float,
                 eps: float):
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, arrays, grads) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class OptimizerState:
    actor: AdamState
    critic: AdamState


def init_optimizer(params: PolicyParams, cfg: PPOConfig) -> OptimizerState:
    return OptimizerState(
        actor=AdamState(params.actor.parameters(), cfg.learning_rate,
                        cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
        critic=AdamState(params.critic.parameters(), cfg.learning_rate,
                         cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
    )


def surrogate_losses_and_grads(params: PolicyParams, xs: np.ndarray,
                               actions: np.ndarray, logp_old: np.ndarray,
                               advantages: np.ndarray, returns: np.ndarray,
                               clip: float, entropy_coef: float = 0.0):
    """Clipped-surrogate actor loss, squared-error critic loss, and their
    analytic gradients through both networks.

    Returns (actor_loss, critic_loss, actor_grads, critic_grads, stats).
    """
    n = xs.shape[0]
    logits, actor_caches = params.actor.forward(xs)
    logp_all = _log_softmax(logits)
    probs = np.exp(logp_all)
    logp_new = logp_all[np.arange(n), actions]
    rho = np.exp(logp_new - logp_old)
    surr_plain = rho * advantages
    surr_clip = np.clip(rho, 1.0 - clip, 1.0 + clip) * advantages
    surrogate = np.minimum(surr_plain, surr_clip)
    entropy = -(probs * logp_all).sum(axis=1)
    actor_loss = -surrogate.mean() - entropy_coef * entropy.mean()

    # the gradient flows through rho only where the plain branch attains the
    # min; inside the clip interval both branches coincide
    flow = (surr_plain <= surr_clip).astype(float)
    dlogp = -(flow * rho * advantages) / n
    dlogits = dlogp[:, None] * (np.eye(params.n_actions)[actions] - probs)
    if entropy_coef != 0.0:
        dlogits += entropy_coef * probs * (logp_all + entropy[:, None]) / n
    actor_grads = params.actor.backward(actor_caches, dlogits)

    values, critic_caches = params.critic.forward(xs)
    values = values[:, 0]
    critic_loss = float(((values - returns) ** 2).mean())
    dvalues = (2.0 * (values - returns) / n)[:, None]
    critic_grads = params.critic.backward(critic_caches, dvalues)

    stats = {
        "entropy": float(entropy.mean()),
        "clip_fraction": float((flow == 0.0).mean()),
    }
    return float(actor_loss), critic_loss, actor_grads, critic_grads, stats


@dataclass
class UpdateStats:
    actor_loss: float
    critic_loss: float
    entropy: float
    clip_fraction: float


def ppo_update(params: PolicyParams, opt: OptimizerState,
               buf: TrajectoryBuffer, cfg: PPOConfig):
    """Full-batch clipped-surrogate ascent for ``cfg.epochs`` epochs; the
    critic descends squared error to the Monte Carlo returns.

    Returns (params, opt, UpdateStats); aborts on non-finite losses.
    """
    xs, actions, logp_old, rewards, dones = buf.arrays()
    values = forward_batch(params, xs)[1]
    advantages, returns, _ = monte_carlo_advantages(rewards, dones, values,
                                                    cfg.gamma)
    stats = None
    for epoch in range(cfg.epochs):
        actor_loss, critic_loss, actor_grads, critic_grads, extra = \
            surrogate_losses_and_grads(params, xs, actions, logp_old,
                                       advantages, returns, cfg.clip,
                                       cfg.entropy_coef)
        if not (np.isfinite(actor_loss) and np.isfinite(critic_loss)):
            raise NonFiniteLossError("PPO update aborted", {
                "epoch": epoch,
                "actor_loss": actor_loss,
                "critic_loss": critic_loss,
                "batch_size": len(buf),
                "max_abs_advantage": float(np.abs(advantages).max()),
            })
        opt.actor.step(params.actor.parameters(), actor_grads)
        opt.critic.step(params.critic.parameters(), critic_grads)
        stats = UpdateStats(actor_loss=actor_loss, critic_loss=critic_loss,
                            entropy=extra["entropy"],
                            clip_fraction=extra["clip_fraction"])
    return params, opt, stats


# ---------------------------------------------------------------------------
# checkpointing (custom binary: byte-identical across runs)


def _array_manifest(params: PolicyParams):
    entries = []
    for net_name, net in (("actor", params.actor), ("critic", params.critic)):
        for i, (w, b) in enumerate(zip(net.w, net.b)):
            entries.append((f"{net_name}.w{i}", w))
            entries.append((f"{net_name}.b{i}", b))
    return entries


def save_policy(path, params: PolicyParams, scenario_fingerprint: str) -> None:
    """Write a versioned header plus flat little-endian float64 arrays."""
    entries = _array_manifest(params)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "scenario_fingerprint": scenario_fingerprint,
        "input_dim": params.input_dim,
        "n_actions": params.n_actions,
        "hidden": list(params.hidden),
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in entries],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for _, a in entries:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_policy(path, expected_fingerprint: str | None = None):
    """Load a checkpoint; returns (PolicyParams, header dict)."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"not a policy checkpoint: {header.get('format')!r}")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')!r}")
    if expected_fingerprint is not None and \
            header["scenario_fingerprint"] != expected_fingerprint:
        raise CheckpointError(
            f"scenario fingerprint mismatch: checkpoint "
            f"{header['scenario_fingerprint']} vs expected {expected_fingerprint}")
    params = init_policy(header["input_dim"], header["n_actions"],
                         tuple(header["hidden"]), seed=0)
    entries = _array_manifest(params)
    if [e["name"] for e in header["arrays"]] != [name for name, _ in entries]:
        raise CheckpointError("checkpoint array manifest does not match the architecture")
    offset = 0
    for (name, a), meta in zip(entries, header["arrays"]):
        shape = tuple(meta["shape"])
        if shape != a.shape:
            raise CheckpointError(f"array {name} has shape {shape}, expected {a.shape}")
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        a[...] = data.reshape(shape)
        offset += count * 8
    if offset != len(blob):
        raise CheckpointError("checkpoint payload size does not match the manifest")
    return params, header
