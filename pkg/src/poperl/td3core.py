"""TD3 learner on top of the flat-vector MLPs in :mod:`poperl.approximator`."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import approximator as nn
from .approximator import AdamState, NetworkSpec
from .errors import ConfigError, NumericError
from .replay import Batch

CHECKPOINT_VERSION = 1


@dataclass
class TD3Hyper:
    gamma: float = 0.99
    tau: float = 5e-3
    policy_delay: int = 2
    smoothing_noise_std: float = 0.2
    smoothing_clip: float = 0.5
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    batch_size: int = 256

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau}")
        if self.policy_delay < 1 or self.batch_size < 1:
            raise ConfigError("policy_delay and batch_size must be >= 1")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ConfigError("learning rates must be positive")


class ActorPolicy:
    """Callable ``state -> action`` for a given actor parameter vector."""

    def __init__(self, spec: NetworkSpec, params: np.ndarray, low, high):
        self.spec = spec
        self.params = params
        self.center = (np.asarray(high, float) + np.asarray(low, float)) / 2.0
        self.half = (np.asarray(high, float) - np.asarray(low, float)) / 2.0

    def __call__(self, state):
        return self.center + self.half * nn.forward(self.spec, self.params, state)


class Learner:
    """Actor, twin critics, their target copies and Adam moments."""

    def __init__(self, actor_spec: NetworkSpec, critic_spec: NetworkSpec, action_low, action_high,
                 hyper: TD3Hyper | None = None, seed=None):
        self.hyper = hyper or TD3Hyper()
        self.actor_spec = actor_spec
        self.critic_spec = critic_spec
        self.low = np.asarray(action_low, float)
        self.high = np.asarray(action_high, float)
        self.state_dim = actor_spec.input_dim
        self.action_dim = actor_spec.output_dim
        if critic_spec.input_dim != self.state_dim + self.action_dim or critic_spec.output_dim != 1:
            raise ConfigError("critic must map (state, action) to a scalar")
        if self.low.shape != (self.action_dim,):
            raise ConfigError("action bounds do not match actor output")
        self.center = (self.high + self.low) / 2.0
        self.half = (self.high - self.low) / 2.0
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        init_ss, noise_ss = ss.spawn(2)
        init_rng = np.random.default_rng(init_ss)
        self.rng = np.random.default_rng(noise_ss)
        self.actor = nn.init_params(actor_spec, init_rng)
        self.critic1 = nn.init_params(critic_spec, init_rng)
        self.critic2 = nn.init_params(critic_spec, init_rng)
        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        self.actor_opt = AdamState.zeros(actor_spec.num_params)
        self.critic1_opt = AdamState.zeros(critic_spec.num_params)
        self.critic2_opt = AdamState.zeros(critic_spec.num_params)
        self.update_counter = 0

    def act(self, state, params=None):
        p = self.actor if params is None else params
        return self.center + self.half * nn.forward(self.actor_spec, p, state)

    def policy(self, params=None) -> ActorPolicy:
        return ActorPolicy(self.actor_spec, self.actor if params is None else params, self.low, self.high)

    def q(self, critic_params, states, actions):
        return nn.forward(self.critic_spec, critic_params, np.concatenate([states, actions], axis=-1))[..., 0]


def _row_weights(batch: Batch) -> np.ndarray:
    n = len(batch)
    if batch.weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(batch.weights, float)
    return w / w.sum()


def td_target(learner: Learner, batch: Batch) -> np.ndarray:
    """``r + gamma * (1 - done) * min(Q1', Q2')(s', smoothed mu'(s'))``."""
    h = learner.hyper
    a2 = learner.act(batch.next_states, learner.actor_target)
    if h.smoothing_noise_std > 0:
        noise = learner.rng.standard_normal(a2.shape) * h.smoothing_noise_std
        a2 = a2 + np.clip(noise, -h.smoothing_clip, h.smoothing_clip) * learner.half
    a2 = np.clip(a2, learner.low, learner.high)
    q1 = learner.q(learner.critic1_target, batch.next_states, a2)
    q2 = learner.q(learner.critic2_target, batch.next_states, a2)
    y = batch.rewards + h.gamma * (1.0 - batch.dones) * np.minimum(q1, q2)
    if not np.all(np.isfinite(y)):
        bad = np.flatnonzero(~np.isfinite(y))
        raise NumericError(
            f"non-finite TD target at rows {bad[:5].tolist()}: r={batch.rewards[bad[:5]].tolist()}, "
            f"q1'={q1[bad[:5]].tolist()}, q2'={q2[bad[:5]].tolist()}"
        )
    return y


def critic_update(learner: Learner, batch: Batch) -> float:
    """One Adam step on both critics toward the clipped double-Q target; returns the summed MSE."""
    if len(batch) == 0:
        raise ConfigError("empty batch")
    y = td_target(learner, batch)
    w = _row_weights(batch)
    x = np.concatenate([batch.states, batch.actions], axis=1)
    total = 0.0
    for params, opt in ((learner.critic1, learner.critic1_opt), (learner.critic2, learner.critic2_opt)):
        q, cache = nn.forward_cached(learner.critic_spec, params, x)
        err = q[:, 0] - y
        total += float(np.sum(w * err * err))
        grad, _ = nn.backward_cached(learner.critic_spec, params, cache, (2.0 * w * err)[:, None])
        nn.adam_step(params, grad, opt, learner.hyper.critic_lr)
    return total


def actor_gradient(learner: Learner, batch: Batch, critic_fn=None):
    """``(objective, d objective / d actor)`` for ``E_batch[Q1(s, mu(s))]``.

    ``critic_fn(states, actions) -> (q, dq_da)`` replaces the first critic
    with a frozen closed-form one when given.
    """
    w = _row_weights(batch)
    raw, cache_a = nn.forward_cached(learner.actor_spec, learner.actor, batch.states)
    a = learner.center + learner.half * raw
    if critic_fn is None:
        x = np.concatenate([batch.states, a], axis=1)
        q, cache_q = nn.forward_cached(learner.critic_spec, learner.critic1, x)
        q = q[:, 0]
        _, dx = nn.backward_cached(learner.critic_spec, learner.critic1, cache_q, w[:, None])
        dq_da = dx[:, learner.state_dim:]
    else:
        q, dq_da = critic_fn(batch.states, a)
        dq_da = dq_da * w[:, None]
    g, _ = nn.backward_cached(learner.actor_spec, learner.actor, cache_a, dq_da * learner.half)
    return float(np.sum(w * q)), g


def actor_update(learner: Learner, batch: Batch, critic_fn=None) -> float:
    """One Adam ascent step on the actor; returns the objective before the step."""
    obj, g = actor_gradient(learner, batch, critic_fn)
    nn.adam_step(learner.actor, -g, learner.actor_opt, learner.hyper.actor_lr)
    return obj


def polyak_sync(learner: Learner, tau: float | None = None):
    tau = learner.hyper.tau if tau is None else tau
    for live, tgt in ((learner.actor, learner.actor_target), (learner.critic1, learner.critic1_target),
                      (learner.critic2, learner.critic2_target)):
        if tau == 1.0:
            tgt[...] = live
        else:
            # exact no-op when live == target
            tgt += tau * (live - tgt)


@dataclass
class UpdateReport:
    steps: int = 0
    actor_updates: int = 0
    not_ready: bool = False
    critic_loss: float = float("nan")
    actor_objective: float = float("nan")
    origin_target: int = 0
    origin_pop: int = 0
    batch_counts: list = field(default_factory=list)  # per-batch (n_target, n_pop)


def train_steps(learner: Learner, source, n_steps: int, keep_batch_counts: bool = False) -> UpdateReport:
    """Run ``n_steps`` critic updates, with actor updates and target syncs every ``policy_delay``.

    ``source`` is a ReplayStore or DualReplayStore.  If it cannot yet serve a
    full batch nothing happens and ``report.not_ready`` is set.
    """
    if n_steps < 0:
        raise ConfigError("n_steps must be >= 0")
    rep = UpdateReport()
    if n_steps == 0:
        return rep
    h = learner.hyper
    if not source.ready(h.batch_size):
        rep.not_ready = True
        return rep
    c_losses, a_objs = [], []
    for _ in range(n_steps):
        batch = source.sample_batch(h.batch_size, learner.rng)
        n_t, n_p = batch.origin_counts()
        rep.origin_target += n_t
        rep.origin_pop += n_p
        if keep_batch_counts:
            rep.batch_counts.append((n_t, n_p))
        c_losses.append(critic_update(learner, batch))
        learner.update_counter += 1
        rep.steps += 1
        if learner.update_counter % h.policy_delay == 0:
            a_objs.append(actor_update(learner, batch))
            polyak_sync(learner)
            rep.actor_updates += 1
    rep.critic_loss = float(np.mean(c_losses))
    if a_objs:
        rep.actor_objective = float(np.mean(a_objs))
    return rep


# -- checkpoints -----------------------------------------------------------
_ARRAYS = ("actor", "actor_target", "critic1", "critic2", "critic1_target", "critic2_target")


def save_checkpoint(learner: Learner, path):
    meta = {
        "version": CHECKPOINT_VERSION,
        "actor_spec": learner.actor_spec.to_dict(),
        "critic_spec": learner.critic_spec.to_dict(),
        "hyper": asdict(learner.hyper),
        "low": learner.low.tolist(),
        "high": learner.high.tolist(),
        "update_counter": learner.update_counter,
    }
    arrays = {k: getattr(learner, k) for k in _ARRAYS}
    for name in ("actor_opt", "critic1_opt", "critic2_opt"):
        opt = getattr(learner, name)
        arrays[f"{name}_m"] = opt.m
        arrays[f"{name}_v"] = opt.v
        meta[f"{name}_t"] = opt.t
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> Learner:
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta.get('version')}")
        learner = Learner(NetworkSpec.from_dict(meta["actor_spec"]), NetworkSpec.from_dict(meta["critic_spec"]),
                          meta["low"], meta["high"], TD3Hyper(**meta["hyper"]))
        for k in _ARRAYS:
            getattr(learner, k)[...] = z[k]
        for name in ("actor_opt", "critic1_opt", "critic2_opt"):
            opt = getattr(learner, name)
            opt.m[...] = z[f"{name}_m"]
            opt.v[...] = z[f"{name}_v"]
            opt.t = meta[f"{name}_t"]
        learner.update_counter = meta["update_counter"]
    return learner
