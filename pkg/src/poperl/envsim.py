"""Small deterministic continuous-control tasks and the episode runner.

Two tasks are registered:

``pointmass-2d``
    A unit mass on a plane, pushed by a force in [-1, 1]^2 toward the origin.
    Reward is minus the distance to the goal after each step; the episode
    terminates when the mass is within ``goal_radius`` of the goal.
``ridge-1d``
    A point on a line starting on a small reward bump with a larger peak
    further away, separated by a zero-reward valley.  ``ridge-1d-term`` adds
    a cliff at the left edge that ends the episode.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, NumericError

TARGET = -1  # origin tag for target-actor data; population members use their index >= 0


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    action_low: tuple
    action_high: tuple
    max_episode_steps: int
    reset_mode: str = "fixed_reset"

    def __post_init__(self):
        low = np.asarray(self.action_low, dtype=float)
        high = np.asarray(self.action_high, dtype=float)
        if low.shape != (self.action_dim,) or high.shape != (self.action_dim,):
            raise ConfigError("action bounds must have one entry per action dimension")
        if not (np.all(np.isfinite(low)) and np.all(np.isfinite(high)) and np.all(low < high)):
            raise ConfigError("action bounds must be finite with low < high")
        if self.max_episode_steps < 1:
            raise ConfigError("max_episode_steps must be >= 1")
        if self.reset_mode not in ("fixed_reset", "seeded_random_reset"):
            raise ConfigError(f"unknown reset mode {self.reset_mode!r}")

    @property
    def low(self) -> np.ndarray:
        return np.asarray(self.action_low, dtype=float)

    @property
    def high(self) -> np.ndarray:
        return np.asarray(self.action_high, dtype=float)


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    origin: int = TARGET


@dataclass
class Trajectory:
    """One episode stored column-wise.

    ``dones`` marks true termination only; an episode cut by the step cap has
    ``truncated=True`` and an all-false ``dones`` column, so the learner keeps
    bootstrapping through time-limit ends.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    origin: int
    truncated: bool = False
    n_clipped: int = 0
    episodic_return: float = field(init=False)

    def __post_init__(self):
        self.episodic_return = float(np.sum(self.rewards))

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def length(self) -> int:
        return len(self.rewards)

    @property
    def transitions(self) -> list[Transition]:
        return [
            Transition(self.states[t], self.actions[t], float(self.rewards[t]),
                       self.next_states[t], bool(self.dones[t]), self.origin)
            for t in range(len(self))
        ]


class Env:
    """Base class; subclasses define ``spec``, ``_initial_state`` and ``transition``."""

    spec: EnvSpec

    def __init__(self):
        self._state = None
        self._t = 0

    def _initial_state(self, rng: np.random.Generator | None) -> np.ndarray:
        raise NotImplementedError

    def transition(self, state: np.ndarray, action: np.ndarray):
        """Pure dynamics: ``(next_state, reward, terminal)``."""
        raise NotImplementedError

    def reset(self, seed=None) -> np.ndarray:
        if self.spec.reset_mode == "seeded_random_reset":
            if seed is None:
                raise ConfigError(f"{self.spec.name} needs a seed to reset")
            rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        else:
            rng = None
        self._state = self._initial_state(rng)
        self._t = 0
        return self._state.copy()

    def clip_action(self, action) -> tuple[np.ndarray, bool]:
        a = np.asarray(action, dtype=float)
        if a.shape != (self.spec.action_dim,):
            raise ConfigError(f"action has shape {a.shape}, expected ({self.spec.action_dim},)")
        if np.any(np.isnan(a)):
            raise NumericError(f"NaN action {a}")
        c = np.clip(a, self.spec.low, self.spec.high)
        return c, bool(np.any(c != a))

    def step(self, action):
        """Advance one step; returns ``(next_state, reward, done, info)``.

        ``done`` is true on termination or when the step cap is reached;
        ``info`` carries ``terminal``, ``truncated`` and ``clipped``.
        """
        if self._state is None:
            raise ConfigError("step() called before reset()")
        a, clipped = self.clip_action(action)
        nxt, reward, terminal = self.transition(self._state, a)
        self._t += 1
        truncated = (not terminal) and self._t >= self.spec.max_episode_steps
        self._state = nxt
        info = {"terminal": terminal, "truncated": truncated, "clipped": clipped, "action": a}
        return nxt.copy(), float(reward), terminal or truncated, info


class PointMass2D(Env):
    dt = 0.1
    max_speed = 1.0
    bound = 2.0
    goal_radius = 0.1

    def __init__(self, reset_mode="fixed_reset", start=(1.0, 1.0), goal=(0.0, 0.0), max_episode_steps=200):
        super().__init__()
        self.spec = EnvSpec("pointmass-2d" if reset_mode == "fixed_reset" else "pointmass-2d-random",
                            4, 2, (-1.0, -1.0), (1.0, 1.0), max_episode_steps, reset_mode)
        self.start = np.asarray(start, dtype=float)
        self.goal = np.asarray(goal, dtype=float)

    def _initial_state(self, rng):
        if rng is None:
            pos = self.start.copy()
        else:
            # resample until clear of the goal so no episode starts terminated
            while True:
                pos = rng.uniform(-1.5, 1.5, size=2)
                if np.linalg.norm(pos - self.goal) > 3 * self.goal_radius:
                    break
        return np.concatenate([pos, np.zeros(2)])

    def transition(self, state, action):
        pos, vel = state[:2], state[2:]
        vel = np.clip(vel + self.dt * action, -self.max_speed, self.max_speed)
        pos = pos + self.dt * vel
        hit = np.abs(pos) > self.bound
        pos = np.clip(pos, -self.bound, self.bound)
        vel = np.where(hit, 0.0, vel)
        dist = float(np.linalg.norm(pos - self.goal))
        return np.concatenate([pos, vel]), -dist, dist < self.goal_radius


class Ridge1D(Env):
    """Reward bump of height 0.5 at x=0 and height 1.0 at x=2.5."""

    dt = 0.1
    width = 0.25
    x_min, x_max = -1.0, 3.0

    def __init__(self, cliff=False, max_episode_steps=100):
        super().__init__()
        self.cliff = cliff
        self.spec = EnvSpec("ridge-1d-term" if cliff else "ridge-1d", 1, 1, (-1.0,), (1.0,),
                            max_episode_steps, "fixed_reset")

    def _initial_state(self, rng):
        return np.zeros(1)

    def reward_at(self, x):
        w2 = 2 * self.width ** 2
        return 0.5 * np.exp(-x ** 2 / w2) + 1.0 * np.exp(-(x - 2.5) ** 2 / w2)

    def transition(self, state, action):
        x = float(np.clip(state[0] + self.dt * action[0], self.x_min, self.x_max))
        terminal = self.cliff and x <= self.x_min + 0.1
        return np.array([x]), float(self.reward_at(x)), terminal


ENV_REGISTRY: dict[str, Callable[[], Env]] = {
    "pointmass-2d": lambda: PointMass2D("fixed_reset"),
    "pointmass-2d-random": lambda: PointMass2D("seeded_random_reset"),
    "ridge-1d": lambda: Ridge1D(cliff=False),
    "ridge-1d-term": lambda: Ridge1D(cliff=True),
}


def make_env(name: str) -> Env:
    try:
        return ENV_REGISTRY[name]()
    except KeyError:
        raise ConfigError(f"unknown environment {name!r}; known: {sorted(ENV_REGISTRY)}") from None


def rollout(env: Env, policy, noise_std: float = 0.0, seed=None, origin: int = TARGET) -> Trajectory:
    """Run one full episode of ``policy`` (a callable ``state -> action``).

    With ``noise_std > 0`` Gaussian noise scaled by half the action range is
    added to every action before clipping.  ``seed`` feeds both the reset and
    the noise stream; it may be an int, a SeedSequence or a Generator.
    """
    if noise_std < 0:
        raise ConfigError("noise_std must be >= 0")
    spec = env.spec
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    half_range = (spec.high - spec.low) / 2.0
    state = env.reset(rng if spec.reset_mode == "seeded_random_reset" else None)
    T = spec.max_episode_steps
    S = np.empty((T, spec.state_dim))
    A = np.empty((T, spec.action_dim))
    R = np.empty(T)
    S2 = np.empty((T, spec.state_dim))
    D = np.zeros(T, dtype=bool)
    n_clipped = 0
    truncated = False
    t = 0
    while True:
        a = np.asarray(policy(state), dtype=float)
        if a.shape != (spec.action_dim,):
            raise ConfigError(f"policy returned shape {a.shape}, expected ({spec.action_dim},)")
        if noise_std > 0:
            a = a + noise_std * half_range * rng.standard_normal(spec.action_dim)
        nxt, r, done, info = env.step(a)
        n_clipped += info["clipped"]
        S[t], A[t], R[t], S2[t], D[t] = state, info["action"], r, nxt, info["terminal"]
        t += 1
        state = nxt
        if done:
            truncated = info["truncated"]
            break
    return Trajectory(S[:t], A[:t], R[:t], S2[:t], D[:t], origin, truncated, n_clipped)
