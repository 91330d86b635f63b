"""Training loop with a shared training-step clock for ERL variants and baselines.

Every iteration collects whole episodes, then runs exactly as many gradient
updates as the (first) target worker collected timesteps.  The clock is the
cumulative number of gradient updates, which makes curves of different
algorithms comparable.

Phases per iteration never overlap: rollouts (possibly on a thread pool)
finish before the ES update, which finishes before the RL update.
"""
from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import evostrat as es
from .approximator import actor_spec, critic_spec, init_params
from .envsim import ENV_REGISTRY, TARGET, Trajectory, make_env, rollout
from .errors import ConfigError, WorkerError
from .metrics import RunRecord
from .replay import DualReplayStore, ReplayStore
from .td3core import Learner, TD3Hyper, save_checkpoint, train_steps

log = logging.getLogger(__name__)

ALGORITHMS = ("erl_normal", "erl_always", "erl_always_first", "param_noise", "no_pop")
BUFFER_MODES = ("single_shared", "dual")

# independent random streams, keyed together with (iteration, slot)
_ROLLOUT, _ES, _EVAL, _LEARNER, _INIT, _INJECT = range(6)


@dataclass
class RunConfig:
    algorithm: str = "erl_always"
    buffer_mode: str = "single_shared"
    mix_ratio: float = 0.5                # share of target data per batch in dual mode
    env: str = "pointmass-2d"
    population_size: int = 10
    sigma: float = 0.01
    parents_k: int = 5
    total_training_steps: int = 50_000
    eval_period_iterations: int = 2
    eval_episodes: int = 10
    seeds: list = field(default_factory=lambda: [0])
    gamma: float = 0.99
    tau: float = 5e-3
    policy_delay: int = 2
    smoothing_noise_std: float = 0.2
    smoothing_clip: float = 0.5
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    batch_size: int = 256
    exploration_noise: float = 0.1
    actor_hidden: tuple = (64, 64)
    critic_hidden: tuple = (64, 64)
    actor_layer_norm: bool = True
    buffer_capacity: int | None = None    # None: 1e6 shared, 5e5 per store in dual mode
    inject_random_episodes: int = 0       # episodes of a fixed random actor added to the population route
    workers: int = 1
    output_dir: str = "runs"
    run_name: str | None = None
    checkpoint: bool = True

    def __post_init__(self):
        m = re.fullmatch(r"dual\(\s*([0-9.eE+-]+)\s*\)", str(self.buffer_mode))
        if m:
            self.buffer_mode, self.mix_ratio = "dual", float(m.group(1))
        self.actor_hidden = tuple(int(h) for h in self.actor_hidden)
        self.critic_hidden = tuple(int(h) for h in self.critic_hidden)
        if isinstance(self.seeds, int):
            self.seeds = [self.seeds]
        self.seeds = [int(s) for s in self.seeds]
        self.validate()

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.buffer_mode not in BUFFER_MODES:
            raise ConfigError(f"buffer_mode must be single_shared or dual(m), got {self.buffer_mode!r}")
        if self.env not in ENV_REGISTRY:
            raise ConfigError(f"unknown env {self.env!r}; available: {sorted(ENV_REGISTRY)}")
        if self.algorithm == "no_pop":
            if self.buffer_mode != "single_shared":
                raise ConfigError("no_pop has no population data, so it needs the single shared buffer")
            if self.inject_random_episodes:
                raise ConfigError("no_pop buffer is fed only by target-clone workers")
            if self.population_size < 0:
                raise ConfigError("population_size must be >= 0")
        else:
            if not 1 <= self.parents_k <= self.population_size:
                raise ConfigError(f"need 1 <= K <= N, got N={self.population_size}, K={self.parents_k}")
            if not self.sigma > 0:
                raise ConfigError("sigma must be positive")
        if self.buffer_mode == "dual" and not 0.0 < self.mix_ratio <= 1.0:
            raise ConfigError(f"mix ratio must lie in (0, 1], got {self.mix_ratio}")
        if self.total_training_steps < 0:
            raise ConfigError("total_training_steps must be >= 0")
        if self.eval_period_iterations < 1 or self.eval_episodes < 1:
            raise ConfigError("evaluation period and episode count must be >= 1")
        if self.workers < 1 or self.inject_random_episodes < 0:
            raise ConfigError("workers must be >= 1 and inject_random_episodes >= 0")
        if self.exploration_noise < 0:
            raise ConfigError("exploration_noise must be >= 0")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.capacity < self.batch_size:
            raise ConfigError("buffer capacity must hold at least one batch")
        self.hyper()  # validates the learner fields

    @property
    def capacity(self) -> int:
        if self.buffer_capacity is not None:
            return int(self.buffer_capacity)
        return 500_000 if self.buffer_mode == "dual" else 1_000_000

    @property
    def has_population(self) -> bool:
        return self.algorithm != "no_pop"

    def hyper(self) -> TD3Hyper:
        return TD3Hyper(self.gamma, self.tau, self.policy_delay, self.smoothing_noise_std,
                        self.smoothing_clip, self.actor_lr, self.critic_lr, self.batch_size)

    def strategy(self) -> str:
        return {"erl_normal": "normal", "erl_always": "always", "erl_always_first": "always_first",
                "param_noise": "param_noise"}[self.algorithm]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["actor_hidden"] = list(self.actor_hidden)
        d["critic_hidden"] = list(self.critic_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        try:
            if path.suffix == ".json":
                data = json.loads(text)
            else:
                import yaml
                data = yaml.safe_load(text)
        except Exception as e:  # json and yaml raise unrelated error types
            raise ConfigError(f"cannot parse config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        return cls.from_dict(data)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


@dataclass
class IterationReport:
    iteration: int
    gradient_budget: int
    gradient_updates: int
    clock: int
    episodes: int
    env_steps: int
    fitnesses: list | None = None
    f_target: float | None = None
    discrepancies: list | None = None
    critic_loss: float | None = None
    actor_objective: float | None = None
    origin_target: int = 0
    origin_pop: int = 0
    not_ready: bool = False


class RunState:
    """Everything one trial owns: learner, buffers, ES population and the clock."""

    def __init__(self, config: RunConfig, seed: int):
        self.config = config
        self.seed = seed
        self.env_spec = make_env(config.env).spec
        sd, ad = self.env_spec.state_dim, self.env_spec.action_dim
        self.learner = Learner(actor_spec(sd, ad, config.actor_hidden, config.actor_layer_norm),
                               critic_spec(sd, ad, config.critic_hidden), self.env_spec.low, self.env_spec.high,
                               config.hyper(), seed=np.random.SeedSequence(seed, spawn_key=(_LEARNER,)))
        if config.buffer_mode == "dual":
            self.buffer = DualReplayStore(config.capacity, sd, ad, config.mix_ratio)
        else:
            self.buffer = ReplayStore(config.capacity, sd, ad)
        self.pop = None
        if config.has_population:
            self.pop = es.PopulationState(self.learner.actor.copy(), config.sigma, config.population_size,
                                          config.parents_k, config.strategy())
        self.random_actor = None
        if config.inject_random_episodes:
            # drawn once per run and never trained
            self.random_actor = init_params(self.learner.actor_spec, _rng(seed, _INIT))
        self.clock = 0
        self.iteration = 0
        self.ablate_population = False   # ERL loop with ES and population rollouts switched off
        self.record = RunRecord(config.to_dict() | {"seed": seed}, seed)
        self.executor = ThreadPoolExecutor(config.workers) if config.workers > 1 else None

    def close(self):
        if self.executor is not None:
            self.executor.shutdown()
            self.executor = None

    @property
    def remaining(self) -> int:
        return self.config.total_training_steps - self.clock


# -- rollouts -----------------------------------------------------------------
@dataclass
class _Job:
    params: np.ndarray
    noise: float
    origin: int
    rng_key: tuple


def _run_job(state: RunState, job: _Job) -> Trajectory:
    env = make_env(state.config.env)
    policy = state.learner.policy(job.params)
    return rollout(env, policy, job.noise, _rng(state.seed, *job.rng_key), job.origin)


def run_workers(state: RunState, jobs: list[_Job]) -> list[Trajectory]:
    """Roll out every job; results come back in job order regardless of scheduling."""
    try:
        if state.executor is None:
            return [_run_job(state, j) for j in jobs]
        return list(state.executor.map(lambda j: _run_job(state, j), jobs))
    except Exception as e:  # any worker failure aborts the iteration
        raise WorkerError(f"rollout worker failed in iteration {state.iteration}: {e!r}") from e


def _store(state: RunState, trajs: list[Trajectory]):
    # pushes happen after the barrier in worker order, so buffer contents are deterministic
    for t in trajs:
        state.buffer.push_trajectory(t)


def _train(state: RunState, budget: int):
    n = max(0, min(budget, state.remaining))
    rep = train_steps(state.learner, state.buffer, n)
    state.clock += rep.steps
    return rep


def _injected_jobs(state: RunState) -> list[_Job]:
    """Episodes of a fixed random actor, routed like population data."""
    cfg = state.config
    origin = cfg.population_size  # any non-negative tag marks population-route data
    return [_Job(state.random_actor, cfg.exploration_noise, origin, (_INJECT, state.iteration, j))
            for j in range(cfg.inject_random_episodes)]


def run_iteration_erl(state: RunState) -> IterationReport:
    cfg, L, pop = state.config, state.learner, state.pop
    it = state.iteration
    if state.ablate_population:
        trajs = run_workers(state, [_Job(L.actor.copy(), cfg.exploration_noise, TARGET, (_ROLLOUT, it, 0))])
        _store(state, trajs)
        rep = _train(state, trajs[0].length)
        return _finish(state, trajs[0].length, rep, trajs)

    if pop.strategy == "param_noise":
        pop.mean = L.actor.copy()
    theta = L.actor.copy()
    individuals = es.sample_population(pop, _rng(state.seed, _ES, it))
    jobs = [_Job(theta, cfg.exploration_noise, TARGET, (_ROLLOUT, it, 0)),
            _Job(theta, 0.0, TARGET, (_ROLLOUT, it, 1))]
    jobs += [_Job(ind, 0.0, i, (_ROLLOUT, it, 2 + i)) for i, ind in enumerate(individuals)]
    n_pop = len(jobs)
    trajs = run_workers(state, jobs + _injected_jobs(state))
    explore, fit_ep, pop_trajs = trajs[0], trajs[1], trajs[2:n_pop]
    _store(state, trajs)

    fitnesses = [t.episodic_return for t in pop_trajs]
    f_target = fit_ep.episodic_return
    target_policy = L.policy(theta)
    disc = [es.action_discrepancy(target_policy, L.policy(ind), t.states) for ind, t in zip(individuals, pop_trajs)]

    es.set_fitness(pop, fitnesses, theta, f_target)
    es.es_update(pop, es.select_parents(pop), theta)

    rep = _train(state, explore.length)
    return _finish(state, explore.length, rep, trajs, fitnesses, f_target, disc)


def run_iteration_no_pop(state: RunState) -> IterationReport:
    cfg, L = state.config, state.learner
    theta = L.actor.copy()  # every clone gets the latest parameters
    jobs = [_Job(theta, cfg.exploration_noise, TARGET, (_ROLLOUT, state.iteration, j))
            for j in range(cfg.population_size + 1)]
    trajs = run_workers(state, jobs)
    _store(state, trajs)
    rep = _train(state, trajs[0].length)
    return _finish(state, trajs[0].length, rep, trajs)


def _finish(state, budget, rep, trajs, fitnesses=None, f_target=None, disc=None) -> IterationReport:
    return IterationReport(
        iteration=state.iteration, gradient_budget=budget, gradient_updates=rep.steps, clock=state.clock,
        episodes=len(trajs), env_steps=sum(t.length for t in trajs), fitnesses=fitnesses, f_target=f_target,
        discrepancies=disc,
        critic_loss=None if rep.steps == 0 else rep.critic_loss,
        actor_objective=None if rep.actor_updates == 0 else rep.actor_objective,
        origin_target=rep.origin_target, origin_pop=rep.origin_pop, not_ready=rep.not_ready,
    )


# -- evaluation ---------------------------------------------------------------
def evaluate_params(state: RunState, params: np.ndarray, stream: int) -> float:
    """Noise-free mean return over ``eval_episodes`` episodes."""
    cfg = state.config
    policy = state.learner.policy(params)
    if state.env_spec.reset_mode == "fixed_reset":
        # deterministic dynamics and start state: every episode is identical
        return rollout(make_env(cfg.env), policy).episodic_return
    rets = [rollout(make_env(cfg.env), policy, 0.0, _rng(state.seed, _EVAL, state.iteration, stream, e)).episodic_return
            for e in range(cfg.eval_episodes)]
    return float(np.mean(rets))


@dataclass
class EvalRecord:
    training_steps: int
    target_return: float
    pop_mean_return: float | None = None


def evaluate(state: RunState) -> EvalRecord:
    target = evaluate_params(state, state.learner.actor, 0)
    pm = None
    if state.pop is not None and not state.ablate_population:
        pm = evaluate_params(state, state.pop.mean, 1)
    return EvalRecord(state.clock, target, pm)


# -- experiment -----------------------------------------------------------------
def run_iteration(state: RunState) -> IterationReport:
    if state.config.has_population:
        return run_iteration_erl(state)
    return run_iteration_no_pop(state)


def step(state: RunState) -> IterationReport:
    """One iteration plus its record row; evaluation every ``eval_period_iterations``."""
    rep = run_iteration(state)
    state.iteration += 1
    row = {
        "iteration": rep.iteration,
        "training_steps": state.clock,
        "gradient_updates": rep.gradient_updates,
        "env_steps": rep.env_steps,
        "critic_loss": rep.critic_loss,
        "actor_objective": rep.actor_objective,
        "batch_origin_target": rep.origin_target,
        "batch_origin_pop": rep.origin_pop,
    }
    if rep.fitnesses is not None:
        row.update(fitness_list=rep.fitnesses, mean_pop_fitness=float(np.mean(rep.fitnesses)), f_target=rep.f_target,
                   action_discrepancies=rep.discrepancies, mean_action_discrepancy=float(np.mean(rep.discrepancies)))
    if state.iteration % state.config.eval_period_iterations == 0:
        ev = evaluate(state)
        row["target_eval_return"] = ev.target_return
        row["pop_mean_eval_return"] = ev.pop_mean_return
    state.record.append(row)
    return rep


def seed_dir(config: RunConfig, seed: int) -> Path:
    name = config.run_name or f"{config.algorithm}_{config.env}"
    return Path(config.output_dir) / name / f"seed_{seed}"


def save_state(state: RunState, out: Path):
    save_checkpoint(state.learner, out / "actor_final.npz")
    if state.pop is not None:
        np.save(out / "pop_mean_final.npy", state.pop.mean)


def run_experiment(config: RunConfig, seed: int | None = None, out_dir=None, max_iterations: int | None = None,
                   state: RunState | None = None) -> RunRecord:
    """Iterate until the clock reaches ``total_training_steps``; one seed per call."""
    config.validate()
    seed = config.seeds[0] if seed is None else seed
    state = state or RunState(config, seed)
    out = None
    if out_dir is not None or config.checkpoint:
        out = Path(out_dir) if out_dir is not None else seed_dir(config, seed)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(state.record.config, indent=2, sort_keys=True) + "\n")
        rec_path = out / "record.jsonl"
        rec_path.write_text("")
        state.record.path = rec_path
    try:
        while state.clock < config.total_training_steps:
            if max_iterations is not None and state.iteration >= max_iterations:
                break
            try:
                step(state)
            except WorkerError:
                if out is not None:
                    save_state(state, out)
                log.error("worker failure at iteration %d; state checkpointed", state.iteration)
                raise
            if state.iteration % 50 == 0:
                log.info("seed %d iteration %d clock %d", seed, state.iteration, state.clock)
        if out is not None and config.checkpoint:
            save_state(state, out)
    finally:
        state.close()
    return state.record
