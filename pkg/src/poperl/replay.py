"""FIFO replay stores.

:class:`ReplayStore` is the classic shared buffer.  :class:`DualReplayStore`
keeps target-actor data and population data apart and builds every batch
from an exact ``round(m * B)`` / ``B - round(m * B)`` split.

Stores keep their contents in preallocated numpy columns that grow by
doubling up to ``capacity``; once full they overwrite the oldest slot.
"""
from __future__ import annotations

import math
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .envsim import TARGET, Trajectory, Transition
from .errors import ConfigError, NotReadyError

SNAPSHOT_MAGIC = b"PRPLRB01"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<8sIQIIQQ")  # magic, version, capacity, state_dim, action_dim, size, total_pushed


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    origins: np.ndarray
    seq: np.ndarray
    weights: np.ndarray | None = None  # per-row loss weights; None means uniform

    def __len__(self) -> int:
        return len(self.rewards)

    def origin_counts(self) -> tuple[int, int]:
        n_target = int(np.count_nonzero(self.origins == TARGET))
        return n_target, len(self) - n_target

    def take(self, idx) -> "Batch":
        w = None if self.weights is None else self.weights[idx]
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx],
                     self.dones[idx], self.origins[idx], self.seq[idx], w)

    @staticmethod
    def concat(parts: list["Batch"]) -> "Batch":
        return Batch(*(np.concatenate([getattr(p, f) for p in parts])
                       for f in ("states", "actions", "rewards", "next_states", "dones", "origins", "seq")))


def mix_counts(m: float, batch_size: int) -> tuple[int, int]:
    """Half-up rounding of ``m * B`` target rows; the rest come from the population store."""
    n_target = int(math.floor(m * batch_size + 0.5))
    return n_target, batch_size - n_target


class ReplayStore:
    def __init__(self, capacity: int, state_dim: int, action_dim: int, seed=None):
        if capacity < 1:
            raise ConfigError("replay capacity must be >= 1")
        self.capacity = int(capacity)
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.rng = np.random.default_rng(seed)
        self._alloc = 0
        self._cols: dict[str, np.ndarray] = {}
        self._grow(min(self.capacity, 1024))
        self._next = 0  # slot the next push writes to
        self._size = 0
        self.total_pushed = 0
        self._lock = threading.Lock()

    def _grow(self, n: int):
        dims = {
            "states": ((self.state_dim,), np.float64),
            "actions": ((self.action_dim,), np.float64),
            "rewards": ((), np.float64),
            "next_states": ((self.state_dim,), np.float64),
            "dones": ((), np.bool_),
            "origins": ((), np.int32),
            "seq": ((), np.int64),
        }
        for name, (shape, dt) in dims.items():
            new = np.zeros((n, *shape), dtype=dt)
            if self._alloc:
                new[: self._alloc] = self._cols[name]
            self._cols[name] = new
        self._alloc = n

    def __len__(self) -> int:
        return self._size

    def _check_dims(self, states, actions):
        if states.shape[-1] != self.state_dim or actions.shape[-1] != self.action_dim:
            raise ConfigError(
                f"transition dims (state {states.shape[-1]}, action {actions.shape[-1]}) do not match "
                f"store (state {self.state_dim}, action {self.action_dim})"
            )

    def push(self, tr: Transition):
        s = np.asarray(tr.state, dtype=float)
        a = np.asarray(tr.action, dtype=float)
        self._check_dims(s, a)
        self._push_rows(s[None], a[None], np.array([tr.reward]), np.asarray(tr.next_state, float)[None],
                        np.array([tr.done]), np.array([tr.origin]))

    def push_trajectory(self, traj: Trajectory):
        self._check_dims(traj.states, traj.actions)
        n = len(traj)
        self._push_rows(traj.states, traj.actions, traj.rewards, traj.next_states, traj.dones,
                        np.full(n, traj.origin))

    def _push_rows(self, S, A, R, S2, D, O):
        n = len(R)
        if n == 0:
            return
        with self._lock:
            while self._alloc < self.capacity and self._size + n > self._alloc:
                self._grow(min(self.capacity, 2 * self._alloc))
            if n > self.capacity:  # only the newest `capacity` rows survive
                skip = n - self.capacity
                self.total_pushed += skip
                S, A, R, S2, D, O = (x[skip:] for x in (S, A, R, S2, D, O))
                n = self.capacity
            idx = (self._next + np.arange(n)) % self.capacity
            c = self._cols
            c["states"][idx] = S
            c["actions"][idx] = A
            c["rewards"][idx] = R
            c["next_states"][idx] = S2
            c["dones"][idx] = D
            c["origins"][idx] = O
            c["seq"][idx] = self.total_pushed + np.arange(n)
            self.total_pushed += n
            self._next = (self._next + n) % self.capacity
            self._size = min(self._size + n, self.capacity)

    def _slots(self, idx) -> Batch:
        c = self._cols
        return Batch(c["states"][idx], c["actions"][idx], c["rewards"][idx], c["next_states"][idx],
                     c["dones"][idx], c["origins"][idx], c["seq"][idx])

    def entries(self) -> Batch:
        """All stored rows, oldest first."""
        start = (self._next - self._size) % self.capacity
        return self._slots((start + np.arange(self._size)) % self.capacity)

    def ready(self, batch_size: int) -> bool:
        return self._size >= batch_size

    def sample(self, batch_size: int, rng: np.random.Generator | None = None) -> Batch:
        """Uniform draws with replacement over the current contents."""
        if batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self._size == 0:
            raise NotReadyError("cannot sample from an empty replay store")
        rng = self.rng if rng is None else rng
        slots = rng.integers(0, self._size, size=batch_size)
        # slots index FIFO positions; translate to physical ring positions
        start = (self._next - self._size) % self.capacity
        return self._slots((start + slots) % self.capacity)

    sample_batch = sample

    # -- snapshots ---------------------------------------------------------
    def _write(self, fh):
        e = self.entries()
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, self.capacity, self.state_dim,
                              self.action_dim, self._size, self.total_pushed))
        for arr, dt in ((e.states, "<f8"), (e.actions, "<f8"), (e.rewards, "<f8"), (e.next_states, "<f8"),
                        (e.dones, "u1"), (e.origins, "<i4"), (e.seq, "<i8")):
            fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())

    @classmethod
    def _read(cls, fh, seed=None) -> "ReplayStore":
        raw = fh.read(_HEADER.size)
        magic, version, cap, sd, ad, size, total = _HEADER.unpack(raw)
        if magic != SNAPSHOT_MAGIC or version != SNAPSHOT_VERSION:
            raise ConfigError(f"not a replay snapshot (magic={magic!r}, version={version})")
        store = cls(cap, sd, ad, seed)

        def read(dt, shape):
            n = int(np.prod(shape, dtype=np.int64))
            return np.frombuffer(fh.read(n * np.dtype(dt).itemsize), dtype=dt).reshape(shape)

        S = read("<f8", (size, sd))
        A = read("<f8", (size, ad))
        R = read("<f8", (size,))
        S2 = read("<f8", (size, sd))
        D = read("u1", (size,)).astype(bool)
        O = read("<i4", (size,))
        Q = read("<i8", (size,))
        store._push_rows(S, A, R, S2, D, O)
        store._cols["seq"][:size] = Q
        store.total_pushed = total
        return store

    def save(self, path):
        with open(path, "wb") as fh:
            self._write(fh)

    @classmethod
    def load(cls, path, seed=None) -> "ReplayStore":
        with open(path, "rb") as fh:
            return cls._read(fh, seed)


class DualReplayStore:
    """Separate target (D_mu) and population (D_pop) stores mixed at ratio ``m``."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int, mix_ratio: float, seed=None):
        if not 0.0 < mix_ratio <= 1.0:
            raise ConfigError(f"mix ratio must lie in (0, 1], got {mix_ratio}")
        ss = np.random.SeedSequence(seed)
        s_rng, s_t, s_p = ss.spawn(3)
        self.mix_ratio = float(mix_ratio)
        self.target_store = ReplayStore(capacity, state_dim, action_dim, s_t)
        self.pop_store = ReplayStore(capacity, state_dim, action_dim, s_p)
        self.rng = np.random.default_rng(s_rng)

    def __len__(self) -> int:
        return len(self.target_store) + len(self.pop_store)

    def _route(self, origin: int) -> ReplayStore:
        return self.target_store if origin == TARGET else self.pop_store

    def push(self, tr: Transition):
        self._route(tr.origin).push(tr)

    def push_trajectory(self, traj: Trajectory):
        self._route(traj.origin).push_trajectory(traj)

    def ready(self, batch_size: int) -> bool:
        n_t, n_p = mix_counts(self.mix_ratio, batch_size)
        return (n_t == 0 or self.target_store.ready(batch_size)) and (n_p == 0 or self.pop_store.ready(batch_size))

    def sample_mixed(self, batch_size: int, rng: np.random.Generator | None = None) -> Batch:
        rng = self.rng if rng is None else rng
        n_t, n_p = mix_counts(self.mix_ratio, batch_size)
        if (n_t and not len(self.target_store)) or (n_p and not len(self.pop_store)):
            raise NotReadyError(
                f"mixed batch needs {n_t} target / {n_p} population rows; stores hold "
                f"{len(self.target_store)} / {len(self.pop_store)}"
            )
        parts = []
        if n_t:
            parts.append(self.target_store.sample(n_t, rng))
        if n_p:
            parts.append(self.pop_store.sample(n_p, rng))
        batch = Batch.concat(parts)
        return batch.take(rng.permutation(batch_size))

    sample_batch = sample_mixed

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(struct.pack("<8sId", b"PRPLDUAL", SNAPSHOT_VERSION, self.mix_ratio))
            self.target_store._write(fh)
            self.pop_store._write(fh)

    @classmethod
    def load(cls, path, seed=None) -> "DualReplayStore":
        with open(path, "rb") as fh:
            magic, version, m = struct.unpack("<8sId", fh.read(struct.calcsize("<8sId")))
            if magic != b"PRPLDUAL" or version != SNAPSHOT_VERSION:
                raise ConfigError("not a dual replay snapshot")
            t = ReplayStore._read(fh)
            p = ReplayStore._read(fh)
        dual = cls(t.capacity, t.state_dim, t.action_dim, m, seed)
        dual.target_store, dual.pop_store = t, p
        return dual
