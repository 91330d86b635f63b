"""Derive the pointmass-2d reference returns used by the learning smoke test.

R_rand: Monte-Carlo mean return of a uniform-random-action policy over 100
episodes (seeds 0..99).
R_opt: best return found by planning: grid search over saturated PD
controllers, then Nelder-Mead refinement of the best open-loop action
sequence.  It is a lower bound on the true optimum, i.e. "near-optimal".

Run:  python tests/fixtures/derive_pointmass_baselines.py
"""
import json
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from poperl.envsim import PointMass2D


def episode_return(env, actions_fn):
    s = env.reset()
    total = 0.0
    for t in range(env.spec.max_episode_steps):
        s, r, done, _ = env.step(actions_fn(t, s))
        total += r
        if done:
            break
    return total


def random_baseline(n=100):
    env = PointMass2D()
    rets = []
    for seed in range(n):
        rng = np.random.default_rng(seed)
        rets.append(episode_return(env, lambda t, s: rng.uniform(-1, 1, size=2)))
    return float(np.mean(rets))


def planning_baseline():
    env = PointMass2D()
    best, best_gains = -np.inf, None
    for kp in np.linspace(0.5, 20, 40):
        for kd in np.linspace(0.0, 10, 41):
            ret = episode_return(env, lambda t, s: np.clip(-kp * s[:2] - kd * s[2:], -1, 1))
            if ret > best:
                best, best_gains = ret, (kp, kd)
    # open-loop refinement on the first 40 steps starting from the PD action sequence
    kp, kd = best_gains
    seq = []
    s = env.reset()
    for t in range(40):
        a = np.clip(-kp * s[:2] - kd * s[2:], -1, 1)
        seq.append(a)
        s, _, done, _ = env.step(a)
        if done:
            break
    seq = np.array(seq)

    def neg_ret(flat):
        A = np.clip(flat.reshape(-1, 2), -1, 1)
        return -episode_return(env, lambda t, s: A[min(t, len(A) - 1)])

    res = minimize(neg_ret, seq.ravel(), method="Nelder-Mead", options={"maxiter": 4000, "xatol": 1e-6, "fatol": 1e-9})
    return float(max(best, -res.fun)), best_gains


if __name__ == "__main__":
    r_rand = random_baseline()
    r_opt, gains = planning_baseline()
    out = {"R_rand": r_rand, "R_opt": r_opt, "R_learn": 0.5 * (r_rand + r_opt), "pd_gains": list(gains)}
    print(json.dumps(out, indent=2))
    Path(__file__).with_name("pointmass_baselines.json").write_text(json.dumps(out, indent=2) + "\n")
