"""Numerical checks of the off-policy mixing identity and of Bellman contraction.

Mixing behaviour-policy states into the deterministic policy gradient at
ratio ``alpha`` gives the same gradient as the on-policy one applied to

    Q_alpha(s, a) = Q(s, a) + alpha * (rho(s) - 1) * Q(s, a),   rho = d_b / d_mu.

:func:`check_identity` computes both sides by separate routes on small finite
instances.  :func:`check_contraction` measures how far the policy-evaluation
Bellman operator contracts under a weighted L2 norm.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DomainError, NumericError

ALPHAS = tuple(round(0.1 * i, 1) for i in range(11))


# -- synthetic Q and linear policy ----------------------------------------
@dataclass
class PolyQ:
    """Per-state cubic ``c + g.a + a'Ha/2 + sum_j k_j a_j^3``; H symmetric."""
    c: np.ndarray   # (S,)
    g: np.ndarray   # (S, A)
    H: np.ndarray   # (S, A, A)
    k: np.ndarray   # (S, A)

    def scaled(self, w: np.ndarray) -> "PolyQ":
        """The polynomial ``w(s) * Q(s, a)``."""
        return PolyQ(w * self.c, w[:, None] * self.g, w[:, None, None] * self.H, w[:, None] * self.k)

    def value(self, a: np.ndarray) -> np.ndarray:
        quad = 0.5 * np.einsum("si,sij,sj->s", a, self.H, a)
        return self.c + np.sum(self.g * a, axis=1) + quad + np.sum(self.k * a ** 3, axis=1)

    def grad_a(self, a: np.ndarray) -> np.ndarray:
        return self.g + np.einsum("sij,sj->si", self.H, a) + 3.0 * self.k * a ** 2


@dataclass
class FiniteInstance:
    d_mu: np.ndarray        # (S,) strictly positive, sums to 1
    d_b: np.ndarray         # (S,)
    q: PolyQ
    features: np.ndarray    # (S, F); mu(s) = theta @ features[s]
    theta: np.ndarray       # (A, F)
    alpha: float

    def __post_init__(self):
        for name in ("d_mu", "d_b"):
            d = getattr(self, name)
            if np.any(d <= 0) or abs(d.sum() - 1.0) > 1e-12:
                raise DomainError(f"{name} must be strictly positive and sum to 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")

    @property
    def n_states(self):
        return len(self.d_mu)

    def actions(self, theta=None) -> np.ndarray:
        th = self.theta if theta is None else theta
        return self.features @ th.T

    def rho(self) -> np.ndarray:
        return self.d_b / self.d_mu


def _policy_grad(q: PolyQ, weights: np.ndarray, features: np.ndarray, a: np.ndarray) -> np.ndarray:
    # sum_s weights[s] * d/dtheta Q(s, theta phi_s) = sum_s weights[s] * outer(dQ/da, phi_s)
    return np.einsum("s,si,sf->if", weights, q.grad_a(a), features)


@dataclass
class IdentityResult:
    lhs: np.ndarray
    rhs: np.ndarray
    abs_residual: float
    rel_residual: float
    fd_rel_err: float | None = None


def check_identity(inst: FiniteInstance, fd_check: bool = False, h: float = 1e-5) -> IdentityResult:
    """Mixture-weighted gradient of Q against the on-policy gradient of Q_alpha."""
    if np.any(inst.d_mu <= 0):
        raise DomainError("d_mu has a zero entry, so rho is undefined")
    a = inst.actions()
    mix = (1.0 - inst.alpha) * inst.d_mu + inst.alpha * inst.d_b
    lhs = _policy_grad(inst.q, mix, inst.features, a)
    q_alpha = inst.q.scaled(1.0 + inst.alpha * (inst.rho() - 1.0))
    rhs = _policy_grad(q_alpha, inst.d_mu, inst.features, a)
    abs_res = float(np.max(np.abs(lhs - rhs)))
    scale = max(np.max(np.abs(lhs)), np.max(np.abs(rhs)))
    rel_res = abs_res / scale if scale > 0 else abs_res
    res = IdentityResult(lhs, rhs, abs_res, rel_res)
    if fd_check:
        # J(theta) = sum_s d_mu(s) Q_alpha(s, mu_theta(s)), differentiated numerically
        fd = np.zeros_like(inst.theta)
        for idx in np.ndindex(*inst.theta.shape):
            tp, tm = inst.theta.copy(), inst.theta.copy()
            tp[idx] += h
            tm[idx] -= h
            jp = inst.d_mu @ q_alpha.value(inst.actions(tp))
            jm = inst.d_mu @ q_alpha.value(inst.actions(tm))
            fd[idx] = (jp - jm) / (2 * h)
        res.fd_rel_err = float(np.max(np.abs(fd - rhs)) / max(np.max(np.abs(rhs)), 1e-8))
    return res


# -- finite MDPs -------------------------------------------------------------
@dataclass
class MdpInstance:
    P: np.ndarray            # (S, G, S) kernel over a finite action grid
    R: np.ndarray            # (S, G)
    grid: np.ndarray         # (G, A) grid actions; continuous actions snap to the nearest one
    gamma: float
    start: np.ndarray        # (S,)
    mu: np.ndarray           # (S, A) deterministic continuous target policy
    b: np.ndarray            # (S, A) deterministic continuous behaviour policy

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError("gamma must lie in [0, 1)")
        if not np.allclose(self.P.sum(axis=2), 1.0, atol=1e-12) or np.any(self.P < 0):
            raise DomainError("kernel rows must be distributions")
        if abs(self.start.sum() - 1.0) > 1e-12:
            raise DomainError("start distribution must sum to 1")

    @property
    def n_states(self):
        return self.P.shape[0]

    @property
    def n_grid(self):
        return self.P.shape[1]

    def grid_index(self, policy: np.ndarray) -> np.ndarray:
        d = np.sum((policy[:, None, :] - self.grid[None, :, :]) ** 2, axis=2)
        return np.argmin(d, axis=1)

    def policy_kernel(self, policy: np.ndarray) -> np.ndarray:
        return self.P[np.arange(self.n_states), self.grid_index(policy)]


def visitation(mdp: MdpInstance, policy: np.ndarray) -> np.ndarray:
    """Normalized discounted state visitation ``(1 - g) * start (I - g P_pi)^-1``."""
    if not mdp.gamma < 1.0:
        raise DomainError("discounted visitation needs gamma < 1")
    P_pi = mdp.policy_kernel(policy)
    M = np.eye(mdp.n_states) - mdp.gamma * P_pi.T
    try:
        d = np.linalg.solve(M, (1.0 - mdp.gamma) * mdp.start)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"visitation system is singular: {e}") from e
    d = np.clip(d, 0.0, None)
    return d / d.sum()


def stationary(mdp: MdpInstance, policy: np.ndarray) -> np.ndarray:
    """Stationary state distribution of the chain induced by ``policy``."""
    P_pi = mdp.policy_kernel(policy)
    S = mdp.n_states
    A = np.vstack([P_pi.T - np.eye(S), np.ones((1, S))])
    rhs = np.zeros(S + 1)
    rhs[-1] = 1.0
    d, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    if np.max(np.abs(A @ d - rhs)) > 1e-9:
        raise NumericError("chain has no unique stationary distribution")
    d = np.clip(d, 0.0, None)
    return d / d.sum()


def on_policy_distribution(mdp: MdpInstance, policy: np.ndarray) -> np.ndarray:
    """State-action weights ``(S, G)``: stationary states, actions from the policy."""
    d = np.zeros((mdp.n_states, mdp.n_grid))
    d[np.arange(mdp.n_states), mdp.grid_index(policy)] = stationary(mdp, policy)
    return d


def bellman(mdp: MdpInstance, policy: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """``r(s, a) + gamma * sum_s' p(s'|s, a) Q(s', pi(s'))`` on the grid."""
    nxt = Q[np.arange(mdp.n_states), mdp.grid_index(policy)]
    return mdp.R + mdp.gamma * mdp.P @ nxt


def _dnorm(x: np.ndarray, d: np.ndarray) -> float:
    return float(np.sqrt(np.sum(d * x * x)))


def contraction_ratio(mdp, policy, d, Q, Q2) -> float:
    den = _dnorm(Q - Q2, d)
    if den == 0.0:
        return 0.0
    return _dnorm(bellman(mdp, policy, Q) - bellman(mdp, policy, Q2), d) / den


def worst_case_ratio(mdp: MdpInstance, policy: np.ndarray, d: np.ndarray):
    """Exact sup of the ratio over Q pairs, with a maximizing difference ``dQ``.

    The operator difference is linear, ``B Q - B Q' = gamma * M (Q - Q')``, so
    the sup is a generalized eigenvalue problem on the support of ``d``.
    If the operator reads an entry that ``d`` gives no weight, the ratio is
    unbounded and ``inf`` is returned.
    """
    S, G = mdp.n_states, mdp.n_grid
    idx = mdp.grid_index(policy)
    M = np.zeros((S * G, S * G))
    for s2 in range(S):
        M[:, s2 * G + idx[s2]] = mdp.P[:, :, s2].ravel()
    w = d.ravel()
    sup = w > 0
    read = np.any(M[sup] != 0, axis=0)
    if np.any(read & ~sup):
        # pick a dQ that is zero on the support but read by the operator
        j = int(np.flatnonzero(read & ~sup)[0])
        dq = np.zeros(S * G)
        dq[j] = 1.0
        dq[sup] = 1e-12
        return np.inf, dq.reshape(S, G)
    Ms = M[np.ix_(sup, sup)]
    Dw = np.diag(w[sup])
    vals, vecs = linalg.eigh(mdp.gamma ** 2 * Ms.T @ Dw @ Ms, Dw)
    dq = np.zeros(S * G)
    dq[sup] = vecs[:, -1]
    return float(np.sqrt(max(vals[-1], 0.0))), dq.reshape(S, G)


@dataclass
class ContractionReport:
    gamma: float
    ratios: np.ndarray
    max_ratio: float
    contracts: bool
    worst_case: float | None = None
    notes: list = field(default_factory=list)


def check_contraction(mdp: MdpInstance, policy: np.ndarray, d: np.ndarray | None = None,
                      n_pairs: int = 1000, rng=None, scale: float = 1.0) -> ContractionReport:
    """Ratios ``||BQ - BQ'||_d / ||Q - Q'||_d`` over random tabular pairs.

    ``d`` defaults to the policy's on-policy state-action distribution.
    """
    rng = np.random.default_rng(rng)
    d = on_policy_distribution(mdp, policy) if d is None else np.asarray(d, float)
    ratios = np.empty(n_pairs)
    for i in range(n_pairs):
        Q = scale * rng.normal(size=(mdp.n_states, mdp.n_grid))
        Q2 = scale * rng.normal(size=Q.shape)
        ratios[i] = contraction_ratio(mdp, policy, d, Q, Q2)
    worst, _ = worst_case_ratio(mdp, policy, d)
    mx = float(ratios.max()) if n_pairs else 0.0
    return ContractionReport(mdp.gamma, ratios, mx, mx <= mdp.gamma * (1 + 1e-12), worst)


# -- random instance generators -----------------------------------------------
def random_mdp(rng, n_states=5, n_grid=3, action_dim=1, gamma=0.9) -> MdpInstance:
    rng = np.random.default_rng(rng)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_grid))
    grid = rng.uniform(-1, 1, size=(n_grid, action_dim))
    return MdpInstance(
        P=P,
        R=rng.uniform(-1, 1, size=(n_states, n_grid)),
        grid=grid,
        gamma=gamma,
        start=rng.dirichlet(np.ones(n_states)),
        mu=grid[rng.integers(0, n_grid, n_states)] + 0.01 * rng.normal(size=(n_states, action_dim)),
        b=grid[rng.integers(0, n_grid, n_states)] + 0.01 * rng.normal(size=(n_states, action_dim)),
    )


def random_poly_q(rng, n_states, action_dim) -> PolyQ:
    B = rng.normal(size=(n_states, action_dim, action_dim))
    return PolyQ(rng.normal(size=n_states), rng.normal(size=(n_states, action_dim)),
                 B + np.swapaxes(B, 1, 2), 0.3 * rng.normal(size=(n_states, action_dim)))


def random_instance(rng, alpha=None, max_states=20, max_action_dim=3, grounded=None) -> FiniteInstance:
    """A random instance; grounded ones take d_mu and d_b from MDP visitations."""
    rng = np.random.default_rng(rng)
    S = int(rng.integers(1, max_states + 1))
    A = int(rng.integers(1, max_action_dim + 1))
    F = int(rng.integers(1, 5))
    alpha = float(rng.choice(ALPHAS)) if alpha is None else float(alpha)
    grounded = bool(rng.integers(2)) if grounded is None else grounded
    d_mu = d_b = None
    if grounded and S >= 2:
        mdp = random_mdp(rng, S, n_grid=3, action_dim=A, gamma=float(rng.uniform(0.5, 0.99)))
        d_mu, d_b = visitation(mdp, mdp.mu), visitation(mdp, mdp.b)
        if np.any(d_mu <= 1e-12) or np.any(d_b <= 1e-12):
            d_mu = d_b = None
    if d_mu is None:
        d_mu, d_b = rng.dirichlet(np.ones(S)), rng.dirichlet(np.ones(S))
    return FiniteInstance(d_mu, d_b, random_poly_q(rng, S, A), rng.normal(size=(S, F)),
                          0.5 * rng.normal(size=(A, F)), alpha)


@dataclass
class SuiteResult:
    rows: list          # (index, n_states, action_dim, alpha, rel_residual, abs_residual)
    max_rel: float
    tol: float

    @property
    def passed(self):
        return self.max_rel <= self.tol

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["instance", "n_states", "action_dim", "alpha", "rel_residual", "abs_residual"])
        for r in self.rows:
            w.writerow([r[0], r[1], r[2], f"{r[3]:.1f}", repr(r[4]), repr(r[5])])
        return buf.getvalue()


def run_identity_suite(n_instances=100, seed=0, tol=1e-8) -> SuiteResult:
    """Identity check over random instances; alpha cycles through 0, 0.1, ..., 1."""
    children = np.random.SeedSequence(seed).spawn(n_instances)
    rows = []
    for i, ss in enumerate(children):
        inst = random_instance(np.random.default_rng(ss), alpha=ALPHAS[i % len(ALPHAS)])
        r = check_identity(inst)
        rows.append((i, inst.n_states, inst.theta.shape[0], inst.alpha, r.rel_residual, r.abs_residual))
    max_rel = max((r[4] for r in rows), default=0.0)
    return SuiteResult(rows, max_rel, tol)


def find_mismatch_counterexample(seed=0, tries=200, gamma=0.9):
    """Search small MDPs for an off-policy ``d`` under which the operator expands.

    Returns ``(mdp, d, Q, Q2, ratio)`` with ``ratio > gamma`` or None.
    """
    rng = np.random.default_rng(seed)
    for _ in range(tries):
        mdp = random_mdp(rng, n_states=int(rng.integers(2, 5)), n_grid=2, gamma=gamma)
        d = rng.dirichlet(0.3 * np.ones(mdp.n_states * mdp.n_grid)).reshape(mdp.n_states, mdp.n_grid)
        d = np.clip(d, 1e-6, None)
        d /= d.sum()
        worst, dq = worst_case_ratio(mdp, mdp.mu, d)
        if worst > gamma * 1.01:
            Q2 = rng.normal(size=dq.shape)
            Q = Q2 + dq
            ratio = contraction_ratio(mdp, mdp.mu, d, Q, Q2)
            if ratio > gamma:
                return mdp, d, Q, Q2, ratio
    return None
