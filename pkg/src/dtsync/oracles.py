"""Exact small-instance oracles.

``brute_force_cmdp`` checks that a per-state Lagrangian dual closes the gap
with the state-wise constrained primal; ``tabular_soft_policy_iteration``
checks monotone soft policy improvement.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp


@dataclass
class TinyCMDP:
    """``P[s, a, s']``, reward ``r[s, a]``, per-slot cost ``c[s, a]``, start law ``d0``."""

    P: np.ndarray
    r: np.ndarray
    c: np.ndarray
    d0: np.ndarray
    gamma: float = 0.99

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        self.r = np.asarray(self.r, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        self.d0 = np.asarray(self.d0, dtype=np.float64)
        S, A, S2 = self.P.shape
        if S != S2 or self.r.shape != (S, A) or self.c.shape != (S, A) or self.d0.shape != (S,):
            raise ValueError("inconsistent CMDP shapes")
        if not np.allclose(self.P.sum(axis=2), 1.0):
            raise ValueError("transition rows must sum to 1")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    @property
    def start_states(self) -> np.ndarray:
        return np.flatnonzero(self.d0 > 0)

    def evaluate(self, policy) -> tuple[np.ndarray, np.ndarray]:
        """Discounted reward and cost values of a deterministic policy."""
        idx = np.arange(self.n_states)
        pol = np.asarray(policy)
        Pp = self.P[idx, pol]
        A = np.eye(self.n_states) - self.gamma * Pp
        return np.linalg.solve(A, self.r[idx, pol]), np.linalg.solve(A, self.c[idx, pol])

    def normalized_cost(self, policy) -> np.ndarray:
        """``(1 - gamma) V_c``: a per-slot average comparable to the budget."""
        return (1.0 - self.gamma) * self.evaluate(policy)[1]


def statewise_feasible(cmdp: TinyCMDP, policy, M: float, tol: float = 1e-12) -> bool:
    nc = cmdp.normalized_cost(policy)
    return bool(np.all(nc[cmdp.start_states] <= M + tol))


def expectation_feasible(cmdp: TinyCMDP, policy, M: float, tol: float = 1e-12) -> bool:
    return bool(cmdp.d0 @ cmdp.normalized_cost(policy) <= M + tol)


@dataclass
class CmdpResult:
    feasible: bool
    primal_value: float | None           # best mixture of deterministic policies
    deterministic_value: float | None    # best single deterministic policy
    deterministic_policy: tuple | None
    mixture: dict = field(default_factory=dict)
    dual_value: float | None = None
    lam: np.ndarray | None = None
    unconstrained_value: float = float("nan")


def _envelope_min(a, d, upper: float) -> tuple[float, float]:
    """Exact minimum of ``max_i a_i - x d_i`` over ``x`` in ``[0, upper]``.

    The minimum of a convex piecewise-linear function sits at an endpoint or
    at a pairwise crossing of its lines, so all of those are evaluated.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        x = (a[:, None] - a[None, :]) / (d[:, None] - d[None, :])
    cand = np.concatenate([[0.0, upper], x[np.isfinite(x) & (x > 0) & (x < upper)]])
    vals = np.max(a[None, :] - cand[:, None] * d[None, :], axis=1)
    i = int(np.argmin(vals))
    return float(cand[i]), float(vals[i])


def _dual_minimize(R, D, upper: float, points: int = 11, tol: float = 1e-11):
    """Minimize ``g(lam) = max_i R_i - lam . D_i`` over the box ``[0, upper]^k``.

    The last coordinate is solved exactly; each earlier coordinate is searched
    on a 1-D grid that is repeatedly narrowed to the two cells around the
    best point, which always brackets the minimizer of a convex function.
    """
    k = D.shape[1]
    if k == 1:
        x, v = _envelope_min(R, D[:, 0], upper)
        return np.array([x]), v

    def inner(x0):
        lam, v = _dual_minimize(R - x0 * D[:, 0], D[:, 1:], upper, points, tol)
        return np.concatenate([[x0], lam]), v

    lo, hi = 0.0, upper
    best = (None, np.inf)
    while True:
        xs = np.linspace(lo, hi, points)
        res = [inner(x) for x in xs]
        j = int(np.argmin([v for _, v in res]))
        if res[j][1] < best[1]:
            best = res[j]
        width = (hi - lo) / (points - 1)
        if width < tol:
            return best
        lo, hi = max(xs[j] - width, 0.0), min(xs[j] + width, upper)


def brute_force_cmdp(cmdp: TinyCMDP, M: float, check: bool = True,
                     agree_tol: float = 1e-6) -> CmdpResult:
    """Enumerate deterministic stationary policies under state-wise budgets.

    The constrained primal is the best randomization over deterministic
    policies (an LP over mixture weights). The dual minimizes
    ``max_pi sum_s d0 v(s) - sum_s lam_s ((1-gamma) V_c(s) - M)`` over
    ``lam >= 0`` (one multiplier per start state) on a refining grid.
    """
    S, A = cmdp.n_states, cmdp.n_actions
    pols = list(itertools.product(range(A), repeat=S))
    starts = cmdp.start_states
    R = np.empty(len(pols))
    C = np.empty((len(pols), len(starts)))
    for i, p in enumerate(pols):
        v, vc = cmdp.evaluate(p)
        R[i] = cmdp.d0 @ v
        C[i] = (1.0 - cmdp.gamma) * vc[starts]
    unconstrained = float(R.max())
    ok = np.all(C <= M + 1e-12, axis=1)

    # mixture LP: max R.mu  s.t.  C^T mu <= M, sum mu = 1, mu >= 0
    lp = linprog(-R, A_ub=C.T, b_ub=np.full(len(starts), M), A_eq=np.ones((1, len(pols))),
                 b_eq=[1.0], bounds=(0, None), method="highs")
    if lp.status == 2 or not lp.success:
        return CmdpResult(False, None, None, None, unconstrained_value=unconstrained)
    primal = float(-lp.fun)
    mixture = {pols[i]: float(w) for i, w in enumerate(lp.x) if w > 1e-12}
    det_val = det_pol = None
    if ok.any():
        j = int(np.flatnonzero(ok)[np.argmax(R[ok])])
        det_val, det_pol = float(R[j]), pols[j]

    slack = M - C.max(axis=1)
    if slack.max() > 0:
        # Slater bound on the total multiplier mass
        upper = float((R.max() - R[np.argmax(slack)]) / slack.max()) * 1.5 + 1.0
    else:
        upper = float(np.abs(R).max() + 1.0) * 10.0

    lam, dval = _dual_minimize(R, C - M, upper)
    res = CmdpResult(True, primal, det_val, det_pol, mixture, dval, lam, unconstrained)
    if check and abs(dval - primal) > agree_tol:
        raise AssertionError(f"dual {dval!r} and primal {primal!r} disagree")
    return res


def random_tiny_cmdp(rng: np.random.Generator, n_states: int = 3, n_actions: int = 2,
                     n_starts: int = 2, gamma: float = 0.9) -> tuple[TinyCMDP, float]:
    """Random instance plus a budget strictly between the cheapest and dearest policies."""
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    r = rng.uniform(0, 1, (n_states, n_actions))
    # costlier actions tend to pay more, so the budget binds
    c = rng.uniform(0, 1, (n_states, n_actions)) + 0.5 * r
    d0 = np.zeros(n_states)
    starts = rng.choice(n_states, size=n_starts, replace=False)
    d0[starts] = rng.dirichlet(np.ones(n_starts))
    m = TinyCMDP(P, r, c, d0, gamma)
    worst = [m.normalized_cost(p)[starts].max()
             for p in itertools.product(range(n_actions), repeat=n_states)]
    lo, hi = min(worst), max(worst)
    return m, float(lo + rng.uniform(0.2, 0.8) * (hi - lo))


def separating_instance() -> tuple[TinyCMDP, float]:
    """Two absorbing states; action 1 earns 1 and costs 2. Budget 1, uniform start.

    Policy ``(1, 0)`` meets the budget on average over starts but not from
    state 0.
    """
    P = np.zeros((2, 2, 2))
    P[0, :, 0] = 1.0
    P[1, :, 1] = 1.0
    r = np.array([[0.0, 1.0], [0.0, 1.0]])
    c = np.array([[0.0, 2.0], [0.0, 2.0]])
    return TinyCMDP(P, r, c, np.array([0.5, 0.5]), 0.9), 1.0


# ----------------------------------------------------------------------

@dataclass
class SpiTrace:
    q_tables: list
    policies: list
    converged: bool


def soft_policy_evaluation(P, r, pi, alpha: float, gamma: float) -> np.ndarray:
    """Exact soft Q of a stochastic policy by one linear solve."""
    S, A = r.shape
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(pi > 0, pi * np.log(pi), 0.0).sum(axis=1)
    # Pi[s, (s, a)] = pi(a|s)
    Pi = np.zeros((S, S * A))
    for s in range(S):
        Pi[s, s * A:(s + 1) * A] = pi[s]
    Pf = P.reshape(S * A, S)
    lhs = np.eye(S * A) - gamma * Pf @ Pi
    rhs = r.reshape(-1) - gamma * alpha * Pf @ ent
    return np.linalg.solve(lhs, rhs).reshape(S, A)


def soft_improve(Q, alpha: float) -> np.ndarray:
    z = Q / alpha
    return np.exp(z - logsumexp(z, axis=1, keepdims=True))


def tabular_soft_policy_iteration(P, r, alpha: float, gamma: float = 0.9,
                                  max_iter: int = 500, tol: float = 1e-10,
                                  pi0=None) -> SpiTrace:
    P = np.asarray(P, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    S, A = r.shape
    pi = np.full((S, A), 1.0 / A) if pi0 is None else np.asarray(pi0, dtype=np.float64)
    Q = soft_policy_evaluation(P, r, pi, alpha, gamma)
    qs, pis = [Q], [pi]
    for _ in range(max_iter):
        pi = soft_improve(Q, alpha)
        Qn = soft_policy_evaluation(P, r, pi, alpha, gamma)
        qs.append(Qn)
        pis.append(pi)
        done = np.max(np.abs(Qn - Q)) < tol
        Q = Qn
        if done:
            return SpiTrace(qs, pis, True)
    return SpiTrace(qs, pis, False)


def value_iteration(P, r, gamma: float = 0.9, tol: float = 1e-12, max_iter: int = 100000):
    """Optimal Q and greedy policy of an unconstrained MDP."""
    P = np.asarray(P, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    Q = np.zeros_like(r)
    for _ in range(max_iter):
        Qn = r + gamma * P @ Q.max(axis=1)
        if np.max(np.abs(Qn - Q)) < tol:
            Q = Qn
            break
        Q = Qn
    return Q, Q.argmax(axis=1)


def random_mdp(rng: np.random.Generator, n_states: int = 3, n_actions: int = 2):
    return (rng.dirichlet(np.ones(n_states), size=(n_states, n_actions)),
            rng.uniform(-1, 1, (n_states, n_actions)))
