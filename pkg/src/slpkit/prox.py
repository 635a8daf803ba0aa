"""Log-barrier for the half-space constraints and its closed-form proximity
operator.

For one user the barrier is B(x) = -ln(Upsilon^T x - g) (+inf outside), and
prox_{gamma*mu*B}(v1) = v1 + theta * Upsilon with

    s = Upsilon^T v1 - g,  c = ||Upsilon||^2,  t = gamma*mu,
    r = sqrt(s^2 + 4*t*c),  theta = (-s + r) / (2c).

theta is the positive root of the stationarity quadratic
c*theta^2 + s*theta - t = 0, so the post-prox margin (s + r)/2 is strictly
positive whenever t > 0.  The analytic derivatives below feed the network
backward pass:

    dPhi/dv1    = I + ((s/r - 1) / (2c)) * Upsilon Upsilon^T
    dPhi/dmu    = (gamma / r) * Upsilon
    dPhi/dgamma = (mu / r) * Upsilon
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LiftedProblem, re_margin


@dataclass
class ProxInputs:
    """One prox evaluation: iterate, constraint row, threshold, step, weight."""

    v1: np.ndarray
    upsilon_i: np.ndarray
    g_i: float
    gamma: float
    mu: float

    def __post_init__(self):
        self.v1 = np.asarray(self.v1, dtype=float)
        self.upsilon_i = np.asarray(self.upsilon_i, dtype=float)
        if self.gamma * self.mu <= 0:
            raise ValueError("gamma * mu must be positive")
        if not np.any(self.upsilon_i):
            raise ValueError("upsilon_i must be nonzero")


@dataclass
class ProxResult:
    phi: np.ndarray
    s: float
    r: float
    theta: float


def barrier_value(lp: LiftedProblem, v1: np.ndarray, i: int) -> float:
    """-ln of user i's margin; +inf when the margin is not positive."""
    m = re_margin(lp, v1, i)
    if m <= 0.0:
        return float("inf")
    return float(-np.log(m))


def prox_barrier(inp: ProxInputs) -> ProxResult:
    """Closed-form prox of gamma*mu*B at v1 (feasibility-preserving root)."""
    u = inp.upsilon_i
    c = float(u @ u)
    s = float(u @ inp.v1 - inp.g_i)
    t = inp.gamma * inp.mu
    r = float(np.hypot(s, 2.0 * np.sqrt(t * c)))
    if r == 0.0:
        raise ValueError("prox radical underflowed to zero")
    theta = (-s + r) / (2.0 * c)
    return ProxResult(phi=inp.v1 + theta * u, s=s, r=r, theta=theta)


def prox_jacobian_v(res: ProxResult, upsilon_i: np.ndarray, c: float) -> np.ndarray:
    """Jacobian of the prox output w.r.t. its input point."""
    if res.r <= 0:
        raise ValueError("r must be positive")
    u = np.asarray(upsilon_i, dtype=float)
    coef = (res.s / res.r - 1.0) / (2.0 * c)
    return np.eye(u.size) + coef * np.outer(u, u)


def prox_grad_mu(res: ProxResult, upsilon_i: np.ndarray, gamma: float) -> np.ndarray:
    """Derivative of the prox output w.r.t. the barrier weight mu."""
    if res.r <= 0:
        raise ValueError("r must be positive")
    return (gamma / res.r) * np.asarray(upsilon_i, dtype=float)


def prox_grad_gamma(res: ProxResult, upsilon_i: np.ndarray, mu: float) -> np.ndarray:
    """Derivative of the prox output w.r.t. the step size gamma."""
    if res.r <= 0:
        raise ValueError("r must be positive")
    return (mu / res.r) * np.asarray(upsilon_i, dtype=float)


def prox_sweep(v1: np.ndarray, lp: LiftedProblem, gamma: float,
               mu: np.ndarray) -> tuple[np.ndarray, list[ProxResult]]:
    """Apply the per-user prox sequentially in ascending user order.

    The composition across users is a modeling choice; each step preserves
    strict feasibility of its own constraint only, so the caller gets the
    full per-user result list for backpropagation.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if mu.shape[0] != lp.K:
        raise ValueError("mu must carry one weight per user")
    if gamma <= 0 or np.any(mu <= 0):
        raise ValueError("gamma and all mu entries must be positive")
    x = np.asarray(v1, dtype=float)
    results = []
    for i in range(lp.K):
        res = prox_barrier(ProxInputs(x, lp.upsilon[i], float(lp.g[i]), gamma, float(mu[i])))
        x = res.phi
        results.append(res)
    return x, results
