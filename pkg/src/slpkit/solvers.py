"""Reference solvers.

* solve_slp_strict: the strict-phase QP, solved by eliminating the K
  phase-alignment equalities onto an orthonormal null-space basis and running
  log-barrier Newton continuation on the remaining half-space constraints.
* kkt_oracle: exact global optimum by enumerating all 2^K inequality active
  sets and solving each KKT linear system (small K only).
* solve_blp: the conventional block-level design via uplink-downlink duality
  (MMSE uplink beams alternated with exact uplink/downlink power systems).
* dual_to_primal: the stationarity map from multipliers to the precoder,
  v1 = (1/2) * sum_i (mu_i * Upsilon_i + lambda_i * Omega Upsilon_i).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, nnls

from .model import LiftedProblem, RealPrecoder, apply_skew, eq_residuals, margins

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"


@dataclass
class SolveOptions:
    tol: float = 1e-8
    max_outer: int = 50
    max_newton: int = 50
    mu0: float = 1.0
    mu_shrink: float = 0.2

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not 0.0 < self.mu_shrink < 1.0:
            raise ValueError("mu_shrink must lie in (0, 1)")


@dataclass
class SolveReport:
    v1: RealPrecoder
    power: float
    duals_mu: np.ndarray
    duals_lambda: np.ndarray
    status: str
    iterations: int
    wall_time: float

    def to_json(self) -> str:
        return json.dumps({
            "v1": self.v1.v1.tolist(),
            "power": self.power,
            "duals_mu": np.asarray(self.duals_mu).tolist(),
            "duals_lambda": np.asarray(self.duals_lambda).tolist(),
            "status": self.status,
            "iterations": self.iterations,
            "wall_time": self.wall_time,
        })


@dataclass
class FeasibilityReport:
    max_eq_residual: float
    min_margin: float
    feasible: bool


@dataclass
class BlpReport:
    """Conventional per-user beamforming result (complex domain)."""

    precoders: np.ndarray | None   # N x K, column k serves user k
    power: float
    uplink_power: float
    status: str
    iterations: int
    wall_time: float
    sinr: np.ndarray = field(default_factory=lambda: np.empty(0))


def equality_rows(lp: LiftedProblem) -> np.ndarray:
    """Rows a_i with a_i^T v1 = Upsilon_i^T Omega v1 (i.e. a_i = Omega^T Upsilon_i)."""
    return -apply_skew(lp.upsilon)


def equality_nullspace(lp: LiftedProblem) -> np.ndarray:
    """Orthonormal basis Z of the phase-alignment null space, shape 2N x d."""
    A = equality_rows(lp)
    _, sv, vt = np.linalg.svd(A)
    tol = max(A.shape) * np.finfo(float).eps * (sv[0] if sv.size else 1.0)
    rank = int(np.sum(sv > tol))
    return vt[rank:].T


def check_feasibility(lp: LiftedProblem, v1: np.ndarray, tol: float) -> FeasibilityReport:
    """Pure evaluation of constraint residuals at v1."""
    eq = float(np.max(np.abs(eq_residuals(lp, v1)))) if lp.K else 0.0
    mm = float(np.min(margins(lp, v1)))
    return FeasibilityReport(eq, mm, eq <= tol and mm >= -tol)


def dual_to_primal(mu: np.ndarray, lam: np.ndarray, lp: LiftedProblem) -> RealPrecoder:
    """Stationarity solution of the Lagrangian for given multipliers."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if mu.shape[0] != lp.K or lam.shape[0] != lp.K:
        raise ValueError("multiplier vectors must have length K")
    v1 = 0.5 * (mu @ lp.upsilon + lam @ apply_skew(lp.upsilon))
    return RealPrecoder(v1)


def _phase1(psi: np.ndarray, g: np.ndarray, lp: LiftedProblem,
            Z: np.ndarray, delta: float = 1e-6) -> np.ndarray | None:
    """Strictly feasible reduced-space start, or None when the interior is empty.

    Fast path: project the weighted constraint-row sum onto the null space and
    scale it up (the feasible cone is scale-invariant in the margin direction).
    When some projected margin direction is non-positive that start cannot
    work, so fall back to an exact max-margin LP.
    """
    w = (lp.upsilon * (g / np.sum(lp.upsilon ** 2, axis=1))[:, None]).sum(axis=0)
    y0 = Z.T @ w
    d = psi @ y0
    if np.all(d > 0):
        pad = delta * np.maximum(g, 1.0)
        return float(np.max((g + pad) / d)) * y0
    K, dim = psi.shape
    c = np.zeros(dim + 1)
    c[-1] = -1.0
    a_ub = np.hstack([-psi, np.ones((K, 1))])
    res = linprog(c, A_ub=a_ub, b_ub=-g,
                  bounds=[(None, None)] * dim + [(None, 10.0)], method="highs")
    if res.status != 0 or -res.fun <= delta:
        return None
    return res.x[:-1]


def solve_slp_strict(lp: LiftedProblem, opts: SolveOptions | None = None) -> SolveReport:
    """Null-space barrier Newton solver for the strict-phase QP."""
    opts = opts or SolveOptions()
    t_start = time.perf_counter()
    Z = equality_nullspace(lp)
    K = lp.K
    g = lp.g

    def report(status, v1, mu_d, lam_d, iters):
        v1 = np.asarray(v1, dtype=float)
        return SolveReport(RealPrecoder(v1), float(v1 @ v1), mu_d, lam_d,
                           status, iters, time.perf_counter() - t_start)

    if Z.shape[1] == 0:
        return report(INFEASIBLE, np.zeros(2 * lp.N), np.zeros(K), np.zeros(K), 0)
    psi = lp.upsilon @ Z
    y = _phase1(psi, g, lp, Z)
    if y is None:
        return report(INFEASIBLE, np.zeros(2 * lp.N), np.zeros(K), np.zeros(K), 0)

    mu = opts.mu0
    iters = 0
    converged = False
    for _ in range(opts.max_outer):
        for _ in range(opts.max_newton):
            m = psi @ y - g
            grad = 2.0 * y - mu * (psi.T @ (1.0 / m))
            hess = 2.0 * np.eye(y.size) + mu * (psi.T * (1.0 / m ** 2)) @ psi
            try:
                dy = np.linalg.solve(hess, -grad)
            except np.linalg.LinAlgError:
                dy = np.linalg.lstsq(hess, -grad, rcond=None)[0]
            iters += 1
            if -grad @ dy / 2.0 < 1e-13 * (1.0 + y @ y):
                break
            f0 = y @ y - mu * np.sum(np.log(m))
            slope = 0.25 * (grad @ dy)
            step = 1.0
            while step > 1e-14:
                yn = y + step * dy
                mn = psi @ yn - g
                if np.all(mn > 0) and yn @ yn - mu * np.sum(np.log(mn)) <= f0 + step * slope:
                    break
                step *= 0.5
            y = y + step * dy
        power = float(y @ y)
        # K*mu bounds the suboptimality gap; drive it well below the requested
        # tolerance both relative to the objective and in absolute terms (the
        # latter keeps complementary slackness mu_i * margin_i = mu small)
        if K * mu <= min(0.02 * opts.tol * max(1.0, power), 1e-7):
            converged = True
            break
        mu *= opts.mu_shrink

    v1 = Z @ y
    A = equality_rows(lp)
    final_margins = margins(lp, v1)
    slack_allow = max(opts.tol * (1.0 + power), 1e-6)
    # joint fit of both multiplier blocks to stationarity,
    # 2 v1 + A^T lambda - Upsilon^T mu = 0, with mu nonnegative (lambda is
    # sign-split so NNLS can leave it free).  The fit can be underdetermined,
    # so prune mu columns that would break complementary slackness and refit.
    keep = list(range(K))
    lam_dual = np.zeros(K)
    mu_dual = np.zeros(K)
    for _ in range(K + 1):
        M = np.hstack([A.T, -A.T, -lp.upsilon[keep].T])
        sol, _ = nnls(M, -2.0 * v1)
        lam_dual = sol[:K] - sol[K:2 * K]
        mu_dual = np.zeros(K)
        mu_dual[keep] = sol[2 * K:]
        bad = [i for i in keep if abs(mu_dual[i] * final_margins[i]) > 0.5 * slack_allow]
        if not bad:
            break
        keep = [i for i in keep if i not in bad]
    vnorm = np.linalg.norm(v1)
    stat = 2.0 * v1 + A.T @ lam_dual - mu_dual @ lp.upsilon
    comp_slack = float(np.max(np.abs(mu_dual * final_margins))) if K else 0.0
    kkt_ok = (np.linalg.norm(stat) <= opts.tol * (1.0 + vnorm)
              and comp_slack <= slack_allow
              and np.max(np.abs(eq_residuals(lp, v1))) <= opts.tol * (1.0 + vnorm)
              and np.min(final_margins) >= -opts.tol * max(1.0, float(np.max(g))))
    status = OPTIMAL if (converged and kkt_ok) else MAX_ITER
    return report(status, v1, mu_dual, lam_dual, iters)


def kkt_oracle(lp: LiftedProblem) -> SolveReport:
    """Exact optimum by active-set enumeration; intended for K <= 12."""
    if lp.K > 12:
        raise ValueError("kkt_oracle enumerates 2^K active sets; K too large")
    t_start = time.perf_counter()
    K, twoN = lp.K, 2 * lp.N
    A = equality_rows(lp)
    g = lp.g
    best = None
    # masks ordered by active-set size so equal-power ties keep the smaller set
    for mask in sorted(range(2 ** K), key=lambda m: (bin(m).count("1"), m)):
        active = [i for i in range(K) if mask >> i & 1]
        na = len(active)
        dim = twoN + K + na
        M = np.zeros((dim, dim))
        rhs = np.zeros(dim)
        M[:twoN, :twoN] = 2.0 * np.eye(twoN)
        M[:twoN, twoN:twoN + K] = A.T
        M[twoN:twoN + K, :twoN] = A
        for j, i in enumerate(active):
            M[:twoN, twoN + K + j] = -lp.upsilon[i]
            M[twoN + K + j, :twoN] = lp.upsilon[i]
            rhs[twoN + K + j] = g[i]
        sol, _, _, _ = np.linalg.lstsq(M, rhs, rcond=None)
        if np.linalg.norm(M @ sol - rhs) > 1e-8 * (1.0 + np.linalg.norm(rhs)):
            continue
        v = sol[:twoN]
        lam = sol[twoN:twoN + K]
        mu = np.zeros(K)
        mu[active] = sol[twoN + K:]
        if np.any(mu < -1e-9):
            continue
        if np.any(lp.upsilon @ v < g - 1e-9 * np.maximum(1.0, g)):
            continue
        power = float(v @ v)
        if best is None or power < best[0] * (1.0 - 1e-12) - 1e-15:
            best = (power, v, mu, lam)
    wall = time.perf_counter() - t_start
    if best is None:
        return SolveReport(RealPrecoder(np.zeros(twoN)), 0.0, np.zeros(K),
                           np.zeros(K), INFEASIBLE, 2 ** K, wall)
    power, v, mu, lam = best
    return SolveReport(RealPrecoder(v), power, mu, lam, OPTIMAL, 2 ** K, wall)


def solve_blp(ch, gamma, n0: float, opts: SolveOptions | None = None) -> BlpReport:
    """Conventional SINR-constrained power minimization via duality.

    Alternates MMSE uplink receive beams with the exact K x K uplink power
    system until the dual powers settle; the downlink allocation solves the
    transposed system, which makes the total powers match by construction.
    SINR here uses h_i^T v_k, so the effective uplink channel is conj(h_i).
    """
    opts = opts or SolveOptions()
    t_start = time.perf_counter()
    h = np.asarray(ch.gains if hasattr(ch, "gains") else ch, dtype=complex)
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    K, N = h.shape
    geff = h.conj()

    def fail(status, iters):
        return BlpReport(None, float("nan"), float("nan"), status, iters,
                         time.perf_counter() - t_start)

    q = np.zeros(K)
    W = None
    iters = 0
    converged = False
    for _ in range(500):
        iters += 1
        cov = n0 * np.eye(N, dtype=complex) + (geff.T * q) @ geff.conj()
        try:
            W = np.linalg.solve(cov, geff.T)
        except np.linalg.LinAlgError:
            return fail(INFEASIBLE, iters)
        W = W / np.linalg.norm(W, axis=0, keepdims=True)
        # exact uplink powers for the current beams accelerate the plain
        # interference-function update; fall back to it while the beams
        # cannot yet support the targets
        D = np.abs(W.conj().T @ geff.T) ** 2
        M = -D.copy()
        M[np.diag_indices(K)] = np.diag(D) / gamma
        q_new = None
        try:
            cand = np.linalg.solve(M, n0 * np.ones(K))
            if np.all(np.isfinite(cand)) and np.all(cand > 0):
                q_new = cand
        except np.linalg.LinAlgError:
            pass
        if q_new is None:
            # q_i <- Gamma_i / (g_i^H Phi_{-i}^{-1} g_i), the monotone map
            u = np.empty(K)
            for i in range(K):
                cov_i = cov - q[i] * np.outer(geff[i], geff[i].conj())
                u[i] = np.real(geff[i].conj() @ np.linalg.solve(cov_i, geff[i]))
            q_new = gamma / u
        if not np.all(np.isfinite(q_new)) or np.max(q_new) > 1e13:
            return fail(INFEASIBLE, iters)
        if np.linalg.norm(q_new - q) <= 1e-10 * max(1.0, np.linalg.norm(q)):
            q = q_new
            converged = True
            break
        q = q_new
    if not converged:
        return fail(INFEASIBLE, iters)

    # downlink powers from the transposed system (same total by duality)
    D = np.abs(W.conj().T @ geff.T) ** 2
    M = -D.copy()
    M[np.diag_indices(K)] = np.diag(D) / gamma
    p = np.linalg.solve(M.T, n0 * np.ones(K))
    if np.any(p <= 0):
        return fail(INFEASIBLE, iters)
    V = W * np.sqrt(p)
    hv = h @ V                      # hv[i,k] = h_i^T v_k
    sig = np.abs(np.diag(hv)) ** 2
    intf = np.sum(np.abs(hv) ** 2, axis=1) - sig
    sinr = sig / (intf + n0)
    return BlpReport(V, float(p.sum()), float(q.sum()), OPTIMAL, iters,
                     time.perf_counter() - t_start, sinr)
