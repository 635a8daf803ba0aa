"""Seeded validation suite: independent numerical oracles for the lifting,
the prox, the analytic derivatives, and the solvers.

Each check returns a CheckResult; `run_all` drives them and is what the
`validate` CLI subcommand prints.  The prox-oracle check accepts an injected
prox implementation so a deliberately broken variant can be shown to fail.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network, prox
from .model import (ChannelSet, PskSymbols, constellation_phases, draw_channels,
                    draw_symbols, rotate_and_lift, apply_skew, real_to_complex)
from .solvers import (OPTIMAL, dual_to_primal, kkt_oracle, solve_blp,
                      solve_slp_strict)


@dataclass
class CheckResult:
    name: str
    group: str
    passed: bool
    detail: str


GROUPS = ("lifting", "prox", "derivatives", "solvers", "duality")


def _random_problem(rng, K, N, lo=0.0, hi=35.0):
    ch = draw_channels(K, N, int(rng.integers(0, 2 ** 32)))
    sym = draw_symbols(4, K, rng)
    gamma = 10 ** (rng.uniform(lo, hi, K) / 10.0)
    return ch, sym, rotate_and_lift(ch, sym, gamma, 1.0)


def check_lifting(seed: int = 0, n: int = 1000) -> CheckResult:
    """Lifting identities against direct complex arithmetic."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        N = int(rng.integers(1, 6))
        h = (rng.standard_normal(N) + 1j * rng.standard_normal(N)) / np.sqrt(2)
        phases = constellation_phases(4)[rng.integers(0, 4, 1)]
        ch = ChannelSet(h[None, :])
        lp = rotate_and_lift(ch, PskSymbols(4, phases), np.array([2.0]), 1.0)
        v = rng.standard_normal(N) + 1j * rng.standard_normal(N)
        v1 = np.concatenate([v.real, -v.imag])
        htilde = h * np.exp(1j * (phases[0] - phases[0]))
        prod = htilde @ v
        worst = max(worst,
                    abs(prod.real - lp.upsilon[0] @ v1),
                    abs(prod.imag - lp.upsilon[0] @ apply_skew(v1)),
                    abs(np.vdot(v, v).real - v1 @ v1),
                    abs(np.linalg.norm(apply_skew(v1)) - np.linalg.norm(v1)),
                    float(np.max(np.abs(apply_skew(apply_skew(v1)) + v1))),
                    float(np.max(np.abs(real_to_complex(v1) - v))))
    return CheckResult("lifting identities", "lifting", worst <= 1e-10,
                       "max deviation %.2e (allow 1e-10)" % worst)


def _random_prox_instance(rng):
    dim = 2 * int(rng.integers(1, 5))
    u = rng.standard_normal(dim)
    v = rng.standard_normal(dim) * 10 ** rng.uniform(-1, 1)
    g = abs(rng.standard_normal()) * 3 + 0.1
    gamma = 10 ** rng.uniform(-2, 0.5)
    mu = 10 ** rng.uniform(-2, 0.5)
    return prox.ProxInputs(v, u, g, gamma, mu)


def _scalar_prox_oracle(inp: prox.ProxInputs) -> float:
    """Independent 1-D minimization of the prox objective along the
    constraint row; returns the optimal step theta.

    Restricted to x = v1 + theta * Upsilon the objective is the strictly
    convex scalar q(theta) = theta^2 c / 2 - t ln(s + theta c), so bisection
    on its increasing derivative localizes the minimizer to machine accuracy.
    """
    u, v = inp.upsilon_i, inp.v1
    c = float(u @ u)
    s = float(u @ v - inp.g_i)
    t = inp.gamma * inp.mu

    def dq(theta):
        return theta * c - t * c / (s + theta * c)

    lo = -s / c                      # domain boundary, dq -> -inf
    hi = max(lo, 0.0) + 1.0
    while dq(hi) <= 0:
        hi = 2.0 * hi + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if dq(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def check_prox_oracle(seed: int = 1, n: int = 1000, prox_fn=None) -> CheckResult:
    """Closed-form prox vs the 1-D numerical minimizer, plus strict
    feasibility and the stationarity certificate of every output."""
    prox_fn = prox_fn or prox.prox_barrier
    rng = np.random.default_rng(seed)
    worst_theta = worst_cert = 0.0
    feasible = True
    for _ in range(n):
        inp = _random_prox_instance(rng)
        res = prox_fn(inp)
        theta_ref = _scalar_prox_oracle(inp)
        worst_theta = max(worst_theta, abs(res.theta - theta_ref))
        m = float(inp.upsilon_i @ res.phi - inp.g_i)
        feasible = feasible and m > 0
        grad = (res.phi - inp.v1) - inp.gamma * inp.mu / m * inp.upsilon_i
        worst_cert = max(worst_cert,
                         float(np.linalg.norm(grad))
                         / (1.0 + float(np.linalg.norm(inp.v1))))
    ok = worst_theta <= 1e-8 and feasible and worst_cert <= 1e-8
    return CheckResult(
        "prox vs 1-D minimizer", "prox", ok,
        "max |theta err| %.2e (allow 1e-8), strict feasibility %s, "
        "stationarity %.2e" % (worst_theta, feasible, worst_cert))


def check_prox_nonexpansive(seed: int = 2, n: int = 500) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    spec_ok = True
    for _ in range(n):
        inp = _random_prox_instance(rng)
        other = prox.ProxInputs(inp.v1 + rng.standard_normal(inp.v1.size),
                                inp.upsilon_i, inp.g_i, inp.gamma, inp.mu)
        d_out = np.linalg.norm(prox.prox_barrier(inp).phi - prox.prox_barrier(other).phi)
        d_in = np.linalg.norm(inp.v1 - other.v1)
        worst = max(worst, float(d_out - d_in))
        res = prox.prox_barrier(inp)
        c = float(inp.upsilon_i @ inp.upsilon_i)
        eigs = np.linalg.eigvalsh(prox.prox_jacobian_v(res, inp.upsilon_i, c))
        spec_ok = spec_ok and eigs.min() >= -1e-12 and eigs.max() <= 1.0 + 1e-12
    ok = worst <= 1e-12 and spec_ok
    return CheckResult("prox nonexpansive / spectrum", "prox", ok,
                       "max expansion %.2e, Jacobian eigenvalues in [0,1]: %s"
                       % (worst, spec_ok))


def check_prox_derivatives(seed: int = 3, n: int = 1000, h: float = 1e-6) -> CheckResult:
    """Analytic prox derivatives vs central finite differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        inp = _random_prox_instance(rng)
        res = prox.prox_barrier(inp)
        c = float(inp.upsilon_i @ inp.upsilon_i)
        dim = inp.v1.size

        jac = prox.prox_jacobian_v(res, inp.upsilon_i, c)
        jac_fd = np.empty((dim, dim))
        for j in range(dim):
            e = np.zeros(dim)
            e[j] = h
            hi = prox.prox_barrier(prox.ProxInputs(inp.v1 + e, inp.upsilon_i,
                                                   inp.g_i, inp.gamma, inp.mu)).phi
            lo = prox.prox_barrier(prox.ProxInputs(inp.v1 - e, inp.upsilon_i,
                                                   inp.g_i, inp.gamma, inp.mu)).phi
            jac_fd[:, j] = (hi - lo) / (2 * h)
        worst = max(worst, np.linalg.norm(jac - jac_fd) / np.linalg.norm(jac_fd))

        hm = h * max(inp.mu, 1.0)
        dmu_fd = (prox.prox_barrier(prox.ProxInputs(inp.v1, inp.upsilon_i, inp.g_i,
                                                    inp.gamma, inp.mu + hm)).phi
                  - prox.prox_barrier(prox.ProxInputs(inp.v1, inp.upsilon_i, inp.g_i,
                                                      inp.gamma, inp.mu - hm)).phi) / (2 * hm)
        dmu = prox.prox_grad_mu(res, inp.upsilon_i, inp.gamma)
        worst = max(worst, np.linalg.norm(dmu - dmu_fd) / max(np.linalg.norm(dmu_fd), 1e-12))

        hg = h * max(inp.gamma, 1.0)
        dg_fd = (prox.prox_barrier(prox.ProxInputs(inp.v1, inp.upsilon_i, inp.g_i,
                                                   inp.gamma + hg, inp.mu)).phi
                 - prox.prox_barrier(prox.ProxInputs(inp.v1, inp.upsilon_i, inp.g_i,
                                                     inp.gamma - hg, inp.mu)).phi) / (2 * hg)
        dg = prox.prox_grad_gamma(res, inp.upsilon_i, inp.mu)
        worst = max(worst, np.linalg.norm(dg - dg_fd) / max(np.linalg.norm(dg_fd), 1e-12))
    return CheckResult("prox derivative FD", "derivatives", worst <= 1e-5,
                       "max relative error %.2e (allow 1e-5)" % worst)


def check_backward_fd(seed: int = 4, h: float = 1e-5) -> CheckResult:
    """Full unrolled backward pass vs central finite differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for L in (1, 3):
        for K in (1, 2):
            N = 2
            problems = [_random_problem(rng, K, N, 0.0, 15.0)[2] for _ in range(3)]
            ups, g = network.stack_problems(problems)
            params = network.init_params(rng, L, K, N)
            vartheta = 1e-4
            tape, v = network.forward_batch(ups, g, params)
            grads = network.backward_batch(tape, ups, g, params, vartheta).to_vector()
            vec = params.to_vector()
            fd = np.empty_like(vec)
            for j in range(vec.size):
                probe = vec.copy()
                probe[j] += h
                _, vp = network.forward_batch(ups, g, params.from_vector(probe))
                up = network.loss_batch(ups, g, vp, params.from_vector(probe), vartheta).total
                probe[j] -= 2 * h
                _, vm = network.forward_batch(ups, g, params.from_vector(probe))
                dn = network.loss_batch(ups, g, vm, params.from_vector(probe), vartheta).total
                fd[j] = (up - dn) / (2 * h)
            rel = np.abs(grads - fd) / np.maximum(np.abs(fd), 1e-8)
            worst = max(worst, float(rel.max()))
    return CheckResult("unrolled backward FD", "derivatives", worst <= 1e-4,
                       "max relative error %.2e (allow 1e-4)" % worst)


def check_solver_vs_oracle(seed: int = 5, n: int = 200) -> CheckResult:
    """Barrier Newton solver against the active-set enumeration oracle."""
    rng = np.random.default_rng(seed)
    worst_p = worst_d = 0.0
    mismatches = 0
    n_optimal = 0
    for _ in range(n):
        N = int(rng.integers(2, 5))
        K = int(rng.integers(1, 5))
        _, _, lp = _random_problem(rng, K, N)
        ora = kkt_oracle(lp)
        ipm = solve_slp_strict(lp)
        if (ora.status == OPTIMAL) != (ipm.status == OPTIMAL):
            mismatches += 1
            continue
        if ora.status != OPTIMAL:
            continue
        n_optimal += 1
        worst_p = max(worst_p, abs(ipm.power - ora.power) / ora.power)
        rec = dual_to_primal(ora.duals_mu, ora.duals_lambda, lp)
        worst_d = max(worst_d, float(np.linalg.norm(rec.v1 - ora.v1.v1))
                      / (1.0 + float(np.linalg.norm(ora.v1.v1))))
    ok = mismatches == 0 and worst_p <= 1e-6 and worst_d <= 1e-6
    return CheckResult(
        "solver vs KKT oracle", "solvers", ok,
        "%d optimal, %d status mismatches, power err %.2e, dual recon %.2e"
        % (n_optimal, mismatches, worst_p, worst_d))


def check_blp_duality(seed: int = 6, n: int = 60) -> CheckResult:
    """Downlink/uplink power agreement and exact SINR attainment."""
    rng = np.random.default_rng(seed)
    worst_gap = worst_sinr = 0.0
    for _ in range(n):
        N = int(rng.integers(2, 5))
        K = int(rng.integers(1, N + 1))
        ch = draw_channels(K, N, int(rng.integers(0, 2 ** 32)))
        gamma = 10 ** (rng.uniform(0, 30, K) / 10.0)
        rep = solve_blp(ch, gamma, 1.0)
        if rep.status != OPTIMAL:
            return CheckResult("uplink-downlink duality", "duality", False,
                               "unexpected status %s at K=%d N=%d" % (rep.status, K, N))
        worst_gap = max(worst_gap, abs(rep.power - rep.uplink_power) / rep.power)
        worst_sinr = max(worst_sinr, float(np.max(np.abs(rep.sinr / gamma - 1.0))))
    ok = worst_gap <= 1e-6 and worst_sinr <= 1e-8
    return CheckResult("uplink-downlink duality", "duality", ok,
                       "duality gap %.2e (allow 1e-6), SINR residual %.2e (allow 1e-8)"
                       % (worst_gap, worst_sinr))


ALL_CHECKS = (
    check_lifting,
    check_prox_oracle,
    check_prox_nonexpansive,
    check_prox_derivatives,
    check_backward_fd,
    check_solver_vs_oracle,
    check_blp_duality,
)


def run_all(only: str | None = None) -> list[CheckResult]:
    results = [fn() for fn in ALL_CHECKS]
    if only is not None:
        results = [r for r in results if r.group == only]
    return results
