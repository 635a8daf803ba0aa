"""Unrolled proximal interior-point network for strict-phase precoding.

Each of the L layers applies one update

    v <- prox_sweep(v - gamma_r * grad_E(v, lambda_r); gamma_r, mu_r)

with E(v, lam) = ||v||^2 + sum_i lam_i * Upsilon_i^T Omega v, and all of
(gamma_r, mu_r, lambda_r) learnable through softplus so they stay positive.
The initial iterate comes from the dual-to-primal map applied to learnable
head multipliers, which also weight the unsupervised Lagrangian loss.

Inputs are normalized per sample by the mean threshold g before unrolling and
the output is rescaled afterwards; the update rule is exactly scale-covariant,
so this only conditions shared parameters against the SINR dynamic range.

All kernels operate on batched arrays (leading dimension B); the single-
problem operations wrap them with B = 1.  The backward pass is hand-written
reverse mode over the fixed unrolled topology using the analytic prox
derivatives.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .model import LiftedProblem, apply_skew
from .solvers import dual_to_primal

CHECKPOINT_VERSION = 1
REFINEMENT_HIDDEN = 32


def softplus(x):
    """ln(1 + e^x), stable for large |x|."""
    return np.logaddexp(0.0, x)


def softplus_deriv(x):
    return expit(x)


def softplus_inverse(y):
    y = np.asarray(y, dtype=float)
    return np.log(np.expm1(y))


@dataclass
class LayerParams:
    """Raw (pre-softplus) per-layer step size and multiplier vectors."""

    raw_gamma: float
    raw_mu: np.ndarray
    raw_lambda: np.ndarray

    def __post_init__(self):
        self.raw_mu = np.atleast_1d(np.asarray(self.raw_mu, dtype=float))
        self.raw_lambda = np.atleast_1d(np.asarray(self.raw_lambda, dtype=float))
        if self.raw_mu.shape != self.raw_lambda.shape:
            raise ValueError("raw_mu and raw_lambda must share their shape")


@dataclass
class RefinementHead:
    """Optional dense residual head 2N -> H -> 2N with tanh activation."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class NetworkParams:
    layers: list[LayerParams]
    head_mu_raw: np.ndarray
    head_lambda_raw: np.ndarray
    n_antennas: int
    refinement: RefinementHead | None = None

    def __post_init__(self):
        self.head_mu_raw = np.atleast_1d(np.asarray(self.head_mu_raw, dtype=float))
        self.head_lambda_raw = np.atleast_1d(np.asarray(self.head_lambda_raw, dtype=float))
        if not self.layers:
            raise ValueError("need at least one layer")

    @property
    def L(self) -> int:
        return len(self.layers)

    @property
    def K(self) -> int:
        return self.head_mu_raw.shape[0]

    def raw_gamma(self) -> np.ndarray:
        return np.array([l.raw_gamma for l in self.layers])

    def raw_mu(self) -> np.ndarray:
        return np.stack([l.raw_mu for l in self.layers])

    def raw_lambda(self) -> np.ndarray:
        return np.stack([l.raw_lambda for l in self.layers])

    def to_vector(self) -> np.ndarray:
        parts = [self.raw_gamma(), self.raw_mu().ravel(), self.raw_lambda().ravel(),
                 self.head_mu_raw, self.head_lambda_raw]
        if self.refinement is not None:
            r = self.refinement
            parts += [r.w1.ravel(), r.b1, r.w2.ravel(), r.b2]
        return np.concatenate(parts)

    def from_vector(self, x: np.ndarray) -> "NetworkParams":
        L, K = self.L, self.K
        x = np.asarray(x, dtype=float)
        i = 0
        rg = x[i:i + L]; i += L
        rm = x[i:i + L * K].reshape(L, K); i += L * K
        rl = x[i:i + L * K].reshape(L, K); i += L * K
        hm = x[i:i + K]; i += K
        hl = x[i:i + K]; i += K
        layers = [LayerParams(float(rg[r]), rm[r].copy(), rl[r].copy()) for r in range(L)]
        ref = None
        if self.refinement is not None:
            twoN, H = 2 * self.n_antennas, REFINEMENT_HIDDEN
            w1 = x[i:i + H * twoN].reshape(H, twoN); i += H * twoN
            b1 = x[i:i + H]; i += H
            w2 = x[i:i + twoN * H].reshape(twoN, H); i += twoN * H
            b2 = x[i:i + twoN]; i += twoN
            ref = RefinementHead(w1.copy(), b1.copy(), w2.copy(), b2.copy())
        return NetworkParams(layers, hm.copy(), hl.copy(), self.n_antennas, ref)


@dataclass
class ParamGrads:
    """Loss gradients w.r.t. every raw parameter, same layout as the params."""

    raw_gamma: np.ndarray
    raw_mu: np.ndarray
    raw_lambda: np.ndarray
    head_mu_raw: np.ndarray
    head_lambda_raw: np.ndarray
    refinement: RefinementHead | None = None

    def to_vector(self) -> np.ndarray:
        parts = [self.raw_gamma, self.raw_mu.ravel(), self.raw_lambda.ravel(),
                 self.head_mu_raw, self.head_lambda_raw]
        if self.refinement is not None:
            r = self.refinement
            parts += [r.w1.ravel(), r.b1, r.w2.ravel(), r.b2]
        return np.concatenate(parts)


@dataclass
class LayerTape:
    v_in: np.ndarray          # (B, 2N) iterate entering the layer
    grad_step: np.ndarray     # (B, 2N) iterate after the gradient step
    stages: list              # per user: (s, r, theta, c) arrays of shape (B,)


@dataclass
class ForwardTape:
    scale: np.ndarray               # (B,) per-sample threshold normalizer
    v0: np.ndarray                  # (B, 2N) initial iterate (normalized space)
    layers: list[LayerTape]
    v_final: np.ndarray             # (B, 2N) output in problem scale
    w_final: np.ndarray             # (B, 2N) output before rescaling
    ref_hidden: np.ndarray | None = None
    loss: float | None = None


def init_params(rng: np.random.Generator, L: int, K: int, N: int,
                refinement: bool = False) -> NetworkParams:
    """Structured initialization: a few power-descent layers, then small-step
    feasibility-polish layers with per-user padding that decreases along the
    sweep order (earlier-swept users absorb more interference from later
    prox moves), and a near-pass-through final layer.  Head multipliers start
    softplus(N(0, 0.1)).
    """
    n_desc = min(3, max(1, L - 2))
    n_pass = 1 if L > n_desc + 1 else 0
    gam = np.array([0.15] * n_desc + [1e-3] * (L - n_desc - n_pass) + [1e-4] * n_pass)
    pad = 32.0 * 0.5 ** np.arange(K)
    mu = np.array([[1.0] * K] * n_desc
                  + [list(pad)] * (L - n_desc - n_pass)
                  + [[1e-4] * K] * n_pass)
    raw_g = softplus_inverse(gam) + rng.normal(0.0, 0.01, L)
    raw_m = softplus_inverse(mu) + rng.normal(0.0, 0.01, (L, K))
    raw_l = softplus_inverse(0.01) + rng.normal(0.0, 0.01, (L, K))
    layers = [LayerParams(float(raw_g[r]), raw_m[r], raw_l[r]) for r in range(L)]
    head_mu = rng.normal(0.0, 0.1, K)
    head_lam = rng.normal(0.0, 0.1, K)
    ref = None
    if refinement:
        twoN, H = 2 * N, REFINEMENT_HIDDEN
        ref = RefinementHead(rng.normal(0.0, 0.05, (H, twoN)), np.zeros(H),
                             np.zeros((twoN, H)), np.zeros(twoN))
    return NetworkParams(layers, head_mu, head_lam, N, ref)


def grad_E(v1: np.ndarray, lam: np.ndarray, lp: LiftedProblem) -> np.ndarray:
    """Gradient of E(v, lam) = ||v||^2 + sum_i lam_i Upsilon_i^T Omega v."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.shape[0] != lp.K:
        raise ValueError("lambda must have length K")
    return 2.0 * np.asarray(v1, dtype=float) - lam @ apply_skew(lp.upsilon)


# --- batched kernels --------------------------------------------------------

def _problem_arrays(lp: LiftedProblem) -> tuple[np.ndarray, np.ndarray]:
    return lp.upsilon[None, :, :], lp.g[None, :]


def stack_problems(problems) -> tuple[np.ndarray, np.ndarray]:
    """Stack same-shape lifted problems into (B,K,2N) and (B,K) arrays."""
    ups = np.stack([p.upsilon for p in problems])
    g = np.stack([p.g for p in problems])
    return ups, g


def _layer_step(w, ups, om, g, gam, mu, lam):
    """One unrolled layer on normalized iterates; returns output and caches."""
    pull = np.einsum("i,bij->bj", lam, om)
    u = (1.0 - 2.0 * gam) * w + gam * pull
    stages = []
    x = u
    K = ups.shape[1]
    for i in range(K):
        ui = ups[:, i, :]
        c = np.sum(ui * ui, axis=1)
        s = np.sum(x * ui, axis=1) - g[:, i]
        t = gam * mu[i]
        r = np.hypot(s, 2.0 * np.sqrt(t * c))
        theta = (-s + r) / (2.0 * c)
        x = x + theta[:, None] * ui
        stages.append((s, r, theta, c))
    return x, u, stages


def forward_batch(ups: np.ndarray, g: np.ndarray, params: NetworkParams,
                  v0: np.ndarray | None = None) -> tuple[ForwardTape, np.ndarray]:
    """Run the unrolled network on a batch; returns (tape, v_final)."""
    B, K, twoN = ups.shape
    om = apply_skew(ups)
    scale = g.mean(axis=1)
    gn = g / scale[:, None]
    if v0 is None:
        mu_h = softplus(params.head_mu_raw)
        lam_h = softplus(params.head_lambda_raw)
        w = 0.5 * (np.einsum("i,bij->bj", mu_h, ups)
                   + np.einsum("i,bij->bj", lam_h, om))
    else:
        w = np.asarray(v0, dtype=float).reshape(B, twoN) / scale[:, None]
    tape = ForwardTape(scale=scale, v0=w.copy(), layers=[], v_final=None, w_final=None)
    for layer in params.layers:
        gam = float(softplus(layer.raw_gamma))
        mu = softplus(layer.raw_mu)
        lam = softplus(layer.raw_lambda)
        v_in = w
        w, u, stages = _layer_step(w, ups, om, gn, gam, mu, lam)
        tape.layers.append(LayerTape(v_in=v_in, grad_step=u, stages=stages))
    tape.w_final = w
    if params.refinement is not None:
        r = params.refinement
        hidden = np.tanh(w @ r.w1.T + r.b1)
        tape.ref_hidden = hidden
        w = w + hidden @ r.w2.T + r.b2
    tape.v_final = scale[:, None] * w
    return tape, tape.v_final


def loss_batch(ups: np.ndarray, g: np.ndarray, v_final: np.ndarray,
               params: NetworkParams, vartheta: float):
    """Unsupervised Lagrangian loss averaged over the batch.

    total = (1/B) sum_b [ ||v||^2 + lam_h . (Ups^T Omega v) + mu_h . (g - Ups v) ]
            + (vartheta / L) * ||raw params||^2
    """
    B = v_final.shape[0]
    om = apply_skew(ups)
    mu_h = softplus(params.head_mu_raw)
    lam_h = softplus(params.head_lambda_raw)
    power = float(np.sum(v_final * v_final) / B)
    eqres = -np.einsum("bij,bj->bi", om, v_final)       # Upsilon_i^T Omega v
    eq_term = float(np.sum(eqres * lam_h) / B)
    marg = np.einsum("bij,bj->bi", ups, v_final) - g
    ineq_term = float(np.sum(-marg * mu_h) / B)
    reg = float(vartheta / params.L * np.sum(params.to_vector() ** 2))
    return LossBreakdown(power, eq_term, ineq_term, reg,
                         power + eq_term + ineq_term + reg)


@dataclass
class LossBreakdown:
    power_term: float
    equality_term: float
    inequality_term: float
    reg_term: float
    total: float


def backward_batch(tape: ForwardTape, ups: np.ndarray, g: np.ndarray,
                   params: NetworkParams, vartheta: float = 0.0) -> ParamGrads:
    """Reverse-mode gradients of the batch loss for every raw parameter."""
    B, K, twoN = ups.shape
    om = apply_skew(ups)
    L = params.L
    mu_h = softplus(params.head_mu_raw)
    lam_h = softplus(params.head_lambda_raw)
    v = tape.v_final

    d_gamma = np.zeros(L)
    d_mu = np.zeros((L, K))
    d_lambda = np.zeros((L, K))
    # direct loss derivatives w.r.t. the head multiplier values
    d_head_mu = np.sum(g - np.einsum("bij,bj->bi", ups, v), axis=0) / B
    d_head_lam = np.sum(-np.einsum("bij,bj->bi", om, v), axis=0) / B

    # dLoss/dv_final, then undo the per-sample rescaling
    gbar = (2.0 * v - np.einsum("i,bij->bj", lam_h, om)
            - np.einsum("i,bij->bj", mu_h, ups)) / B
    gbar = gbar * tape.scale[:, None]

    ref_grads = None
    if params.refinement is not None:
        r = params.refinement
        hidden = tape.ref_hidden
        gw2 = gbar.T @ hidden
        gb2 = gbar.sum(axis=0)
        ghid = (gbar @ r.w2) * (1.0 - hidden ** 2)
        gw1 = ghid.T @ tape.w_final
        gb1 = ghid.sum(axis=0)
        ref_grads = RefinementHead(gw1, gb1, gw2, gb2)
        gbar = gbar + ghid @ r.w1

    for r_idx in range(L - 1, -1, -1):
        layer = params.layers[r_idx]
        rec = tape.layers[r_idx]
        gam = float(softplus(layer.raw_gamma))
        mu = softplus(layer.raw_mu)
        lam = softplus(layer.raw_lambda)
        dgam = 0.0
        for i in range(K - 1, -1, -1):
            s, r, theta, c = rec.stages[i]
            ui = ups[:, i, :]
            gu = np.sum(gbar * ui, axis=1)
            d_mu[r_idx, i] += float(np.sum(gam / r * gu))
            dgam += float(np.sum(mu[i] / r * gu))
            gbar = gbar + (((s / r - 1.0) / (2.0 * c)) * gu)[:, None] * ui
        pull = np.einsum("i,bij->bj", lam, om)
        dgam += float(np.sum(gbar * (-2.0 * rec.v_in + pull)))
        d_lambda[r_idx] += gam * np.einsum("bj,bij->i", gbar, om)
        d_gamma[r_idx] += dgam
        gbar = (1.0 - 2.0 * gam) * gbar

    # initial iterate came from the dual-to-primal map of the head duals
    d_head_mu = d_head_mu + 0.5 * np.einsum("bj,bij->i", gbar, ups)
    d_head_lam = d_head_lam + 0.5 * np.einsum("bj,bij->i", gbar, om)

    grads = ParamGrads(
        raw_gamma=d_gamma * softplus_deriv(params.raw_gamma()),
        raw_mu=d_mu * softplus_deriv(params.raw_mu()),
        raw_lambda=d_lambda * softplus_deriv(params.raw_lambda()),
        head_mu_raw=d_head_mu * softplus_deriv(params.head_mu_raw),
        head_lambda_raw=d_head_lam * softplus_deriv(params.head_lambda_raw),
        refinement=ref_grads,
    )
    if vartheta:
        coef = 2.0 * vartheta / params.L
        grads.raw_gamma += coef * params.raw_gamma()
        grads.raw_mu += coef * params.raw_mu()
        grads.raw_lambda += coef * params.raw_lambda()
        grads.head_mu_raw += coef * params.head_mu_raw
        grads.head_lambda_raw += coef * params.head_lambda_raw
        if grads.refinement is not None:
            ref = params.refinement
            grads.refinement = RefinementHead(
                grads.refinement.w1 + coef * ref.w1,
                grads.refinement.b1 + coef * ref.b1,
                grads.refinement.w2 + coef * ref.w2,
                grads.refinement.b2 + coef * ref.b2,
            )
    return grads


# --- spec-level single-problem operations -----------------------------------

def layer_forward(v1: np.ndarray, lp: LiftedProblem,
                  p: LayerParams) -> tuple[np.ndarray, LayerTape]:
    """One unrolled layer on one problem (no normalization): gradient step on
    E with effective gamma, then the sequential prox sweep."""
    ups, g = _problem_arrays(lp)
    om = apply_skew(ups)
    gam = float(softplus(p.raw_gamma))
    mu = softplus(p.raw_mu)
    lam = softplus(p.raw_lambda)
    w = np.asarray(v1, dtype=float)[None, :]
    x, u, stages = _layer_step(w, ups, om, g, gam, mu, lam)
    return x[0], LayerTape(v_in=w, grad_step=u, stages=stages)


def network_forward(lp: LiftedProblem, params: NetworkParams,
                    v0: np.ndarray | None = None) -> tuple[ForwardTape, np.ndarray]:
    """Full forward pass on one problem; v0 defaults to the dual-to-primal map
    of the softplus head multipliers."""
    ups, g = _problem_arrays(lp)
    v0b = None if v0 is None else np.asarray(v0, dtype=float)[None, :]
    tape, v_final = forward_batch(ups, g, params, v0b)
    return tape, v_final[0]


def loss(batch, params: NetworkParams, vartheta: float) -> LossBreakdown:
    """Loss over a batch of (LiftedProblem, ForwardTape) pairs."""
    if not batch:
        raise ValueError("batch must be non-empty")
    ups = np.concatenate([lp.upsilon[None] if t.v_final.shape[0] == 1
                          else np.repeat(lp.upsilon[None], t.v_final.shape[0], 0)
                          for lp, t in batch])
    g = np.concatenate([lp.g[None] if t.v_final.shape[0] == 1
                        else np.repeat(lp.g[None], t.v_final.shape[0], 0)
                        for lp, t in batch])
    v = np.concatenate([t.v_final for _, t in batch])
    out = loss_batch(ups, g, v, params, vartheta)
    for _, t in batch:
        t.loss = out.total
    return out


def backward(tape: ForwardTape, lp: LiftedProblem, params: NetworkParams,
             vartheta: float = 0.0) -> ParamGrads:
    """Gradients for a single-problem tape produced by network_forward."""
    ups, g = _problem_arrays(lp)
    if tape.v_final.shape[0] != 1 or tape.v_final.shape[1] != ups.shape[2]:
        raise ValueError("tape does not match this problem")
    if len(tape.layers) != params.L:
        raise ValueError("tape does not match these parameters")
    return backward_batch(tape, ups, g, params, vartheta)


# --- checkpoints -------------------------------------------------------------

def checkpoint_dict(params: NetworkParams, train_config_hash: str = "") -> dict:
    ref = None
    if params.refinement is not None:
        r = params.refinement
        ref = {"w1": r.w1.tolist(), "b1": r.b1.tolist(),
               "w2": r.w2.tolist(), "b2": r.b2.tolist()}
    return {
        "version": CHECKPOINT_VERSION,
        "L": params.L,
        "K": params.K,
        "N": params.n_antennas,
        "layers": [{"raw_gamma": l.raw_gamma,
                    "raw_mu": l.raw_mu.tolist(),
                    "raw_lambda": l.raw_lambda.tolist()} for l in params.layers],
        "head_mu_raw": params.head_mu_raw.tolist(),
        "head_lambda_raw": params.head_lambda_raw.tolist(),
        "refinement": ref,
        "train_config_hash": train_config_hash,
    }


def save_checkpoint(params: NetworkParams, path, train_config_hash: str = "") -> None:
    with open(path, "w") as f:
        json.dump(checkpoint_dict(params, train_config_hash), f, sort_keys=True)


def load_checkpoint(path) -> NetworkParams:
    with open(path) as f:
        d = json.load(f)
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError("unsupported checkpoint version")
    layers = [LayerParams(float(l["raw_gamma"]),
                          np.asarray(l["raw_mu"], dtype=float),
                          np.asarray(l["raw_lambda"], dtype=float))
              for l in d["layers"]]
    ref = None
    if d.get("refinement"):
        r = d["refinement"]
        ref = RefinementHead(np.asarray(r["w1"], dtype=float),
                             np.asarray(r["b1"], dtype=float),
                             np.asarray(r["w2"], dtype=float),
                             np.asarray(r["b2"], dtype=float))
    return NetworkParams(layers, np.asarray(d["head_mu_raw"], dtype=float),
                         np.asarray(d["head_lambda_raw"], dtype=float),
                         int(d["N"]), ref)
