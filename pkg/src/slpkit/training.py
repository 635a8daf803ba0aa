"""Dataset generation, Adam, the unsupervised training loop, and inference.

Training minimizes the Lagrangian loss over the unrolled-network parameters.
The head multipliers are the dual variables of that Lagrangian; by default
they take ascent steps while everything else descends (`dual_mode="gda"`),
which is the saddle-seeking treatment of a primal-dual objective.  Plain
joint minimization is kept behind `dual_mode="joint"` but is degenerate: the
multiplier terms are linear in the constraint residuals, so joint descent
rewards constraint violation.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import network
from .model import LiftedProblem, RealPrecoder, record_to_problem, sample_record
from .network import NetworkParams, forward_batch, loss_batch, backward_batch


class TrainingError(RuntimeError):
    """Raised when training diverges; carries the partial history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


@dataclass
class TrainConfig:
    n_train: int = 5000
    n_test: int = 500
    K: int = 4
    N: int = 4
    psk_order: int = 4
    batch_size: int = 64
    epochs: int = 15
    eta0: float = 3e-3
    beta_decay: float = 0.65
    vartheta: float = 1e-4
    L: int = 10
    gamma_db_range: tuple = (0.0, 35.0)
    n0: float = 1.0
    seed: int = 0
    decay_per_step: bool = False
    dual_mode: str = "gda"
    refinement: bool = False

    def __post_init__(self):
        if not 0.0 < self.beta_decay <= 1.0:
            raise ValueError("beta_decay must lie in (0, 1]")
        if self.vartheta < 0:
            raise ValueError("vartheta must be non-negative")
        if self.batch_size > self.n_train:
            raise ValueError("batch size cannot exceed the training set size")
        if self.dual_mode not in ("gda", "joint"):
            raise ValueError("dual_mode must be 'gda' or 'joint'")

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, vec: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(vec), np.zeros_like(vec))

    def to_dict(self) -> dict:
        return {"m": self.m.tolist(), "v": self.v.tolist(), "step": self.step,
                "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        return cls(np.asarray(d["m"], dtype=float), np.asarray(d["v"], dtype=float),
                   int(d["step"]), d["beta1"], d["beta2"], d["eps"])


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)   # rows: dicts per epoch

    def append(self, epoch, loss, power, feasibility_rate, lr):
        self.epochs.append({"epoch": epoch, "loss": loss, "power": power,
                            "feasibility_rate": feasibility_rate, "lr": lr})

    def write_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("epoch,loss,power,feasibility_rate,lr\n")
            for row in self.epochs:
                f.write("%d,%r,%r,%r,%r\n" % (row["epoch"], row["loss"], row["power"],
                                              row["feasibility_rate"], row["lr"]))


def dataset_seeds(cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint per-record seed streams for the train and test sets."""
    train_ss, test_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    tr = train_ss.generate_state(cfg.n_train, dtype=np.uint64)
    te = test_ss.generate_state(cfg.n_test, dtype=np.uint64)
    return tr, te


def generate_records(cfg: TrainConfig) -> tuple[list[dict], list[dict]]:
    tr_seeds, te_seeds = dataset_seeds(cfg)
    mk = lambda s: sample_record(int(s), cfg.K, cfg.N, cfg.psk_order,
                                 cfg.gamma_db_range, cfg.n0)
    return [mk(s) for s in tr_seeds], [mk(s) for s in te_seeds]


def generate_dataset(cfg: TrainConfig) -> tuple[list[LiftedProblem], list[LiftedProblem]]:
    """Lifted train/test problems, deterministic in cfg.seed."""
    train_recs, test_recs = generate_records(cfg)
    return ([record_to_problem(r) for r in train_recs],
            [record_to_problem(r) for r in test_recs])


def adam_step(params_vec: np.ndarray, grads_vec: np.ndarray,
              state: AdamState, eta: float) -> np.ndarray:
    """Standard Adam update with bias correction; returns the new vector."""
    if not np.all(np.isfinite(grads_vec)):
        raise TrainingError("non-finite gradient in Adam step")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads_vec
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads_vec ** 2
    mhat = state.m / (1.0 - state.beta1 ** state.step)
    vhat = state.v / (1.0 - state.beta2 ** state.step)
    return params_vec - eta * mhat / (np.sqrt(vhat) + state.eps)


def _head_slices(params: NetworkParams) -> slice:
    """Vector slice holding the head dual parameters (ascended under GDA)."""
    L, K = params.L, params.K
    start = L + 2 * L * K
    return slice(start, start + 2 * K)


def train(cfg: TrainConfig, dataset: list[LiftedProblem] | None = None,
          params: NetworkParams | None = None):
    """Run the epoch loop; returns (trained params, TrainHistory)."""
    if dataset is None:
        dataset, _ = generate_dataset(cfg)
    ups, g = network.stack_problems(dataset)
    n = ups.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xA11CE]))
    if params is None:
        params = network.init_params(rng, cfg.L, cfg.K, cfg.N, cfg.refinement)
    vec = params.to_vector()
    state = AdamState.like(vec)
    head = _head_slices(params)
    eta = cfg.eta0
    history = TrainHistory()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        loss_sum = power_sum = feas_sum = 0.0
        n_batches = 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            bu, bg = ups[idx], g[idx]
            tape, v = forward_batch(bu, bg, params)
            lb = loss_batch(bu, bg, v, params, cfg.vartheta)
            if not np.isfinite(lb.total):
                raise TrainingError("loss diverged at epoch %d" % epoch, history)
            grads = backward_batch(tape, bu, bg, params, cfg.vartheta).to_vector()
            if cfg.dual_mode == "gda":
                grads[head] = -grads[head]
            vec = adam_step(vec, grads, state, eta)
            params = params.from_vector(vec)
            marg = np.einsum("bij,bj->bi", bu, v) - bg
            feas_sum += float(np.mean(np.all(marg >= -1e-3 * bg, axis=1))) * len(idx)
            power_sum += float(np.mean(np.sum(v * v, axis=1))) * len(idx)
            loss_sum += lb.total
            n_batches += 1
            if cfg.decay_per_step:
                eta *= cfg.beta_decay
        history.append(epoch, loss_sum / n_batches, power_sum / n, feas_sum / n, eta)
        if not cfg.decay_per_step:
            eta *= cfg.beta_decay
    return params, history


def infer(params: NetworkParams, lp: LiftedProblem) -> tuple[RealPrecoder, float]:
    """Forward-only pass on one problem; returns the precoder and wall time."""
    if lp.K != params.K or lp.N != params.n_antennas:
        raise ValueError("checkpoint dimensions do not match the problem")
    t0 = time.perf_counter()
    _, v1 = network.network_forward(lp, params)
    return RealPrecoder(v1), time.perf_counter() - t0


def infer_batch(params: NetworkParams, problems: list[LiftedProblem]) -> np.ndarray:
    """Vectorized inference over same-shape problems; returns (B, 2N) outputs."""
    ups, g = network.stack_problems(problems)
    if ups.shape[1] != params.K or ups.shape[2] != 2 * params.n_antennas:
        raise ValueError("checkpoint dimensions do not match the problems")
    _, v = forward_batch(ups, g, params)
    return v
